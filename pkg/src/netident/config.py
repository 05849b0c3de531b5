"""TOML network configuration files.

Schema (version 1)::

    schema_version = 1
    name = "example1"
    nodes = 6
    labels = ["w1", ...]             # optional
    excited = [1, 3]                 # nodes with an external signal r_k
    noise_covariance = [[1.0, ...]]  # optional, identity if absent

    [[module]]                       # G_{to,from}; one table per edge
    to = 2
    from = 1
    num = [0.8]                      # coefficients of q^0, q^-1, ...
    den = [1.0, -0.5]                # must start with 1
    delay = 1                        # extra dead time (default 0)

    [[noise]]                        # H_{to,from}; same fields as module
    ...

    [identification]                 # optional model orders for the estimator
    nb = 1
    nf = 1
    nk = 1
    nc = 1
    nd = 1
    [[identification.module]]        # per-module overrides
    to = 2
    from = 1
    nb = 2

Absent ``module``/``noise`` entries are zero.  ``dump_config`` writes every
nonzero entry explicitly, so ``load(dump(m))`` reproduces ``m`` exactly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .network import NetworkModel, validate_network
from .tf import TransferFunction

__all__ = ["ConfigError", "NetworkConfig", "Orders", "load_config", "loads_config", "dump_config", "builtin_config_path", "BUILTIN_CONFIGS"]

SCHEMA_VERSION = 1
BUILTIN_CONFIGS = ("example1", "example2", "confounder3")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source = source
        self.line = line
        loc = f"{source}:{line}" if line is not None else source
        super().__init__(f"{loc}: {message}")


@dataclass(frozen=True)
class Orders:
    """Polynomial orders of a parametrized module ``q^-nk B/F`` and of the noise model."""

    nb: int = 1
    nf: int = 1
    nk: int = 1
    nc: int = 1
    nd: int = 1
    per_module: dict = field(default_factory=dict)

    def module(self, j: int, l: int) -> tuple[int, int, int]:
        o = self.per_module.get((j, l), {})
        return (o.get("nb", self.nb), o.get("nf", self.nf), o.get("nk", self.nk))

    def to_dict(self) -> dict:
        d = {"nb": self.nb, "nf": self.nf, "nk": self.nk, "nc": self.nc, "nd": self.nd}
        if self.per_module:
            d["module"] = [
                {"to": j, "from": l, **o} for (j, l), o in sorted(self.per_module.items())
            ]
        return d


@dataclass(frozen=True)
class NetworkConfig:
    model: NetworkModel
    orders: Orders
    source: str = "<config>"
    schema_version: int = SCHEMA_VERSION


def builtin_config_path(name: str) -> Path:
    return Path(str(resources.files("netident") / "configs" / f"{name}.toml"))


def _resolve(path) -> Path:
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN_CONFIGS:
        return builtin_config_path(str(path))
    return p


def load_config(path, validate: bool = True) -> NetworkConfig:
    """Read a network config file (or a builtin name such as ``example1``)."""
    p = _resolve(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", str(path)) from None
    return loads_config(text, source=str(path), validate=validate)


def _line_of(text: str, pattern: str, occurrence: int = 0) -> int | None:
    hits = [m.start() for m in re.finditer(pattern, text, flags=re.M)]
    if len(hits) > occurrence:
        return text.count("\n", 0, hits[occurrence]) + 1
    return None


def _tf_entry(entry: dict, what: str, idx: int, text: str, source: str) -> tuple[tuple[int, int], TransferFunction]:
    table = "module" if what == "module" else "noise"
    line = _line_of(text, rf"^\s*\[\[{table}\]\]", idx)
    try:
        j, l = int(entry["to"]), int(entry["from"])
        num = [float(x) for x in entry["num"]]
        den = [float(x) for x in entry.get("den", [1.0])]
        delay = int(entry.get("delay", 0))
    except KeyError as exc:
        raise ConfigError(f"{table}[{idx}] is missing field {exc.args[0]!r}", source, line) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{table}[{idx}] has a malformed field: {exc}", source, line) from None
    try:
        tf = TransferFunction(num, den, delay)
    except ValueError as exc:
        raise ConfigError(f"{table}[{idx}]: {exc}", source, line) from None
    return (j, l), tf


def loads_config(text: str, source: str = "<config>", validate: bool = True) -> NetworkConfig:
    if not text.strip():
        raise ConfigError("empty config file", source, 1)
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"parse error: {exc}", source, int(m.group(1)) if m else None) from None

    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})",
                          source, _line_of(text, r"^\s*schema_version"))
    if "nodes" not in doc:
        raise ConfigError("missing required key 'nodes'", source, 1)
    L = doc["nodes"]
    if not isinstance(L, int) or L < 1:
        raise ConfigError("'nodes' must be a positive integer", source, _line_of(text, r"^\s*nodes"))

    modules, noise = {}, {}
    for what, target in (("module", modules), ("noise", noise)):
        for idx, entry in enumerate(doc.get(what, [])):
            key, tf = _tf_entry(entry, what, idx, text, source)
            if key in target:
                raise ConfigError(f"duplicate {what} entry {key}", source, _line_of(text, rf"^\s*\[\[{what}\]\]", idx))
            if not (1 <= key[0] <= L and 1 <= key[1] <= L):
                raise ConfigError(f"{what}[{idx}] index {key} outside 1..{L}", source,
                                  _line_of(text, rf"^\s*\[\[{what}\]\]", idx))
            target[key] = tf

    excited = doc.get("excited", [])
    if any(not (1 <= k <= L) for k in excited):
        raise ConfigError(f"'excited' lists nodes outside 1..{L}", source, _line_of(text, r"^\s*excited"))
    r_present = tuple(k in excited for k in range(1, L + 1))
    cov = doc.get("noise_covariance")
    if cov is not None:
        cov = np.array(cov, dtype=float)
        if cov.shape != (L, L):
            raise ConfigError(f"noise_covariance must be {L}x{L}", source, _line_of(text, r"^\s*noise_covariance"))

    try:
        model = NetworkModel(
            L=L,
            modules=modules,
            noise=noise,
            noise_covariance=cov,
            r_present=r_present,
            labels=doc.get("labels"),
            name=doc.get("name", Path(source).stem),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), source) from None

    ident = doc.get("identification", {})
    per_module = {}
    for entry in ident.get("module", []):
        key = (int(entry["to"]), int(entry["from"]))
        if key not in modules:
            raise ConfigError(f"identification orders given for absent module G_{key}", source,
                              _line_of(text, r"^\s*\[\[identification\.module\]\]"))
        per_module[key] = {k: int(v) for k, v in entry.items() if k in ("nb", "nf", "nk")}
    orders = Orders(**{k: int(ident[k]) for k in ("nb", "nf", "nk", "nc", "nd") if k in ident},
                    per_module=per_module)

    if validate:
        report = validate_network(model)
        if not report.ok:
            raise ConfigError(f"invalid network:\n{report}", source)
    return NetworkConfig(model=model, orders=orders, source=source, schema_version=version)


def _tf_table(j: int, l: int, tf: TransferFunction) -> dict:
    return {"to": j, "from": l, "num": list(tf.numerator), "den": list(tf.denominator), "delay": tf.dead_time}


def dump_config(cfg: NetworkConfig | NetworkModel, orders: Orders | None = None) -> str:
    """Serialize to TOML text."""
    if isinstance(cfg, NetworkConfig):
        model, orders = cfg.model, orders or cfg.orders
    else:
        model = cfg
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": model.name,
        "nodes": model.L,
        "labels": list(model.labels),
        "excited": [k for k in model.nodes if model.r_present[k - 1]],
        "noise_covariance": [list(map(float, row)) for row in model.noise_covariance],
        "module": [_tf_table(j, l, tf) for (j, l), tf in model.modules.items()],
        "noise": [_tf_table(j, k, tf) for (j, k), tf in model.noise.items()],
    }
    if orders is not None:
        doc["identification"] = orders.to_dict()
    return tomli_w.dumps(doc)
