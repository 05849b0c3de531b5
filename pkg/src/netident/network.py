"""Dynamic network models ``w = G w + r + H e`` and their structural checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .tf import ZERO, FrequencyGrid, TransferFunction, frequency_response

__all__ = [
    "NetworkModel",
    "SignalRecord",
    "ValidationReport",
    "Violation",
    "validate_network",
    "noise_factor",
]

Edge = tuple[int, int]


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular ``F`` with ``F F^T = cov``; tolerates singular PSD input."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-10 * max(1.0, vals.max()):
            raise ValueError("noise covariance is not positive semidefinite") from None
        # QR of the symmetric square root gives a triangular factor with the same product
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        _, r = np.linalg.qr(root.T)
        f = r.T
        f[np.abs(f) < 1e-14] = 0.0
        return f * np.sign(np.where(np.diag(f) == 0, 1.0, np.diag(f)))


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Ground-truth network with ``L`` nodes, indexed 1..L as in the literature.

    ``modules`` maps ``(j, l)`` to ``G_jl`` (edge ``w_l -> w_j``); ``noise``
    maps ``(j, k)`` to ``H_jk`` (edge ``e_k -> w_j``).  Absent entries are zero.
    """

    L: int
    modules: Mapping[Edge, TransferFunction]
    noise: Mapping[Edge, TransferFunction]
    noise_covariance: np.ndarray | None = None
    r_present: tuple[bool, ...] | None = None
    labels: tuple[str, ...] | None = None
    name: str = "network"

    def __post_init__(self):
        L = int(self.L)
        if L < 1:
            raise ValueError("network needs at least one node")
        mods = {}
        for (j, l), tf in sorted(dict(self.modules).items()):
            self._check_index(j, l, "module")
            if not tf.is_zero:
                mods[(int(j), int(l))] = tf
        noise = {}
        for (j, k), tf in sorted(dict(self.noise).items()):
            self._check_index(j, k, "noise")
            if not tf.is_zero:
                noise[(int(j), int(k))] = tf
        cov = np.eye(L) if self.noise_covariance is None else np.array(self.noise_covariance, dtype=float)
        if cov.shape != (L, L):
            raise ValueError(f"noise_covariance must be {L}x{L}, got {cov.shape}")
        cov.setflags(write=False)
        r = (False,) * L if self.r_present is None else tuple(bool(x) for x in self.r_present)
        labels = tuple(f"w{k}" for k in range(1, L + 1)) if self.labels is None else tuple(self.labels)
        if len(r) != L or len(labels) != L:
            raise ValueError("r_present and labels must have one entry per node")
        object.__setattr__(self, "modules", mods)
        object.__setattr__(self, "noise", noise)
        object.__setattr__(self, "noise_covariance", cov)
        object.__setattr__(self, "r_present", r)
        object.__setattr__(self, "labels", labels)

    def _check_index(self, a, b, what):
        if not (1 <= a <= self.L and 1 <= b <= self.L):
            raise ValueError(f"{what} entry ({a},{b}) outside 1..{self.L}")

    # -- accessors ------------------------------------------------------------
    @property
    def nodes(self) -> range:
        return range(1, self.L + 1)

    def G(self, j: int, l: int) -> TransferFunction:
        return self.modules.get((j, l), ZERO)

    def H(self, j: int, k: int) -> TransferFunction:
        return self.noise.get((j, k), ZERO)

    def in_neighbors(self, j: int) -> set[int]:
        return {l for (jj, l) in self.modules if jj == j and l != j}

    def all_strictly_proper(self) -> bool:
        return all(tf.strictly_proper() for tf in self.modules.values())

    def noise_zero_lag(self) -> np.ndarray:
        """Zero-lag coefficient matrix of ``H``."""
        h0 = np.zeros((self.L, self.L))
        for (j, k), tf in self.noise.items():
            h0[j - 1, k - 1] = tf.feedthrough
        return h0

    def innovation_covariance(self) -> np.ndarray:
        h0 = self.noise_zero_lag()
        return h0 @ self.noise_covariance @ h0.T

    def noise_pattern(self) -> np.ndarray:
        """Boolean L x L pattern of ``H F`` with ``F F^T = Lambda`` (unit-variance sources)."""
        h = np.zeros((self.L, self.L), dtype=bool)
        for (j, k) in self.noise:
            h[j - 1, k - 1] = True
        f = np.abs(noise_factor(self.noise_covariance)) > 1e-12
        return (h.astype(int) @ f.astype(int)) > 0

    def correlation_pattern(self) -> np.ndarray:
        """Structural nonzero pattern of the disturbance spectrum ``H Lambda H^*``."""
        p = self.noise_pattern().astype(int)
        return (p @ p.T) > 0

    # -- frequency domain -----------------------------------------------------
    def G_response(self, grid) -> np.ndarray:
        """``G(e^{iw})`` as an array of shape (M, L, L)."""
        return self._matrix_response(self.modules, grid)

    def H_response(self, grid) -> np.ndarray:
        return self._matrix_response(self.noise, grid)

    def _matrix_response(self, entries, grid) -> np.ndarray:
        w = grid.frequencies if isinstance(grid, FrequencyGrid) else np.atleast_1d(grid)
        out = np.zeros((w.size, self.L, self.L), dtype=complex)
        for (j, l), tf in entries.items():
            out[:, j - 1, l - 1] = frequency_response(tf, w)
        return out

    def with_changes(self, **kw) -> "NetworkModel":
        fields = dict(
            L=self.L,
            modules=self.modules,
            noise=self.noise,
            noise_covariance=self.noise_covariance,
            r_present=self.r_present,
            labels=self.labels,
            name=self.name,
        )
        fields.update(kw)
        return NetworkModel(**fields)


@dataclass
class Violation:
    kind: str
    message: str
    where: tuple = ()


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    stability_margin: float | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __str__(self) -> str:
        if self.ok:
            return "valid network"
        return "\n".join(f"{v.kind}: {v.message}" for v in self.violations)


def validate_network(model: NetworkModel, grid: FrequencyGrid | None = None) -> ValidationReport:
    """List every structural problem with ``model``; never raises."""
    from .simulator import stability_check

    report = ValidationReport()
    add = report.violations.append
    for j in model.nodes:
        if not model.G(j, j).is_zero:
            add(Violation("nonzero diagonal", f"G_{j}{j} must be zero (no self-loops)", (j, j)))
    for (j, l), tf in model.modules.items():
        if tf.den[0] != 1.0 or tf.dead_time < 0:
            add(Violation("improper", f"G_{j}{l} is not proper", (j, l)))
    for (j, k), tf in model.noise.items():
        if not tf.is_stable():
            add(Violation("unstable noise", f"H_{j}{k} has poles on or outside the unit circle", (j, k)))
    cov = model.noise_covariance
    if not np.allclose(cov, cov.T, atol=1e-12):
        add(Violation("non-PSD covariance", "noise covariance is not symmetric"))
    elif np.linalg.eigvalsh(cov).min() < -1e-10:
        add(Violation("non-PSD covariance", "noise covariance has a negative eigenvalue"))
    else:
        inn = model.innovation_covariance()
        off = inn - np.diag(np.diag(inn))
        if not model.all_strictly_proper() and np.any(np.abs(off) > 1e-12):
            bad = [e for e, tf in model.modules.items() if not tf.strictly_proper()]
            add(Violation(
                "delay assumption",
                "modules with direct feedthrough require uncorrelated innovations "
                f"(non-strictly-proper: {bad})",
                tuple(bad),
            ))
    ok, margin = stability_check(model, grid)
    report.stability_margin = margin
    if not ok:
        add(Violation("unstable", f"network fails the stability check (margin {margin:.4g})"))
    return report


@dataclass(frozen=True, eq=False)
class SignalRecord:
    """Equal-length named channels of sampled signals (columns ``w1``, ``e2``, ...)."""

    channels: Mapping[str, np.ndarray]
    origin: int = 0

    def __post_init__(self):
        chans = {}
        n = None
        for name, x in self.channels.items():
            a = np.array(x, dtype=float)
            if a.ndim != 1:
                raise ValueError(f"channel {name} must be one-dimensional")
            if n is None:
                n = a.size
            elif a.size != n:
                raise ValueError(f"channel {name} has {a.size} samples, expected {n}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"channel {name} contains non-finite values")
            a.setflags(write=False)
            chans[name] = a
        object.__setattr__(self, "channels", chans)

    @property
    def N(self) -> int:
        return next(iter(self.channels.values())).size if self.channels else 0

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    def stack(self, prefix: str, nodes: Iterable[int]) -> np.ndarray:
        """Columns ``prefix+k`` for ``k`` in ``nodes`` as an (N, len(nodes)) array."""
        nodes = list(nodes)
        if not nodes:
            return np.zeros((self.N, 0))
        return np.column_stack([self.channels[f"{prefix}{k}"] for k in nodes])

    def w(self, nodes: Iterable[int]) -> np.ndarray:
        return self.stack("w", nodes)

    def tail(self, start: int) -> "SignalRecord":
        return SignalRecord({k: v[start:] for k, v in self.channels.items()}, self.origin + start)

    def equals(self, other: "SignalRecord") -> bool:
        return self.names == other.names and all(
            np.array_equal(self[k], other[k]) for k in self.names
        )
