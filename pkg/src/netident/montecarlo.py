"""Monte Carlo consistency experiment: MIMO setup versus the naive MISO baseline.

Realization ``rep`` at sample size index ``n`` draws its simulation and
estimation seeds from ``SeedSequence(master_seed, spawn_key=(n, rep))``, so
results do not depend on execution order or on the number of workers.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import __version__
from .config import load_config
from .graph import algorithm_a, select_blocking_set
from .identify import (
    EstimationOptions,
    build_model_structure,
    estimate,
    naive_miso_partition,
)
from .report import Report, Table, emit_report
from .simulator import SimulationPlan, realization_seed, simulate
from .tf import default_grid, frequency_response

__all__ = ["ExperimentManifest", "MonteCarloResult", "run_montecarlo", "relative_error", "SETUPS"]

MANIFEST_SCHEMA_VERSION = 1
SETUPS = ("mimo", "miso")


@dataclass(frozen=True)
class ExperimentManifest:
    """Everything needed to reproduce a run."""

    config: str
    target: tuple[int, int]
    N: tuple[int, ...] = (500, 2000, 8000)
    reps: int = 20
    seed: int = 0
    criterion: str = "ml_det"
    n_starts: int = 8
    burn_in: int = 1000
    grid_size: int = 256
    baseline: bool = True
    n_jobs: int = 1
    out_dir: str | None = None
    tool_version: str = __version__
    command: str = "montecarlo"

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(int(x) for x in self.target))
        object.__setattr__(self, "N", tuple(int(x) for x in self.N))
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.N or min(self.N) < 1:
            raise ValueError("sample sizes must be positive")
        if self.criterion not in ("ml_det", "wls"):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    def to_toml(self) -> str:
        d = asdict(self)
        doc = {"schema_version": MANIFEST_SCHEMA_VERSION, "tool_version": d.pop("tool_version"),
               "command": d.pop("command"), "config": d.pop("config"), "target": list(d.pop("target")),
               "seed": d.pop("seed")}
        out_dir = d.pop("out_dir")
        if out_dir is not None:
            doc["out_dir"] = out_dir
        d["N"] = list(d["N"])
        d.pop("n_jobs")     # worker count does not change results
        doc["parameters"] = d
        return tomli_w.dumps(doc)

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentManifest":
        doc = tomli.loads(text)
        if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema_version {doc.get('schema_version')!r}")
        params = dict(doc.get("parameters", {}))
        return cls(config=doc["config"], target=tuple(doc["target"]), seed=doc.get("seed", 0),
                   out_dir=doc.get("out_dir"), tool_version=doc.get("tool_version", __version__),
                   command=doc.get("command", "montecarlo"), **params)

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        return cls.from_toml(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())


def relative_error(estimate_response: np.ndarray, true_response: np.ndarray) -> float:
    """``max_w |G_hat - G0| / max_w |G0|`` on the grid."""
    return float(np.max(np.abs(estimate_response - true_response)) / np.max(np.abs(true_response)))


@dataclass
class Realization:
    setup: str
    n_index: int
    N: int
    rep: int
    seed: int
    status: str
    error: float
    response: np.ndarray | None = field(default=None, repr=False)


@dataclass
class MonteCarloResult:
    manifest: ExperimentManifest
    realizations: list[Realization]
    partition: dict
    complete: bool = True

    def errors(self, setup: str, N: int) -> np.ndarray:
        return np.array([r.error for r in self.realizations
                         if r.setup == setup and r.N == N and r.status == "ok"])

    def median_error(self, setup: str, N: int) -> float:
        e = self.errors(setup, N)
        return float(np.median(e)) if e.size else float("nan")

    def report(self) -> Report:
        return build_report(self)


def _realization(args):
    """Simulate once and estimate the target with every setup."""
    cfg_path, m, n_index, rep, N = args
    cfg = load_config(cfg_path)
    model = cfg.model
    j, i = m.target
    grid = default_grid(m.grid_size)
    ss = realization_seed(m.seed, n_index, rep)
    sim_seed, est_seed = (int(x) for x in ss.generate_state(2))
    out = []
    try:
        rec = simulate(SimulationPlan(model, N, burn_in=m.burn_in, seed=sim_seed))
    except Exception as exc:  # recorded as a failure marker
        return [Realization(s, n_index, N, rep, sim_seed, f"failed: simulation: {exc}", float("nan"))
                for s in _setups(m)]
    g0 = frequency_response(model.G(j, i), grid)
    opts = EstimationOptions(n_starts=m.n_starts, seed=est_seed)
    for setup in _setups(m):
        try:
            st = _structure(cfg, setup, j, i)
            res = estimate(st, rec, m.criterion, opts)
            resp = frequency_response(res.module(j, i), grid)
            out.append(Realization(setup, n_index, N, rep, sim_seed, "ok", relative_error(resp, g0), resp))
        except Exception as exc:
            out.append(Realization(setup, n_index, N, rep, sim_seed, f"failed: {exc}".replace("\n", " "),
                                   float("nan")))
    return out


def _setups(m: ExperimentManifest):
    return SETUPS if m.baseline else SETUPS[:1]


def _structure(cfg, setup: str, j: int, i: int):
    model = cfg.model
    if setup == "mimo":
        P = select_blocking_set(model, algorithm_a(model, j, i))
        return build_model_structure(P, model, None, cfg.orders)
    P = naive_miso_partition(model, j, i)
    return build_model_structure(P, model, np.eye(model.L, dtype=bool), cfg.orders)


def run_montecarlo(manifest: ExperimentManifest, emit: bool = True, progress=None) -> MonteCarloResult:
    """Run the experiment; writes the report to ``manifest.out_dir`` when given.

    A failing realization is kept with a ``failed: ...`` status.  If the run
    is interrupted, the partial results are written with ``complete = false``.
    """
    m = manifest
    cfg = load_config(m.config)
    j, i = m.target
    P = select_blocking_set(cfg.model, algorithm_a(cfg.model, j, i))
    jobs = [(m.config, m, n_index, rep, N) for n_index, N in enumerate(m.N) for rep in range(m.reps)]
    results: list[Realization] = []
    complete = True
    try:
        if m.n_jobs > 1:
            with ProcessPoolExecutor(max_workers=m.n_jobs) as pool:
                for chunk in pool.map(_realization, jobs):
                    results.extend(chunk)
                    if progress:
                        progress(chunk)
        else:
            for job in jobs:
                chunk = _realization(job)
                results.extend(chunk)
                if progress:
                    progress(chunk)
    except BaseException:
        complete = False
        raise
    finally:
        res = MonteCarloResult(m, results, P.describe(), complete)
        if emit and m.out_dir is not None:
            write_outputs(res, m.out_dir)
    return res


def write_outputs(result: MonteCarloResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = emit_report(result.report(), out)
    p = out / "manifest.toml"
    manifest = result.manifest if result.manifest.out_dir is not None else replace(result.manifest, out_dir=str(out))
    p.write_text(manifest.to_toml())
    return paths + [p]


def build_report(result: MonteCarloResult) -> Report:
    from . import plotting

    m = result.manifest
    grid = default_grid(m.grid_size)
    rep = Report("montecarlo")
    rep.values.update({
        "config": m.config,
        "target": list(m.target),
        "criterion": m.criterion,
        "reps": m.reps,
        "N": list(m.N),
        "seed": m.seed,
        "n_starts": m.n_starts,
        "complete": result.complete,
    })
    for k, v in result.partition.items():
        rep.values[f"partition.{k}"] = v

    rz = Table(["setup", "N", "rep", "seed", "status", "error"])
    for r in sorted(result.realizations, key=lambda r: (SETUPS.index(r.setup), r.n_index, r.rep)):
        rz.add(r.setup, r.N, r.rep, r.seed, r.status, r.error)

    summary = Table(["setup", "N", "reps", "ok", "failed", "median", "q25", "q75"])
    curves = Table(["setup", "N", "omega", "mean_abs_error", "bias", "std"])
    j, i = m.target
    g0 = frequency_response(load_config(m.config).model.G(j, i), grid)
    for setup in _setups(m):
        for n_index, N in enumerate(m.N):
            rows = [r for r in result.realizations if r.setup == setup and r.n_index == n_index]
            if not rows:
                continue
            ok = [r for r in rows if r.status == "ok"]
            errs = np.array([r.error for r in ok])
            if errs.size:
                q25, med, q75 = np.percentile(errs, [25, 50, 75])
            else:
                q25 = med = q75 = float("nan")
            summary.add(setup, N, len(rows), len(ok), len(rows) - len(ok), med, q25, q75)
            rep.values[f"median_error.{setup}.{N}"] = med
            if ok:
                R = np.array([r.response for r in ok])
                mean = R.mean(axis=0)
                mae = np.abs(R - g0).mean(axis=0)
                bias = np.abs(mean - g0)
                std = np.sqrt(np.mean(np.abs(R - mean) ** 2, axis=0))
                for k, w in enumerate(grid.frequencies):
                    curves.add(setup, N, float(w), mae[k], bias[k], std[k])
    rep.tables = {"errors_by_n": summary, "realizations": rz, "bias_curves": curves}

    rep.text.append(f"Monte Carlo experiment on {m.config}, target G_{j}{i}, criterion {m.criterion}")
    rep.text.append(f"partition: " + ", ".join(f"{k} = {v}" for k, v in result.partition.items()))
    rep.text.append("")
    rep.text.append(f"{'setup':<6} {'N':>7} {'ok':>4} {'failed':>6} {'median':>10} {'q25':>10} {'q75':>10}")
    for r in summary.rows:
        rep.text.append(f"{r[0]:<6} {r[1]:>7} {r[3]:>4} {r[4]:>6} {r[5]:>10.4g} {r[6]:>10.4g} {r[7]:>10.4g}")
    if not result.complete:
        rep.text.append("")
        rep.text.append("RUN INCOMPLETE: results above are partial")
    if summary.rows:
        rep.figures["error_vs_n"] = plotting.error_vs_samples
    if curves.rows:
        rep.figures["bias_curves"] = plotting.bias_curves
    return rep
