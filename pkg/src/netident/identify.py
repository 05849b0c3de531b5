"""Direct prediction-error estimation of network modules (MISO or MIMO setups).

Model structure for predicted outputs ``Y`` and predictor inputs ``D``::

    w_Y(t) = Gbar(q, theta) w_D(t) + Hbar(q, theta) xi(t),   Hbar = Dn(q)^-1 C(q)

Each free module is ``q^-nk B(q)/F(q)`` with ``B = b0 + ... + b_{nb-1} q^-(nb-1)``
and monic ``F`` of order ``nf``.  ``Dn`` is diagonal with a monic polynomial of
order ``nd`` per output; ``C = I + C_1 q^-1 + ... + C_nc q^-nc`` has free
off-diagonal entries only where the disturbances are known to be correlated.
Prediction errors follow ``C eps = Dn (w_Y - Gbar w_D)``, evaluated exactly
with the adjugate and determinant of ``C`` (zero initial conditions).

The innovation covariance is concentrated out: it is estimated as the sample
covariance of the prediction errors at the optimum.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
from scipy.signal import lfilter

from .config import Orders
from .graph import NodePartition, fmt_set
from .network import NetworkModel, SignalRecord
from .tf import FrequencyGrid, TransferFunction, default_grid, frequency_response

__all__ = [
    "ModuleSlot",
    "ModelStructure",
    "EstimationOptions",
    "EstimationResult",
    "ModuleEstimate",
    "DomainViolationError",
    "DegenerateResidualError",
    "EstimationError",
    "StructureError",
    "build_model_structure",
    "naive_miso_partition",
    "predict_errors",
    "criterion_wls",
    "criterion_ml_det",
    "criterion_and_gradient",
    "estimate",
    "extract_module",
    "true_parameters",
    "true_innovations",
    "whiteness_test",
    "excitation_diagnostic",
]


class StructureError(ValueError):
    pass


class DomainViolationError(ValueError):
    """Parameter vector outside the region of stable predictors."""


class DegenerateResidualError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


# -- model structure ------------------------------------------------------------

@dataclass(frozen=True)
class ModuleSlot:
    row: int            # node index of the output
    col: int            # node index of the input
    nb: int
    nf: int
    nk: int
    b: slice
    f: slice


@dataclass(frozen=True, eq=False)
class ModelStructure:
    partition: NodePartition
    outputs: tuple[int, ...]
    inputs: tuple[int, ...]
    modules: tuple[ModuleSlot, ...]
    nd: int
    nc: int
    noise_entries: tuple[tuple[int, int], ...]   # (a, b) positions in ``outputs`` order
    d: tuple[slice, ...]                         # per output
    c: tuple[slice, ...]                         # per noise entry, lags 1..nc
    n_params: int

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    def slot(self, j: int, i: int) -> ModuleSlot:
        for s in self.modules:
            if (s.row, s.col) == (j, i):
                return s
        raise StructureError(f"module G_{j}{i} is not a free module of this structure")

    def has_module(self, j: int, i: int) -> bool:
        return any((s.row, s.col) == (j, i) for s in self.modules)

    def strictly_proper(self) -> bool:
        return all(s.nk >= 1 for s in self.modules)

    def module_tf(self, theta, j: int, i: int) -> TransferFunction:
        s = self.slot(j, i)
        th = np.asarray(theta, dtype=float)
        return TransferFunction(th[s.b], np.r_[1.0, th[s.f]], s.nk)

    def noise_polynomials(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """``(Dn, C)``: shapes (n, nd+1) and (nc+1, n, n)."""
        th = np.asarray(theta, dtype=float)
        n = self.n_outputs
        Dn = np.zeros((n, self.nd + 1))
        Dn[:, 0] = 1.0
        for a, sl in enumerate(self.d):
            Dn[a, 1:] = th[sl]
        C = np.zeros((self.nc + 1, n, n))
        C[0] = np.eye(n)
        for (a, b), sl in zip(self.noise_entries, self.c):
            C[1:, a, b] = th[sl]
        return Dn, C

    def noise_response(self, theta, grid) -> np.ndarray:
        """``Hbar(e^{iw})`` with shape (M, n, n)."""
        w = grid.frequencies if isinstance(grid, FrequencyGrid) else np.atleast_1d(grid)
        Dn, C = self.noise_polynomials(theta)
        zinv = np.exp(-1j * np.outer(w, np.arange(max(self.nc, self.nd) + 1)))
        Cz = np.einsum("mk,kab->mab", zinv[:, : self.nc + 1], C)
        Dz = zinv[:, : self.nd + 1] @ Dn.T
        return Cz / Dz[:, :, None]

    def describe(self) -> dict:
        names = []
        for s in self.modules:
            names += [f"b{k}[{s.row},{s.col}]" for k in range(s.nb)]
            names += [f"f{k}[{s.row},{s.col}]" for k in range(1, s.nf + 1)]
        for a in range(self.n_outputs):
            names += [f"d{k}[{self.outputs[a]}]" for k in range(1, self.nd + 1)]
        for a, b in self.noise_entries:
            names += [f"c{k}[{self.outputs[a]},{self.outputs[b]}]" for k in range(1, self.nc + 1)]
        return {
            "outputs": list(self.outputs),
            "inputs": list(self.inputs),
            "modules": [[s.row, s.col, s.nb, s.nf, s.nk] for s in self.modules],
            "nd": self.nd,
            "nc": self.nc,
            "noise_entries": [[self.outputs[a], self.outputs[b]] for a, b in self.noise_entries],
            "n_params": self.n_params,
            "parameter_names": names,
        }


def _module_edges(topology) -> set[tuple[int, int]]:
    if isinstance(topology, NetworkModel):
        return set(topology.modules)
    return {(int(j), int(l)) for j, l in topology}


def _feedthrough_path(model: NetworkModel, sources, targets) -> list[int] | None:
    """A path made only of modules with direct feedthrough, if any."""
    g = nx.DiGraph()
    g.add_edges_from((l, j) for (j, l), tf in model.modules.items() if not tf.strictly_proper())
    for s in sorted(sources):
        if s not in g:
            continue
        for t in sorted(targets):
            if t not in g:
                continue
            if s == t:
                try:
                    cyc = nx.find_cycle(g, s)
                    return [s] + [v for _, v in cyc]
                except nx.NetworkXNoCycle:
                    continue
            if nx.has_path(g, s, t):
                return nx.shortest_path(g, s, t)
    return None


def build_model_structure(partition: NodePartition, topology, noise_pattern=None,
                          orders: Orders | None = None) -> ModelStructure:
    """Free parameters exactly where the topology and noise pattern are nonzero.

    ``topology`` is a ``NetworkModel`` or an iterable of module edges ``(j, l)``.
    ``noise_pattern`` is an L x L boolean disturbance-correlation pattern; when
    omitted it is taken from ``topology`` (which must then be a model), and a
    diagonal noise model is used if neither is available.
    """
    orders = orders or Orders()
    edges = _module_edges(topology)
    Yo = tuple(partition.outputs)
    Di = tuple(partition.inputs)
    model = topology if isinstance(topology, NetworkModel) else None
    if noise_pattern is None and model is not None:
        noise_pattern = model.correlation_pattern()

    for (j, l) in orders.per_module:
        if (j, l) not in edges or j not in Yo or l not in Di:
            raise StructureError(f"orders given for module G_{j}{l}, which is not in the structure")

    for y in Yo:
        missing = {l for (j, l) in edges if j == y} - set(Di)
        if missing:
            raise StructureError(f"in-neighbours {fmt_set(missing)} of w{y} are not predictor inputs")

    pos = 0
    slots = []
    for y in Yo:
        for c in Di:
            if (y, c) not in edges:
                continue
            nb, nf, nk = orders.module(y, c)
            if nb < 1 or nf < 0 or nk < 0:
                raise StructureError(f"invalid orders for G_{y}{c}: nb={nb}, nf={nf}, nk={nk}")
            slots.append(ModuleSlot(y, c, nb, nf, nk, slice(pos, pos + nb), slice(pos + nb, pos + nb + nf)))
            pos += nb + nf
    if orders.nd < 0 or orders.nc < 0:
        raise StructureError("noise orders must be nonnegative")
    d = []
    for _ in Yo:
        d.append(slice(pos, pos + orders.nd))
        pos += orders.nd
    entries = []
    for a, ya in enumerate(Yo):
        for b, yb in enumerate(Yo):
            if a == b or (noise_pattern is not None and np.asarray(noise_pattern)[ya - 1, yb - 1]):
                entries.append((a, b))
    c = []
    for _ in entries:
        c.append(slice(pos, pos + orders.nc))
        pos += orders.nc

    st = ModelStructure(partition, Yo, Di, tuple(slots), orders.nd, orders.nc, tuple(entries),
                        tuple(d), tuple(c), pos)

    # delay condition: feedthrough in the parametrization needs delays in the network loops
    if model is not None and not st.strictly_proper() and not model.all_strictly_proper():
        P = partition
        srcs = set(P.Q) | ({P.o} if P.o is not None else set()) | set(P.B)
        path = _feedthrough_path(model, srcs, set(Yo))
        if path is not None:
            raise StructureError(
                "delay condition violated: path " + " -> ".join(f"w{k}" for k in path)
                + " has no delay and the parametrized modules allow direct feedthrough"
            )
    return st


def naive_miso_partition(model: NetworkModel, j: int, i: int) -> NodePartition:
    """Baseline setup: predict ``w_j`` alone from all its in-neighbours."""
    N = frozenset(model.in_neighbors(j))
    if i not in N:
        raise StructureError(f"module G_{j}{i} is not present in the network")
    return NodePartition(L=model.L, target=(j, i), Y=frozenset({j}), D=N, Q=frozenset(), A=N,
                         B=frozenset(), o=j)


# -- predictor --------------------------------------------------------------------

def _poly_stable(p: np.ndarray, tol: float = 0.0) -> bool:
    p = np.trim_zeros(np.asarray(p, dtype=float), "b")
    if p.size <= 1:
        return True
    return bool(np.max(np.abs(np.roots(p))) < 1.0 - tol)


def _cofactor_poly(C: np.ndarray):
    """Adjugate and determinant coefficients of the matrix polynomial ``C``."""
    nc1, n, _ = C.shape
    nc = nc1 - 1
    if n == 1:
        return np.ones((1, 1, 1)), C[:, 0, 0].copy()
    deg = n * nc
    M = 1
    while M < deg + 1:
        M *= 2
    Cz = np.fft.fft(C, n=M, axis=0)
    det = np.fft.ifft(np.linalg.det(Cz)).real[: deg + 1]
    adeg = (n - 1) * nc
    adj = np.zeros((n, n, adeg + 1))
    rows = np.arange(n)
    for a in range(n):
        for b in range(n):
            minor = Cz[:, rows != a][:, :, rows != b]
            val = (-1) ** (a + b) * np.linalg.det(minor)
            adj[b, a] = np.fft.ifft(val).real[: adeg + 1]
    return adj, det


@dataclass
class _Filters:
    Dn: np.ndarray
    C: np.ndarray
    adj: np.ndarray
    det: np.ndarray

    def apply_column(self, a: int, x: np.ndarray) -> np.ndarray:
        """``C^-1 (e_a x)`` for x of shape (N, m); returns (N, n, m)."""
        n = self.adj.shape[0]
        out = np.empty((x.shape[0], n, x.shape[1]))
        for b in range(n):
            out[:, b, :] = lfilter(self.adj[b, a], self.det, x, axis=0)
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``C^-1 u`` for u of shape (N, n)."""
        n = self.adj.shape[0]
        acc = np.zeros_like(u)
        for b in range(n):
            for a in range(n):
                acc[:, b] += lfilter(self.adj[b, a], [1.0], u[:, a])
        return lfilter([1.0], self.det, acc, axis=0)


def _domain_problem(st: ModelStructure, theta: np.ndarray) -> str | None:
    for s in st.modules:
        if not _poly_stable(np.r_[1.0, theta[s.f]]):
            return f"denominator of G_{s.row}{s.col} is unstable"
    Dn, C = st.noise_polynomials(theta)
    for a in range(st.n_outputs):
        if not _poly_stable(Dn[a]):
            return f"noise denominator of output w{st.outputs[a]} is unstable"
    _, det = _cofactor_poly(C)
    if not _poly_stable(det):
        return "noise model is not stably invertible (det C has roots on or outside the unit circle)"
    return None


def _prepare(st: ModelStructure, theta: np.ndarray) -> _Filters:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (st.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({st.n_params},)")
    if not np.all(np.isfinite(theta)):
        raise DomainViolationError("non-finite parameters")
    msg = _domain_problem(st, theta)
    if msg:
        raise DomainViolationError(msg)
    Dn, C = st.noise_polynomials(theta)
    adj, det = _cofactor_poly(C)
    return _Filters(Dn, C, adj, det)


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return x
    out = np.zeros_like(x)
    if k < x.shape[0]:
        out[k:] = x[:-k]
    return out


def _signals(st: ModelStructure, data) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    if isinstance(data, SignalRecord):
        wy = data.w(st.outputs)
        wd = {c: data[f"w{c}"] for c in st.inputs}
    else:
        wy, wd = data
    return wy, wd


def _evaluate(st: ModelStructure, theta, data, jacobian: bool):
    """Prediction errors (N, n) and optionally their parameter sensitivities (N, n, p)."""
    theta = np.asarray(theta, dtype=float)
    flt = _prepare(st, theta)
    wy, wd = _signals(st, data)
    N, n = wy.shape
    s = wy.copy()
    row = {y: a for a, y in enumerate(st.outputs)}
    mod_cache = []
    for sl in st.modules:
        den = np.r_[1.0, theta[sl.f]]
        num = np.r_[np.zeros(sl.nk), theta[sl.b]]
        v = lfilter([1.0], den, wd[sl.col])
        gw = lfilter(num, [1.0], v)
        s[:, row[sl.row]] -= gw
        mod_cache.append((v, gw, den))
    u = np.column_stack([lfilter(flt.Dn[a], [1.0], s[:, a]) for a in range(n)]) if n else s
    eps = flt.apply(u)
    if not np.all(np.isfinite(eps)) or np.max(np.abs(eps)) > 1e10 * (1.0 + np.max(np.abs(wy))):
        raise DomainViolationError("prediction errors blow up")
    if not jacobian:
        return eps, None

    psi = np.zeros((N, n, st.n_params))
    # group base signals by output row so each row needs one batched C^-1 pass
    bases: dict[int, list[tuple[np.ndarray, list[tuple[int, int, float]]]]] = {a: [] for a in range(n)}
    for sl, (v, gw, den) in zip(st.modules, mod_cache):
        a = row[sl.row]
        base_b = -lfilter(flt.Dn[a], [1.0], v)
        cols_b = [(sl.b.start + k, sl.nk + k, 1.0) for k in range(sl.nb)]
        bases[a].append((base_b, cols_b))
        if sl.nf:
            base_f = lfilter(flt.Dn[a], [1.0], lfilter([1.0], den, gw))
            cols_f = [(sl.f.start + k - 1, k, 1.0) for k in range(1, sl.nf + 1)]
            bases[a].append((base_f, cols_f))
    for a in range(n):
        if st.nd:
            bases[a].append((s[:, a], [(st.d[a].start + k - 1, k, 1.0) for k in range(1, st.nd + 1)]))
    for (a, b), sl in zip(st.noise_entries, st.c):
        if st.nc:
            bases[a].append((eps[:, b], [(sl.start + k - 1, k, -1.0) for k in range(1, st.nc + 1)]))
    for a in range(n):
        if not bases[a]:
            continue
        X = np.column_stack([x for x, _ in bases[a]])
        Y = flt.apply_column(a, X)
        for m, (_, cols) in enumerate(bases[a]):
            for idx, lag, sign in cols:
                psi[:, :, idx] = sign * _shift(Y[:, :, m], lag)
    return eps, psi


def predict_errors(structure: ModelStructure, theta, data: SignalRecord) -> SignalRecord:
    """One-step-ahead prediction errors ``eps<k>`` for each predicted output ``k``."""
    eps, _ = _evaluate(structure, theta, data, jacobian=False)
    return SignalRecord({f"eps{y}": eps[:, a] for a, y in enumerate(structure.outputs)})


# -- criteria -----------------------------------------------------------------------

def _as_matrix(eps) -> np.ndarray:
    if isinstance(eps, SignalRecord):
        return np.column_stack([eps[k] for k in eps.names])
    e = np.asarray(eps, dtype=float)
    return e[:, None] if e.ndim == 1 else e


def _check_weight(W, n: int) -> np.ndarray:
    W = np.eye(n) if W is None else np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (n, n):
        raise ValueError(f"weighting matrix must be {n}x{n}")
    if not np.allclose(W, W.T, atol=1e-12):
        raise ValueError("weighting matrix must be symmetric")
    if np.linalg.eigvalsh(W).min() <= 0:
        raise ValueError("weighting matrix must be positive definite")
    return W


def criterion_wls(eps, W=None) -> float:
    """``(1/N) sum_t eps(t)^T W eps(t)``."""
    e = _as_matrix(eps)
    W = _check_weight(W, e.shape[1])
    return float(np.einsum("ta,ab,tb->", e, W, e) / e.shape[0])


def _sample_cov(e: np.ndarray) -> np.ndarray:
    return e.T @ e / e.shape[0]


def criterion_ml_det(eps, rcond: float = 1e-12) -> float:
    """Determinant of the sample covariance of the prediction errors."""
    e = _as_matrix(eps)
    R = _sample_cov(e)
    ev = np.linalg.eigvalsh(R)
    if ev.max() <= 0 or ev.min() <= rcond * ev.max():
        raise DegenerateResidualError("sample covariance of the prediction errors is singular")
    return float(np.linalg.det(R))


def criterion_and_gradient(structure: ModelStructure, theta, data, criterion: str = "ml_det",
                           W=None) -> tuple[float, np.ndarray]:
    """Criterion value and its exact gradient with respect to ``theta``."""
    eps, psi = _evaluate(structure, theta, data, jacobian=True)
    N = eps.shape[0]
    if criterion == "wls":
        W = _check_weight(W, eps.shape[1])
        V = criterion_wls(eps, W)
        g = 2.0 / N * np.einsum("ta,ab,tbp->p", eps, W, psi)
    elif criterion == "ml_det":
        V = criterion_ml_det(eps)
        Rinv = np.linalg.inv(_sample_cov(eps))
        g = V * 2.0 / N * np.einsum("ta,ab,tbp->p", eps, Rinv, psi)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return V, g


# -- optimizer ---------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationOptions:
    n_starts: int = 8
    seed: int = 0
    init: tuple[float, ...] | None = None
    max_iter: int = 100
    tol: float = 1e-10
    weight: tuple | None = None          # WLS weighting matrix (nested tuples), identity if None
    n_jobs: int = 1
    min_samples_per_param: int = 10

    def weight_matrix(self, n: int) -> np.ndarray:
        return _check_weight(None if self.weight is None else np.array(self.weight, dtype=float), n)


@dataclass
class StartRecord:
    index: int
    init: np.ndarray
    theta: np.ndarray | None
    value: float
    iterations: int
    history: list[float]
    status: str


@dataclass
class EstimationResult:
    structure: ModelStructure
    criterion: str
    theta: np.ndarray
    value: float
    lambda_hat: np.ndarray
    gradient_norm: float
    iterations: int
    restarts: int
    best_start: int
    history: list[float]
    starts: list[StartRecord]
    residuals: SignalRecord

    def module(self, j: int, i: int) -> TransferFunction:
        return self.structure.module_tf(self.theta, j, i)

    def summary(self) -> dict:
        return {
            "criterion": self.criterion,
            "value": self.value,
            "n_params": self.structure.n_params,
            "iterations": self.iterations,
            "restarts": self.restarts,
            "best_start": self.best_start,
            "gradient_norm": self.gradient_norm,
            "lambda_hat": self.lambda_hat.tolist(),
            "theta": self.theta.tolist(),
            "start_values": [s.value for s in self.starts],
            "start_status": [s.status for s in self.starts],
        }


def _stable_poly(rng: np.random.Generator, order: int, radius: float = 0.8) -> np.ndarray:
    """Monic polynomial with roots inside the unit disk, via reflection coefficients."""
    a = np.array([1.0])
    for k in rng.uniform(-radius, radius, order):
        a = np.r_[a, 0.0] + k * np.r_[0.0, a[::-1]]
    return a


def _random_start(st: ModelStructure, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    th = np.zeros(st.n_params)
    for s in st.modules:
        th[s.b] = rng.normal(0.0, 0.5 * scale, s.nb)
        th[s.f] = _stable_poly(rng, s.nf, 0.8 * scale)[1:]
    for sl in st.d:
        th[sl] = _stable_poly(rng, st.nd, 0.8 * scale)[1:]
    for _ in range(100):
        for (a, b), sl in zip(st.noise_entries, st.c):
            th[sl] = rng.normal(0.0, 0.3 * scale, st.nc) if a != b else _stable_poly(rng, st.nc, 0.8 * scale)[1:]
        if _domain_problem(st, th) is None:
            return th
    for sl in st.c:
        th[sl] = 0.0
    return th


def _small_start(st: ModelStructure, rng: np.random.Generator) -> np.ndarray:
    th = np.zeros(st.n_params)
    for s in st.modules:
        th[s.b] = rng.normal(0.0, 0.1, s.nb)
    return th


def _objective(eps: np.ndarray, criterion: str, W: np.ndarray | None) -> float:
    if criterion == "wls":
        return criterion_wls(eps, W)
    return float(np.linalg.slogdet(_sample_cov(eps))[1])


def _levenberg_marquardt(st, data, theta0, criterion, W, max_iter, tol):
    """Damped Gauss-Newton; only criterion-decreasing steps are accepted."""
    theta = np.array(theta0, dtype=float)
    eps, psi = _evaluate(st, theta, data, jacobian=True)
    N = eps.shape[0]
    obj = _objective(eps, criterion, W)
    history = [obj]
    lam = 1e-3
    it = 0
    stall = 0
    grad = np.zeros(st.n_params)
    while it < max_iter:
        Wk = W if criterion == "wls" else np.linalg.inv(_sample_cov(eps))
        Lw = np.linalg.cholesky(Wk)
        r = (eps @ Lw).ravel()
        J = np.einsum("tap,ab->tbp", psi, Lw).reshape(-1, st.n_params)
        H = J.T @ J
        grad = J.T @ r
        scale = np.maximum(np.diag(H), 1e-12 * max(1.0, np.trace(H)))
        improved = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(H + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            try:
                eps_t, _ = _evaluate(st, trial, data, jacobian=False)
                obj_t = _objective(eps_t, criterion, W)
            except (DomainViolationError, np.linalg.LinAlgError):
                lam *= 10.0
                continue
            if np.isfinite(obj_t) and obj_t < obj:
                improved = True
                break
            lam *= 4.0
        it += 1
        if not improved:
            break
        rel = (obj - obj_t) / max(1.0, abs(obj))
        theta = trial
        obj = obj_t
        history.append(obj)
        lam = max(lam / 3.0, 1e-12)
        eps, psi = _evaluate(st, theta, data, jacobian=True)
        stall = stall + 1 if rel < tol else 0
        if stall >= 2 or np.max(np.abs(step)) < 1e-12 * (1.0 + np.max(np.abs(theta))):
            break
    # gradient of the optimized objective at the final point
    Wk = W if criterion == "wls" else np.linalg.inv(_sample_cov(eps))
    grad = 2.0 / N * np.einsum("ta,ab,tbp->p", eps, Wk, psi)
    return theta, obj, it, history, grad, eps


def _run_start(args):
    st, data, k, init, criterion, W, max_iter, tol = args
    try:
        theta, obj, it, hist, grad, eps = _levenberg_marquardt(st, data, init, criterion, W, max_iter, tol)
        return StartRecord(k, init, theta, obj, it, hist, "ok"), grad, eps
    except (DomainViolationError, DegenerateResidualError, np.linalg.LinAlgError) as exc:
        return StartRecord(k, init, None, np.inf, 0, [], f"failed: {exc}"), None, None


def estimate(structure: ModelStructure, data: SignalRecord, criterion: str = "ml_det",
             options: EstimationOptions | None = None) -> EstimationResult:
    """Multistart minimization of the WLS (``"wls"``) or ML-determinant (``"ml_det"``) criterion.

    Start 0 uses ``options.init`` (or a small random point); the remaining
    starts are random inside the stability region.  Starts are seeded from
    ``SeedSequence(options.seed).spawn(n_starts)``.  The best start has the
    lowest criterion, ties broken by the lowest start index.
    """
    opts = options or EstimationOptions()
    if criterion not in ("wls", "ml_det"):
        raise ValueError(f"unknown criterion {criterion!r}")
    st = structure
    wy, wd = _signals(st, data)
    N = wy.shape[0]
    if N < opts.min_samples_per_param * max(st.n_params, 1):
        raise EstimationError(
            f"{N} samples are too few for {st.n_params} parameters "
            f"(need at least {opts.min_samples_per_param} per parameter)"
        )
    W = opts.weight_matrix(st.n_outputs) if criterion == "wls" else None
    sigs = (wy, wd)
    seqs = np.random.SeedSequence(opts.seed).spawn(opts.n_starts)
    inits = []
    for k, seq in enumerate(seqs):
        rng = np.random.default_rng(seq)
        if k == 0:
            init = np.array(opts.init, dtype=float) if opts.init is not None else _small_start(st, rng)
        else:
            init = _random_start(st, rng)
        if _domain_problem(st, init) is not None:
            init = _random_start(st, rng)
        inits.append(init)
    jobs = [(st, sigs, k, inits[k], criterion, W, opts.max_iter, opts.tol) for k in range(opts.n_starts)]
    if opts.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=opts.n_jobs) as pool:
            outcomes = list(pool.map(_run_start, jobs))
    else:
        outcomes = [_run_start(j) for j in jobs]

    ok = [(rec, g, e) for rec, g, e in outcomes if rec.theta is not None]
    if not ok:
        raise EstimationError("all starts failed: " + "; ".join(r.status for r, _, _ in outcomes))
    best, grad, eps = min(ok, key=lambda t: (t[0].value, t[0].index))
    if criterion == "ml_det":
        # the optimizer works with log det; report the determinant itself
        for rec, _, _ in outcomes:
            rec.value = float(np.exp(rec.value))
            rec.history = [float(np.exp(h)) for h in rec.history]
    R = _sample_cov(eps)
    value = criterion_wls(eps, W) if criterion == "wls" else float(np.linalg.det(R))
    history = best.history
    resid = SignalRecord({f"eps{y}": eps[:, a] for a, y in enumerate(st.outputs)})
    return EstimationResult(
        structure=st,
        criterion=criterion,
        theta=best.theta,
        value=value,
        lambda_hat=R,
        gradient_norm=float(np.linalg.norm(grad)),
        iterations=best.iterations,
        restarts=opts.n_starts,
        best_start=best.index,
        history=history,
        starts=[r for r, _, _ in outcomes],
        residuals=resid,
    )


# -- results ---------------------------------------------------------------------

@dataclass
class ModuleEstimate:
    target: tuple[int, int]
    tf: TransferFunction
    grid: FrequencyGrid
    response: np.ndarray

    @property
    def coefficients(self) -> dict:
        return self.tf.to_dict()


def extract_module(result: EstimationResult, j: int, i: int, grid: FrequencyGrid | None = None) -> ModuleEstimate:
    grid = grid or default_grid()
    tf = result.module(j, i)
    return ModuleEstimate((j, i), tf, grid, frequency_response(tf, grid))


def _row_denominator(tfs: Sequence[TransferFunction]) -> np.ndarray:
    den = np.array([1.0])
    seen: list[np.ndarray] = []
    for tf in tfs:
        d = tf.den
        if d.size > 1 and not any(s.size == d.size and np.allclose(s, d) for s in seen):
            seen.append(d)
            den = np.convolve(den, d)
    return den


def _true_noise(structure: ModelStructure, model: NetworkModel):
    Y = structure.outputs
    n = len(Y)
    for a, y in enumerate(Y):
        for (j, k) in model.noise:
            if j == y and k not in Y:
                raise StructureError(f"noise source e{k} of output w{y} lies outside the predicted outputs")
    Dn, polys = [], []
    for y in Y:
        row = [model.H(y, k) for k in Y]
        den = _row_denominator([t for t in row if not t.is_zero])
        Dn.append(den)
        entries = []
        for t in row:
            if t.is_zero:
                entries.append(np.zeros(1))
                continue
            quo, rem = np.polydiv(den[::-1], t.den[::-1])  # reversed: polynomials in q^-1
            p = np.convolve(t.delayed_numerator(), quo[::-1])
            entries.append(p)
        polys.append(entries)
    deg = max(p.size for row in polys for p in row) - 1
    C = np.zeros((deg + 1, n, n))
    for a in range(n):
        for b in range(n):
            p = polys[a][b]
            C[: p.size, a, b] = p
    M0 = C[0].copy()
    C = np.einsum("kab,bc->kac", C, np.linalg.inv(M0))
    return Dn, C, M0


def true_parameters(structure: ModelStructure, model: NetworkModel) -> np.ndarray:
    """Parameter vector reproducing the true modules and noise model, if representable."""
    th = np.zeros(structure.n_params)
    for s in structure.modules:
        tf = model.G(s.row, s.col)
        if tf.is_zero:
            continue
        num = np.asarray(tf.num, dtype=float)
        off = tf.dead_time - s.nk
        if off < 0 or off + num.size > s.nb or tf.den.size - 1 > s.nf:
            raise StructureError(f"true module G_{s.row}{s.col} is not in the model set")
        th[s.b.start + off: s.b.start + off + num.size] = num
        th[s.f.start: s.f.start + tf.den.size - 1] = tf.den[1:]
    Dn, C, _ = _true_noise(structure, model)
    for a, den in enumerate(Dn):
        if den.size - 1 > structure.nd:
            raise StructureError(f"noise denominator of w{structure.outputs[a]} exceeds nd")
        th[structure.d[a].start: structure.d[a].start + den.size - 1] = den[1:]
    if C.shape[0] - 1 > structure.nc:
        raise StructureError("noise numerator exceeds nc")
    free = set(structure.noise_entries)
    for a in range(C.shape[1]):
        for b in range(C.shape[2]):
            lagged = C[1:, a, b]
            if (a, b) not in free:
                if np.any(np.abs(lagged) > 1e-12):
                    raise StructureError("true noise model needs an entry fixed to zero in the structure")
                continue
            sl = structure.c[structure.noise_entries.index((a, b))]
            th[sl.start: sl.start + lagged.size] = lagged
    return th


def true_innovations(structure: ModelStructure, model: NetworkModel, record: SignalRecord) -> np.ndarray:
    """Innovations ``xi_Y = M0 e_Y`` of the monic noise representation, shape (N, n)."""
    _, _, M0 = _true_noise(structure, model)
    return record.stack("e", structure.outputs) @ M0.T


# -- diagnostics ---------------------------------------------------------------------

def whiteness_test(residuals: SignalRecord, lags: int = 20, alpha: float = 0.01) -> dict[str, dict]:
    """Ljung-Box portmanteau test on each residual channel."""
    from statsmodels.stats.diagnostic import acorr_ljungbox

    out = {}
    for name in residuals.names:
        lb = acorr_ljungbox(residuals[name], lags=[lags])
        p = float(lb["lb_pvalue"].iloc[0])
        out[name] = {"statistic": float(lb["lb_stat"].iloc[0]), "pvalue": p, "white": p >= alpha}
    return out


def excitation_diagnostic(structure: ModelStructure, model: NetworkModel, record: SignalRecord,
                          nperseg: int = 256) -> dict:
    """Minimum eigenvalue of the empirical spectrum of ``[w_D; xi_Q; w_o]`` (simulation only)."""
    from scipy.signal import csd

    P = structure.partition
    xi = true_innovations(structure, model, record)
    cols = [record[f"w{c}"] for c in structure.inputs]
    cols += [xi[:, structure.outputs.index(q)] for q in sorted(P.Q)]
    if P.o is not None:
        cols.append(record[f"w{P.o}"])
    X = np.column_stack(cols)
    m = X.shape[1]
    f, _ = csd(X[:, 0], X[:, 0], nperseg=nperseg)
    S = np.zeros((f.size, m, m), dtype=complex)
    for a in range(m):
        for b in range(a, m):
            _, S[:, a, b] = csd(X[:, a], X[:, b], nperseg=nperseg)
            S[:, b, a] = np.conj(S[:, a, b])
    ev = np.linalg.eigvalsh(S).min(axis=1)
    interior = slice(1, -1)
    return {"min_eigenvalue": float(ev[interior].min()), "frequencies": f, "eigenvalues": ev}
