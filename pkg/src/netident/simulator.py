"""Time-domain simulation of ``w = G w + r + H e`` from zero initial conditions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import block_diag
from scipy.signal import BadCoefficients, lfilter, tf2ss

from .network import NetworkModel, SignalRecord, noise_factor
from .tf import FrequencyGrid, TransferFunction, default_grid, filter_signal

__all__ = [
    "Excitation",
    "SimulationPlan",
    "AlgebraicLoopError",
    "UnstableNetworkError",
    "stability_check",
    "closed_loop_radius",
    "generate_noise",
    "simulate",
    "realization_seed",
]

MARGIN_FLOOR = 1e-3


class AlgebraicLoopError(ValueError):
    pass


class UnstableNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Excitation:
    """External signal on one node.

    kind is ``"white"`` (Gaussian, standard deviation ``std``), ``"filtered"``
    (white passed through ``tf``) or ``"multisine"`` (sum of cosines at
    ``frequencies`` with ``amplitudes`` and random phases).
    """

    kind: str = "white"
    std: float = 1.0
    tf: TransferFunction | None = None
    frequencies: tuple[float, ...] = ()
    amplitudes: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("white", "filtered", "multisine"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if self.kind == "filtered" and self.tf is None:
            raise ValueError("filtered excitation needs a transfer function")
        if self.kind == "multisine" and len(self.frequencies) != len(self.amplitudes):
            raise ValueError("multisine needs one amplitude per frequency")

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "multisine":
            t = np.arange(n)
            phases = rng.uniform(0, 2 * np.pi, len(self.frequencies))
            out = np.zeros(n)
            for f, a, p in zip(self.frequencies, self.amplitudes, phases):
                out += a * np.cos(f * t + p)
            return out
        x = self.std * rng.standard_normal(n)
        if self.kind == "filtered":
            x = filter_signal(self.tf, x)
        return x


@dataclass(frozen=True)
class SimulationPlan:
    model: NetworkModel
    N: int
    burn_in: int = 1000
    seed: int = 0
    excitation: Mapping[int, Excitation] | None = None
    distribution: str = "gaussian"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.distribution not in ("gaussian", "uniform"):
            raise ValueError(f"unknown innovation distribution {self.distribution!r}")
        exc = self.excitation
        if exc is None:
            exc = {k: Excitation() for k in self.model.nodes if self.model.r_present[k - 1]}
        for k in exc:
            if not self.model.r_present[k - 1]:
                raise ValueError(f"node {k} has no external excitation in the model")
        object.__setattr__(self, "excitation", dict(sorted(exc.items())))


def realization_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Seed stream for one realization.

    Realization ``key`` (e.g. ``(n_index, rep)``) of a run with master seed
    ``master`` uses ``SeedSequence(master, spawn_key=key)``; streams for
    different keys are statistically independent.
    """
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def _edge_realization(tf: TransferFunction):
    num = tf.delayed_numerator()
    den = tf.den
    n = max(num.size, den.size) - 1
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), float(num[0] / den[0])
    with warnings.catch_warnings():
        # leading zero of a delayed numerator is expected, not ill-conditioning
        warnings.simplefilter("ignore", BadCoefficients)
        a, b, c, d = tf2ss(np.pad(num, (0, n + 1 - num.size)), np.pad(den, (0, n + 1 - den.size)))
    return a, b, c, float(d[0, 0])


def _network_state_space(model: NetworkModel):
    """State space of the map ``w -> G w`` plus its feedthrough matrix ``D0``."""
    L = model.L
    blocks, bs, cs = [], [], []
    d0 = np.zeros((L, L))
    for (j, l), tf in model.modules.items():
        a, b, c, d = _edge_realization(tf)
        d0[j - 1, l - 1] += d
        if a.shape[0] == 0:
            continue
        blocks.append(a)
        bl = np.zeros((a.shape[0], L))
        bl[:, l - 1] = b[:, 0]
        cl = np.zeros((L, a.shape[0]))
        cl[j - 1, :] = c[0, :]
        bs.append(bl)
        cs.append(cl)
    if blocks:
        A = block_diag(*blocks)
        B = np.vstack(bs)
        C = np.hstack(cs)
    else:
        A, B, C = np.zeros((0, 0)), np.zeros((0, L)), np.zeros((L, 0))
    return A, B, C, d0


def _closed_loop(model: NetworkModel):
    A, B, C, d0 = _network_state_space(model)
    I = np.eye(model.L)
    if np.linalg.cond(I - d0) > 1e12:
        raise AlgebraicLoopError("I - D0 is singular: the instantaneous loop is not well posed")
    M = np.linalg.inv(I - d0)
    return A + B @ M @ C, B @ M, M @ C, M


def closed_loop_radius(model: NetworkModel) -> float:
    """Largest closed-loop pole modulus of the network dynamics."""
    Acl, *_ = _closed_loop(model)
    if Acl.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(Acl))))


def stability_check(model: NetworkModel, grid: FrequencyGrid | None = None,
                    margin_floor: float = MARGIN_FLOOR) -> tuple[bool, float]:
    """Return ``(stable, margin)`` with ``margin = 1 - max_w rho(G(e^{iw}))``.

    Stable iff the margin exceeds ``margin_floor`` and every module is stable.
    """
    grid = grid or default_grid()
    if model.modules:
        g = model.G_response(grid)
        rho = np.max(np.abs(np.linalg.eigvals(g)))
    else:
        rho = 0.0
    margin = float(1.0 - rho)
    modules_ok = all(tf.is_stable() for tf in model.modules.values())
    return bool(margin > margin_floor and modules_ok), margin


def _innovations(model: NetworkModel, n: int, rng: np.random.Generator, distribution: str) -> np.ndarray:
    if distribution == "gaussian":
        u = rng.standard_normal((n, model.L))
    else:
        u = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), (n, model.L))
    return u @ noise_factor(model.noise_covariance).T


def _colour(model: NetworkModel, e: np.ndarray) -> np.ndarray:
    v = np.zeros_like(e)
    for (j, k), tf in model.noise.items():
        v[:, j - 1] += lfilter(tf.delayed_numerator(), tf.den, e[:, k - 1])
    return v


def generate_noise(plan: SimulationPlan) -> SignalRecord:
    """White sources ``e`` (covariance Lambda) and process noise ``v = H e``."""
    model = plan.model
    noise_seq, _ = np.random.SeedSequence(plan.seed).spawn(2)
    total = plan.N + plan.burn_in
    e = _innovations(model, total, np.random.default_rng(noise_seq), plan.distribution)
    v = _colour(model, e)
    chans = {}
    for k in model.nodes:
        chans[f"e{k}"] = e[plan.burn_in:, k - 1]
    for k in model.nodes:
        chans[f"v{k}"] = v[plan.burn_in:, k - 1]
    return SignalRecord(chans)


def simulate(plan: SimulationPlan) -> SignalRecord:
    """Simulate the network; the first ``burn_in`` samples are discarded.

    Channels: ``w1..wL`` then ``e1..eL``, ``v1..vL`` and ``r<k>`` for excited nodes.
    """
    model = plan.model
    stable, margin = stability_check(model)
    if not stable:
        raise UnstableNetworkError(f"network fails the stability check (margin {margin:.4g})")
    Acl, Bcl, Ccl, Dcl = _closed_loop(model)
    radius = float(np.max(np.abs(np.linalg.eigvals(Acl)))) if Acl.shape[0] else 0.0
    if radius >= 1.0:
        raise UnstableNetworkError(f"closed-loop pole radius {radius:.4g} >= 1")
    if radius > 0 and plan.burn_in < 1e6 and radius ** plan.burn_in > 1e-6:
        warnings.warn(
            f"burn_in={plan.burn_in} is short for closed-loop pole radius {radius:.4f}",
            RuntimeWarning,
            stacklevel=2,
        )

    total = plan.N + plan.burn_in
    noise_seq, exc_seq = np.random.SeedSequence(plan.seed).spawn(2)
    e = _innovations(model, total, np.random.default_rng(noise_seq), plan.distribution)
    v = _colour(model, e)
    r = np.zeros((total, model.L))
    exc_rngs = exc_seq.spawn(model.L)
    for k, exc in plan.excitation.items():
        r[:, k - 1] = exc.generate(total, np.random.default_rng(exc_rngs[k - 1]))
    s = v + r

    nx = Acl.shape[0]
    if nx:
        drive = s @ Bcl.T
        xs = np.empty((total, nx))
        x = np.zeros(nx)
        for t in range(total):
            xs[t] = x
            x = Acl @ x + drive[t]
        w = xs @ Ccl.T + s @ Dcl.T
    else:
        w = s @ Dcl.T

    b = plan.burn_in
    chans = {f"w{k}": w[b:, k - 1] for k in model.nodes}
    chans.update({f"e{k}": e[b:, k - 1] for k in model.nodes})
    chans.update({f"v{k}": v[b:, k - 1] for k in model.nodes})
    chans.update({f"r{k}": r[b:, k - 1] for k in plan.excitation})
    return SignalRecord(chans)
