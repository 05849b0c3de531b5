"""Immersed dynamics of the measured nodes, evaluated on a frequency grid.

Eliminating the unmeasured nodes ``Z`` gives, for the rows ``X`` in ``{B, A}``,

    G_X* + G_XZ (I - G_ZZ)^-1 G_Z*        (module part)
    H_X* + G_XZ (I - G_ZZ)^-1 H_Z*        (noise part)

while the rows of the predicted outputs ``Q`` and ``o`` are copied unchanged
(none of their in-neighbours are unmeasured).  Measured nodes are ordered
``Q, o, B, A``; noise sources are ordered ``Q, o, B, A, Z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import NodePartition
from .network import NetworkModel, noise_factor
from .tf import FrequencyGrid, default_grid

__all__ = [
    "ImmersionSingularityError",
    "ImmersedSystem",
    "DisturbanceSpectrum",
    "BlockReport",
    "immerse",
    "disturbance_spectrum",
    "check_zero_blocks",
    "lemma1_product",
    "measured_spectrum",
    "ZERO_BLOCK_TOL",
]

ZERO_BLOCK_TOL = 1e-8
BLOCKS = ("Q", "o", "B", "A")


class ImmersionSingularityError(ValueError):
    def __init__(self, omega: float):
        super().__init__(f"I - G_ZZ is singular at omega = {omega:.6g}")
        self.omega = omega


def _blocks(P: NodePartition) -> dict[str, list[int]]:
    return {
        "Q": sorted(P.Q),
        "o": [] if P.o is None else [P.o],
        "B": sorted(P.B),
        "A": sorted(P.A),
    }


@dataclass(frozen=True, eq=False)
class ImmersedSystem:
    partition: NodePartition
    grid: FrequencyGrid
    nodes: tuple[int, ...]          # measured nodes in Q, o, B, A order
    sources: tuple[int, ...]        # noise sources in Q, o, B, A, Z order
    G: np.ndarray                   # (M, n, n)
    H: np.ndarray                   # (M, n, L), columns follow ``sources``
    noise_covariance: np.ndarray    # Lambda permuted to ``sources`` order

    def block_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, idx in _blocks(self.partition).items():
            out[name] = slice(start, start + len(idx))
            start += len(idx)
        return out

    def rows(self, nodes) -> list[int]:
        pos = {k: n for n, k in enumerate(self.nodes)}
        return [pos[k] for k in nodes]

    def unit_noise(self) -> np.ndarray:
        """Noise responses with respect to unit-covariance sources."""
        return self.H @ noise_factor(self.noise_covariance)


def immerse(model: NetworkModel, partition: NodePartition, grid: FrequencyGrid | None = None,
            cond_limit: float = 1e12) -> ImmersedSystem:
    grid = grid or default_grid()
    P = partition
    blocks = _blocks(P)
    nodes = [k for name in BLOCKS for k in blocks[name]]
    Z = sorted(P.Z)
    sources = nodes + Z
    meas = [k - 1 for k in nodes]
    src = [k - 1 for k in sources]
    zi = [k - 1 for k in Z]

    Gf = model.G_response(grid)
    Hf = model.H_response(grid)
    M = Gf.shape[0]
    G = Gf[:, meas][:, :, meas].copy()
    H = Hf[:, meas][:, :, src].copy()

    n_out = len(blocks["Q"]) + len(blocks["o"])
    out_rows = meas[:n_out]
    leak = np.abs(Gf[:, out_rows][:, :, zi]).max() if (zi and out_rows) else 0.0
    leak_b = np.abs(Gf[:, out_rows][:, :, [k - 1 for k in blocks["B"]]]).max() if (blocks["B"] and out_rows) else 0.0
    if leak > 0 or leak_b > 0:
        raise ValueError("predicted outputs have unmeasured or blocking in-neighbours; the full-input property fails")

    if zi:
        I = np.eye(len(zi))
        GZZ = Gf[:, zi][:, :, zi]
        rest = meas[n_out:]
        if rest:
            GXZ = Gf[:, rest][:, :, zi]
            GZm = Gf[:, zi][:, :, meas]
            HZs = Hf[:, zi][:, :, src]
            for m in range(M):
                Mz = I - GZZ[m]
                if np.linalg.cond(Mz) > cond_limit:
                    raise ImmersionSingularityError(float(grid.frequencies[m]))
                tG = np.linalg.solve(Mz, GZm[m])
                tH = np.linalg.solve(Mz, HZs[m])
                G[m, n_out:, :] += GXZ[m] @ tG
                H[m, n_out:, :] += GXZ[m] @ tH
        else:
            for m in range(M):
                if np.linalg.cond(I - GZZ[m]) > cond_limit:
                    raise ImmersionSingularityError(float(grid.frequencies[m]))

    lam = model.noise_covariance[np.ix_(src, src)]
    return ImmersedSystem(P, grid, tuple(nodes), tuple(sources), G, H, lam)


@dataclass(frozen=True, eq=False)
class DisturbanceSpectrum:
    system: ImmersedSystem
    values: np.ndarray      # (M, n, n) Hermitian

    @property
    def grid(self) -> FrequencyGrid:
        return self.system.grid

    def block(self, row: str, col: str) -> np.ndarray:
        s = self.system.block_slices()
        return self.values[:, s[row], s[col]]


def disturbance_spectrum(sys: ImmersedSystem, cov: np.ndarray | None = None) -> DisturbanceSpectrum:
    """``H Lambda H^*`` at every grid point; ``cov`` is in the system's source order."""
    lam = sys.noise_covariance if cov is None else np.asarray(cov, dtype=float)
    H = sys.H
    phi = H @ lam @ np.conj(np.swapaxes(H, 1, 2))
    return DisturbanceSpectrum(sys, phi)


@dataclass
class BlockReport:
    ratios: dict[str, float]              # max over grid of ||block|| / ||Phi||
    per_frequency: dict[str, np.ndarray]
    tol: float = ZERO_BLOCK_TOL

    @property
    def passed(self) -> bool:
        return all(v < self.tol for v in self.ratios.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.ratios.items() if not v < self.tol]


def check_zero_blocks(spec: DisturbanceSpectrum, tol: float = ZERO_BLOCK_TOL) -> BlockReport:
    """Relative size of the (Q,A), (o,A) and (B,A) blocks of the disturbance spectrum."""
    total = np.linalg.norm(spec.values, axis=(1, 2))
    total = np.where(total > 0, total, 1.0)
    ratios, curves = {}, {}
    for row in ("Q", "o", "B"):
        blk = spec.block(row, "A")
        if blk.size == 0:
            rel = np.zeros(total.shape)
        else:
            rel = np.linalg.norm(blk, axis=(1, 2)) / total
        key = f"{row}A"
        curves[key] = rel
        ratios[key] = float(rel.max())
    return BlockReport(ratios, curves, tol)


def lemma1_product(sys: ImmersedSystem, x: int, group1, group2) -> np.ndarray:
    """``H_1x(w) H_2x(w)^*`` for source ``e_x`` and two groups of measured nodes.

    Responses are taken with respect to unit-covariance sources.  Returns an
    array of shape (M, len(group1), len(group2)).
    """
    Hu = sys.unit_noise()
    col = sys.sources.index(x)
    h1 = Hu[:, sys.rows(group1), col]
    h2 = Hu[:, sys.rows(group2), col]
    return h1[:, :, None] * np.conj(h2[:, None, :])


def measured_spectrum(sys: ImmersedSystem, excitation: np.ndarray | None = None) -> np.ndarray:
    """Spectrum of the measured nodes implied by the immersed model.

    ``excitation`` optionally gives the (diagonal) excitation spectrum of the
    measured nodes, shape (n,) or (M, n).
    """
    n = len(sys.nodes)
    I = np.eye(n)
    T = np.linalg.inv(I - sys.G)
    phi_v = disturbance_spectrum(sys).values
    if excitation is not None:
        ex = np.asarray(excitation, dtype=float)
        phi_v = phi_v + (ex[..., :, None] * I if ex.ndim == 2 else np.diag(ex))
    return T @ phi_v @ np.conj(np.swapaxes(T, 1, 2))
