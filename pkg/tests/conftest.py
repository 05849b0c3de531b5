import numpy as np
import pytest
from hypothesis import settings

from netident.config import load_config
from netident.network import NetworkModel
from netident.tf import TransferFunction

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=40)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_network(seed: int, L: int | None = None, p_edge: float = 0.3, p_noise: float = 0.2,
                   correlated: bool = True) -> NetworkModel:
    """Stable, strictly proper random network with generic coefficients.

    Each row's worst-case module gain sum stays below 0.9, which bounds the
    spectral radius of G on the unit circle.
    """
    rng = np.random.default_rng(seed)
    L = L or int(rng.integers(3, 8))
    modules = {}
    for j in range(1, L + 1):
        cols = [l for l in range(1, L + 1) if l != j and rng.random() < p_edge]
        if not cols:
            continue
        budget = 0.85 / len(cols)
        for l in cols:
            a = rng.uniform(-0.6, 0.6)
            b = rng.uniform(0.3, 1.0) * budget * (1 - abs(a)) * rng.choice([-1, 1])
            modules[(j, l)] = TransferFunction([b], [1.0, -a], int(rng.integers(1, 3)))
    noise = {(k, k): TransferFunction([1.0, rng.uniform(-0.5, 0.5)]) for k in range(1, L + 1)}
    for j in range(1, L + 1):
        for k in range(1, L + 1):
            if j != k and rng.random() < p_noise:
                noise[(j, k)] = TransferFunction([rng.uniform(0.3, 0.9) * rng.choice([-1, 1])], [1.0], 1)
    cov = np.eye(L)
    if correlated and L >= 2 and rng.random() < 0.5:
        a, b = rng.choice(L, 2, replace=False)
        cov[a, b] = cov[b, a] = rng.uniform(0.2, 0.6)
    return NetworkModel(L, modules, noise, cov, r_present=(True,) * L, name=f"random{seed}")


@pytest.fixture(scope="session")
def example1():
    return load_config("example1")


@pytest.fixture(scope="session")
def example2():
    return load_config("example2")


@pytest.fixture(scope="session")
def confounder3():
    return load_config("confounder3")


def noblock_network() -> NetworkModel:
    """Target G_21 whose confounder can only be blocked at nodes fed by w2."""
    T = TransferFunction
    modules = {(2, 1): T([0.5], [1.0], 1), (1, 3): T([0.4], [1.0], 1), (3, 4): T([0.4], [1.0], 1),
               (3, 2): T([0.3], [1.0], 1), (4, 2): T([0.3], [1.0], 1)}
    noise = {(k, k): T([1.0]) for k in range(1, 5)}
    noise[(2, 4)] = T([0.5])
    return NetworkModel(4, modules, noise, name="noblock")
