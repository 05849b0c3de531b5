import warnings

import numpy as np
import pytest
from scipy.signal import csd

from netident.network import NetworkModel
from netident.simulator import (
    AlgebraicLoopError,
    Excitation,
    SimulationPlan,
    UnstableNetworkError,
    closed_loop_radius,
    generate_noise,
    realization_seed,
    simulate,
    stability_check,
)
from netident.tf import TransferFunction as T


def two_node(g21=None, g12=None, noise=None, cov=None, r=(False, False)):
    mods = {}
    if g21 is not None:
        mods[(2, 1)] = g21
    if g12 is not None:
        mods[(1, 2)] = g12
    return NetworkModel(2, mods, noise if noise is not None else {(1, 1): T([1.0]), (2, 2): T([1.0])},
                        cov, r_present=r)


def test_stability_examples():
    ok, margin = stability_check(NetworkModel(2, {}, {}))
    assert ok and margin == 1.0
    ok, _ = stability_check(two_node(T([0.9], [1.0], 1), T([1.0], [1.0], 1)))
    assert ok
    ok, _ = stability_check(two_node(T([1.1], [1.0], 1), T([1.0], [1.0], 0)))
    assert not ok


def test_unstable_refused():
    m = two_node(T([1.1], [1.0], 1), T([1.0], [1.0], 1))
    with pytest.raises(UnstableNetworkError):
        simulate(SimulationPlan(m, 10))


def test_algebraic_loop():
    m = two_node(T([0.5]), T([2.0]))
    with pytest.raises(AlgebraicLoopError):
        closed_loop_radius(m)


def test_instantaneous_loop_solved():
    m = two_node(T([0.5]), T([0.4], [1.0], 1))
    rec = simulate(SimulationPlan(m, 500, burn_in=100, seed=2))
    w1, w2 = rec["w1"], rec["w2"]
    np.testing.assert_allclose(w2, 0.5 * w1 + rec["v2"], atol=1e-10)
    np.testing.assert_allclose(w1[1:], 0.4 * w2[:-1] + rec["v1"][1:], atol=1e-10)


def test_zero_network_is_noise_plus_excitation():
    m = two_node(r=(True, True))
    rec = simulate(SimulationPlan(m, 300, seed=3))
    np.testing.assert_array_equal(rec["w1"], rec["v1"] + rec["r1"])


def test_noise_identity_covariance():
    m = NetworkModel(3, {}, {(k, k): T([1.0]) for k in range(1, 4)})
    rec = generate_noise(SimulationPlan(m, 50_000, seed=4))
    C = np.cov(rec.stack("v", [1, 2, 3]).T)
    np.testing.assert_allclose(C, np.eye(3), atol=0.05)


def test_noise_correlation_from_covariance():
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    m = NetworkModel(2, {}, {(1, 1): T([1.0]), (2, 2): T([1.0])}, cov)
    rec = generate_noise(SimulationPlan(m, 50_000, seed=5))
    assert abs(np.corrcoef(rec["e1"], rec["e2"])[0, 1] - 0.8) < 0.03


def test_noise_lag_structure():
    # v2 = e2 + 0.7 e1(t-2): cross-covariance at lag 2 equals 0.7
    m = NetworkModel(2, {}, {(1, 1): T([1.0]), (2, 2): T([1.0]), (2, 1): T([0.7], [1.0], 2)})
    rec = generate_noise(SimulationPlan(m, 50_000, seed=6))
    v1, v2 = rec["v1"], rec["v2"]
    lags = [np.mean(v2[k:] * v1[: len(v1) - k]) for k in range(5)]
    np.testing.assert_allclose(lags, [0, 0, 0.7, 0, 0], atol=0.03)


def test_chain_cross_spectrum():
    g = T([0.8], [1.0, -0.5], 1)
    m = two_node(g21=g, r=(True, False))
    rec = simulate(SimulationPlan(m, 100_000, seed=7))
    f, p11 = csd(rec["w1"], rec["w1"], nperseg=512)
    _, p12 = csd(rec["w1"], rec["w2"], nperseg=512)
    keep = (f > 0.01) & (f < 0.45)
    est = p12[keep] / p11[keep]
    true = g(2 * np.pi * f[keep])
    # w2 also contains v2 (white, uncorrelated with w1), so the ratio is unbiased
    assert np.median(np.abs(est - true) / np.abs(true)) < 0.05


def test_determinism(example1):
    a = simulate(SimulationPlan(example1.model, 1000, seed=9))
    b = simulate(SimulationPlan(example1.model, 1000, seed=9))
    assert a.equals(b)
    c = simulate(SimulationPlan(example1.model, 1000, seed=10))
    assert not a.equals(c)


def test_stationary_mean(example1):
    m = example1.model.with_changes(r_present=(False,) * 6)
    rec = simulate(SimulationPlan(m, 20_000, seed=12))
    for k in m.nodes:
        x = rec[f"w{k}"]
        # generous standard error: coloured signals have long correlation
        assert abs(x.mean()) < 3 * x.std() * np.sqrt(20 / x.size)


def test_spectral_consistency(example2):
    m = example2.model
    rec = simulate(SimulationPlan(m, 100_000, seed=13))
    f, _ = csd(rec["w1"], rec["w1"], nperseg=256, return_onesided=False)
    keep = (f > 0.01) & (f < 0.48)
    w = 2 * np.pi * f[keep]
    G = m.G_response(w)
    H = m.H_response(w)
    Tm = np.linalg.inv(np.eye(m.L) - G)
    phi_r = np.diag([1.0 if r else 0.0 for r in m.r_present])
    phi = Tm @ (H @ m.noise_covariance @ np.conj(np.swapaxes(H, 1, 2)) + phi_r) @ np.conj(np.swapaxes(Tm, 1, 2))
    emp = np.zeros_like(phi)
    for a in range(m.L):
        for b in range(m.L):
            _, p = csd(rec[f"w{b + 1}"], rec[f"w{a + 1}"], nperseg=256, return_onesided=False)
            emp[:, a, b] = p[keep]
    rel = np.linalg.norm(emp - phi, axis=(1, 2)) / np.linalg.norm(phi, axis=(1, 2))
    assert np.median(rel) < 0.10


def test_strictly_proper_never_algebraic(example1, example2):
    for cfg in (example1, example2):
        assert cfg.model.all_strictly_proper()
        closed_loop_radius(cfg.model)


def test_excitation_only_on_excited_nodes(example1):
    with pytest.raises(ValueError):
        SimulationPlan(example1.model, 10, excitation={2: Excitation()})


def test_excitation_kinds():
    rng = np.random.default_rng(0)
    ms = Excitation("multisine", frequencies=(0.5, 1.0), amplitudes=(1.0, 0.5)).generate(100, rng)
    assert np.max(np.abs(ms)) <= 1.5
    fl = Excitation("filtered", tf=T([1.0], [1.0, -0.9])).generate(5000, rng)
    assert np.corrcoef(fl[1:], fl[:-1])[0, 1] > 0.8


def test_short_burn_in_warns():
    m = two_node(T([0.99], [1.0, -0.995], 1))
    with pytest.warns(RuntimeWarning, match="burn_in"):
        simulate(SimulationPlan(m, 10, burn_in=10))


def test_realization_seed_streams_differ():
    a = np.random.default_rng(realization_seed(0, 0, 1)).random(3)
    b = np.random.default_rng(realization_seed(0, 1, 0)).random(3)
    c = np.random.default_rng(realization_seed(0, 0, 1)).random(3)
    assert not np.allclose(a, b) and np.array_equal(a, c)
