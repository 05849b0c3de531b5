import numpy as np
import pytest
from hypothesis import given, strategies as st

from netident.tf import (
    ONE,
    ZERO,
    FrequencyGrid,
    SingularEvaluationError,
    TransferFunction,
    default_grid,
    filter_signal,
    frequency_response,
)

coef = st.floats(-2, 2, allow_nan=False, allow_subnormal=False)
stable_pole = st.floats(-0.9, 0.9, allow_nan=False, allow_subnormal=False)


@st.composite
def tfs(draw):
    num = draw(st.lists(coef, min_size=1, max_size=3))
    a = draw(stable_pole)
    return TransferFunction(num, [1.0, -a], draw(st.integers(0, 3)))


def test_normalization_folds_leading_zeros_into_dead_time():
    tf = TransferFunction([0.0, 0.0, 0.5, 0.0], [1.0, -0.3, 0.0], 1)
    assert tf.numerator == (0.5,)
    assert tf.denominator == (1.0, -0.3)
    assert tf.dead_time == 3
    assert tf.strictly_proper()


def test_zero_is_canonical():
    z = TransferFunction([0.0, 0.0], [1.0, 0.5], 4)
    assert z.is_zero and z == ZERO and z.dead_time == 0


def test_denominator_must_be_monic():
    with pytest.raises(ValueError):
        TransferFunction([1.0], [2.0, 1.0])


def test_feedthrough_and_properness():
    assert ONE.feedthrough == 1.0 and not ONE.strictly_proper()
    assert TransferFunction.delay(1, 0.7).feedthrough == 0.0


def test_frequency_response_first_order():
    tf = TransferFunction([0.8], [1.0, -0.5], 1)
    w = np.array([0.1, 1.0, np.pi])
    z = np.exp(1j * w)
    np.testing.assert_allclose(tf(w), 0.8 * z**-1 / (1 - 0.5 * z**-1), rtol=1e-14)


def test_static_gain_near_zero_frequency():
    tf = TransferFunction([0.8], [1.0, -0.5], 1)
    assert abs(tf(1e-8)[0] - 1.6) < 1e-6


def test_singular_evaluation_raises():
    with pytest.raises(SingularEvaluationError):
        frequency_response(TransferFunction([1.0], [1.0, -1.0]), [np.pi / 2, 1e-16 + 0.0][:1] + [2 * np.pi])


def test_impulse_response_matches_geometric_series():
    h = TransferFunction([1.0], [1.0, -0.5], 2).impulse_response(6)
    np.testing.assert_allclose(h, [0, 0, 1, 0.5, 0.25, 0.125])


@given(tfs(), tfs())
def test_product_and_sum_pointwise(a, b):
    w = default_grid(64).frequencies
    np.testing.assert_allclose((a * b)(w), a(w) * b(w), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose((a + b)(w), a(w) + b(w), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose((a - a)(w), 0, atol=1e-12)


@given(tfs(), st.integers(0, 2**31 - 1))
def test_filter_matches_frequency_response(tf, seed):
    # steady-state response to a sinusoid equals |G| and arg G
    w0 = 0.7
    t = np.arange(4000)
    y = filter_signal(tf, np.cos(w0 * t))
    g = tf(w0)[0]
    expect = np.abs(g) * np.cos(w0 * t + np.angle(g))
    np.testing.assert_allclose(y[-200:], expect[-200:], atol=1e-6)


def test_grid_validation():
    with pytest.raises(ValueError):
        FrequencyGrid(np.linspace(0.1, 1, 10))
    with pytest.raises(ValueError):
        FrequencyGrid(np.linspace(0.0, 1, 64))
    g = default_grid()
    assert len(g) == 256 and g.frequencies[-1] == pytest.approx(np.pi)
