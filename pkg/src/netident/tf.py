"""Discrete-time SISO transfer functions in the delay operator.

A transfer function is stored as

    q^-d * (b0 + b1 q^-1 + ... + bm q^-m) / (1 + a1 q^-1 + ... + an q^-n)

with ``d`` the dead time.  Everything is evaluated either by direct
recursion in time (``filter_signal``) or pointwise on the unit circle
(``frequency_response``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "TransferFunction",
    "FrequencyGrid",
    "SingularEvaluationError",
    "ZERO",
    "ONE",
    "frequency_response",
    "filter_signal",
    "default_grid",
]

_TINY = 1e-12


class SingularEvaluationError(ValueError):
    """A transfer function was evaluated at (or numerically on) a pole."""


def _trim(c: np.ndarray) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1].copy()


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Rational filter ``q^-dead_time * num(q^-1) / den(q^-1)``.

    ``den[0]`` must be exactly 1.  Trailing zeros are stripped and leading
    zeros of the numerator are folded into ``dead_time`` so that two equal
    filters have equal coefficients.
    """

    numerator: tuple[float, ...]
    denominator: tuple[float, ...] = (1.0,)
    dead_time: int = 0
    _num: np.ndarray = field(init=False, repr=False, compare=False)
    _den: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        num = _trim(self.numerator)
        den = _trim(self.denominator)
        if int(self.dead_time) != self.dead_time or self.dead_time < 0:
            raise ValueError(f"dead_time must be a nonnegative integer, got {self.dead_time!r}")
        if den[0] != 1.0:
            raise ValueError(f"denominator must start with exactly 1, got {den[0]!r}")
        dead = int(self.dead_time)
        if np.any(num):
            lead = int(np.flatnonzero(num)[0])
            num = num[lead:]
            dead += lead
        else:
            num = np.zeros(1)
            den = np.ones(1)
            dead = 0
        object.__setattr__(self, "_num", num)
        object.__setattr__(self, "_den", den)
        object.__setattr__(self, "numerator", tuple(float(x) for x in num))
        object.__setattr__(self, "denominator", tuple(float(x) for x in den))
        object.__setattr__(self, "dead_time", dead)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def zero(cls) -> "TransferFunction":
        return cls((0.0,))

    @classmethod
    def gain(cls, k: float) -> "TransferFunction":
        return cls((float(k),))

    @classmethod
    def delay(cls, k: int = 1, gain: float = 1.0) -> "TransferFunction":
        return cls((float(gain),), (1.0,), k)

    # -- structure ------------------------------------------------------------
    @property
    def num(self) -> np.ndarray:
        return self._num

    @property
    def den(self) -> np.ndarray:
        return self._den

    @property
    def is_zero(self) -> bool:
        return not np.any(self._num)

    def strictly_proper(self) -> bool:
        return self.is_zero or self._num[0] == 0.0 or self.dead_time >= 1

    @property
    def feedthrough(self) -> float:
        """Instantaneous gain (coefficient of q^0)."""
        if self.dead_time > 0:
            return 0.0
        return float(self._num[0])

    def delayed_numerator(self) -> np.ndarray:
        """Numerator with the dead time expanded into leading zeros."""
        return np.concatenate([np.zeros(self.dead_time), self._num])

    def poles(self) -> np.ndarray:
        if self._den.size == 1:
            return np.zeros(0, dtype=complex)
        return np.roots(self._den)

    def is_stable(self, margin: float = 0.0) -> bool:
        p = self.poles()
        return bool(p.size == 0 or np.max(np.abs(p)) < 1.0 - margin)

    # -- algebra --------------------------------------------------------------
    def __mul__(self, other) -> "TransferFunction":
        if not isinstance(other, TransferFunction):
            other = TransferFunction.gain(float(other))
        if self.is_zero or other.is_zero:
            return ZERO
        return TransferFunction(
            np.convolve(self._num, other._num),
            np.convolve(self._den, other._den),
            self.dead_time + other.dead_time,
        )

    __rmul__ = __mul__

    def __add__(self, other) -> "TransferFunction":
        if not isinstance(other, TransferFunction):
            other = TransferFunction.gain(float(other))
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        d = min(self.dead_time, other.dead_time)
        a = np.concatenate([np.zeros(self.dead_time - d), np.convolve(self._num, other._den)])
        b = np.concatenate([np.zeros(other.dead_time - d), np.convolve(other._num, self._den)])
        n = max(a.size, b.size)
        num = np.pad(a, (0, n - a.size)) + np.pad(b, (0, n - b.size))
        return TransferFunction(num, np.convolve(self._den, other._den), d)

    def __neg__(self) -> "TransferFunction":
        return TransferFunction(-self._num, self._den, self.dead_time)

    def __sub__(self, other) -> "TransferFunction":
        return self + (-other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return (
            self.numerator == other.numerator
            and self.denominator == other.denominator
            and self.dead_time == other.dead_time
        )

    def __hash__(self):
        return hash((self.numerator, self.denominator, self.dead_time))

    # -- evaluation -----------------------------------------------------------
    def __call__(self, omega) -> np.ndarray:
        return frequency_response(self, omega)

    def filter(self, u) -> np.ndarray:
        return filter_signal(self, u)

    def impulse_response(self, n: int) -> np.ndarray:
        u = np.zeros(n)
        u[0] = 1.0
        return filter_signal(self, u)

    def to_dict(self) -> dict:
        return {
            "num": list(self.numerator),
            "den": list(self.denominator),
            "delay": self.dead_time,
        }

    def __repr__(self) -> str:
        return f"TransferFunction(num={list(self.numerator)}, den={list(self.denominator)}, dead_time={self.dead_time})"


ZERO = TransferFunction((0.0,))
ONE = TransferFunction((1.0,))


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing frequencies in (0, pi], at least 32 of them."""

    frequencies: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.frequencies, dtype=float).ravel()
        if w.size < 32:
            raise ValueError(f"frequency grid needs at least 32 points, got {w.size}")
        if np.any(np.diff(w) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if w[0] <= 0 or w[-1] > np.pi + 1e-15:
            raise ValueError("frequencies must lie in (0, pi]")
        w.setflags(write=False)
        object.__setattr__(self, "frequencies", w)

    @classmethod
    def logspace(cls, size: int = 256, low: float = 1e-3, high: float = np.pi) -> "FrequencyGrid":
        return cls(np.geomspace(low, high, size))

    def __len__(self) -> int:
        return self.frequencies.size

    @property
    def z(self) -> np.ndarray:
        return np.exp(1j * self.frequencies)


def default_grid(size: int = 256) -> FrequencyGrid:
    return FrequencyGrid.logspace(size)


def _omega(grid) -> np.ndarray:
    if isinstance(grid, FrequencyGrid):
        return grid.frequencies
    return np.atleast_1d(np.asarray(grid, dtype=float))


def _polyval_inverse(coeffs: np.ndarray, zinv: np.ndarray) -> np.ndarray:
    # sum_k c_k zinv^k via Horner
    out = np.zeros_like(zinv)
    for c in coeffs[::-1]:
        out = out * zinv + c
    return out


def frequency_response(tf: TransferFunction, grid) -> np.ndarray:
    """Evaluate ``tf`` at ``z = exp(i*omega)`` for every grid frequency."""
    w = _omega(grid)
    zinv = np.exp(-1j * w)
    if tf.is_zero:
        return np.zeros(w.shape, dtype=complex)
    den = _polyval_inverse(tf.den.astype(complex), zinv)
    bad = np.abs(den) < _TINY
    if np.any(bad):
        raise SingularEvaluationError(
            f"denominator vanishes at omega={w[bad][0]:.6g} for {tf!r}"
        )
    num = _polyval_inverse(tf.num.astype(complex), zinv)
    return num / den * zinv**tf.dead_time


def filter_signal(tf: TransferFunction, u: Sequence[float]) -> np.ndarray:
    """Filter ``u`` through ``tf`` from zero initial conditions.

    Unstable filters are not refused; the output simply grows.
    """
    u = np.asarray(u, dtype=float)
    if tf.is_zero:
        return np.zeros_like(u)
    return lfilter(tf.delayed_numerator(), tf.den, u)
