"""Multivariable sinusoidal dither and demodulation signals.

Component i probes with s_i(tau) = r_i sin(w'_i tau) and demodulates with
m_i(tau) = 2/(a r_i) sin(w'_i tau), where tau = omega * t is the fast time.
The relative rates w'_i are exact rationals, so the signal bank shares a
common period and the time average of outer(s, m) is Identity / a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.integrate import simpson

TWO_PI = 2.0 * math.pi

RateLike = Union[Fraction, int, str, Sequence[int]]


def _as_fraction(value: RateLike) -> Fraction:
    """Coerce ints, strings like '3/4', and (num, den) pairs to Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, str)):
        return Fraction(value)
    if isinstance(value, Sequence) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    raise TypeError(f"cannot interpret {value!r} as a rational rate")


@dataclass(frozen=True)
class DitherSpec:
    """Immutable description of the dither/demodulation signal bank.

    Attributes:
        relative_rates: per-component rational rates w'_i (all distinct,
            nonzero, and free of w'_i + w'_j == w'_k resonances for pairwise
            distinct indices, checked in exact rational arithmetic).
        relative_amplitudes: per-component positive amplitudes r_i.
        amplitude: probe amplitude a > 0 multiplying the whole dither vector.
        base_rate: fast-time rate omega > 0, tau = omega * t.
    """

    relative_rates: tuple[Fraction, ...]
    relative_amplitudes: tuple[float, ...]
    amplitude: float
    base_rate: float

    def __post_init__(self) -> None:
        rates = tuple(_as_fraction(w) for w in self.relative_rates)
        amps = tuple(float(r) for r in self.relative_amplitudes)
        object.__setattr__(self, "relative_rates", rates)
        object.__setattr__(self, "relative_amplitudes", amps)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "base_rate", float(self.base_rate))
        if not rates:
            raise ValueError("at least one dither component is required")
        if len(rates) != len(amps):
            raise ValueError("relative_rates and relative_amplitudes lengths differ")
        if any(w == 0 for w in rates):
            raise ValueError("relative dither rates must be nonzero")
        if len(set(rates)) != len(rates):
            raise ValueError("relative dither rates must be pairwise distinct")
        n = len(rates)
        for i in range(n):
            for j in range(i + 1, n):
                for k in range(n):
                    if k == i or k == j:
                        continue
                    if rates[i] + rates[j] == rates[k]:
                        raise ValueError(
                            f"rate resonance: w'_{i} + w'_{j} == w'_{k} "
                            f"({rates[i]} + {rates[j]} == {rates[k]})"
                        )
        if any(r <= 0 for r in amps):
            raise ValueError("relative amplitudes must be positive")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")

    @property
    def dimension(self) -> int:
        return len(self.relative_rates)

    @property
    def norm_bound(self) -> float:
        """R = sqrt(sum r_i^2); the dither never leaves the ball a*R."""
        return math.sqrt(sum(r * r for r in self.relative_amplitudes))

    def rates_float(self) -> tuple[float, ...]:
        return tuple(float(w) for w in self.relative_rates)


def dither(spec: DitherSpec, tau) -> np.ndarray:
    """Evaluate s(tau); scalar tau gives shape (n,), arrays broadcast to (..., n)."""
    tau_arr = np.asarray(tau, dtype=float)
    rates = np.array(spec.rates_float())
    amps = np.array(spec.relative_amplitudes)
    return amps * np.sin(np.multiply.outer(tau_arr, rates))


def demod(spec: DitherSpec, tau) -> np.ndarray:
    """Evaluate m(tau, a) with components 2/(a r_i) sin(w'_i tau)."""
    tau_arr = np.asarray(tau, dtype=float)
    rates = np.array(spec.rates_float())
    coeff = 2.0 / (spec.amplitude * np.array(spec.relative_amplitudes))
    return coeff * np.sin(np.multiply.outer(tau_arr, rates))


def common_period_of_rates(rates: Iterable[RateLike]) -> float:
    """Smallest T > 0 such that every sin(w'_i tau) has period dividing T.

    Component i has minimal period 2*pi*q_i/p_i for w'_i = p_i/q_i in lowest
    terms; the least common multiple of rationals a_i/b_i is lcm(a_i)/gcd(b_i).
    """
    fracs = [_as_fraction(w) for w in rates]
    if not fracs:
        raise ValueError("need at least one rate")
    if any(w == 0 for w in fracs):
        raise ValueError("rates must be nonzero")
    nums = [abs(w.numerator) for w in fracs]
    dens = [w.denominator for w in fracs]
    return TWO_PI * float(Fraction(math.lcm(*dens), math.gcd(*nums)))


def common_period(spec: DitherSpec) -> float:
    """Common period T of the dither/demodulation bank."""
    return common_period_of_rates(spec.relative_rates)


def verify_orthogonality(spec: DitherSpec, quad_points: int) -> np.ndarray:
    """Return G with G[i, j] = (1/T) * integral of s_i(tau) m_j(tau) over [0, T].

    Composite Simpson over one exact common period; for a valid spec the
    result is Identity / a up to quadrature error.  Requires quad_points
    >= 64 * n; an even count is bumped by one so Simpson sees whole panels.
    """
    n = spec.dimension
    if quad_points < 64 * n:
        raise ValueError(f"quad_points must be at least {64 * n} for n={n}")
    npts = quad_points if quad_points % 2 == 1 else quad_points + 1
    period = common_period(spec)
    tau = np.linspace(0.0, period, npts)
    s_vals = dither(spec, tau)
    m_vals = demod(spec, tau)
    integrand = s_vals[:, :, None] * m_vals[:, None, :]
    return simpson(integrand, x=tau, axis=0) / period
