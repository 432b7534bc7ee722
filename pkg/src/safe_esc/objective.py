"""Quadratic cost, barrier families, and the barrier-augmented objective.

The modified objective is Jhat(theta) = J(theta) - mu * log(h(theta)) on the
safe set {h > 0}.  A Problem with mu == 0 means "barrier disabled": the cost
reduces to plain J and safety is neither penalized nor enforced (this is the
unconstrained baseline used for comparisons).

Barrier evaluation is vectorized with the coordinate axis last: shape (n,)
inputs give scalars, (m, n) inputs give batches.  Each family also exposes a
`scalar_value` closure over plain floats for the hot integration loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BarrierViolation(RuntimeError):
    """An evaluation point left the safe set (h <= 0)."""

    def __init__(self, theta, h_value, tau=None):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.h_value = float(h_value)
        self.tau = tau
        where = f" (quadrature phase tau={tau:.6g})" if tau is not None else ""
        super().__init__(
            f"unsafe query point theta={np.array2string(self.theta, precision=6)} "
            f"with h={h_value:.6g}{where}"
        )


class NonsmoothPoint(RuntimeError):
    """The barrier lacks a second derivative at this point (medial axis)."""


@dataclass
class QuadraticCost:
    """J(theta) = J* + 0.5 (theta - theta*)^T H (theta - theta*), H > 0."""

    minimum_value: float
    minimizer: np.ndarray
    hessian: np.ndarray

    def __post_init__(self) -> None:
        self.minimum_value = float(self.minimum_value)
        self.minimizer = np.atleast_1d(np.asarray(self.minimizer, dtype=float))
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        n = self.minimizer.shape[0]
        if self.hessian.shape != (n, n):
            raise ValueError(f"hessian must be {n}x{n}, got {self.hessian.shape}")
        if not np.allclose(self.hessian, self.hessian.T, rtol=0, atol=1e-12):
            raise ValueError("hessian must be symmetric")
        try:
            np.linalg.cholesky(self.hessian)
        except np.linalg.LinAlgError as exc:
            raise ValueError("hessian must be positive definite") from exc

    @property
    def dimension(self) -> int:
        return self.minimizer.shape[0]

    def value(self, theta) -> np.ndarray:
        diff = np.asarray(theta, dtype=float) - self.minimizer
        return self.minimum_value + 0.5 * np.einsum(
            "...i,ij,...j->...", diff, self.hessian, diff
        )

    def gradient(self, theta) -> np.ndarray:
        diff = np.asarray(theta, dtype=float) - self.minimizer
        return diff @ self.hessian

    def scalar_value(self):
        """Closure computing J from a tuple of floats (hot-loop path)."""
        jstar = self.minimum_value
        n = self.dimension
        if n == 1:
            h11 = float(self.hessian[0, 0])
            t1 = float(self.minimizer[0])
            def value1(p):
                u = p[0] - t1
                return jstar + 0.5 * h11 * u * u

            return value1
        if n == 2:
            h11 = float(self.hessian[0, 0])
            h12 = float(self.hessian[0, 1])
            h22 = float(self.hessian[1, 1])
            t1, t2 = (float(v) for v in self.minimizer)

            def value2(p):
                u = p[0] - t1
                v = p[1] - t2
                return jstar + 0.5 * (h11 * u * u + h22 * v * v) + h12 * u * v

            return value2
        hess = self.hessian
        tstar = self.minimizer

        def value_n(p):
            u = np.asarray(p, dtype=float) - tstar
            return jstar + 0.5 * float(u @ hess @ u)

        return value_n

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuadraticCost):
            return NotImplemented
        return (
            self.minimum_value == other.minimum_value
            and np.array_equal(self.minimizer, other.minimizer)
            and np.array_equal(self.hessian, other.hessian)
        )


class Barrier:
    """Safety function h with analytic gradient and Hessian.

    Subclasses set `family` and implement value/gradient/hessian with the
    coordinate axis last, plus `params()` returning the JSON-ready parameter
    dict.  `is_smooth_at` is True except on declared nonsmooth loci.
    """

    family: str = "user"

    def value(self, theta) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, theta) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, theta) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def is_smooth_at(self, theta) -> bool:
        return True

    def scalar_value(self):
        def value(p):
            return float(self.value(np.asarray(p, dtype=float)))

        return value

    def __eq__(self, other) -> bool:
        if not isinstance(other, Barrier):
            return NotImplemented
        return type(self) is type(other) and self.params() == other.params()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params()})"


class HalfSpaceBarrier(Barrier):
    """h(theta) = offset - normal . theta; safe set is an open half-space."""

    family = "half-space"

    def __init__(self, normal, offset):
        self.normal = np.atleast_1d(np.asarray(normal, dtype=float))
        self.offset = float(offset)
        if not np.any(self.normal != 0.0):
            raise ValueError("normal must be nonzero")

    def value(self, theta):
        return self.offset - np.asarray(theta, dtype=float) @ self.normal

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.broadcast_to(-self.normal, theta.shape).copy()

    def hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        n = self.normal.shape[0]
        return np.zeros(theta.shape[:-1] + (n, n))

    def params(self):
        return {"normal": self.normal.tolist(), "offset": self.offset}

    def scalar_value(self):
        offset = self.offset
        if self.normal.shape[0] == 1:
            n1 = float(self.normal[0])
            return lambda p: offset - n1 * p[0]
        if self.normal.shape[0] == 2:
            n1, n2 = (float(v) for v in self.normal)
            return lambda p: offset - n1 * p[0] - n2 * p[1]
        normal = self.normal
        return lambda p: offset - float(np.dot(normal, p))


class TrigFieldBarrier(Barrier):
    """h(theta) = cos(f1 pi theta_1) * sin(f2 pi theta_2) on the plane.

    The safe set is a periodic field of open rectangles; frequencies are
    given in units of pi so scenario files stay exact.
    """

    family = "trig-field"

    def __init__(self, freq1=0.2, freq2=0.3):
        self.freq1 = float(freq1)
        self.freq2 = float(freq2)
        if self.freq1 <= 0 or self.freq2 <= 0:
            raise ValueError("frequencies must be positive")
        self._k1 = self.freq1 * math.pi
        self._k2 = self.freq2 * math.pi

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.cos(self._k1 * theta[..., 0]) * np.sin(self._k2 * theta[..., 1])

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        u = self._k1 * theta[..., 0]
        v = self._k2 * theta[..., 1]
        grad = np.empty(theta.shape)
        grad[..., 0] = -self._k1 * np.sin(u) * np.sin(v)
        grad[..., 1] = self._k2 * np.cos(u) * np.cos(v)
        return grad

    def hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        u = self._k1 * theta[..., 0]
        v = self._k2 * theta[..., 1]
        hess = np.empty(theta.shape[:-1] + (2, 2))
        hess[..., 0, 0] = -self._k1**2 * np.cos(u) * np.sin(v)
        hess[..., 0, 1] = -self._k1 * self._k2 * np.sin(u) * np.cos(v)
        hess[..., 1, 0] = hess[..., 0, 1]
        hess[..., 1, 1] = -self._k2**2 * np.cos(u) * np.sin(v)
        return hess

    def params(self):
        return {"freq1": self.freq1, "freq2": self.freq2}

    def scalar_value(self):
        k1, k2 = self._k1, self._k2
        cos, sin = math.cos, math.sin
        return lambda p: cos(k1 * p[0]) * sin(k2 * p[1])


class MinCirclesBarrier(Barrier):
    """h(theta) = min_i (||theta - center_i|| - radius_i); circular obstacles.

    Only C^0 on the medial axis (exact ties between circles); gradients and
    Hessians come from the active circle, exact ties resolved toward the
    lower index.  `is_smooth_at` is False exactly on ties.
    """

    family = "min-of-circles"

    def __init__(self, centers, radii):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radii = np.atleast_1d(np.asarray(radii, dtype=float))
        if self.centers.shape[0] != self.radii.shape[0]:
            raise ValueError("need one radius per center")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")

    def _shifted_distances(self, theta):
        theta = np.asarray(theta, dtype=float)
        diff = theta[..., None, :] - self.centers
        dist = np.linalg.norm(diff, axis=-1)
        return dist - self.radii, diff, dist

    def value(self, theta):
        shifted, _, _ = self._shifted_distances(theta)
        return np.min(shifted, axis=-1)

    def gradient(self, theta):
        shifted, diff, dist = self._shifted_distances(theta)
        active = np.argmin(shifted, axis=-1)
        diff_active = np.take_along_axis(
            diff, active[..., None, None], axis=-2
        ).squeeze(-2)
        dist_active = np.take_along_axis(dist, active[..., None], axis=-1).squeeze(-1)
        return diff_active / dist_active[..., None]

    def hessian(self, theta):
        shifted, diff, dist = self._shifted_distances(theta)
        active = np.argmin(shifted, axis=-1)
        diff_active = np.take_along_axis(
            diff, active[..., None, None], axis=-2
        ).squeeze(-2)
        dist_active = np.take_along_axis(dist, active[..., None], axis=-1).squeeze(-1)
        unit = diff_active / dist_active[..., None]
        n = self.centers.shape[1]
        eye = np.eye(n)
        outer = unit[..., :, None] * unit[..., None, :]
        return (eye - outer) / dist_active[..., None, None]

    def is_smooth_at(self, theta) -> bool:
        shifted, _, _ = self._shifted_distances(np.asarray(theta, dtype=float))
        ordered = np.sort(shifted, axis=-1)
        return bool(ordered[0] != ordered[1]) if ordered.shape[-1] > 1 else True

    def params(self):
        return {"centers": self.centers.tolist(), "radii": self.radii.tolist()}

    def scalar_value(self):
        sqrt = math.sqrt
        if self.centers.shape == (2, 2):
            (c1x, c1y), (c2x, c2y) = (tuple(map(float, c)) for c in self.centers)
            r1, r2 = (float(r) for r in self.radii)

            def value2(p):
                u1 = p[0] - c1x
                v1 = p[1] - c1y
                u2 = p[0] - c2x
                v2 = p[1] - c2y
                d1 = sqrt(u1 * u1 + v1 * v1) - r1
                d2 = sqrt(u2 * u2 + v2 * v2) - r2
                return d1 if d1 <= d2 else d2

            return value2
        centers = self.centers
        radii = self.radii

        def value_n(p):
            pt = np.asarray(p, dtype=float)
            return float(np.min(np.linalg.norm(pt - centers, axis=-1) - radii))

        return value_n


class BallBarrier(Barrier):
    """h(theta) = radius^2 - ||theta - center||^2; safe set is an open ball."""

    family = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def value(self, theta):
        diff = np.asarray(theta, dtype=float) - self.center
        return self.radius**2 - np.sum(diff * diff, axis=-1)

    def gradient(self, theta):
        return -2.0 * (np.asarray(theta, dtype=float) - self.center)

    def hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        n = self.center.shape[0]
        return np.broadcast_to(
            -2.0 * np.eye(n), theta.shape[:-1] + (n, n)
        ).copy()

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}

    def scalar_value(self):
        rsq = self.radius**2
        if self.center.shape[0] == 2:
            cx, cy = (float(v) for v in self.center)
            def value2(p):
                u = p[0] - cx
                v = p[1] - cy
                return rsq - u * u - v * v

            return value2
        center = self.center
        return lambda p: rsq - float(np.sum((np.asarray(p) - center) ** 2))


BARRIER_FAMILIES = {
    "half-space": HalfSpaceBarrier,
    "trig-field": TrigFieldBarrier,
    "min-of-circles": MinCirclesBarrier,
    "ball": BallBarrier,
}


def make_barrier(family: str, **params) -> Barrier:
    """Construct a barrier by family name; see BARRIER_FAMILIES for options."""
    try:
        cls = BARRIER_FAMILIES[family]
    except KeyError:
        raise ValueError(
            f"unknown barrier family {family!r}; expected one of "
            f"{sorted(BARRIER_FAMILIES)}"
        ) from None
    return cls(**params)


@dataclass
class Problem:
    """Cost + barrier + barrier weight; the object the controllers optimize.

    mu == 0 disables the barrier entirely (plain cost, no safety checks);
    this is how the unconstrained baseline is expressed.
    """

    cost: QuadraticCost
    barrier: Barrier
    mu: float

    def __post_init__(self) -> None:
        self.mu = float(self.mu)
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def dimension(self) -> int:
        return self.cost.dimension


def _as_point(theta, n: int) -> np.ndarray:
    point = np.asarray(theta, dtype=float)
    if point.ndim == 0:
        point = point.reshape(1)
    if point.shape != (n,):
        raise ValueError(f"expected a point of dimension {n}, got shape {point.shape}")
    return point


def modified_cost(problem: Problem, theta) -> float:
    """Jhat(theta) = J(theta) - mu log h(theta); raises BarrierViolation if h <= 0."""
    point = _as_point(theta, problem.dimension)
    j = float(problem.cost.value(point))
    if problem.mu == 0.0:
        return j
    h = float(problem.barrier.value(point))
    if h <= 0.0:
        raise BarrierViolation(point, h)
    return j - problem.mu * math.log(h)


def modified_gradient(problem: Problem, theta) -> np.ndarray:
    """grad Jhat = H (theta - theta*) - mu grad h / h."""
    point = _as_point(theta, problem.dimension)
    grad = problem.cost.gradient(point)
    if problem.mu == 0.0:
        return grad
    h = float(problem.barrier.value(point))
    if h <= 0.0:
        raise BarrierViolation(point, h)
    return grad - problem.mu * problem.barrier.gradient(point) / h


def modified_hessian(problem: Problem, theta) -> np.ndarray:
    """hess Jhat = H - (mu/h) hess h + (mu/h^2) grad h grad h^T."""
    point = _as_point(theta, problem.dimension)
    if problem.mu == 0.0:
        return problem.cost.hessian.copy()
    h = float(problem.barrier.value(point))
    if h <= 0.0:
        raise BarrierViolation(point, h)
    if not problem.barrier.is_smooth_at(point):
        raise NonsmoothPoint(
            f"barrier has no second derivative at {point} (medial axis)"
        )
    grad_h = problem.barrier.gradient(point)
    hess_h = problem.barrier.hessian(point)
    return (
        problem.cost.hessian
        - (problem.mu / h) * hess_h
        + (problem.mu / h**2) * np.outer(grad_h, grad_h)
    )


# --- finite differences (cross-checks and numerical Jacobians) ---


def fd_step(theta) -> float:
    """Central-difference step balancing truncation and round-off."""
    return max(1e-6, 1e-6 * float(np.linalg.norm(np.asarray(theta, dtype=float))))


def central_gradient(func, theta, step=None) -> np.ndarray:
    point = np.atleast_1d(np.asarray(theta, dtype=float))
    h = fd_step(point) if step is None else step
    grad = np.empty_like(point)
    for i in range(point.shape[0]):
        plus = point.copy()
        minus = point.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (func(plus) - func(minus)) / (2 * h)
    return grad


def central_jacobian(func, theta, step=None) -> np.ndarray:
    """J[i, j] = d func_i / d theta_j by central differences."""
    point = np.atleast_1d(np.asarray(theta, dtype=float))
    h = fd_step(point) if step is None else step
    cols = []
    for j in range(point.shape[0]):
        plus = point.copy()
        minus = point.copy()
        plus[j] += h
        minus[j] -= h
        cols.append((np.asarray(func(plus)) - np.asarray(func(minus))) / (2 * h))
    return np.stack(cols, axis=-1)


def forward_jacobian(func, theta, step=1e-6) -> np.ndarray:
    """One-sided Jacobian; used where each evaluation is expensive."""
    point = np.atleast_1d(np.asarray(theta, dtype=float))
    base = np.asarray(func(point))
    cols = []
    for j in range(point.shape[0]):
        plus = point.copy()
        plus[j] += step
        cols.append((np.asarray(func(plus)) - base) / step)
    return np.stack(cols, axis=-1)
