"""Numerical verification of the theory: averaging, equilibria, margins.

Everything here is sampling- or quadrature-based.  Boundary-margin constants
are estimated over a user-declared compact analysis box (the paper's compact
sublevel sets are not available for every barrier family), and the repulsion
inequality is checked on points projected onto prescribed barrier levels.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import simpson

from .dynamics import (
    EscParams,
    IntegrationDiverged,
    IntegratorConfig,
    SafetyBreach,
    integrate_model_free,
    max_model_free_step,
)
from .objective import (
    BarrierViolation,
    Problem,
    forward_jacobian,
    modified_gradient,
    modified_hessian,
)
from .signals import DitherSpec, common_period, demod, dither


class NoConvergence(RuntimeError):
    """Newton iteration failed to reach the gradient tolerance."""


class LeftSafeSet(RuntimeError):
    """Backtracking could not keep Newton iterates inside the safe set."""


class EmptyBoundaryBand(RuntimeError):
    """No analysis-box sample fell near the barrier zero level."""


# --- averaged gradient -------------------------------------------------------


@lru_cache(maxsize=64)
def _quadrature_grid(spec: DitherSpec, quad_points: int):
    npts = quad_points if quad_points % 2 == 1 else quad_points + 1
    period = common_period(spec)
    tau = np.linspace(0.0, period, npts)
    return tau, dither(spec, tau), demod(spec, tau), period


def averaged_gradient(
    problem: Problem, spec: DitherSpec, theta_bar, quad_points: int = 129
) -> np.ndarray:
    """Period average of m(tau) * Jhat(theta_bar + a s(tau)) by Simpson rule.

    Raises BarrierViolation (tagged with the offending phase tau) if any
    quadrature probe leaves the safe set.
    """
    if quad_points < 3:
        raise ValueError("quad_points must be at least 3")
    theta_bar = np.atleast_1d(np.asarray(theta_bar, dtype=float))
    tau, s_vals, m_vals, period = _quadrature_grid(spec, quad_points)
    probes = theta_bar[None, :] + spec.amplitude * s_vals
    j = problem.cost.value(probes)
    if problem.mu != 0.0:
        h = problem.barrier.value(probes)
        unsafe = h <= 0.0
        if np.any(unsafe):
            idx = int(np.argmax(unsafe))
            raise BarrierViolation(probes[idx], h[idx], tau=float(tau[idx]))
        j = j - problem.mu * np.log(h)
    integrand = m_vals * j[:, None]
    return simpson(integrand, x=tau, axis=0) / period


# --- equilibria --------------------------------------------------------------


def solve_equilibrium(
    problem: Problem,
    initial_guess,
    mode: str = "model-based",
    dither_spec: DitherSpec | None = None,
    quad_points: int = 129,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Newton iteration on the stationarity condition of the chosen layer.

    mode="model-based" solves grad Jhat = 0 with the analytic Hessian;
    mode="averaged" solves gbar(theta, a) = 0 with a forward-difference
    Jacobian (the averaged gradient has no closed form).  Backtracking
    rejects iterates that leave the safe set.
    """
    if mode == "model-based":
        def grad_fn(y):
            return modified_gradient(problem, y)

        def jac_fn(y):
            return modified_hessian(problem, y)

    elif mode == "averaged":
        if dither_spec is None:
            raise ValueError("averaged mode requires dither_spec")

        def grad_fn(y):
            return averaged_gradient(problem, dither_spec, y, quad_points)

        def jac_fn(y):
            return forward_jacobian(grad_fn, y, step=1e-6)

    else:
        raise ValueError(f"unknown mode {mode!r}")

    def grad_or_none(y):
        try:
            return grad_fn(y)
        except BarrierViolation:
            return None

    x = np.atleast_1d(np.asarray(initial_guess, dtype=float)).copy()
    grad = grad_or_none(x)
    if grad is None:
        raise LeftSafeSet("initial guess is not safe")
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            return x
        try:
            step = np.linalg.solve(jac_fn(x), -grad)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular Jacobian on the Newton path") from exc
        accepted = None
        fallback = None
        t = 1.0
        while t >= 2.0**-60:
            cand = x + t * step
            cand_grad = grad_or_none(cand)
            if cand_grad is not None:
                if fallback is None:
                    fallback = (cand, cand_grad)
                if np.linalg.norm(cand_grad) <= (1.0 - 1e-4 * t) * gnorm:
                    accepted = (cand, cand_grad)
                    break
            t *= 0.5
        if accepted is None:
            if fallback is None:
                raise LeftSafeSet("backtracking could not keep iterates safe")
            accepted = fallback  # no norm decrease found; take the safe step
        x, grad = accepted
    raise NoConvergence(f"no convergence after {max_iter} Newton iterations")


# --- proximity of equilibria to the unconstrained minimizer ------------------


@dataclass
class ProximityReport:
    """How the modified equilibrium approaches theta* as mu shrinks."""

    mu_values: tuple[float, ...]
    equilibria: np.ndarray
    distances: np.ndarray
    fitted_order: float
    predicted_direction_error: np.ndarray
    predicted_direction: np.ndarray
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "mu_values": list(self.mu_values),
            "equilibria": self.equilibria.tolist(),
            "distances": self.distances.tolist(),
            "fitted_order": self.fitted_order,
            "predicted_direction_error": self.predicted_direction_error.tolist(),
            "predicted_direction": self.predicted_direction.tolist(),
            "degenerate": self.degenerate,
        }


DEGENERATE_DISTANCE = 1e-10


def proximity_study(problem: Problem, mu_schedule) -> ProximityReport:
    """Solve the equilibrium for each mu and fit the distance-to-theta* order.

    The first-order prediction is mu * H^-1 grad h(theta*) / h(theta*); the
    report carries the remainder of that expansion divided by mu^2.  The
    log-log order fit drops the largest mu when its residual exceeds 0.05
    (the law is asymptotic).
    """
    mus = [float(m) for m in mu_schedule]
    if len(mus) < 2:
        raise ValueError("mu_schedule needs at least two values")
    if any(m <= 0 for m in mus):
        raise ValueError("mu values must be positive")
    if any(b >= a for a, b in zip(mus, mus[1:])):
        raise ValueError("mu_schedule must be strictly decreasing")
    theta_star = problem.cost.minimizer
    h_star = float(problem.barrier.value(theta_star))
    if h_star <= 0.0:
        raise ValueError("theta* must lie strictly inside the safe set")
    grad_h_star = problem.barrier.gradient(theta_star)
    direction = np.linalg.solve(problem.cost.hessian, grad_h_star) / h_star

    equilibria = []
    for mu in mus:
        prob_mu = dataclasses.replace(problem, mu=mu)
        guess = theta_star + mu * direction
        eq = solve_equilibrium(prob_mu, guess)
        if float(prob_mu.barrier.value(eq)) <= 0.0:
            raise LeftSafeSet(f"equilibrium for mu={mu} is not strictly safe")
        equilibria.append(eq)
    equilibria = np.array(equilibria)
    distances = np.linalg.norm(equilibria - theta_star, axis=1)
    direction_error = np.array(
        [
            np.linalg.norm(eq - theta_star - mu * direction) / mu**2
            for eq, mu in zip(equilibria, mus)
        ]
    )
    degenerate = bool(np.all(distances < DEGENERATE_DISTANCE))
    if degenerate:
        fitted_order = float("nan")
    else:
        log_mu = np.log(mus)
        log_d = np.log(distances)
        slope, intercept = np.polyfit(log_mu, log_d, 1)
        residual = float(np.sqrt(np.mean((slope * log_mu + intercept - log_d) ** 2)))
        if residual > 0.05 and len(mus) >= 4:
            slope, _ = np.polyfit(log_mu[1:], log_d[1:], 1)
        fitted_order = float(slope)
    return ProximityReport(
        mu_values=tuple(mus),
        equilibria=equilibria,
        distances=distances,
        fitted_order=fitted_order,
        predicted_direction_error=direction_error,
        predicted_direction=np.asarray(direction, dtype=float),
        degenerate=degenerate,
    )


# --- margin constants and the repulsion inequality ---------------------------


@dataclass(frozen=True)
class AnalysisBox:
    """Compact axis-aligned box standing in for the paper's sublevel sets."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    samples_per_axis: int

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper):
            raise ValueError("lower and upper must have equal length")
        if any(lo >= up for lo, up in zip(lower, upper)):
            raise ValueError("lower must be strictly below upper componentwise")
        if self.samples_per_axis < 2:
            raise ValueError("samples_per_axis must be at least 2")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def diagonal(self) -> float:
        return float(
            np.linalg.norm(np.asarray(self.upper) - np.asarray(self.lower))
        )

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, up, self.samples_per_axis)
            for lo, up in zip(self.lower, self.upper)
        ]

    def grid(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        lo = np.asarray(self.lower) - tol
        up = np.asarray(self.upper) + tol
        return np.all((pts >= lo) & (pts <= up), axis=-1)


BOUNDARY_BAND_FRACTION = 1e-3  # band half-width as a fraction of the box diagonal


@dataclass(frozen=True)
class MarginConstants:
    """Sampled boundary constants: m, c0, M_h, M_J and the margin c1.

    c1 = mu m^2 / (8 M_J M_h) clipped to c0; below barrier level c1 the
    model-based flow provably increases h.
    """

    m: float
    c0: float
    M_h: float
    M_J: float
    c1: float

    def __post_init__(self) -> None:
        if not (self.m > 0 and self.c0 > 0 and self.M_h > 0):
            raise ValueError("margin constants must be positive")
        if not (0 < self.c1 <= self.c0):
            raise ValueError("need 0 < c1 <= c0")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "c0": self.c0,
            "M_h": self.M_h,
            "M_J": self.M_J,
            "c1": self.c1,
        }


def margin_constants(problem: Problem, box: AnalysisBox, h_floor: float) -> MarginConstants:
    """Estimate the boundary constants of the safety margin over `box`.

    m is the minimum gradient norm over samples in the boundary band
    |h| < 1e-3 * diagonal; c0 is the largest sampled sublevel on which the
    gradient norm stays >= m/2, clipped to h_floor; M_h and M_J are maxima
    over the sampled band h in [0, c0].
    """
    if h_floor <= 0:
        raise ValueError("h_floor must be positive")
    if box.dimension != problem.dimension:
        raise ValueError("box and problem dimensions differ")
    pts = box.grid()
    h = np.asarray(problem.barrier.value(pts), dtype=float)
    if not np.any(h > 0):
        raise ValueError("analysis box does not intersect the safe set")
    grads = problem.barrier.gradient(pts)
    gnorm = np.linalg.norm(grads, axis=-1)
    eps_band = BOUNDARY_BAND_FRACTION * box.diagonal
    boundary = np.abs(h) < eps_band
    if not np.any(boundary):
        raise EmptyBoundaryBand(
            f"no sample with |h| < {eps_band:.3g}; refine samples_per_axis"
        )
    m = float(np.min(gnorm[boundary]))
    if m <= 0:
        raise ValueError("zero boundary gradient sampled; Assumption-2 degenerate")

    inside = h >= 0.0
    hs = h[inside]
    gs = gnorm[inside]
    order = np.argsort(hs, kind="stable")
    hs = hs[order]
    gs = gs[order]
    prefix_ok = np.minimum.accumulate(gs) >= 0.5 * m
    bad = np.flatnonzero(~prefix_ok)
    cut = bad[0] if bad.size else hs.size
    candidates = hs[:cut]
    candidates = candidates[candidates > 0]
    if candidates.size == 0:
        raise ValueError("no positive sublevel with gradient norm >= m/2")
    c0 = float(min(candidates[-1], h_floor))

    band = inside & (h <= c0)
    m_h = float(np.max(gnorm[band]))
    m_j = float(np.max(np.linalg.norm(problem.cost.gradient(pts[band]), axis=-1)))
    denom = 8.0 * m_j * m_h
    c1 = c0 if denom == 0.0 else min(problem.mu * m * m / denom, c0)
    return MarginConstants(m=m, c0=c0, M_h=m_h, M_J=m_j, c1=c1)


@dataclass
class RepulsionCheck:
    """Outcome of sampling the repulsion inequality on the band (0, c1]."""

    passed: bool
    samples: int
    witness_count: int
    witnesses: list

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "samples": self.samples,
            "witness_count": self.witness_count,
            "witnesses": self.witnesses,
        }


MAX_STORED_WITNESSES = 50
BAND_LEVELS = 8


def verify_repulsion(
    problem: Problem, margin: MarginConstants, box: AnalysisBox, gain: float
) -> RepulsionCheck:
    """Check hdot >= k mu m^2 / (8 h) on sampled points with h in (0, c1].

    Band points are produced by Newton-projecting boundary-band grid samples
    onto geometric levels c1, c1/2, ..., so arbitrarily thin bands are still
    exercised.  Failures are returned as witnesses, not raised.
    """
    if gain <= 0:
        raise ValueError("gain must be positive")
    pts = box.grid()
    h = np.asarray(problem.barrier.value(pts), dtype=float)
    eps_band = BOUNDARY_BAND_FRACTION * box.diagonal
    seeds = pts[np.abs(h) < eps_band]
    if seeds.shape[0] == 0:
        raise EmptyBoundaryBand("no boundary-band seeds in the analysis box")
    levels = margin.c1 / (2.0 ** np.arange(BAND_LEVELS))
    x = np.repeat(seeds, levels.size, axis=0).astype(float)
    targets = np.tile(levels, seeds.shape[0])
    for _ in range(12):
        hx = np.asarray(problem.barrier.value(x), dtype=float)
        gx = problem.barrier.gradient(x)
        gn2 = np.maximum(np.sum(gx * gx, axis=-1), 1e-300)
        x = x + ((targets - hx) / gn2)[:, None] * gx
    hx = np.asarray(problem.barrier.value(x), dtype=float)
    converged = np.abs(hx - targets) <= 1e-9 * targets
    keep = converged & (hx > 0) & box.contains(x, tol=1e-12)
    x = x[keep]
    hx = hx[keep]
    if x.shape[0] == 0:
        raise EmptyBoundaryBand("no band sample could be projected onto (0, c1]")

    grad_h = problem.barrier.gradient(x)
    grad_j = problem.cost.gradient(x)
    lie = (
        gain * problem.mu * np.sum(grad_h * grad_h, axis=-1) / hx
        - gain * np.sum(grad_j * grad_h, axis=-1)
    )
    bound = gain * problem.mu * margin.m**2 / (8.0 * hx)
    tol = 1e-9 * (np.abs(lie) + np.abs(bound))
    failing = lie < bound - tol
    witnesses = [
        {
            "theta": x[i].tolist(),
            "h": float(hx[i]),
            "lie_derivative": float(lie[i]),
            "bound": float(bound[i]),
        }
        for i in np.flatnonzero(failing)[:MAX_STORED_WITNESSES]
    ]
    return RepulsionCheck(
        passed=not bool(np.any(failing)),
        samples=int(x.shape[0]),
        witness_count=int(np.count_nonzero(failing)),
        witnesses=witnesses,
    )


# --- sequential tuning (practical-stability sweep) ----------------------------


@dataclass
class TuningRow:
    mu: float
    a: float
    omega: float
    asymptotic_error: float
    min_h: float
    breached: bool

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "a": self.a,
            "omega": self.omega,
            "asymptotic_error": self.asymptotic_error,
            "min_h": self.min_h,
            "breached": self.breached,
        }


def run_tuning_row(scenario, mu: float, a: float, omega: float) -> TuningRow:
    """Integrate the model-free loop at one (mu, a, omega) cell.

    The asymptotic error is the max of ||theta_hat - theta*|| over the last
    20% of the horizon; breaches are recorded, not raised.
    """
    problem = dataclasses.replace(scenario.problem, mu=float(mu))
    spec = dataclasses.replace(
        scenario.esc.dither, amplitude=float(a), base_rate=float(omega)
    )
    params = EscParams(gain=scenario.esc.gain, dither=spec)
    base_cfg = scenario.integrator
    step = min(base_cfg.step, max_model_free_step(spec))
    cfg = IntegratorConfig(
        step=step, horizon=base_cfg.horizon, start_time=base_cfg.start_time
    )
    breached = False
    completed = True
    breach_h = None
    try:
        traj = integrate_model_free(
            problem, params, cfg, np.asarray(scenario.initial_estimate, dtype=float)
        )
    except SafetyBreach as breach:
        traj = breach.trajectory
        breached = True
        completed = False
        breach_h = breach.h_value
    except IntegrationDiverged as div:
        # gross misuse of the tuning knobs; report the row as unusable
        traj = div.trajectory
        completed = False
    theta_star = scenario.problem.cost.minimizer
    if not completed or len(traj) == 0:
        err = float("nan")
    else:
        cutoff = traj.times[0] + 0.8 * (traj.times[-1] - traj.times[0])
        tail = traj.times >= cutoff
        err = float(np.max(np.linalg.norm(traj.estimate[tail] - theta_star, axis=1)))
    mins = [traj.min_h_probe] if len(traj) else []
    if breach_h is not None:
        mins.append(breach_h)
    min_h = float(min(mins)) if mins else float("nan")
    return TuningRow(
        mu=float(mu),
        a=float(a),
        omega=float(omega),
        asymptotic_error=err,
        min_h=min_h,
        breached=breached,
    )


def sequential_tuning_study(scenario, schedule) -> list[TuningRow]:
    """Run a jointly-shrinking (mu, a, omega^-1) schedule on one scenario.

    Requires theta* strictly inside the safe set (the study measures error
    to theta*) and the schedule ordered with mu, a, 1/omega nonincreasing.
    """
    rows = [tuple(map(float, entry)) for entry in schedule]
    if not rows:
        raise ValueError("schedule is empty")
    if any(mu <= 0 or a <= 0 or omega <= 0 for mu, a, omega in rows):
        raise ValueError("schedule entries must be positive")
    for (mu1, a1, w1), (mu2, a2, w2) in zip(rows, rows[1:]):
        if mu2 > mu1 or a2 > a1 or w2 < w1:
            raise ValueError("schedule must shrink mu, a and omega^-1 jointly")
    theta_star = scenario.problem.cost.minimizer
    if float(scenario.problem.barrier.value(theta_star)) <= 0.0:
        raise ValueError("theta* must be strictly inside the safe set")
    return [run_tuning_row(scenario, *row) for row in rows]


# --- per-run safety report ----------------------------------------------------


@dataclass
class SafetyReport:
    """Strict-safety summary of one integration layer.

    The breach field is present exactly when min_h_probe <= 0 (for enforcing
    layers the breach point itself is folded into the minimum).
    """

    scenario: str
    parameters: dict
    min_h_probe: float
    min_h_estimate: float
    breach: dict | None
    margin: MarginConstants | None

    def __post_init__(self) -> None:
        if (self.breach is None) != (self.min_h_probe > 0):
            raise ValueError("breach must be present exactly when min_h_probe <= 0")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "parameters": self.parameters,
            "min_h_probe": self.min_h_probe,
            "min_h_estimate": self.min_h_estimate,
            "breach": self.breach,
            "margin": None if self.margin is None else self.margin.to_dict(),
        }


def safety_report_from_run(
    scenario_name: str,
    parameters: dict,
    trajectory,
    breach_event: SafetyBreach | None = None,
    margin: MarginConstants | None = None,
) -> SafetyReport:
    """Build a SafetyReport from a trajectory and an optional breach event.

    For non-enforcing layers (the baseline) a recorded h(probe) <= 0 counts
    as the breach event, timestamped at its first occurrence.
    """
    min_h = trajectory.min_h_probe if len(trajectory) else math.inf
    min_h_est = trajectory.min_h_estimate if len(trajectory) else math.inf
    breach = None
    if breach_event is not None:
        min_h = min(min_h, breach_event.h_value)
        breach = {
            "time": breach_event.time,
            "theta_hat": breach_event.theta_hat.tolist(),
            "probe": breach_event.probe.tolist(),
            "h": breach_event.h_value,
        }
    elif len(trajectory) and min_h <= 0:
        first = trajectory.first_unsafe_time()
        idx = int(np.flatnonzero(trajectory.barrier <= 0.0)[0])
        breach = {
            "time": first,
            "theta_hat": trajectory.estimate[idx].tolist(),
            "probe": trajectory.probe[idx].tolist(),
            "h": float(trajectory.barrier[idx]),
        }
    return SafetyReport(
        scenario=scenario_name,
        parameters=parameters,
        min_h_probe=float(min_h),
        min_h_estimate=float(min_h_est),
        breach=breach,
        margin=margin,
    )
