"""The three dynamical layers: model-free ESC, averaged flow, gradient flow.

All integrators are fixed-step classical Runge-Kutta (RK4): the fast dither
makes adaptive error estimators noisy, and fixed steps give bit-stable,
reproducible trajectories.  The model-free layer resolves the fastest dither
component with at least 40 steps per cycle; a breach of that bound raises
StepTooLarge.

Safety semantics: with mu > 0 every cost query at an unsafe point is an
error.  Inside the model-free loop that error is terminal and surfaces as
SafetyBreach carrying the partial trajectory (the event is a finding, not a
numerical nuisance, so the step is never retried).  With mu == 0 the same
loop is the unconstrained ESC baseline: plain J drives the estimate, nothing
raises, and h is still recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .objective import BarrierViolation, Problem, modified_cost, modified_gradient
from .signals import DitherSpec, demod, dither

MIN_STEPS_PER_DITHER_CYCLE = 40


class StepTooLarge(ValueError):
    """Integrator step does not resolve the fastest dither component."""


class SafetyBreach(RuntimeError):
    """A model-free integration queried an unsafe point; integration halted."""

    def __init__(self, time, theta_hat, probe, h_value, trajectory):
        self.time = float(time)
        self.theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
        self.probe = np.atleast_1d(np.asarray(probe, dtype=float))
        self.h_value = float(h_value)
        self.trajectory = trajectory
        super().__init__(
            f"safety breach at t={time:.6g}: h={h_value:.6g} at probe "
            f"{np.array2string(self.probe, precision=6)}"
        )


class IntegrationDiverged(RuntimeError):
    """The estimate left the representable range (gross parameter misuse)."""

    def __init__(self, time, theta_hat, trajectory):
        self.time = float(time)
        self.theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
        self.trajectory = trajectory
        super().__init__(f"integration diverged at t={time:.6g}")


@dataclass(frozen=True)
class EscParams:
    """Adaptation gain plus the dither bank driving the search."""

    gain: float
    dither: DitherSpec

    def __post_init__(self) -> None:
        object.__setattr__(self, "gain", float(self.gain))
        if self.gain <= 0:
            raise ValueError("gain must be positive")


@dataclass(frozen=True)
class IntegratorConfig:
    step: float
    horizon: float
    start_time: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "start_time", float(self.start_time))
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.n_steps < 1:
            raise ValueError("horizon must cover at least one step")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    def times(self) -> np.ndarray:
        return self.start_time + self.step * np.arange(self.n_steps + 1)


def max_model_free_step(spec: DitherSpec) -> float:
    """Largest step resolving the fastest dither component at 40 steps/cycle."""
    fastest = spec.base_rate * max(abs(w) for w in spec.rates_float())
    return 2.0 * math.pi / fastest / MIN_STEPS_PER_DITHER_CYCLE


def slow_config(cfg: IntegratorConfig, target: float | None = None) -> IntegratorConfig:
    """Coarser config for the averaged/model-based layers.

    Those layers have no fast dither, so the step is widened to an integer
    multiple of the model-free step (keeping the grids commensurate) aimed at
    `target` (default: horizon/4000 capped at 0.25 time units).
    """
    if target is None:
        target = min(cfg.horizon / 4000.0, 0.25)
    factor = max(1, int(round(target / cfg.step)))
    return IntegratorConfig(
        step=cfg.step * factor, horizon=cfg.horizon, start_time=cfg.start_time
    )


@dataclass
class Trajectory:
    """Uniformly sampled record of one integration.

    estimate is theta_hat(t); probe is the physically evaluated point
    theta(t) = theta_hat + a s(omega t) for the model-free layer and equals
    estimate for the averaged/model-based layers.  cost is Jhat at the probe,
    nominal_cost is J at the probe, barrier/barrier_estimate are h at the
    probe and at the estimate.
    """

    times: np.ndarray
    estimate: np.ndarray
    probe: np.ndarray
    cost: np.ndarray
    nominal_cost: np.ndarray
    barrier: np.ndarray
    barrier_estimate: np.ndarray
    layer: str
    step: float

    def __post_init__(self) -> None:
        rows = self.times.shape[0]
        for name in ("estimate", "probe", "cost", "nominal_cost", "barrier", "barrier_estimate"):
            if getattr(self, name).shape[0] != rows:
                raise ValueError(f"field {name} length mismatch")
        if rows > 1:
            gaps = np.diff(self.times)
            if np.any(gaps <= 0) or np.max(np.abs(gaps - self.step)) > 1e-9 * self.step:
                raise ValueError("times must increase uniformly by `step`")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def dimension(self) -> int:
        return self.estimate.shape[1]

    @property
    def final_estimate(self) -> np.ndarray:
        return self.estimate[-1]

    @property
    def min_h_probe(self) -> float:
        return float(np.min(self.barrier))

    @property
    def min_h_estimate(self) -> float:
        return float(np.min(self.barrier_estimate))

    def first_unsafe_time(self):
        """Time of the first recorded h(probe) <= 0, or None."""
        idx = np.flatnonzero(self.barrier <= 0.0)
        return float(self.times[idx[0]]) if idx.size else None

    def write_csv(self, path) -> None:
        n = self.dimension
        header = (
            ["t"]
            + [f"theta_hat_{i + 1}" for i in range(n)]
            + [f"theta_{i + 1}" for i in range(n)]
            + ["J", "Jhat", "h_probe", "h_estimate"]
        )
        data = np.column_stack(
            [
                self.times,
                self.estimate,
                self.probe,
                self.nominal_cost,
                self.cost,
                self.barrier,
                self.barrier_estimate,
            ]
        )
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def gradient_estimate(problem: Problem, params: EscParams, tau: float, theta_hat) -> np.ndarray:
    """Demodulated gradient estimate Jhat(theta_hat + a s(tau)) * m(tau, a)."""
    spec = params.dither
    probe = np.atleast_1d(np.asarray(theta_hat, dtype=float)) + spec.amplitude * dither(spec, tau)
    return modified_cost(problem, probe) * demod(spec, tau)


def _event(kind, tm, state, probe_pt, h):
    return kind, tm, state, probe_pt, h


def _loop_model_free_1d(x0, t0, dt, nsteps, h_fn, j_fn, w, ar, mc, gain, mu, enforce, rec):
    est, probe, cost_arr, ncost, hprobe, hest = rec
    sin = math.sin
    log = math.log
    isfinite = math.isfinite
    w1 = w[0]
    ar1 = ar[0]
    mc1 = mc[0]
    x = float(x0[0])
    half = dt * 0.5
    sixth = dt / 6.0
    neg_k = -gain
    use_log = mu != 0.0

    def rhs(tm, xv):
        s1 = sin(w1 * tm)
        p1 = xv + ar1 * s1
        h = h_fn((p1,))
        if h > 0.0:
            jh = j_fn((p1,)) - mu * log(h) if use_log else j_fn((p1,))
        elif enforce:
            if h <= 0.0 and isfinite(h) and isfinite(p1):
                return None, _event("breach", tm, (xv,), (p1,), h)
            return None, _event("diverged", tm, (xv,), None, None)
        else:
            jh = j_fn((p1,))
        return neg_k * jh * mc1 * s1, None

    i = 0
    while True:
        t = t0 + i * dt
        s1 = sin(w1 * t)
        p1 = x + ar1 * s1
        h = h_fn((p1,))
        j = j_fn((p1,))
        if h > 0.0:
            jh = j - mu * log(h) if use_log else j
        elif enforce:
            if h <= 0.0 and isfinite(h) and isfinite(p1):
                return i, _event("breach", t, (x,), (p1,), h)
            return i, _event("diverged", t, (x,), None, None)
        else:
            jh = j
        est[i, 0] = x
        probe[i, 0] = p1
        cost_arr[i] = jh
        ncost[i] = j
        hprobe[i] = h
        hest[i] = h_fn((x,))
        if i == nsteps:
            return nsteps + 1, None
        k1 = neg_k * jh * mc1 * s1
        k2, br = rhs(t + half, x + half * k1)
        if br is not None:
            return i + 1, br
        k3, br = rhs(t + half, x + half * k2)
        if br is not None:
            return i + 1, br
        k4, br = rhs(t + dt, x + dt * k3)
        if br is not None:
            return i + 1, br
        x += sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not isfinite(x):
            return i + 1, _event("diverged", t + dt, (x,), None, None)
        i += 1


def _loop_model_free_2d(x0, t0, dt, nsteps, h_fn, j_fn, w, ar, mc, gain, mu, enforce, rec):
    est, probe, cost_arr, ncost, hprobe, hest = rec
    sin = math.sin
    log = math.log
    w1, w2 = w
    ar1, ar2 = ar
    mc1, mc2 = mc
    x1 = float(x0[0])
    x2 = float(x0[1])
    half = dt * 0.5
    sixth = dt / 6.0
    neg_k = -gain
    use_log = mu != 0.0

    isfinite = math.isfinite

    def rhs(tm, y1, y2):
        s1 = sin(w1 * tm)
        s2 = sin(w2 * tm)
        p1 = y1 + ar1 * s1
        p2 = y2 + ar2 * s2
        h = h_fn((p1, p2))
        if h > 0.0:
            jh = j_fn((p1, p2)) - mu * log(h) if use_log else j_fn((p1, p2))
        elif enforce:
            if h <= 0.0 and isfinite(h) and isfinite(p1) and isfinite(p2):
                return 0.0, 0.0, _event("breach", tm, (y1, y2), (p1, p2), h)
            return 0.0, 0.0, _event("diverged", tm, (y1, y2), None, None)
        else:
            jh = j_fn((p1, p2))
        g = neg_k * jh
        return g * mc1 * s1, g * mc2 * s2, None

    i = 0
    while True:
        t = t0 + i * dt
        s1 = sin(w1 * t)
        s2 = sin(w2 * t)
        p1 = x1 + ar1 * s1
        p2 = x2 + ar2 * s2
        h = h_fn((p1, p2))
        j = j_fn((p1, p2))
        if h > 0.0:
            jh = j - mu * log(h) if use_log else j
        elif enforce:
            if h <= 0.0 and isfinite(h) and isfinite(p1) and isfinite(p2):
                return i, _event("breach", t, (x1, x2), (p1, p2), h)
            return i, _event("diverged", t, (x1, x2), None, None)
        else:
            jh = j
        est[i, 0] = x1
        est[i, 1] = x2
        probe[i, 0] = p1
        probe[i, 1] = p2
        cost_arr[i] = jh
        ncost[i] = j
        hprobe[i] = h
        hest[i] = h_fn((x1, x2))
        if i == nsteps:
            return nsteps + 1, None
        g = neg_k * jh
        a1 = g * mc1 * s1
        b1 = g * mc2 * s2
        a2, b2, br = rhs(t + half, x1 + half * a1, x2 + half * b1)
        if br is not None:
            return i + 1, br
        a3, b3, br = rhs(t + half, x1 + half * a2, x2 + half * b2)
        if br is not None:
            return i + 1, br
        a4, b4, br = rhs(t + dt, x1 + dt * a3, x2 + dt * b3)
        if br is not None:
            return i + 1, br
        x1 += sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        x2 += sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        if not (isfinite(x1) and isfinite(x2)):
            return i + 1, _event("diverged", t + dt, (x1, x2), None, None)
        i += 1


def _loop_model_free_nd(x0, t0, dt, nsteps, h_fn, j_fn, w, ar, mc, gain, mu, enforce, rec):
    est, probe, cost_arr, ncost, hprobe, hest = rec
    sin = math.sin
    log = math.log
    n = len(w)
    rng = range(n)
    half = dt * 0.5
    sixth = dt / 6.0
    neg_k = -gain
    use_log = mu != 0.0
    x = tuple(float(v) for v in x0)

    isfinite = math.isfinite

    def check(tm, y, p, h):
        if h <= 0.0 and isfinite(h) and all(isfinite(v) for v in p):
            return _event("breach", tm, y, p, h)
        return _event("diverged", tm, y, None, None)

    def rhs(tm, y):
        s = tuple(sin(w[idx] * tm) for idx in rng)
        p = tuple(y[idx] + ar[idx] * s[idx] for idx in rng)
        h = h_fn(p)
        if h > 0.0:
            jh = j_fn(p) - mu * log(h) if use_log else j_fn(p)
        elif enforce:
            return None, check(tm, y, p, h)
        else:
            jh = j_fn(p)
        g = neg_k * jh
        return tuple(g * mc[idx] * s[idx] for idx in rng), None

    i = 0
    while True:
        t = t0 + i * dt
        s = tuple(sin(w[idx] * t) for idx in rng)
        p = tuple(x[idx] + ar[idx] * s[idx] for idx in rng)
        h = h_fn(p)
        j = j_fn(p)
        if h > 0.0:
            jh = j - mu * log(h) if use_log else j
        elif enforce:
            return i, check(t, x, p, h)
        else:
            jh = j
        est[i] = x
        probe[i] = p
        cost_arr[i] = jh
        ncost[i] = j
        hprobe[i] = h
        hest[i] = h_fn(x)
        if i == nsteps:
            return nsteps + 1, None
        g = neg_k * jh
        k1 = tuple(g * mc[idx] * s[idx] for idx in rng)
        k2, br = rhs(t + half, tuple(x[idx] + half * k1[idx] for idx in rng))
        if br is not None:
            return i + 1, br
        k3, br = rhs(t + half, tuple(x[idx] + half * k2[idx] for idx in rng))
        if br is not None:
            return i + 1, br
        k4, br = rhs(t + dt, tuple(x[idx] + dt * k3[idx] for idx in rng))
        if br is not None:
            return i + 1, br
        x = tuple(
            x[idx] + sixth * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx])
            for idx in rng
        )
        if not all(isfinite(v) for v in x):
            return i + 1, _event("diverged", t + dt, x, None, None)
        i += 1


_MODEL_FREE_LOOPS = {1: _loop_model_free_1d, 2: _loop_model_free_2d}


def integrate_model_free(
    problem: Problem,
    params: EscParams,
    cfg: IntegratorConfig,
    theta_hat_0,
    *,
    layer: str = "model-free",
) -> Trajectory:
    """Integrate d(theta_hat)/dt = -k Jhat(theta_hat + a s(omega t)) m(omega t).

    Raises StepTooLarge if cfg.step under-resolves the dither and
    SafetyBreach (with the partial trajectory attached) if any RK stage
    queries an unsafe point while mu > 0.
    """
    spec = params.dither
    n = spec.dimension
    if problem.dimension != n:
        raise ValueError("problem and dither dimensions differ")
    bound = max_model_free_step(spec)
    if cfg.step > bound * (1.0 + 1e-12):
        raise StepTooLarge(
            f"step {cfg.step:.6g} exceeds {bound:.6g} "
            f"({MIN_STEPS_PER_DITHER_CYCLE} steps per fastest dither cycle)"
        )
    x0 = np.atleast_1d(np.asarray(theta_hat_0, dtype=float))
    if x0.shape != (n,):
        raise ValueError(f"theta_hat_0 must have shape ({n},)")
    nsteps = cfg.n_steps
    est = np.empty((nsteps + 1, n))
    probe = np.empty((nsteps + 1, n))
    cost_arr = np.empty(nsteps + 1)
    ncost = np.empty(nsteps + 1)
    hprobe = np.empty(nsteps + 1)
    hest = np.empty(nsteps + 1)
    rec = (est, probe, cost_arr, ncost, hprobe, hest)

    loop = _MODEL_FREE_LOOPS.get(n, _loop_model_free_nd)
    rows, breach = loop(
        x0,
        cfg.start_time,
        cfg.step,
        nsteps,
        problem.barrier.scalar_value(),
        problem.cost.scalar_value(),
        tuple(wi * spec.base_rate for wi in spec.rates_float()),
        tuple(spec.amplitude * ri for ri in spec.relative_amplitudes),
        tuple(2.0 / (spec.amplitude * ri) for ri in spec.relative_amplitudes),
        params.gain,
        problem.mu,
        problem.mu > 0.0,
        rec,
    )
    times = cfg.start_time + cfg.step * np.arange(rows)
    trajectory = Trajectory(
        times=times,
        estimate=est[:rows],
        probe=probe[:rows],
        cost=cost_arr[:rows],
        nominal_cost=ncost[:rows],
        barrier=hprobe[:rows],
        barrier_estimate=hest[:rows],
        layer=layer,
        step=cfg.step,
    )
    if breach is not None:
        kind, b_time, b_state, b_probe, b_h = breach
        if kind == "breach":
            raise SafetyBreach(b_time, b_state, b_probe, b_h, trajectory)
        raise IntegrationDiverged(b_time, b_state, trajectory)
    return trajectory


def integrate_unconstrained_baseline(
    problem: Problem, params: EscParams, cfg: IntegratorConfig, theta_hat_0
) -> Trajectory:
    """The paper's unconstrained ESC baseline: same loop, mu = 0, h recorded."""
    import dataclasses

    baseline_problem = dataclasses.replace(problem, mu=0.0)
    return integrate_model_free(
        baseline_problem, params, cfg, theta_hat_0, layer="unconstrained-baseline"
    )


def _integrate_slow(problem, rhs, cfg, y0, layer):
    """Fixed-step RK4 with per-step recording for the dither-free layers."""
    n = y0.shape[0]
    nsteps = cfg.n_steps
    dt = cfg.step
    times = cfg.times()
    est = np.empty((nsteps + 1, n))
    cost_arr = np.empty(nsteps + 1)
    ncost = np.empty(nsteps + 1)
    hvals = np.empty(nsteps + 1)
    y = y0.astype(float).copy()
    half = dt * 0.5
    for i in range(nsteps + 1):
        est[i] = y
        ncost[i] = float(problem.cost.value(y))
        h = float(problem.barrier.value(y))
        hvals[i] = h
        if problem.mu != 0.0:
            if h <= 0.0:
                raise BarrierViolation(y, h)
            cost_arr[i] = ncost[i] - problem.mu * math.log(h)
        else:
            cost_arr[i] = ncost[i]
        if i == nsteps:
            break
        t = times[i]
        k1 = rhs(t, y)
        k2 = rhs(t + half, y + half * k1)
        k3 = rhs(t + half, y + half * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Trajectory(
        times=times,
        estimate=est,
        probe=est.copy(),
        cost=cost_arr,
        nominal_cost=ncost,
        barrier=hvals.copy(),
        barrier_estimate=hvals,
        layer=layer,
        step=dt,
    )


def integrate_model_based(problem: Problem, gain: float, cfg: IntegratorConfig, theta_0) -> Trajectory:
    """Integrate the exact gradient flow d(theta)/dt = -k grad Jhat(theta)."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    y0 = np.atleast_1d(np.asarray(theta_0, dtype=float))

    def rhs(_t, y):
        return -gain * modified_gradient(problem, y)

    return _integrate_slow(problem, rhs, cfg, y0, "model-based")


def integrate_averaged(
    problem: Problem,
    params: EscParams,
    cfg: IntegratorConfig,
    theta_bar_0,
    quad_points: int = 129,
) -> Trajectory:
    """Integrate the period-averaged loop d(theta_bar)/dt = -k gbar(theta_bar, a).

    gbar is the quadrature average of the demodulated gradient estimate over
    one exact common period; any unsafe quadrature probe raises
    BarrierViolation tagged with the offending phase.
    """
    from .analysis import averaged_gradient  # deferred: analysis imports dynamics

    spec = params.dither
    y0 = np.atleast_1d(np.asarray(theta_bar_0, dtype=float))
    gain = params.gain

    def rhs(_t, y):
        return -gain * averaged_gradient(problem, spec, y, quad_points)

    return _integrate_slow(problem, rhs, cfg, y0, "averaged")
