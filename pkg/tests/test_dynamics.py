import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from safe_esc.dynamics import (
    EscParams,
    IntegrationDiverged,
    IntegratorConfig,
    SafetyBreach,
    StepTooLarge,
    Trajectory,
    gradient_estimate,
    integrate_averaged,
    integrate_model_based,
    integrate_model_free,
    integrate_unconstrained_baseline,
    max_model_free_step,
    slow_config,
)
from safe_esc.objective import (
    BallBarrier,
    HalfSpaceBarrier,
    Problem,
    QuadraticCost,
)
from safe_esc.signals import DitherSpec

EQ_1D = (-1.0 - math.sqrt(7.0)) / 2.0  # root of 2 th (th + 1) = mu on the safe branch


def problem_1d(mu=3.0):
    return Problem(
        cost=QuadraticCost(0.0, [0.0], [[2.0]]),
        barrier=HalfSpaceBarrier([1.0], -1.0),
        mu=mu,
    )


def spec_1d(a=0.25, omega=15.0):
    return DitherSpec((Fraction(1),), (1.0,), a, omega)


def esc_1d(k=0.2, a=0.25, omega=15.0):
    return EscParams(k, spec_1d(a, omega))


# --- configs and params ---


def test_esc_params_requires_positive_gain():
    with pytest.raises(ValueError):
        EscParams(0.0, spec_1d())


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(step=-0.1, horizon=10.0)
    with pytest.raises(ValueError):
        IntegratorConfig(step=0.1, horizon=0.0)
    cfg = IntegratorConfig(step=0.01, horizon=1.0)
    assert cfg.n_steps == 100
    assert len(cfg.times()) == 101


def test_max_step_bound():
    # omega = 15, max w' = 1: 2 pi / 15 / 40
    assert max_model_free_step(spec_1d()) == pytest.approx(2 * math.pi / 600.0)


def test_step_too_large_rejected():
    cfg = IntegratorConfig(step=0.05, horizon=1.0)
    with pytest.raises(StepTooLarge):
        integrate_model_free(problem_1d(), esc_1d(), cfg, [-3.0])


def test_slow_config_is_integer_multiple():
    cfg = IntegratorConfig(step=0.01, horizon=100.0)
    slow = slow_config(cfg)
    ratio = slow.step / cfg.step
    assert ratio == pytest.approx(round(ratio))
    assert slow.horizon == cfg.horizon


# --- gradient estimate ---


def test_gradient_estimate_zero_at_tau_zero():
    g = gradient_estimate(problem_1d(), esc_1d(), 0.0, [-2.0])
    np.testing.assert_allclose(g, [0.0], atol=1e-15)


def test_gradient_estimate_hand_chain():
    # oracle: Jhat(-1.75) * m(pi/2) computed by independent arithmetic
    jhat = (1.75**2) - 3.0 * math.log(0.75)
    expected = jhat * (2.0 / (0.25 * 1.0))
    g = gradient_estimate(problem_1d(), esc_1d(), math.pi / 2.0, [-2.0])
    np.testing.assert_allclose(g, [expected], rtol=1e-12)
    assert expected == pytest.approx(31.4044, abs=5e-4)


def test_gradient_estimate_period_average_near_modified_gradient():
    # quadrature oracle: averaging ghat over one period approximates grad Jhat
    problem = problem_1d()
    biases = []
    for a in (0.25, 0.125):
        params = esc_1d(a=a)
        tau = np.linspace(0.0, 2.0 * math.pi, 513)
        samples = np.array([gradient_estimate(problem, params, t, [-2.0]) for t in tau])
        from scipy.integrate import simpson

        avg = simpson(samples, x=tau, axis=0) / (2.0 * math.pi)
        biases.append(abs(avg[0] - (-1.0)))
    assert biases[0] < 0.1
    assert biases[0] / biases[1] >= 3.5  # O(a^2) shrinkage


def test_gradient_estimate_unsafe_probe_raises():
    from safe_esc.objective import BarrierViolation

    with pytest.raises(BarrierViolation):
        gradient_estimate(problem_1d(), esc_1d(), math.pi / 2.0, [-1.1])


# --- model-free integration ---


def test_zero_gain_rejected_but_tiny_gain_freezes_estimate():
    cfg = IntegratorConfig(step=0.01, horizon=5.0)
    params = EscParams(1e-12, spec_1d())
    traj = integrate_model_free(problem_1d(), params, cfg, [-3.0])
    assert np.max(np.abs(traj.estimate - (-3.0))) < 1e-9
    # probe oscillates with amplitude a * r around the frozen estimate
    assert np.max(traj.probe) == pytest.approx(-3.0 + 0.25, abs=1e-4)
    assert np.min(traj.probe) == pytest.approx(-3.0 - 0.25, abs=1e-4)


def test_paper_1d_scenario_reproduction():
    cfg = IntegratorConfig(step=0.01, horizon=100.0)
    traj = integrate_model_free(problem_1d(), esc_1d(), cfg, [-3.0])
    assert traj.min_h_probe > 0.0
    assert traj.min_h_estimate > 0.0
    assert abs(traj.final_estimate[0] - EQ_1D) < 0.3


def test_unconstrained_baseline_crosses_boundary():
    cfg = IntegratorConfig(step=0.01, horizon=100.0)
    traj = integrate_unconstrained_baseline(problem_1d(), esc_1d(), cfg, [-3.0])
    assert traj.layer == "unconstrained-baseline"
    assert traj.min_h_probe < 0.0
    assert traj.first_unsafe_time() is not None
    # baseline converges near the unconstrained minimum theta* = 0
    assert abs(traj.final_estimate[0]) < 0.3
    # Jhat column records plain J for the baseline
    np.testing.assert_allclose(traj.cost, traj.nominal_cost)


def test_safety_breach_carries_partial_trajectory():
    # compact safe set + far-too-slow dither forces a genuine crossing
    problem = Problem(
        cost=QuadraticCost(0.0, [0.0, 0.0], 2.0 * np.eye(2)),
        barrier=BallBarrier([1.0, 0.0], 2.0),
        mu=0.2,
    )
    spec = DitherSpec((Fraction(3, 4), Fraction(1)), (1.0, 1.0), 0.2, 2.0)
    cfg = IntegratorConfig(step=0.01, horizon=40.0)
    with pytest.raises(SafetyBreach) as excinfo:
        integrate_model_free(problem, EscParams(0.2, spec), cfg, [0.5, -0.5])
    breach = excinfo.value
    assert breach.h_value <= 0.0
    assert breach.time > 0.0
    assert len(breach.trajectory) >= 1
    assert breach.trajectory.min_h_probe > 0.0  # recorded rows stayed safe


def test_divergence_detected_for_unbounded_runaway():
    spec = spec_1d(omega=1.0)
    cfg = IntegratorConfig(step=0.01, horizon=30.0)
    with pytest.raises(IntegrationDiverged) as excinfo:
        integrate_model_free(problem_1d(), EscParams(0.2, spec), cfg, [-3.0])
    assert excinfo.value.time > 0.0


def test_rk4_step_halving_consistency():
    cfg1 = IntegratorConfig(step=0.01, horizon=10.0)
    cfg2 = IntegratorConfig(step=0.005, horizon=10.0)
    t1 = integrate_model_free(problem_1d(), esc_1d(), cfg1, [-3.0])
    t2 = integrate_model_free(problem_1d(), esc_1d(), cfg2, [-3.0])
    assert abs(t1.final_estimate[0] - t2.final_estimate[0]) < 1e-6


def test_model_free_dimension_mismatch():
    with pytest.raises(ValueError):
        integrate_model_free(
            problem_1d(), esc_1d(), IntegratorConfig(step=0.01, horizon=1.0), [-3.0, 1.0]
        )


# --- model-based layer ---


def test_model_based_stationary_at_equilibrium():
    cfg = IntegratorConfig(step=0.05, horizon=10.0)
    traj = integrate_model_based(problem_1d(), 0.2, cfg, [EQ_1D])
    assert np.max(np.abs(traj.estimate - EQ_1D)) < 1e-12


def test_model_based_converges_to_closed_form():
    cfg = IntegratorConfig(step=0.05, horizon=50.0)
    traj = integrate_model_based(problem_1d(), 0.2, cfg, [-3.0])
    assert abs(traj.final_estimate[0] - EQ_1D) < 1e-4


def test_model_based_cost_nonincreasing():
    cfg = IntegratorConfig(step=0.05, horizon=50.0)
    traj = integrate_model_based(problem_1d(), 0.2, cfg, [-3.0])
    diffs = np.diff(traj.cost)
    assert np.all(diffs <= 1e-8)


def test_model_based_lie_derivative_matches_formula():
    problem = problem_1d()
    cfg = IntegratorConfig(step=0.01, horizon=20.0)
    traj = integrate_model_based(problem, 0.2, cfg, [-3.0])
    h = traj.barrier
    hdot_numeric = (h[2:] - h[:-2]) / (2 * cfg.step)
    theta = traj.estimate[1:-1]
    grad_h = problem.barrier.gradient(theta)
    grad_j = problem.cost.gradient(theta)
    hvals = h[1:-1]
    hdot_formula = (
        0.2 * problem.mu * np.sum(grad_h * grad_h, axis=-1) / hvals
        - 0.2 * np.sum(grad_j * grad_h, axis=-1)
    )
    scale = np.maximum(np.abs(hdot_formula), 1e-3)
    rel = np.abs(hdot_numeric - hdot_formula) / scale
    assert np.max(rel) < 1e-3


# --- averaged layer ---


def test_averaged_matches_model_based_as_a_shrinks():
    problem = problem_1d()
    cfg = IntegratorConfig(step=0.02, horizon=40.0)
    reference = integrate_model_based(problem, 0.2, cfg, [-3.0])
    sups = []
    for a in (0.2, 0.1, 0.05):
        params = esc_1d(a=a)
        traj = integrate_averaged(problem, params, cfg, [-3.0], quad_points=257)
        sups.append(float(np.max(np.abs(traj.estimate - reference.estimate))))
    assert sups[0] / sups[1] >= 3.0
    assert sups[1] / sups[2] >= 3.0
    order = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(sups), 1)[0]
    assert order >= 1.0


def test_averaged_stationary_at_averaged_equilibrium():
    from safe_esc.analysis import solve_equilibrium

    problem = problem_1d()
    params = esc_1d()
    eq = solve_equilibrium(
        problem, [-1.8], mode="averaged", dither_spec=params.dither, quad_points=257
    )
    cfg = IntegratorConfig(step=0.05, horizon=20.0)
    traj = integrate_averaged(problem, params, cfg, eq, quad_points=257)
    assert np.max(np.abs(traj.estimate - eq)) < 1e-8


def test_averaged_1d_barrier_value_monotone():
    problem = problem_1d()
    cfg = IntegratorConfig(step=0.05, horizon=60.0)
    traj = integrate_averaged(problem, esc_1d(), cfg, [-3.0], quad_points=257)
    # scalar phase line: h decreases monotonically toward h(theta_mu_a)
    assert np.all(np.diff(traj.barrier) <= 1e-12)
    assert traj.barrier[-1] == pytest.approx(-EQ_1D - 1.0, abs=0.05)


def test_model_free_approaches_averaged_as_omega_grows():
    problem = problem_1d()
    cfg_avg = IntegratorConfig(step=0.02, horizon=40.0)
    averaged = integrate_averaged(problem, esc_1d(), cfg_avg, [-3.0], quad_points=257)
    sups = []
    for omega, step in ((15.0, 0.01), (30.0, 0.005), (60.0, 0.0025)):
        params = esc_1d(omega=omega)
        cfg = IntegratorConfig(step=step, horizon=40.0)
        traj = integrate_model_free(problem, params, cfg, [-3.0])
        stride = int(round(cfg_avg.step / step))
        diff = traj.estimate[::stride] - averaged.estimate
        sups.append(float(np.max(np.abs(diff))))
    assert sups[0] > sups[1] > sups[2]


# --- trajectory record / CSV ---


def test_trajectory_validates_lengths_and_spacing():
    times = np.array([0.0, 0.1, 0.3])
    ones = np.ones((3, 1))
    flat = np.ones(3)
    with pytest.raises(ValueError):
        Trajectory(times, ones, ones, flat, flat, flat, flat, "model-free", 0.1)
    with pytest.raises(ValueError):
        Trajectory(
            np.array([0.0, 0.1]), ones, ones, flat, flat, flat, flat, "model-free", 0.1
        )


def test_csv_round_trip(tmp_path):
    cfg = IntegratorConfig(step=0.01, horizon=2.0)
    traj = integrate_model_free(problem_1d(), esc_1d(), cfg, [-3.0])
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,theta_hat_1,theta_1,J,Jhat,h_probe,h_estimate"
    data = np.genfromtxt(path, delimiter=",", names=True)
    np.testing.assert_array_equal(data["t"], traj.times)
    np.testing.assert_array_equal(data["theta_hat_1"], traj.estimate[:, 0])
    np.testing.assert_array_equal(data["Jhat"], traj.cost)
    np.testing.assert_array_equal(data["h_probe"], traj.barrier)


def test_csv_header_2d(tmp_path):
    problem = Problem(
        cost=QuadraticCost(0.0, [0.0, 0.0], 2.0 * np.eye(2)),
        barrier=BallBarrier([1.0, 0.0], 2.0),
        mu=0.2,
    )
    spec = DitherSpec((Fraction(3, 4), Fraction(1)), (1.0, 1.0), 0.2, 50.0)
    cfg = IntegratorConfig(step=0.003, horizon=0.3)
    traj = integrate_model_free(problem, EscParams(0.2, spec), cfg, [0.5, -0.5])
    path = tmp_path / "traj2.csv"
    traj.write_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == (
        "t,theta_hat_1,theta_hat_2,theta_1,theta_2,J,Jhat,h_probe,h_estimate"
    )
