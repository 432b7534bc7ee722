import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from safe_esc.analysis import (
    AnalysisBox,
    EmptyBoundaryBand,
    MarginConstants,
    NoConvergence,
    averaged_gradient,
    margin_constants,
    proximity_study,
    run_tuning_row,
    safety_report_from_run,
    sequential_tuning_study,
    solve_equilibrium,
    verify_repulsion,
)
from safe_esc.dynamics import EscParams, IntegratorConfig, integrate_model_free
from safe_esc.objective import (
    BallBarrier,
    BarrierViolation,
    HalfSpaceBarrier,
    Problem,
    QuadraticCost,
    TrigFieldBarrier,
    modified_cost,
    modified_gradient,
)
from safe_esc.signals import DitherSpec

EQ_1D = (-1.0 - math.sqrt(7.0)) / 2.0


def problem_1d(mu=3.0):
    return Problem(
        cost=QuadraticCost(0.0, [0.0], [[2.0]]),
        barrier=HalfSpaceBarrier([1.0], -1.0),
        mu=mu,
    )


def spec_1d(a=0.25, omega=15.0):
    return DitherSpec((Fraction(1),), (1.0,), a, omega)


def offset_ball_problem(mu=0.2):
    # theta* = origin strictly inside the ball centered at (1, 0)
    return Problem(
        cost=QuadraticCost(0.0, [0.0, 0.0], 2.0 * np.eye(2)),
        barrier=BallBarrier([1.0, 0.0], 2.0),
        mu=mu,
    )


# --- averaged gradient ---


def test_averaged_gradient_exact_for_pure_quadratic():
    problem = problem_1d(mu=0.0)
    for a in (0.05, 0.25, 0.5):
        spec = spec_1d(a=a)
        g = averaged_gradient(problem, spec, [-2.0], 257)
        np.testing.assert_allclose(g, [-4.0], atol=1e-8)
    problem2 = Problem(
        cost=QuadraticCost(1.0, [1.0, -2.0], np.array([[3.0, 0.4], [0.4, 2.0]])),
        barrier=BallBarrier([0.0, 0.0], 100.0),
        mu=0.0,
    )
    spec2 = DitherSpec((Fraction(3, 4), Fraction(1)), (1.0, 1.0), 0.3, 10.0)
    point = np.array([0.3, 0.7])
    g2 = averaged_gradient(problem2, spec2, point, 513)
    np.testing.assert_allclose(g2, problem2.cost.gradient(point), atol=1e-8)


def test_averaged_gradient_richardson_vs_modified_gradient():
    problem = problem_1d()
    biases = []
    for a in (0.25, 0.125):
        g = averaged_gradient(problem, spec_1d(a=a), [-2.0], 257)
        biases.append(abs(g[0] - (-1.0)))
    assert biases[0] < 0.1
    assert biases[0] / biases[1] >= 3.5


def test_averaged_gradient_unsafe_probe_carries_tau():
    problem = problem_1d()
    with pytest.raises(BarrierViolation) as excinfo:
        averaged_gradient(problem, spec_1d(a=0.5), [-1.2], 257)
    assert excinfo.value.tau is not None


def test_averaged_gradient_order_one_convergence_everywhere():
    problem = problem_1d()
    for theta in (-1.6, -2.5, -3.5):
        errs = [
            float(
                np.linalg.norm(
                    averaged_gradient(problem, spec_1d(a=a), [theta], 513)
                    - modified_gradient(problem, [theta])
                )
            )
            for a in (0.2, 0.1, 0.05)
        ]
        order = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(errs), 1)[0]
        assert order >= 1.0


# --- equilibrium solver ---


def test_solve_equilibrium_1d_closed_form():
    eq = solve_equilibrium(problem_1d(), [-3.0])
    assert eq[0] == pytest.approx(EQ_1D, abs=1e-10)
    assert eq[0] == pytest.approx(-1.822876, abs=1e-6)


def test_solve_equilibrium_symmetric_ball_is_center():
    problem = Problem(
        cost=QuadraticCost(0.0, [1.0, 0.0], 2.0 * np.eye(2)),
        barrier=BallBarrier([1.0, 0.0], 2.0),
        mu=0.7,
    )
    eq = solve_equilibrium(problem, [1.2, 0.3])
    np.testing.assert_allclose(eq, [1.0, 0.0], atol=1e-10)


def test_solve_equilibrium_offset_ball_matches_grid_oracle():
    problem = offset_ball_problem(mu=0.1)
    eq = solve_equilibrium(problem, [0.05, 0.0])
    # brute-force oracle: grid minimization of the modified cost
    xs = np.linspace(-0.1, 0.2, 601)
    ys = np.linspace(-0.15, 0.15, 601)
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    h = problem.barrier.value(grid)
    jhat = problem.cost.value(grid) - problem.mu * np.log(np.maximum(h, 1e-300))
    jhat[h <= 0] = np.inf
    best = grid[int(np.argmin(jhat))]
    assert np.linalg.norm(eq - best) < 1.5e-3  # grid resolution
    # displacement aligned with mu H^-1 grad h(theta*) / h(theta*) = mu (1/3, 0)
    predicted = 0.1 * np.array([1.0 / 3.0, 0.0])
    assert np.linalg.norm(eq - predicted) < 0.05 * np.linalg.norm(predicted) * 3


def test_solve_equilibrium_averaged_mode():
    problem = problem_1d()
    spec = spec_1d()
    eq = solve_equilibrium(
        problem, [-1.8], mode="averaged", dither_spec=spec, quad_points=257
    )
    g = averaged_gradient(problem, spec, eq, 257)
    assert np.linalg.norm(g) < 1e-10
    # the finite-a equilibrium sits near but not exactly at the a->0 one
    assert abs(eq[0] - EQ_1D) < 0.05


def test_solve_equilibrium_rejects_unsafe_guess():
    from safe_esc.analysis import LeftSafeSet

    with pytest.raises(LeftSafeSet):
        solve_equilibrium(problem_1d(), [0.5])


def test_solve_equilibrium_requires_dither_for_averaged():
    with pytest.raises(ValueError):
        solve_equilibrium(problem_1d(), [-2.0], mode="averaged")
    with pytest.raises(ValueError):
        solve_equilibrium(problem_1d(), [-2.0], mode="banana")


def test_equilibrium_is_strict_local_minimum():
    from safe_esc.objective import modified_hessian

    for mu in (0.2, 0.1, 0.05):
        problem = offset_ball_problem(mu=mu)
        eq = solve_equilibrium(problem, [mu / 3.0, 0.0])
        lam_min = float(np.linalg.eigvalsh(modified_hessian(problem, eq))[0])
        assert lam_min > 0.0


# --- proximity study ---


def test_proximity_study_offset_ball_order():
    report = proximity_study(offset_ball_problem(), [0.2, 0.1, 0.05, 0.025])
    assert 0.85 <= report.fitted_order <= 1.15
    assert not report.degenerate
    assert np.all(np.diff(report.distances) < 0)  # shrinking with mu


def test_proximity_direction_error_bounded_and_remainder_shrinks():
    report = proximity_study(offset_ball_problem(), [0.2, 0.1, 0.05, 0.025])
    # normalized remainder stays bounded (analytic limit here is 5/27 ~ 0.185)
    assert np.max(report.predicted_direction_error) < 0.5
    raw = [
        err * mu**2
        for err, mu in zip(report.predicted_direction_error, report.mu_values)
    ]
    assert raw[-1] < raw[-2] < raw[-3]


def test_proximity_barrier_side_check():
    problem = offset_ball_problem()
    report = proximity_study(problem, [0.2, 0.1, 0.05, 0.025])
    h_star = float(problem.barrier.value(problem.cost.minimizer))
    for eq in report.equilibria:
        assert float(problem.barrier.value(eq)) > h_star


def test_proximity_degenerate_symmetric_ball():
    problem = Problem(
        cost=QuadraticCost(0.0, [1.0, 0.0], 2.0 * np.eye(2)),
        barrier=BallBarrier([1.0, 0.0], 2.0),
        mu=0.2,
    )
    report = proximity_study(problem, [0.2, 0.1, 0.05, 0.025])
    assert report.degenerate
    assert np.all(report.distances < 1e-10)
    assert math.isnan(report.fitted_order)


def test_proximity_validates_schedule():
    with pytest.raises(ValueError):
        proximity_study(offset_ball_problem(), [0.1, 0.2])
    with pytest.raises(ValueError):
        proximity_study(offset_ball_problem(), [0.1])
    with pytest.raises(ValueError):
        proximity_study(problem_1d(), [0.2, 0.1])  # theta* unsafe


# --- margin constants ---


def test_margin_constants_1d_exact_values():
    box = AnalysisBox((-4.0,), (-1.0,), 301)
    margin = margin_constants(problem_1d(), box, h_floor=1.0)
    assert margin.m == 1.0
    assert margin.M_h == 1.0
    assert margin.c0 == pytest.approx(1.0, rel=1e-12)
    assert margin.M_J == pytest.approx(4.0, rel=1e-12)
    assert margin.c1 == pytest.approx(3.0 / 32.0, rel=1e-12)


def test_margin_c1_linear_in_mu():
    box = AnalysisBox((-4.0,), (-1.0,), 301)
    m1 = margin_constants(problem_1d(mu=3.0), box, h_floor=1.0)
    m2 = margin_constants(problem_1d(mu=6.0), box, h_floor=1.0)
    assert m2.c1 == pytest.approx(2.0 * m1.c1, rel=1e-14)
    assert (m2.m, m2.M_h, m2.M_J) == (m1.m, m1.M_h, m1.M_J)


def test_margin_trig_field_positive_m_vs_boundary_oracle():
    problem = Problem(
        cost=QuadraticCost(0.0, [4.0, 4.0], 2.0 * np.eye(2)),
        barrier=TrigFieldBarrier(0.2, 0.3),
        mu=6.0,
    )
    box = AnalysisBox((0.0, -4.6), (2.3, -3.0), 481)
    margin = margin_constants(problem, box, h_floor=0.29)
    assert margin.m > 0.0
    # oracle: brute-force gradient-norm minimization along the exact wall
    # theta_2 = -10/3 inside the box
    th1 = np.linspace(0.0, 2.3, 20001)
    wall = np.stack([th1, np.full_like(th1, -10.0 / 3.0)], axis=-1)
    oracle = float(np.min(np.linalg.norm(problem.barrier.gradient(wall), axis=-1)))
    assert margin.m == pytest.approx(oracle, rel=0.2)


def test_margin_empty_band_raises():
    box = AnalysisBox((-4.0,), (-3.0,), 50)  # far from the boundary at -1
    with pytest.raises(EmptyBoundaryBand):
        margin_constants(problem_1d(), box, h_floor=1.0)


def test_margin_requires_safe_intersection():
    box = AnalysisBox((1.0,), (2.0,), 50)  # entirely unsafe side
    with pytest.raises(ValueError):
        margin_constants(problem_1d(), box, h_floor=1.0)


def test_margin_constants_chain_invariant():
    with pytest.raises(ValueError):
        MarginConstants(m=1.0, c0=0.5, M_h=1.0, M_J=1.0, c1=0.7)  # c1 > c0
    with pytest.raises(ValueError):
        MarginConstants(m=-1.0, c0=0.5, M_h=1.0, M_J=1.0, c1=0.1)


# --- repulsion inequality ---


def box_1d():
    return AnalysisBox((-4.0,), (-1.0,), 301)


def test_repulsion_passes_on_paper_1d():
    margin = margin_constants(problem_1d(), box_1d(), h_floor=1.0)
    check = verify_repulsion(problem_1d(), margin, box_1d(), gain=0.2)
    assert check.passed
    assert check.witness_count == 0
    assert check.samples > 0


def test_repulsion_invariant_under_gain_scaling():
    margin = margin_constants(problem_1d(), box_1d(), h_floor=1.0)
    c1 = verify_repulsion(problem_1d(), margin, box_1d(), gain=0.2)
    c2 = verify_repulsion(problem_1d(), margin, box_1d(), gain=2.0)
    assert c1.passed == c2.passed
    assert c1.witness_count == c2.witness_count


def test_repulsion_fails_when_barrier_term_vanishes():
    # margin from the caption mu; inequality evaluated at mu -> 0 where the
    # attractive cost term dominates near the boundary
    margin = margin_constants(problem_1d(), box_1d(), h_floor=1.0)
    check = verify_repulsion(problem_1d(mu=1e-6), margin, box_1d(), gain=0.2)
    assert not check.passed
    assert check.witness_count >= 1
    witness = check.witnesses[0]
    assert witness["lie_derivative"] < witness["bound"]


# --- sequential tuning ---


def interior_ball_scenario():
    from safe_esc.scenarios import builtin

    return builtin("interior-ball")


def test_sequential_tuning_monotone_errors():
    scenario = interior_ball_scenario()
    rows = sequential_tuning_study(
        scenario, [(0.4, 0.2, 50.0), (0.2, 0.1, 100.0)]
    )
    assert rows[0].asymptotic_error > rows[1].asymptotic_error
    assert all(r.min_h > 0 for r in rows)
    assert not any(r.breached for r in rows)


def test_sequential_tuning_validates_schedule():
    scenario = interior_ball_scenario()
    with pytest.raises(ValueError):
        sequential_tuning_study(scenario, [])
    with pytest.raises(ValueError):
        sequential_tuning_study(scenario, [(0.2, 0.1, 100.0), (0.4, 0.2, 50.0)])
    with pytest.raises(ValueError):
        sequential_tuning_study(scenario, [(0.2, 0.1, 100.0), (0.1, 0.2, 200.0)])


def test_sequential_tuning_requires_interior_theta_star():
    from safe_esc.scenarios import builtin

    with pytest.raises(ValueError):
        sequential_tuning_study(builtin("paper-1d"), [(3.0, 0.25, 15.0)])


def test_tuning_row_records_breach():
    scenario = interior_ball_scenario()
    row = run_tuning_row(scenario, 0.2, 0.2, 2.0)
    assert row.breached
    assert row.min_h <= 0.0
    assert math.isnan(row.asymptotic_error)


# --- safety reports ---


def test_safety_report_from_safe_run():
    scenario = interior_ball_scenario()
    cfg = IntegratorConfig(step=0.003, horizon=5.0)
    traj = integrate_model_free(
        scenario.problem, scenario.esc, cfg, np.asarray(scenario.initial_estimate)
    )
    report = safety_report_from_run("interior-ball", {"mu": 0.2}, traj)
    assert report.breach is None
    assert report.min_h_probe > 0


def test_safety_report_flags_baseline_crossing():
    from safe_esc.dynamics import integrate_unconstrained_baseline

    problem = problem_1d()
    cfg = IntegratorConfig(step=0.01, horizon=50.0)
    traj = integrate_unconstrained_baseline(
        problem, EscParams(0.2, spec_1d()), cfg, [-3.0]
    )
    report = safety_report_from_run("paper-1d", {}, traj)
    assert report.min_h_probe <= 0
    assert report.breach is not None
    assert report.breach["time"] == traj.first_unsafe_time()
