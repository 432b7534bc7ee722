"""Command-line entry point: run scenarios, verify the theory, drive sweeps.

All outputs are files (one CSV per layer, JSON reports); stdout carries a
one-line summary per layer.  Outputs contain no timestamps or randomness, so
repeated invocations with identical inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .analysis import (
    EmptyBoundaryBand,
    margin_constants,
    proximity_study,
    run_tuning_row,
    safety_report_from_run,
    verify_repulsion,
)
from .dynamics import (
    IntegrationDiverged,
    SafetyBreach,
    StepTooLarge,
    integrate_averaged,
    integrate_model_based,
    integrate_model_free,
    integrate_unconstrained_baseline,
    slow_config,
)
from .objective import BarrierViolation
from .scenarios import SchemaError, UnknownScenario, resolve
from .signals import verify_orthogonality

ENFORCING_LAYERS = ("model-free", "averaged", "model-based")
ALL_LAYERS = ENFORCING_LAYERS + ("unconstrained-baseline",)

PROXIMITY_ORDER_RANGE = (0.85, 1.15)
PROXIMITY_MU_CAP = 0.4  # the O(mu) law is asymptotic; start the schedule small


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, command: str, scenario_ref: str) -> None:
    _write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "scenario": scenario_ref,
            "deterministic": True,
            "version": __version__,
        },
    )


def _effective_parameters(scenario) -> dict:
    spec = scenario.esc.dither
    return {
        "mu": scenario.problem.mu,
        "k": scenario.esc.gain,
        "a": spec.amplitude,
        "omega": spec.base_rate,
        "step": scenario.integrator.step,
        "horizon": scenario.integrator.horizon,
    }


def _apply_overrides(scenario, args):
    problem = scenario.problem
    esc = scenario.esc
    integrator = scenario.integrator
    if getattr(args, "mu", None) is not None:
        problem = dataclasses.replace(problem, mu=args.mu)
    spec = esc.dither
    if getattr(args, "a", None) is not None:
        spec = dataclasses.replace(spec, amplitude=args.a)
    if getattr(args, "omega", None) is not None:
        spec = dataclasses.replace(spec, base_rate=args.omega)
    if spec is not esc.dither or getattr(args, "k", None) is not None:
        esc = dataclasses.replace(
            esc, gain=args.k if getattr(args, "k", None) is not None else esc.gain, dither=spec
        )
    if getattr(args, "step", None) is not None or getattr(args, "horizon", None) is not None:
        integrator = dataclasses.replace(
            integrator,
            step=args.step if getattr(args, "step", None) is not None else integrator.step,
            horizon=args.horizon
            if getattr(args, "horizon", None) is not None
            else integrator.horizon,
        )
    return dataclasses.replace(
        scenario, problem=problem, esc=esc, integrator=integrator
    )


def _layer_csv_name(layer: str) -> str:
    return layer.replace("-", "_") + ".csv"


def _scenario_margin(scenario):
    theta0 = np.asarray(scenario.initial_estimate, dtype=float)
    h0 = float(scenario.problem.barrier.value(theta0))
    if h0 <= 0:
        raise ValueError("initial estimate is not safe")
    # compact stand-in for the paper's h-floor over the initial set
    return margin_constants(scenario.problem, scenario.analysis_box, h_floor=h0 / 2.0)


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        scenario = _apply_overrides(resolve(args.scenario), args)
    except (UnknownScenario, SchemaError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    _write_manifest(out_dir, "run", args.scenario)

    if args.layers:
        layers = tuple(layer.strip() for layer in args.layers.split(","))
        unknown = [layer for layer in layers if layer not in ALL_LAYERS]
        if unknown:
            print(f"configuration error: unknown layers {unknown}", file=sys.stderr)
            return 1
    else:
        layers = ("model-free",) + (
            ("unconstrained-baseline",) if scenario.baselines else ()
        )

    try:
        margin = _scenario_margin(scenario)
    except (EmptyBoundaryBand, ValueError):
        margin = None

    theta0 = np.asarray(scenario.initial_estimate, dtype=float)
    slow_cfg = slow_config(scenario.integrator)
    parameters = _effective_parameters(scenario)
    layer_reports: dict[str, dict] = {}
    breach_in_enforcing = False

    for layer in layers:
        trajectory = None
        breach_event = None
        try:
            if layer == "model-free":
                trajectory = integrate_model_free(
                    scenario.problem, scenario.esc, scenario.integrator, theta0
                )
            elif layer == "unconstrained-baseline":
                trajectory = integrate_unconstrained_baseline(
                    scenario.problem, scenario.esc, scenario.integrator, theta0
                )
            elif layer == "averaged":
                trajectory = integrate_averaged(
                    scenario.problem, scenario.esc, slow_cfg, theta0, args.quad_points
                )
            elif layer == "model-based":
                trajectory = integrate_model_based(
                    scenario.problem, scenario.esc.gain, slow_cfg, theta0
                )
        except SafetyBreach as breach:
            trajectory = breach.trajectory
            breach_event = breach
        except IntegrationDiverged as div:
            # not a safety finding, but the run did not complete: exit 2
            div.trajectory.write_csv(out_dir / _layer_csv_name(layer))
            layer_reports[layer] = {
                "min_h_probe": div.trajectory.min_h_probe
                if len(div.trajectory)
                else None,
                "min_h_estimate": div.trajectory.min_h_estimate
                if len(div.trajectory)
                else None,
                "breach": None,
                "divergence": {"time": div.time},
            }
            breach_in_enforcing = True
            print(f"{layer}: DIVERGED at t={div.time:.6g} (omega far below omega*?)")
            continue
        except StepTooLarge as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return 1
        except BarrierViolation as exc:
            # averaged/model-based left the safe set: report it as a breach
            layer_reports[layer] = {
                "min_h_probe": exc.h_value,
                "min_h_estimate": exc.h_value,
                "breach": {
                    "time": None,
                    "theta_hat": exc.theta.tolist(),
                    "probe": exc.theta.tolist(),
                    "h": exc.h_value,
                },
            }
            breach_in_enforcing = True
            print(f"{layer}: BREACH ({exc})")
            continue

        report = safety_report_from_run(
            scenario.name, parameters, trajectory, breach_event, margin
        )
        layer_reports[layer] = {
            "min_h_probe": report.min_h_probe,
            "min_h_estimate": report.min_h_estimate,
            "breach": report.breach,
        }
        trajectory.write_csv(out_dir / _layer_csv_name(layer))
        if report.breach is not None and layer in ENFORCING_LAYERS:
            breach_in_enforcing = True
        status = ""
        if report.breach is not None:
            status = f"  [breach at t={report.breach['time']}]"
        final = np.array2string(trajectory.final_estimate, precision=6) if len(trajectory) else "[]"
        print(
            f"{layer}: rows={len(trajectory)}, min h(probe)={report.min_h_probe:.6g}, "
            f"final theta_hat={final}{status}"
        )

    _write_json(
        out_dir / "safety_report.json",
        {
            "scenario": scenario.name,
            "parameters": parameters,
            "margin": None if margin is None else margin.to_dict(),
            "layers": layer_reports,
        },
    )
    return 2 if breach_in_enforcing else 0


def _same_safe_component(problem, box, point_a, point_b) -> bool:
    """Flood-fill connectivity of {h > 0} restricted to the analysis box grid."""
    axes = box.axes()
    shape = tuple(len(ax) for ax in axes)
    safe = np.asarray(problem.barrier.value(box.grid()) > 0).reshape(shape)
    labels, _ = ndimage.label(safe)

    def node(point):
        idx = tuple(
            int(np.argmin(np.abs(ax - coord))) for ax, coord in zip(axes, point)
        )
        return labels[idx]

    la, lb = node(point_a), node(point_b)
    return la > 0 and lb > 0 and la == lb


def cmd_verify(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        scenario = _apply_overrides(resolve(args.scenario), args)
    except (UnknownScenario, SchemaError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    _write_manifest(out_dir, "verify", args.scenario)

    checks: dict[str, dict] = {}
    spec = scenario.esc.dither
    n = spec.dimension

    gram = verify_orthogonality(spec, max(args.quad_points, 64 * n + 1))
    ortho_err = float(np.max(np.abs(gram - np.eye(n) / spec.amplitude)))
    checks["orthogonality"] = {"pass": ortho_err < 1e-8, "max_error": ortho_err}

    margin = None
    try:
        margin = _scenario_margin(scenario)
        checks["margin"] = {"pass": True, **margin.to_dict()}
    except (EmptyBoundaryBand, ValueError) as exc:
        checks["margin"] = {"pass": False, "reason": str(exc)}

    if margin is not None:
        repulsion = verify_repulsion(
            scenario.problem, margin, scenario.analysis_box, scenario.esc.gain
        )
        checks["repulsion"] = {
            "pass": repulsion.passed,
            "samples": repulsion.samples,
            "witness_count": repulsion.witness_count,
            "witnesses": repulsion.witnesses,
        }
    else:
        checks["repulsion"] = {"pass": False, "reason": "margin constants unavailable"}

    theta_star = scenario.problem.cost.minimizer
    theta0 = np.asarray(scenario.initial_estimate, dtype=float)
    h_star = float(scenario.problem.barrier.value(theta_star))
    box = scenario.analysis_box
    if h_star <= 0:
        checks["proximity"] = {"skipped": True, "reason": "theta* is not strictly safe"}
    elif not (
        bool(box.contains(theta_star))
        and bool(box.contains(theta0))
        and _same_safe_component(scenario.problem, box, theta_star, theta0)
    ):
        checks["proximity"] = {
            "skipped": True,
            "reason": "theta* not interior to tested component",
        }
    else:
        mu0 = min(scenario.problem.mu, PROXIMITY_MU_CAP)
        schedule = [mu0, mu0 / 2, mu0 / 4, mu0 / 8]
        report = proximity_study(scenario.problem, schedule)
        h_eq = [float(scenario.problem.barrier.value(eq)) for eq in report.equilibria]
        lo, hi = PROXIMITY_ORDER_RANGE
        order_ok = report.degenerate or lo <= report.fitted_order <= hi
        barrier_side_ok = all(h > h_star for h in h_eq) or report.degenerate
        checks["proximity"] = {
            "pass": bool(order_ok and barrier_side_ok),
            "fitted_order": report.fitted_order,
            "degenerate": report.degenerate,
            "mu_schedule": schedule,
            "distances": report.distances.tolist(),
            "h_at_equilibria": h_eq,
            "h_at_theta_star": h_star,
        }

    all_pass = all(c.get("pass", True) for c in checks.values() if not c.get("skipped"))
    _write_json(
        out_dir / "verification.json",
        {"scenario": scenario.name, "checks": checks, "all_pass": all_pass},
    )
    for name, check in checks.items():
        if check.get("skipped"):
            print(f"{name}: SKIPPED ({check['reason']})")
        else:
            print(f"{name}: {'PASS' if check['pass'] else 'FAIL'}")
    return 0 if all_pass else 2


def _sweep_cells(scenario, args):
    if args.schedule:
        cells = []
        for chunk in args.schedule.split(";"):
            parts = [float(v) for v in chunk.split(",")]
            if len(parts) != 3:
                raise ValueError(f"schedule cell {chunk!r} is not mu,a,omega")
            cells.append(tuple(parts))
        return cells
    spec = scenario.esc.dither
    mus = [float(v) for v in args.mus.split(",")] if args.mus else [scenario.problem.mu]
    amps = (
        [float(v) for v in args.amplitudes.split(",")]
        if args.amplitudes
        else [spec.amplitude]
    )
    omegas = (
        [float(v) for v in args.omegas.split(",")] if args.omegas else [spec.base_rate]
    )
    return [(mu, a, w) for mu in mus for a in amps for w in omegas]


def _run_cell(payload):
    scenario, mu, a, omega = payload
    row = run_tuning_row(scenario, mu, a, omega)
    return row


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        scenario = _apply_overrides(resolve(args.scenario), args)
        cells = _sweep_cells(scenario, args)
    except (UnknownScenario, SchemaError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    if not cells:
        print("configuration error: empty sweep grid", file=sys.stderr)
        return 1
    _write_manifest(out_dir, "sweep", args.scenario)

    payloads = [(scenario, mu, a, omega) for mu, a, omega in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_cell, payloads))
    else:
        rows = [_run_cell(p) for p in payloads]

    lines = ["mu,a,omega,asymptotic_error,min_h,breached"]
    for row in rows:
        lines.append(
            f"{row.mu:.17g},{row.a:.17g},{row.omega:.17g},"
            f"{row.asymptotic_error:.17g},{row.min_h:.17g},"
            f"{'true' if row.breached else 'false'}"
        )
        print(
            f"mu={row.mu:g} a={row.a:g} omega={row.omega:g}: "
            f"error={row.asymptotic_error:.6g} min_h={row.min_h:.6g} "
            f"breached={row.breached}"
        )
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return 0


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mu", type=float, help="override barrier weight mu")
    parser.add_argument("--a", type=float, help="override dither amplitude a")
    parser.add_argument("--omega", type=float, help="override dither base rate omega")
    parser.add_argument("--k", type=float, help="override adaptation gain k")
    parser.add_argument("--horizon", type=float, help="override integration horizon")
    parser.add_argument("--step", type=float, help="override integrator step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safe-esc",
        description="Extremum seeking with logarithmic-barrier safety: "
        "simulate scenarios and verify the supporting theory.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="integrate scenario layers and write CSVs")
    run_p.add_argument("scenario", help="built-in name or scenario JSON path")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument(
        "--layers",
        help="comma list from: model-free, averaged, model-based, "
        "unconstrained-baseline (default: model-free plus scenario baselines)",
    )
    run_p.add_argument("--quad-points", type=int, default=129)
    _add_override_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    verify_p = sub.add_parser("verify", help="run the theorem checks for a scenario")
    verify_p.add_argument("scenario")
    verify_p.add_argument("--out", required=True)
    verify_p.add_argument("--quad-points", type=int, default=129)
    _add_override_flags(verify_p)
    verify_p.set_defaults(func=cmd_verify)

    sweep_p = sub.add_parser("sweep", help="sweep (mu, a, omega) cells")
    sweep_p.add_argument("scenario")
    sweep_p.add_argument("--out", required=True)
    sweep_p.add_argument(
        "--schedule", help="semicolon list of mu,a,omega cells (overrides grids)"
    )
    sweep_p.add_argument("--mus", help="comma list of mu values")
    sweep_p.add_argument("--amplitudes", help="comma list of a values")
    sweep_p.add_argument("--omegas", help="comma list of omega values")
    sweep_p.add_argument("--jobs", type=int, default=1)
    _add_override_flags(sweep_p)
    sweep_p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
