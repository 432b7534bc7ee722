"""Built-in experiment scenarios and their JSON round-trip.

The three figure scenarios carry the caption parameters verbatim; the
interior-ball scenario is a synthetic configuration with the unconstrained
minimizer strictly inside the safe set, used by the proximity and sequential
tuning studies.  Horizons and steps are toolkit defaults (the captions fix
controller gains, not integration settings).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .analysis import AnalysisBox
from .dynamics import EscParams, IntegratorConfig
from .objective import Problem, QuadraticCost, make_barrier
from .signals import DitherSpec, common_period, dither

BUILTIN_NAMES = ("paper-1d", "paper-2d-trig", "paper-2d-corridor", "interior-ball")


class UnknownScenario(ValueError):
    pass


class SchemaError(ValueError):
    """Scenario file violates the schema; `field` holds the offending path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class Scenario:
    name: str
    problem: Problem
    esc: EscParams
    integrator: IntegratorConfig
    initial_estimate: tuple[float, ...]
    analysis_box: AnalysisBox
    baselines: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.initial_estimate = tuple(float(v) for v in self.initial_estimate)
        self.baselines = tuple(str(b) for b in self.baselines)
        if len(self.initial_estimate) != self.problem.dimension:
            raise ValueError("initial_estimate dimension mismatch")

    def initial_probe_safe(self, phases: int = 257) -> bool:
        """True when h stays positive along the initial probe over one period."""
        spec = self.esc.dither
        tau = np.linspace(0.0, common_period(spec), phases)
        probes = np.asarray(self.initial_estimate) + spec.amplitude * dither(spec, tau)
        h0 = float(self.problem.barrier.value(np.asarray(self.initial_estimate)))
        return h0 > 0 and bool(np.all(self.problem.barrier.value(probes) > 0))


def _dither_2d(a: float = 0.25, omega: float = 100.0) -> DitherSpec:
    # base rate 100 with relative rates (3/4, 1) reproduces the caption
    # frequencies omega_1 = 75, omega_2 = 100
    return DitherSpec(
        relative_rates=(Fraction(3, 4), Fraction(1)),
        relative_amplitudes=(1.0, 1.0),
        amplitude=a,
        base_rate=omega,
    )


def builtin(name: str) -> Scenario:
    """Return a fully parameterized built-in scenario by name."""
    if name == "paper-1d":
        # J = theta^2, h = -theta - 1; a=0.25, k=0.2, omega=15, mu=3
        return Scenario(
            name=name,
            problem=Problem(
                cost=QuadraticCost(0.0, [0.0], [[2.0]]),
                barrier=make_barrier("half-space", normal=[1.0], offset=-1.0),
                mu=3.0,
            ),
            esc=EscParams(
                gain=0.2,
                dither=DitherSpec(
                    relative_rates=(Fraction(1),),
                    relative_amplitudes=(1.0,),
                    amplitude=0.25,
                    base_rate=15.0,
                ),
            ),
            integrator=IntegratorConfig(step=0.01, horizon=100.0),
            initial_estimate=(-3.0,),
            analysis_box=AnalysisBox((-4.0,), (-1.0,), 301),
            baselines=("unconstrained-esc",),
        )
    if name == "paper-2d-trig":
        # J = (th1-4)^2 + (th2-4)^2, h = cos(0.2 pi th1) sin(0.3 pi th2);
        # a=0.25, k=0.01, omega_1=75, omega_2=100, mu=6.  The analysis box
        # covers the boundary wall nearest the equilibrium of the start's
        # safe component, away from the corners where grad h vanishes.
        return Scenario(
            name=name,
            problem=Problem(
                cost=QuadraticCost(0.0, [4.0, 4.0], [[2.0, 0.0], [0.0, 2.0]]),
                barrier=make_barrier("trig-field", freq1=0.2, freq2=0.3),
                mu=6.0,
            ),
            esc=EscParams(gain=0.01, dither=_dither_2d()),
            integrator=IntegratorConfig(step=0.0015, horizon=3000.0),
            initial_estimate=(0.0, -4.0),
            analysis_box=AnalysisBox((0.0, -4.6), (2.3, -3.0), 481),
        )
    if name == "paper-2d-corridor":
        # Two circular obstacles at (-3,1) r=2 and (1,3) r=1.5; the corridor
        # between them is slightly narrower than 1.
        return Scenario(
            name=name,
            problem=Problem(
                cost=QuadraticCost(0.0, [-3.0, 4.0], [[2.0, 0.0], [0.0, 2.0]]),
                barrier=make_barrier(
                    "min-of-circles",
                    centers=[[-3.0, 1.0], [1.0, 3.0]],
                    radii=[2.0, 1.5],
                ),
                mu=6.0,
            ),
            esc=EscParams(gain=0.01, dither=_dither_2d()),
            integrator=IntegratorConfig(step=0.0015, horizon=3000.0),
            initial_estimate=(0.0, -4.0),
            analysis_box=AnalysisBox((-6.0, -5.0), (4.5, 6.5), 421),
        )
    if name == "interior-ball":
        # theta* = 0 strictly inside the ball h = 4 - ||theta - (1,0)||^2
        return Scenario(
            name=name,
            problem=Problem(
                cost=QuadraticCost(0.0, [0.0, 0.0], [[2.0, 0.0], [0.0, 2.0]]),
                barrier=make_barrier("ball", center=[1.0, 0.0], radius=2.0),
                mu=0.2,
            ),
            esc=EscParams(
                gain=0.2,
                dither=DitherSpec(
                    relative_rates=(Fraction(3, 4), Fraction(1)),
                    relative_amplitudes=(1.0, 1.0),
                    amplitude=0.2,
                    base_rate=50.0,
                ),
            ),
            integrator=IntegratorConfig(step=0.003, horizon=100.0),
            initial_estimate=(0.5, -0.5),
            analysis_box=AnalysisBox((-1.5, -2.5), (3.5, 2.5), 1601),
        )
    raise UnknownScenario(
        f"unknown scenario {name!r}; built-ins are {', '.join(BUILTIN_NAMES)}"
    )


# --- JSON schema ---------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    spec = scenario.esc.dither
    return {
        "name": scenario.name,
        "cost": {
            "H": scenario.problem.cost.hessian.tolist(),
            "theta_star": scenario.problem.cost.minimizer.tolist(),
            "J_star": scenario.problem.cost.minimum_value,
        },
        "barrier": {
            "family": scenario.problem.barrier.family,
            "params": scenario.problem.barrier.params(),
        },
        "mu": scenario.problem.mu,
        "esc": {
            "k": scenario.esc.gain,
            "a": spec.amplitude,
            "omega": spec.base_rate,
            "relative_rates": [[w.numerator, w.denominator] for w in spec.relative_rates],
            "relative_amplitudes": list(spec.relative_amplitudes),
        },
        "integrator": {
            "step": scenario.integrator.step,
            "horizon": scenario.integrator.horizon,
            "t0": scenario.integrator.start_time,
        },
        "initial_estimate": list(scenario.initial_estimate),
        "analysis_box": {
            "lower": list(scenario.analysis_box.lower),
            "upper": list(scenario.analysis_box.upper),
            "samples_per_axis": scenario.analysis_box.samples_per_axis,
        },
        "baselines": list(scenario.baselines),
    }


def save(scenario: Scenario, path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n"
    )


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise SchemaError(path, "missing required field")
    return mapping[key]


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise SchemaError("<root>", "scenario document must be a JSON object")
    name = _require(data, "name", "name")

    cost_doc = _require(data, "cost", "problem.cost")
    try:
        cost = QuadraticCost(
            minimum_value=_require(cost_doc, "J_star", "problem.cost.J_star"),
            minimizer=_require(cost_doc, "theta_star", "problem.cost.theta_star"),
            hessian=_require(cost_doc, "H", "problem.cost.H"),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("problem.cost", str(exc)) from exc

    barrier_doc = _require(data, "barrier", "problem.barrier")
    family = _require(barrier_doc, "family", "problem.barrier.family")
    params = barrier_doc.get("params", {})
    try:
        barrier = make_barrier(family, **params)
    except (ValueError, TypeError) as exc:
        raise SchemaError("problem.barrier", str(exc)) from exc

    mu = _require(data, "mu", "problem.mu")
    try:
        problem = Problem(cost=cost, barrier=barrier, mu=mu)
    except (ValueError, TypeError) as exc:
        raise SchemaError("problem.mu", str(exc)) from exc

    esc_doc = _require(data, "esc", "esc")
    try:
        spec = DitherSpec(
            relative_rates=tuple(
                tuple(pair) for pair in _require(esc_doc, "relative_rates", "esc.relative_rates")
            ),
            relative_amplitudes=tuple(
                _require(esc_doc, "relative_amplitudes", "esc.relative_amplitudes")
            ),
            amplitude=_require(esc_doc, "a", "esc.a"),
            base_rate=_require(esc_doc, "omega", "esc.omega"),
        )
        esc = EscParams(gain=_require(esc_doc, "k", "esc.k"), dither=spec)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("esc", str(exc)) from exc

    integ_doc = _require(data, "integrator", "integrator")
    try:
        integrator = IntegratorConfig(
            step=_require(integ_doc, "step", "integrator.step"),
            horizon=_require(integ_doc, "horizon", "integrator.horizon"),
            start_time=integ_doc.get("t0", 0.0),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("integrator", str(exc)) from exc

    box_doc = _require(data, "analysis_box", "analysis_box")
    try:
        box = AnalysisBox(
            lower=tuple(_require(box_doc, "lower", "analysis_box.lower")),
            upper=tuple(_require(box_doc, "upper", "analysis_box.upper")),
            samples_per_axis=_require(box_doc, "samples_per_axis", "analysis_box.samples_per_axis"),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("analysis_box", str(exc)) from exc

    try:
        scenario = Scenario(
            name=name,
            problem=problem,
            esc=esc,
            integrator=integrator,
            initial_estimate=tuple(_require(data, "initial_estimate", "initial_estimate")),
            analysis_box=box,
            baselines=tuple(data.get("baselines", ())),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("initial_estimate", str(exc)) from exc
    if not scenario.initial_probe_safe():
        raise SchemaError("initial_estimate", "initial probe point is not safe")
    return scenario


def load(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc}") from exc
    return scenario_from_dict(data)


def resolve(name_or_path: str) -> Scenario:
    """Accept a built-in name or a path to a scenario JSON file."""
    if name_or_path in BUILTIN_NAMES:
        return builtin(name_or_path)
    path = Path(name_or_path)
    if path.exists():
        return load(path)
    raise UnknownScenario(
        f"{name_or_path!r} is neither a built-in scenario nor an existing file"
    )
