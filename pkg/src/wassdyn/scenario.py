"""Scenario configuration: typed, strictly validated run descriptions.

Scenarios are TOML files (JSON is accepted as an alternate encoding) that
declare an initial measure, a finitely generated velocity family with its
regularity metadata, an optional constraint, grids and tolerances.  Unknown
keys are rejected so that typos fail loudly instead of silently running a
different experiment.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constraints import (
    Ball,
    ConstraintTube,
    EpigraphConstraint,
    Polytope,
    SupportConstraint,
    ball_tube,
    potential_functional,
    second_moment_functional,
)
from .dynamics import (
    SetValuedField,
    attraction_field,
    constant_field,
    interaction_drift,
    linear_field,
)
from .measure import DiscreteMeasure, SampledMap
from .rng import SplitMix64
from .stepfn import as_stepfn


class ConfigError(ValueError):
    """Malformed scenario configuration."""


def _require(table: dict, section: str, allowed: set, required: set = frozenset()):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    missing = required - set(table)
    if missing:
        raise ConfigError(f"[{section}] missing keys: {sorted(missing)}")


def _stepfn_spec(value, section: str):
    if isinstance(value, (int, float)):
        return as_stepfn(float(value))
    if isinstance(value, dict):
        _require(value, section, {"breaks", "values"}, {"breaks", "values"})
        return as_stepfn((value["breaks"], value["values"]))
    raise ConfigError(f"[{section}] expected a number or {{breaks, values}}")


@dataclass
class Scenario:
    """Parsed scenario with constructed toolkit objects."""

    name: str
    p: float
    dim: int
    T: float
    initial: DiscreteMeasure
    dynamics: Optional[SetValuedField]
    constraint: object  # ConstraintSet | ConstraintTube | None
    constraint_spec: dict
    steps: int
    dyadic_levels: int
    seed: int
    tol: float
    n_samples: int
    time_samples: int
    radius_R: float
    direction_spec: Optional[dict] = None
    reference_spec: Optional[dict] = None
    selection_weights: Optional[list] = None

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    def direction_field(self, mu: DiscreteMeasure) -> tuple[float, SampledMap]:
        """Materialize the [direction] section on the support of ``mu``."""
        spec = self.direction_spec
        if spec is None:
            raise ConfigError("scenario has no [direction] section")
        zeta = float(spec.get("zeta", 1.0))
        family = spec["family"]
        if family == "constant":
            vec = np.asarray(spec["vector"], dtype=float)
            values = np.tile(vec, (mu.n_atoms, 1))
        elif family == "radial":
            center = np.asarray(spec.get("center", [0.0] * mu.dim), dtype=float)
            values = float(spec.get("rate", 1.0)) * (mu.points - center)
        elif family == "values":
            values = np.asarray(spec["values"], dtype=float)
        else:
            raise ConfigError(f"[direction] unknown family {family!r}")
        return zeta, SampledMap(mu, values)


_GENERATOR_FAMILIES = {"constant", "linear", "attraction", "interaction"}


def _build_generator(spec: dict, dim: int, idx: int):
    section = f"dynamics.generators[{idx}]"
    family = spec.get("family")
    if family == "constant":
        _require(spec, section, {"family", "vector"}, {"vector"})
        c = np.asarray(spec["vector"], dtype=float)
        if c.shape != (dim,):
            raise ConfigError(f"[{section}] vector must have length {dim}")
        return lambda t, mu: constant_field(c)
    if family == "linear":
        _require(spec, section, {"family", "matrix"}, {"matrix"})
        a = np.asarray(spec["matrix"], dtype=float)
        if a.shape != (dim, dim):
            raise ConfigError(f"[{section}] matrix must be {dim}x{dim}")
        return lambda t, mu: linear_field(a)
    if family == "attraction":
        _require(spec, section, {"family", "center", "radius", "rate"},
                 {"center", "radius", "rate"})
        center = np.asarray(spec["center"], dtype=float)
        radius = float(spec["radius"])
        rate = float(spec["rate"])
        return lambda t, mu: attraction_field(center, radius, rate)
    if family == "interaction":
        _require(spec, section, {"family", "coef"}, {"coef"})
        coef = float(spec["coef"])
        return lambda t, mu: interaction_drift(mu, coef)
    raise ConfigError(
        f"[{section}] family must be one of {sorted(_GENERATOR_FAMILIES)}, got {family!r}"
    )


def _build_constraint(spec: dict, p: float, T: float):
    section = "constraint"
    ctype = spec.get("type")
    if ctype == "support-ball":
        _require(spec, section, {"type", "center", "radius"}, {"center", "radius"})
        return SupportConstraint(Ball(spec["center"], float(spec["radius"])), p)
    if ctype == "support-polytope":
        _require(spec, section, {"type", "normals", "offsets"}, {"normals", "offsets"})
        return SupportConstraint(Polytope(spec["normals"], spec["offsets"]), p)
    if ctype == "epigraph":
        _require(spec, section, {"type", "functional", "coefficients"}, {"functional"})
        fam = spec["functional"]
        if fam == "second-moment":
            return EpigraphConstraint(second_moment_functional())
        if fam == "potential":
            return EpigraphConstraint(potential_functional(spec.get("coefficients", [0.0, 0.0, 1.0])))
        raise ConfigError(f"[constraint] unknown functional {fam!r}")
    if ctype == "tube":
        _require(spec, section, {"type", "kind", "center", "radius", "rate"},
                 {"kind", "center", "radius", "rate"})
        if spec["kind"] != "ball":
            raise ConfigError(f"[constraint] unknown tube kind {spec['kind']!r}")
        return ball_tube(spec["center"], float(spec["radius"]), float(spec["rate"]),
                         p, t_span=(0.0, T))
    raise ConfigError(f"[constraint] unknown type {ctype!r}")


def load_scenario(path, validate_fields: bool = True) -> Scenario:
    """Parse and validate a scenario file (.toml or .json)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, base_dir=path.parent, validate_fields=validate_fields)


def scenario_from_dict(data: dict, base_dir: Path = Path("."), validate_fields: bool = True) -> Scenario:
    _require(
        data, "root",
        {"scenario", "initial", "dynamics", "constraint", "grid", "run",
         "direction", "reference", "selection"},
        {"scenario", "initial"},
    )
    sc = data["scenario"]
    _require(sc, "scenario", {"name", "p", "dimension", "T"}, {"name", "p", "dimension"})
    name = str(sc["name"])
    p = float(sc["p"])
    if p <= 1.0:
        raise ConfigError("[scenario] p must exceed 1")
    dim = int(sc["dimension"])
    T = float(sc.get("T", 1.0))
    if T <= 0:
        raise ConfigError("[scenario] T must be positive")

    init = data["initial"]
    _require(init, "initial", {"file", "points", "weights"})
    if "file" in init:
        fpath = base_dir / init["file"]
        text = fpath.read_text()
        if fpath.suffix.lower() == ".csv":
            mu0 = DiscreteMeasure.from_csv(text)
        else:
            mu0 = DiscreteMeasure.from_json(text)
    else:
        if "points" not in init:
            raise ConfigError("[initial] needs either file or points")
        pts = init["points"]
        w = init.get("weights", [1.0 / len(pts)] * len(pts))
        mu0 = DiscreteMeasure(pts, w)
    if mu0.dim != dim:
        raise ConfigError(f"[initial] measure dimension {mu0.dim} != declared {dim}")

    dynamics = None
    if "dynamics" in data:
        dyn = data["dynamics"]
        _require(dyn, "dynamics",
                 {"generators", "convexified", "m_bound", "l_bound", "L_bound"},
                 {"generators"})
        gens = [
            _build_generator(g, dim, i) for i, g in enumerate(dyn["generators"])
        ]
        dynamics = SetValuedField(
            gens,
            convexified=bool(dyn.get("convexified", True)),
            m_bound=_stepfn_spec(dyn.get("m_bound", 1.0), "dynamics.m_bound"),
            l_bound=_stepfn_spec(dyn.get("l_bound", 1.0), "dynamics.l_bound"),
            L_bound=_stepfn_spec(dyn.get("L_bound", 0.0), "dynamics.L_bound"),
        )
        if validate_fields:
            dynamics.validate(mu0, (0.0, T), p, samples=300)

    constraint = None
    constraint_spec = {}
    if "constraint" in data:
        constraint_spec = dict(data["constraint"])
        constraint = _build_constraint(constraint_spec, p, T)

    grid_spec = data.get("grid", {})
    _require(grid_spec, "grid", {"steps", "dyadic_levels"})
    steps = int(grid_spec.get("steps", 128))
    if steps < 1:
        raise ConfigError("[grid] steps must be >= 1")
    levels = int(grid_spec.get("dyadic_levels", 4))
    if levels < 0 or 2**levels > steps:
        raise ConfigError("[grid] need 2^dyadic_levels <= steps")
    if steps % (2**levels) != 0:
        raise ConfigError("[grid] steps must be a multiple of 2^dyadic_levels")

    run = data.get("run", {})
    _require(run, "run",
             {"seed", "tol", "n_samples", "time_samples", "radius_R"})
    seed = int(run.get("seed", 0))
    tol = float(run.get("tol", 1e-6))
    n_samples = int(run.get("n_samples", 50))
    time_samples = int(run.get("time_samples", 32))
    radius_R = float(run.get("radius_R", 0.0))
    if radius_R <= 0.0:
        # generous default: covers the initial support with headroom
        radius_R = 2.0 * (1.0 + float(np.linalg.norm(mu0.points, axis=1).max()))

    direction_spec = None
    if "direction" in data:
        direction_spec = dict(data["direction"])
        _require(direction_spec, "direction",
                 {"zeta", "family", "vector", "center", "rate", "values"},
                 {"family"})

    reference_spec = None
    if "reference" in data:
        reference_spec = dict(data["reference"])
        _require(reference_spec, "reference",
                 {"type", "weights", "family", "vector", "matrix",
                  "center", "radius", "rate", "coef"},
                 {"type"})

    selection_weights = None
    if "selection" in data:
        selsec = data["selection"]
        _require(selsec, "selection", {"weights"}, {"weights"})
        selection_weights = [float(x) for x in selsec["weights"]]

    return Scenario(
        name=name, p=p, dim=dim, T=T, initial=mu0,
        dynamics=dynamics, constraint=constraint, constraint_spec=constraint_spec,
        steps=steps, dyadic_levels=levels, seed=seed, tol=tol,
        n_samples=n_samples, time_samples=time_samples, radius_R=radius_R,
        direction_spec=direction_spec, reference_spec=reference_spec,
        selection_weights=selection_weights,
    )


def reference_field(scn: Scenario):
    """Build the [reference] driving field for tracking runs."""
    spec = scn.reference_spec
    if spec is None:
        raise ConfigError("scenario has no [reference] section")
    if spec["type"] == "selection":
        return None  # caller drives the reference with scenario weights
    if spec["type"] == "field":
        fam = spec.get("family")
        if fam == "constant":
            return constant_field(np.asarray(spec["vector"], dtype=float))
        if fam == "linear":
            return linear_field(np.asarray(spec["matrix"], dtype=float))
        if fam == "attraction":
            return attraction_field(spec["center"], float(spec["radius"]), float(spec["rate"]))
        raise ConfigError(f"[reference] unknown family {fam!r}")
    raise ConfigError(f"[reference] unknown type {spec['type']!r}")


def constraint_state_sampler(scn: Scenario):
    """Deterministic in-constraint state sampler for condition checkers.

    Per sampled time: the (projected) initial measure, boundary diracs in
    the coordinate directions for support constraints, boundary and
    interior lifts for epigraphs, plus seeded random supported measures.
    """
    constraint = scn.constraint
    if constraint is None:
        raise ConfigError("scenario declares no constraint")
    rng_master = SplitMix64(scn.seed ^ 0xC0FFEE)

    def at(t: float):
        Q = constraint.at(t) if isinstance(constraint, ConstraintTube) else constraint
        states = []
        if isinstance(Q, SupportConstraint):
            region = Q.region
            states.append(Q.project(scn.initial))
            if isinstance(region, Ball):
                for axis in range(region.dim):
                    for sign in (1.0, -1.0):
                        x = region.center.copy()
                        x[axis] += sign * region.radius
                        states.append(DiscreteMeasure.dirac(x))
                rng = rng_master.split()
                for _ in range(2):
                    pts = np.array([
                        region.center + rng.point_in_ball(region.dim, region.radius)
                        for _ in range(scn.initial.n_atoms)
                    ])
                    states.append(DiscreteMeasure.uniform(pts))
            else:
                rng = rng_master.split()
                for _ in range(2):
                    pts = np.array([
                        region.project_point(scn.initial.points[i] + rng.normal_vector(scn.dim))
                        for i in range(scn.initial.n_atoms)
                    ])
                    states.append(DiscreteMeasure(pts, scn.initial.weights))
        elif isinstance(Q, EpigraphConstraint):
            base = scn.initial
            w = Q.functional(base)
            from .constraints import lift_measure

            states.append(lift_measure(base, w))
            states.append(lift_measure(base, w + 1.0))
        else:
            states.append(scn.initial)
        return states

    return at
