"""Command-line front end: scenario-driven, reproducible runs.

Subcommands: wp, simulate, reach, filippov, cone-test, viability-check,
invariance-check, viable-curve, verify-inequalities.  Every run writes a
JSON report (and CSV traces where applicable) into --out; with a fixed seed
and config the report bytes are identical across runs.  Exit codes: 0 on
success, 2 when a checker flags a violation, 1 on malformed inputs or
internal errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import pnorm_gap, superdiff_gap
from .cones import (
    adjacent_membership_support,
    contingent_quotient,
    epigraph_cone_test,
    graph_contingent_quotient,
    lower_dir_derivative,
    TangentDirection,
)
from .constraints import (
    ConstraintTube,
    EpigraphConstraint,
    SupportConstraint,
)
from .dynamics import (
    MeasureCurve,
    Selection,
    ac_envelope_constant,
    ac_trace,
    curve_to_csv,
    curve_to_json_obj,
    filippov_envelope,
    filippov_track,
    moment_envelope,
    moment_trace,
    reachable_cloud,
    solve_continuity,
    solve_inclusion,
)
from .measure import DiscreteMeasure, SampledMap, moment_p
from .rng import SplitMix64
from .scenario import (
    ConfigError,
    Scenario,
    constraint_state_sampler,
    load_scenario,
    reference_field,
)
from .transport import wasserstein_distance
from .viability import (
    build_viable_curve,
    check_empirical_invariance,
    check_invariance_condition,
    check_viability_condition,
    chebyshev_times,
    necessary_condition_probe,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2


def _write_report(out_dir: Path, name: str, report: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return path


def _write_text(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _load_measure(path: str) -> DiscreteMeasure:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"measure file not found: {p}")
    text = p.read_text()
    if p.suffix.lower() == ".csv":
        return DiscreteMeasure.from_csv(text)
    return DiscreteMeasure.from_json(text)


def _scenario(args) -> Scenario:
    scn = load_scenario(args.config)
    if args.seed is not None:
        scn.seed = args.seed
    if args.tol is not None:
        scn.tol = args.tol
    return scn


def _emit_curve(out: Path, stem: str, curve: MeasureCurve, fmt: str, g_values=None):
    if fmt == "csv":
        _write_text(out, f"{stem}.csv", curve_to_csv(curve, g_values))
    else:
        obj = curve_to_json_obj(curve)
        if g_values is not None:
            obj["g"] = [float(g) for g in g_values]
        _write_text(out, f"{stem}_curve.json",
                    json.dumps(obj, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_wp(args) -> int:
    mu = _load_measure(args.measure_a)
    nu = _load_measure(args.measure_b)
    d = wasserstein_distance(mu, nu, args.p)
    print(d)
    if args.out:
        _write_report(Path(args.out), "wp", {
            "command": "wp", "p": args.p, "distance": d,
            "a": mu.to_json_obj(), "b": nu.to_json_obj(),
        })
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn = _scenario(args)
    if scn.dynamics is None:
        raise ConfigError("simulate requires a [dynamics] section")
    grid = scn.grid
    k = scn.dynamics.n_generators
    weights = scn.selection_weights or ([1.0] + [0.0] * (k - 1))
    if len(weights) != k:
        raise ConfigError(f"[selection] needs {k} weights")
    sel = Selection.constant(grid, np.asarray(weights))
    curve = solve_inclusion(scn.dynamics, sel, 0.0, scn.initial, grid)
    mtrace = moment_trace(curve, scn.p)
    atrace = ac_trace(curve, scn.p)
    mp0 = moment_p(scn.initial, scn.p)
    envelope = moment_envelope(mp0, scn.dynamics.m_bound, 0.0, grid)
    c_ac = ac_envelope_constant(mp0, scn.dynamics.m_bound, 0.0, scn.T)
    out = Path(args.out)
    _emit_curve(out, f"{scn.name}_simulate", curve, args.format)
    report = {
        "command": "simulate", "scenario": scn.name, "seed": scn.seed,
        "p": scn.p, "weights": weights,
        "moment_trace": mtrace.tolist(),
        "moment_envelope": envelope.tolist(),
        "ac_trace": atrace.tolist(),
        "ac_envelope_constant": c_ac,
        "final_state": curve.final.to_json_obj(),
    }
    path = _write_report(out, f"{scn.name}_simulate", report)
    print(f"simulate: {len(grid)} nodes, report {path}")
    return EXIT_OK


def cmd_reach(args) -> int:
    scn = _scenario(args)
    if scn.dynamics is None:
        raise ConfigError("reach requires a [dynamics] section")
    grid = scn.grid
    cloud, _sels = reachable_cloud(
        scn.dynamics, 0.0, scn.T, scn.initial, scn.n_samples, grid,
        seed=scn.seed, threads=args.threads,
    )
    moments = [moment_p(m, scn.p) for m in cloud]
    report = {
        "command": "reach", "scenario": scn.name, "seed": scn.seed,
        "n_members": len(cloud),
        "members": [m.to_json_obj() for m in cloud],
        "moments": moments,
    }
    path = _write_report(Path(args.out), f"{scn.name}_reach", report)
    print(f"reach: {len(cloud)} members, report {path}")
    return EXIT_OK


def cmd_filippov(args) -> int:
    scn = _scenario(args)
    if scn.dynamics is None or scn.reference_spec is None:
        raise ConfigError("filippov requires [dynamics] and [reference] sections")
    grid = scn.grid
    ref_f = reference_field(scn)
    if ref_f is None:
        k = scn.dynamics.n_generators
        weights = scn.reference_spec.get("weights")
        if weights is None or len(weights) != k:
            raise ConfigError(f"[reference] selection needs {k} weights")
        sel = Selection.constant(grid, np.asarray([float(x) for x in weights]))
        ref_curve = solve_inclusion(scn.dynamics, sel, 0.0, scn.initial, grid)

        def ref_drive(t, x):
            idx = min(int(np.searchsorted(grid, t, side="right")) - 1, len(grid) - 2)
            idx = max(idx, 0)
            state = ref_curve.states[idx]
            f = scn.dynamics.field_for_weights(grid[idx], state, sel.weights_at(t))
            return f(t, x)

        from .dynamics import VelocityField

        ref_field_obj = VelocityField(ref_drive, name="reference-selection")
    else:
        ref_curve = solve_continuity(ref_f, 0.0, scn.initial, grid)
        ref_field_obj = ref_f
    tracked, trace = filippov_track(
        scn.dynamics, ref_curve, 0.0, scn.initial, grid, scn.radius_R,
        p=scn.p, ref_field=ref_field_obj,
    )
    w0 = trace["wp"][0]
    envelope = filippov_envelope(scn.dynamics, trace, 0.0, w0)
    slack = 1.05
    ok = bool(np.all(trace["wp"] <= envelope * slack + scn.tol))
    out = Path(args.out)
    _emit_curve(out, f"{scn.name}_filippov", tracked, args.format)
    report = {
        "command": "filippov", "scenario": scn.name, "seed": scn.seed,
        "radius_R": scn.radius_R,
        "wp_trace": trace["wp"].tolist(),
        "eta_trace": trace["eta"].tolist(),
        "eta_integral": trace["eta_integral"].tolist(),
        "envelope": envelope.tolist(),
        "envelope_slack": slack,
        "within_envelope": ok,
    }
    path = _write_report(out, f"{scn.name}_filippov", report)
    print(f"filippov: max W_p {max(trace['wp']):.3e}, within envelope: {ok}, report {path}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_cone_test(args) -> int:
    scn = _scenario(args)
    if scn.constraint is None or scn.direction_spec is None:
        raise ConfigError("cone-test requires [constraint] and [direction] sections")
    reports = {}
    if isinstance(scn.constraint, EpigraphConstraint):
        base = scn.initial
        functional = scn.constraint.functional
        zeta, xi = scn.direction_field(base)
        rho = zeta  # lifted scalar rate rides in the zeta slot
        w0 = functional(base)
        deriv = lower_dir_derivative(functional, base, xi)
        member = epigraph_cone_test(base, w0, xi, rho, functional, tol=scn.tol if scn.tol > 0 else 1e-3)
        verdict = "member" if member else "non-member"
        reports["epigraph"] = {
            "functional": functional.name, "W": w0, "rho": rho,
            "lower_dir_derivative": deriv, "verdict": verdict,
        }
    elif isinstance(scn.constraint, ConstraintTube):
        mu = scn.constraint.at(0.0).project(scn.initial)
        zeta, xi = scn.direction_field(mu)
        rep = graph_contingent_quotient(0.0, mu, TangentDirection(zeta, xi), scn.constraint)
        reports["graph"] = rep.to_json_obj()
        verdict = rep.verdict
    else:
        mu = scn.constraint.project(scn.initial)
        zeta, xi = scn.direction_field(mu)
        rep = contingent_quotient(mu, xi, scn.constraint)
        reports["contingent"] = rep.to_json_obj()
        verdict = rep.verdict
        if isinstance(scn.constraint, SupportConstraint):
            ok, per_atom = adjacent_membership_support(mu, xi, scn.constraint.region)
            reports["adjacent"] = {"member": ok, "per_atom": per_atom}
    report = {
        "command": "cone-test", "scenario": scn.name, "seed": scn.seed,
        "verdict": verdict, "reports": reports,
    }
    path = _write_report(Path(args.out), f"{scn.name}_cone", report)
    print(f"cone-test: {verdict}, report {path}")
    return EXIT_VIOLATION if verdict == "non-member" else EXIT_OK


def _check_common(scn: Scenario):
    if scn.dynamics is None or scn.constraint is None:
        raise ConfigError("checker subcommands require [dynamics] and [constraint]")
    if isinstance(scn.constraint, EpigraphConstraint):
        raise ConfigError(
            "epigraph constraints are probed via cone-test; viability checkers "
            "cover support constraints and tubes"
        )
    mode = "graph" if isinstance(scn.constraint, ConstraintTube) else "stationary"
    times = chebyshev_times(0.0, scn.T, scn.time_samples)
    sampler = constraint_state_sampler(scn)
    return mode, times, sampler


def cmd_viability_check(args) -> int:
    scn = _scenario(args)
    mode, times, sampler = _check_common(scn)
    report_obj = check_viability_condition(
        scn.dynamics, scn.constraint, times, sampler, mode=mode,
    )
    report = {
        "command": "viability-check", "scenario": scn.name, "seed": scn.seed,
        "report": report_obj.to_json_obj(),
    }
    path = _write_report(Path(args.out), f"{scn.name}_viability", report)
    print(f"viability-check: {report_obj.verdict}, report {path}")
    return EXIT_VIOLATION if report_obj.verdict == "violated" else EXIT_OK


def cmd_invariance_check(args) -> int:
    scn = _scenario(args)
    mode, times, sampler = _check_common(scn)
    cond = check_invariance_condition(
        scn.dynamics, scn.constraint, times, sampler, mode=mode,
    )
    empirical = check_empirical_invariance(
        scn.dynamics, scn.constraint, 0.0, scn.initial, scn.n_samples,
        scn.grid, seed=scn.seed, tol=scn.tol,
    )
    report = {
        "command": "invariance-check", "scenario": scn.name, "seed": scn.seed,
        "condition": cond.to_json_obj(),
        "empirical": empirical,
    }
    path = _write_report(Path(args.out), f"{scn.name}_invariance", report)
    violated = cond.verdict == "violated" or not empirical["passed"]
    print(
        f"invariance-check: condition {cond.verdict}, empirical "
        f"{'pass' if empirical['passed'] else 'fail'}, report {path}"
    )
    return EXIT_VIOLATION if violated else EXIT_OK


def cmd_viable_curve(args) -> int:
    scn = _scenario(args)
    if scn.dynamics is None or scn.constraint is None:
        raise ConfigError("viable-curve requires [dynamics] and [constraint]")
    result = build_viable_curve(
        scn.dynamics, scn.constraint, 0.0, scn.initial, scn.dyadic_levels,
        scn.grid, scn.tol, seed=scn.seed,
    )
    tube = scn.constraint
    from .constraints import static_tube

    if not isinstance(tube, ConstraintTube):
        tube = static_tube(tube, (0.0, scn.T))
    g_all = [tube.at(t).distance(mu) for t, mu in zip(result.curve.times, result.curve.states)]
    out = Path(args.out)
    _emit_curve(out, f"{scn.name}_viable", result.curve, args.format, g_values=g_all)
    probes = necessary_condition_probe(scn.dynamics, scn.constraint, result.curve,
                                       sample_times=result.trace.times[:-1])
    report = {
        "command": "viable-curve", "scenario": scn.name, "seed": scn.seed,
        "result": result.to_json_obj(),
        "necessary_condition": [
            {"t": r["t"], "any_member": r["any_member"],
             "outside": r["outside"]} for r in probes
        ],
    }
    path = _write_report(out, f"{scn.name}_viable", report)
    print(
        f"viable-curve: success={result.success}, max g {max(result.trace.g_values):.3e}, "
        f"total jump {result.total_jump:.3e}, report {path}"
    )
    return EXIT_OK if result.success else EXIT_VIOLATION


def cmd_verify_inequalities(args) -> int:
    seed = args.seed if args.seed is not None else 7
    instances = args.instances
    rng = SplitMix64(seed)
    p_choices = [1.5, 2.0, 3.0]
    max_gap = -math.inf
    branch_counts = {"1.5": 0, "2.0": 0, "3.0": 0}
    for _ in range(instances):
        d = 1 + rng.next_u64() % 3
        n = 1 + rng.next_u64() % 8
        m = 1 + rng.next_u64() % 8
        p = p_choices[rng.next_u64() % 3]
        branch_counts[str(p)] += 1
        mu = DiscreteMeasure(
            np.array([[rng.uniform_in(-2, 2) for _ in range(d)] for _ in range(n)]),
            SplitMix64(rng.next_u64()).dirichlet_uniform(n),
        )
        nu = DiscreteMeasure(
            np.array([[rng.uniform_in(-2, 2) for _ in range(d)] for _ in range(m)]),
            SplitMix64(rng.next_u64()).dirichlet_uniform(m),
        )
        zeta = SampledMap(mu, np.array([[rng.uniform_in(-2, 2) for _ in range(d)] for _ in range(n)]))
        xi = SampledMap(nu, np.array([[rng.uniform_in(-2, 2) for _ in range(d)] for _ in range(m)]))
        h = rng.uniform_in(-1, 1)
        max_gap = max(max_gap, superdiff_gap(mu, nu, zeta, xi, h, p))
    pnorm_max = -math.inf
    pnorm_samples = 10_000
    for p in (1.5, 3.0):
        for _ in range(pnorm_samples):
            d = 1 + rng.next_u64() % 3
            x = np.array([rng.uniform_in(-3, 3) for _ in range(d)])
            y = np.array([rng.uniform_in(-3, 3) for _ in range(d)])
            pnorm_max = max(pnorm_max, pnorm_gap(x, y, p))
    ok = max_gap <= 1e-9 and pnorm_max <= 1e-12
    report = {
        "command": "verify-inequalities", "seed": seed,
        "instances": instances, "max_gap": max_gap,
        "branch_counts": branch_counts,
        "pnorm_samples_per_branch": pnorm_samples,
        "pnorm_max_gap": pnorm_max,
        "passed": ok,
    }
    path = _write_report(Path(args.out), "verify_inequalities", report)
    print(f"verify-inequalities: max_gap {max_gap:.3e}, pnorm {pnorm_max:.3e}, report {path}")
    return EXIT_OK if ok else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassdyn",
        description="Set-valued dynamics, viability and tangent cones over empirical measures.",
    )
    parser.add_argument("--version", action="version", version=f"wassdyn {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="scenario file (.toml or .json)")
        sp.add_argument("--out", default="out", help="output directory (default: ./out)")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--threads", type=int, default=os.cpu_count(), help="worker threads")
        sp.add_argument("--tol", type=float, default=None, help="override the scenario tolerance")
        sp.add_argument("--format", choices=("json", "csv"), default="csv",
                        help="trace artifact format")

    sp = sub.add_parser("wp", help="Wasserstein distance between two measure files")
    sp.add_argument("measure_a")
    sp.add_argument("measure_b")
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_wp)

    for name, fn, hlp in [
        ("simulate", cmd_simulate, "integrate one trajectory-selection pair"),
        ("reach", cmd_reach, "sample the reachable set at the horizon"),
        ("filippov", cmd_filippov, "track a reference curve and check the Gronwall envelope"),
        ("cone-test", cmd_cone_test, "probe tangent-cone membership of a direction"),
        ("viability-check", cmd_viability_check, "sampled sufficient viability condition"),
        ("invariance-check", cmd_invariance_check, "sampled invariance condition + empirical check"),
        ("viable-curve", cmd_viable_curve, "constructive dyadic viable curve"),
    ]:
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("verify-inequalities",
                        help="randomized verification of the W_p differential inequalities")
    sp.add_argument("--instances", type=int, default=500)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", default="out")
    sp.set_defaults(fn=cmd_verify_inequalities)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
