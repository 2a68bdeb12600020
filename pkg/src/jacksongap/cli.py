"""Command-line front end: ``jacksongap {analyze,gap-numeric,simulate,tails}``.

Machine-readable JSON goes to stdout (sorted keys, floats at 12 significant
digits); a short human summary goes to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import network_gap_lower
from .generator import (
    StateSpaceError,
    build_network_generator,
    cheeger_exact,
    numeric_gap,
)
from .network import (
    SpecError,
    check_regular,
    check_routing_reversible,
    load_spec,
    solve_traffic,
    validate_spec,
)
from .product_form import MarginalDistribution, ergodicity_check
from .sim import SimConfig, estimate_tv_decay
from .tails import MarginalDist, example_4, load_distribution, strong_light_tail_check

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NON_ERGODIC = 3


def canonical(obj):
    """Convert to JSON-ready builtins with floats at 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, (frozenset, set)):
        return sorted(canonical(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.12g}")
    return obj


def dumps(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2) + "\n"


def _emit(obj) -> None:
    sys.stdout.write(dumps(obj))


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _header(path: str) -> dict:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"tool": {"name": "jacksongap", "version": __version__},
            "input": {"path": str(path), "sha256": digest}}


def parse_grid(text: str) -> np.ndarray:
    """``t0:t1:steps`` -> ``steps`` evenly spaced points from ``t0`` to ``t1``."""
    try:
        t0, t1, steps = text.split(":")
        return np.linspace(float(t0), float(t1), int(steps))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected t0:t1:steps") from exc


def _load_valid(path: str, report: dict):
    """Load, validate and solve traffic; returns ``(spec, traffic)`` or an exit code."""
    try:
        spec = load_spec(path)
    except (SpecError, OSError, json.JSONDecodeError) as exc:
        report["validation"] = {"ok": False, "violations": [str(exc)], "method": "analytic"}
        return EXIT_INVALID
    validation = validate_spec(spec)
    report["validation"] = {"ok": validation.ok, "violations": list(validation.violations),
                            "method": "analytic"}
    if not validation.ok:
        return EXIT_INVALID
    try:
        traffic = solve_traffic(spec)
    except SpecError as exc:
        report["validation"] = {"ok": False, "violations": [str(exc)], "method": "analytic"}
        return EXIT_INVALID
    report["traffic"] = {"values": traffic, "method": "analytic", "tolerance": 1e-10}
    return spec, traffic


def cmd_analyze(args) -> int:
    report = _header(args.spec)
    loaded = _load_valid(args.spec, report)
    if isinstance(loaded, int):
        _emit(report)
        _say("invalid network: " + "; ".join(report["validation"]["violations"]))
        return loaded
    spec, traffic = loaded
    verdicts = ergodicity_check(spec, traffic)
    report["ergodicity"] = {
        "nodes": [v.__dict__ for v in verdicts],
        "method": "analytic",
        "tolerance": 0.0,
    }
    if not all(v.ergodic for v in verdicts):
        _emit(report)
        bad = [v.node for v in verdicts if not v.ergodic]
        _say(f"non-ergodic nodes: {bad}")
        return EXIT_NON_ERGODIC
    reversible, violation = check_routing_reversible(spec, traffic)
    report["routing"] = {"reversible": reversible, "max_violation": violation,
                         "regular": check_regular(spec.routing), "method": "analytic",
                         "tolerance": 1e-10}
    tails = []
    for i, (lam, fn) in enumerate(zip(traffic, spec.services, strict=True), start=1):
        tr = strong_light_tail_check(MarginalDist(MarginalDistribution(float(lam), fn)), args.horizon)
        tails.append({"node": i, **tr.to_dict()})
    report["tails"] = {"nodes": tails, "method": "analytic", "tolerance": 1e-14}
    bounds = network_gap_lower(spec, traffic, replay_paper=args.replay_paper_arithmetic)
    report["bounds"] = {**bounds.to_dict(), "method": "analytic", "tolerance": 1e-12}
    if args.trunc:
        try:
            gen = build_network_generator(spec, args.trunc)
        except StateSpaceError as exc:
            _say(str(exc))
            return EXIT_INVALID
        res = numeric_gap(gen)
        report["numeric_gap"] = _spectral_dict(res)
        if gen.size <= 20:
            ch = cheeger_exact(gen, res.stationary)
            report["cheeger"] = {"kappa": ch.kappa, "subset": ch.subset, "exact": ch.exact,
                                 "method": "truncated-numeric", "tolerance": 1e-12}
    _emit(report)
    _say(f"traffic={np.round(traffic, 6).tolist()} d={bounds.d:.6g} |Q|={bounds.q_norm:.6g} "
         f"bound={bounds.final_bound:.6g}")
    return EXIT_OK


def _spectral_dict(res) -> dict:
    return {"gap": res.gap, "trunc": res.trunc, "n_states": res.n_states,
            "detailed_balance_residual": res.detailed_balance_residual,
            "lambda0": res.lambda0, "method": "truncated-numeric", "tolerance": 1e-9}


def cmd_gap_numeric(args) -> int:
    report = _header(args.spec)
    loaded = _load_valid(args.spec, report)
    if isinstance(loaded, int):
        _emit(report)
        return loaded
    spec, traffic = loaded
    if not all(v.ergodic for v in ergodicity_check(spec, traffic)):
        _emit(report)
        return EXIT_NON_ERGODIC
    try:
        res = numeric_gap(build_network_generator(spec, args.trunc))
        study = [(args.trunc, res.gap)]
        if args.trunc >= 2:
            half = numeric_gap(build_network_generator(spec, args.trunc // 2))
            study.insert(0, (args.trunc // 2, half.gap))
    except StateSpaceError as exc:
        _say(str(exc))
        return EXIT_INVALID
    out = _spectral_dict(res)
    out["convergence"] = {
        "study": [{"trunc": n, "gap": g} for n, g in study],
        "abs_change": abs(study[-1][1] - study[0][1]) if len(study) > 1 else None,
        "note": "reflecting truncation; gap at trunc vs trunc/2",
    }
    report["numeric_gap"] = out
    _emit(report)
    _say(f"gap(N={args.trunc}) = {res.gap:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    report = _header(args.spec)
    loaded = _load_valid(args.spec, report)
    if isinstance(loaded, int):
        _emit(report)
        return loaded
    spec, traffic = loaded
    if not all(v.ergodic for v in ergodicity_check(spec, traffic)):
        _emit(report)
        return EXIT_NON_ERGODIC
    x0 = ((), (0,) * spec.m)
    est = estimate_tv_decay(SimConfig(spec, x0, args.grid, args.reps, args.seed))
    report["decay"] = {**est.to_dict(), "method": "simulated", "tolerance": est.noise_floor,
                       "seed": args.seed, "initial_state": {"down": [], "queues": list(x0[1])}}
    if args.csv:
        Path(args.csv).write_text(est.to_csv(), encoding="utf-8")
    _emit(report)
    _say(f"alpha_hat = {est.alpha}")
    return EXIT_OK


def cmd_tails(args) -> int:
    if args.pattern:
        if args.pattern != "example_4":
            _say(f"unknown pattern {args.pattern!r}")
            return EXIT_INVALID
        report = {"tool": {"name": "jacksongap", "version": __version__},
                  "input": {"pattern": args.pattern}}
        dist = example_4()
    elif args.spec:
        report = _header(args.spec)
        loaded = _load_valid(args.spec, report)
        if isinstance(loaded, int):
            _emit(report)
            return loaded
        spec, traffic = loaded
        node = args.node
        if not 1 <= node <= spec.m:
            _say(f"node must be in 1..{spec.m}")
            return EXIT_INVALID
        if traffic[node - 1] >= spec.services[node - 1].limit:
            _emit(report)
            return EXIT_NON_ERGODIC
        dist = MarginalDist(MarginalDistribution(float(traffic[node - 1]), spec.services[node - 1]))
        report["input"]["node"] = node
    elif args.dist:
        report = _header(args.dist)
        try:
            dist = load_distribution(args.dist)
        except (SpecError, OSError, json.JSONDecodeError) as exc:
            report["error"] = str(exc)
            _emit(report)
            return EXIT_INVALID
    else:
        _say("tails needs a distribution file, --pattern or --spec/--node")
        return EXIT_INVALID
    tr = strong_light_tail_check(dist, args.horizon)
    report["tail"] = {**tr.to_dict(), "method": "analytic", "tolerance": 1e-14}
    _emit(report)
    _say(f"verdict: {tr.verdict}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jacksongap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="validate, solve traffic, tails and analytic bounds")
    p.add_argument("spec")
    p.add_argument("--horizon", type=int, default=512)
    p.add_argument("--trunc", type=int, default=0, help="also compute the truncated numeric gap")
    p.add_argument("--replay-paper-arithmetic", action="store_true",
                   help="add the non-certified replay of the worked example's arithmetic")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gap-numeric", help="spectral gap of the truncated generator")
    p.add_argument("spec")
    p.add_argument("--trunc", type=int, default=30)
    p.set_defaults(func=cmd_gap_numeric)

    p = sub.add_parser("simulate", help="simulated total-variation decay from the empty network")
    p.add_argument("spec")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=parse_grid, default=parse_grid("0:20:41"))
    p.add_argument("--csv", help="also write t,tv rows to this file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tails", help="strong light-tail verdict for a distribution")
    p.add_argument("dist", nargs="?")
    p.add_argument("--pattern", help="built-in hazard pattern (example_4)")
    p.add_argument("--spec", help="use a node marginal of this network")
    p.add_argument("--node", type=int, default=1)
    p.add_argument("--horizon", type=int, default=512)
    p.set_defaults(func=cmd_tails)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
