"""Command-line entry point: ``mdpconf {simulate,estimate,check-identifiability,report}``."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import harness
from .errors import MdpConfError, ValidationError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", nargs="+", required=True,
                   help="scenario JSON path(s) or built-in scenario name(s)")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", help="output directory (per-scenario subdirectories if several configs)")
    p.add_argument("--jobs", type=int, default=1, help="run independent scenarios in parallel processes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdpconf", description="Confusion-matrix estimation for noisily observed MDPs")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory and write trajectory.csv")
    _common(p)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("estimate", help="run an estimator and write summary.json (plus posterior.csv for Bayes)")
    _common(p)
    p.add_argument("--method", choices=harness.ESTIMATORS)
    p.add_argument("--steps", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--grid-res", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--exact-q", action="store_true", default=None,
                   help="use exact observed transitions instead of simulated counts")

    p = sub.add_parser("check-identifiability", help="test the stationary-distribution conditions")
    p.add_argument("--config", nargs="+", required=True)
    p.add_argument("--actions", nargs="+", help="subset of action names to check (default all)")

    p = sub.add_parser("report", help="print a short text report from a summary.json")
    p.add_argument("summary", nargs="+", help="summary.json file(s) or run directories")

    sub.add_parser("list-scenarios", help="list the built-in scenarios")
    return ap


def _scenarios(args) -> list:
    out = []
    many = len(args.config) > 1
    for path in args.config:
        s = harness.load_scenario(path)
        kw = {k: getattr(args, k, None) for k in
              ("seed", "method", "steps", "burn_in", "grid_res", "particles", "exact_q", "snapshot_every")}
        if args.output_dir:
            kw["output_dir"] = str(Path(args.output_dir) / s.name) if many else args.output_dir
        out.append(s.with_overrides(**kw))
    dirs = [s.output_dir for s in out]
    if len(set(dirs)) != len(dirs):
        raise ValidationError(f"scenarios share an output directory: {dirs}")
    return out


def _estimate_one(s) -> tuple[int, str]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = harness.run_experiment(s)
    if rep.error:
        return rep.exit_code, f"{s.name}: {rep.error} (summary in {s.output_dir})"
    fe = "n/a" if rep.frobenius_error is None else f"{rep.frobenius_error:.6g}"
    sel = "none (non-unique)" if rep.selected is None else rep.selected
    return 0, f"{s.name}: {rep.estimator}, {len(rep.candidates)} candidate(s), selected {sel}, " \
              f"frobenius error {fe} -> {s.output_dir}"


def _simulate_one(s) -> tuple[int, str]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        path = harness.simulate_scenario(s, s.estimator["steps"])
    return 0, f"{s.name}: wrote {path}"


def _dispatch(fn, scenarios, jobs):
    if jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, scenarios))
    return [fn(s) for s in scenarios]


def _check(args) -> int:
    code = 0
    for path in args.config:
        s = harness.load_scenario(path)
        info = harness.identifiability_of(s, args.actions)
        ok = info["satisfied"]
        print(f"{s.name}: subset condition {'satisfied' if ok else 'VIOLATED'}")
        for a, pi in info["stationary"].items():
            print(f"  pi[{a}] = {[round(x, 6) for x in pi]}")
        if not ok:
            print(f"  violating subsets: {info['violating_subsets']}")
            code = harness.EXIT_IDENTIFIABILITY
    return code


def _report(args) -> int:
    for item in args.summary:
        p = Path(item)
        if p.is_dir():
            p = p / "summary.json"
        d = json.loads(p.read_text())
        print(f"{d['scenario']} [{d['estimator']}, seed {d['seed']}, steps {d['steps']}]")
        if d.get("error"):
            print(f"  error: {d['error']}")
        ident = d.get("identifiability") or {}
        if "satisfied" in ident:
            print(f"  identifiable: {ident['satisfied']}")
        for i, c in enumerate(d["candidates"]):
            tag = "*" if d["selected"] == i else " "
            extras = ", ".join(f"{k}={v:.6g}" for k, v in c.items() if isinstance(v, float))
            print(f" {tag}[{i}] {c['matrix']}  {extras}")
        if d.get("frobenius_error") is not None:
            print(f"  frobenius error: {d['frobenius_error']:.6g}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            print("\n".join(harness.builtin_scenarios()))
            return 0
        if args.command == "check-identifiability":
            return _check(args)
        if args.command == "report":
            return _report(args)
        scenarios = _scenarios(args)
        fn = _simulate_one if args.command == "simulate" else _estimate_one
        results = _dispatch(fn, scenarios, args.jobs)
    except (ValidationError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_VALIDATION
    except MdpConfError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return harness.EXIT_ESTIMATOR
    code = 0
    for c, msg in results:
        print(msg, file=sys.stderr if c else sys.stdout)
        code = max(code, c)
    return code


if __name__ == "__main__":
    sys.exit(main())
