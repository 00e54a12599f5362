"""Command line entry point: ``rmlmc tune | run | oracle-check``."""

from __future__ import annotations

import argparse
import json
import sys

from rmlmc.checks import run_oracle_checks
from rmlmc.harness import (MODELS, ExperimentConfig, ExperimentError, block_stream, emit_report,
                           load_config, make_sampler, run_experiment)
from rmlmc.tune import (DEFAULT_GAMMA, DESK_REF_MESH, optimal_coupled_sum, optimal_independent_sum,
                        optimal_single_term, run_pilot)


def tune_record(model, max_level, pilot, gamma, ref_mesh, csum_m, seed, head=None) -> dict:
    """Pilot run plus the three optimisers, as a JSON-ready record."""
    sampler = make_sampler(model)
    table = run_pilot(sampler, max_level, pilot, block_stream(seed, f"pilot/{model}", 0), ref_mesh=ref_mesh)
    plan = optimal_coupled_sum(table, min(csum_m, max_level), gamma)
    return {
        "model": model,
        "single": optimal_single_term(table, gamma, head).to_dict(),
        "isum": optimal_independent_sum(table, gamma, head).to_dict(),
        "csum": {**plan.dist.to_dict(), "J": list(plan.J)},
    }


def _dist_from_file(path, families):
    """Distribution and csum levels from a plain record or a ``tune`` output."""
    with open(path) as fh:
        rec = json.load(fh)
    if "head" in rec:
        return rec, None
    if len(families) != 1:
        raise ValueError("a tuned distribution file serves one family per run")
    entry = dict(rec[families[0]])
    J = entry.pop("J", None)
    return entry, J


def _split(text, cast=str):
    return tuple(cast(v) for v in text.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmlmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="pilot run and optimal level distributions")
    t.add_argument("--model", required=True, choices=[m for m in MODELS if m != "det"])
    t.add_argument("--max-level", type=int, default=10)
    t.add_argument("--pilot", type=int, default=20000, help="pilot samples per level")
    t.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    t.add_argument("--ref-mesh", type=int, default=DESK_REF_MESH)
    t.add_argument("--csum-m", type=int, default=6)
    t.add_argument("--head", type=int, default=None, help="fixed head length (default: automatic)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None, help="output file (default: stdout)")

    r = sub.add_parser("run", help="replication experiment")
    r.add_argument("--config", default=None, help="JSON experiment config; flags override it")
    r.add_argument("--model", choices=MODELS)
    r.add_argument("--family", help="comma list of single,isum,csum")
    r.add_argument("--scheme", help="comma list of iid,str,sys,res,mlmc,poisson,hybrid")
    r.add_argument("--n", help="comma list of draw counts")
    r.add_argument("--reps", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--dist", default=None, help="distribution JSON (plain record or tune output)")
    r.add_argument("--workers", type=int)
    r.add_argument("--truth", type=float)
    r.add_argument("--timing", action="store_true", help="record wall time per cell")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--output", default=None, help="report file (default: stdout)")

    sub.add_parser("oracle-check", help="exact invariants of the analytic oracles")
    return parser


def _run_config(args) -> ExperimentConfig:
    base = load_config(args.config).to_dict() if args.config else {}
    overrides = {
        "model": args.model,
        "family": _split(args.family) if args.family else None,
        "scheme": _split(args.scheme) if args.scheme else None,
        "n": _split(args.n, int) if args.n else None,
        "reps": args.reps, "seed": args.seed, "workers": args.workers, "truth": args.truth,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.timing:
        base["timing"] = True
    base.setdefault("family", ("single",))
    if args.dist:
        base["dist"], J = _dist_from_file(args.dist, tuple(base["family"]))
        if J is not None:
            base["subsequence"] = tuple(J)
    missing = [k for k in ("model", "scheme", "n", "reps") if k not in base]
    if missing:
        raise ValueError(f"missing run settings: {', '.join(missing)}")
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "oracle-check":
        failed = 0
        for res in run_oracle_checks():
            print(f"{'ok  ' if res.passed else 'FAIL'} {res.name}: {res.detail}")
            failed += not res.passed
        return 1 if failed else 0
    try:
        if args.command == "tune":
            rec = tune_record(args.model, args.max_level, args.pilot, args.gamma, args.ref_mesh,
                              args.csum_m, args.seed, args.head)
            text = json.dumps(rec, indent=1) + "\n"
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return 0
        config = _run_config(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        parser.error(str(exc))
    try:
        report = run_experiment(config)
    except ExperimentError as exc:
        print(f"rmlmc: {exc}", file=sys.stderr)
        return 1
    text = emit_report(report, args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
