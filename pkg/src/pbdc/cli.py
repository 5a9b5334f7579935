"""Command line entry point ``pbdc``.

Exit codes: 0 success, 1 a check failed, 2 bad configuration or input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .checks import run_checks
from .config import ConfigInvalid, load_config
from .distributions import Instance, MarginalSpec
from .evaluation import DEFAULT_SAMPLES, BundleCurve, make_rng, summarize_on_draws
from .harness import size_pricing_case_study, run_experiment, write_results
from .mechanisms import SchemeKind
from .optimization import lp_opt_discrete, optimize_scheme
from .theory import (
    ER_PAIR_RHO,
    PreconditionViolated,
    many_item_fraction_bound,
    er_pair_bundle_revenue,
    er_pair_summary,
    bundle_guarantee,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2
ER_PAIR_STEP = 1.0 / 16384
ER_PAIR_SPOTS = (1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.25, 3.5, 4.0)


class InputInvalid(ValueError):
    pass


def _emit(record: dict, out: str | None, name: str):
    text = json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n"
    if out:
        path = Path(out)
        if path.suffix != ".json":
            path.mkdir(parents=True, exist_ok=True)
            path = path / name
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    sys.stdout.write(text)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def load_instance(path) -> Instance:
    """Instance file: a JSON list of marginal records, or ``{"items": [...]}``.

    Each record is ``{"family": ..., "params": [...], "cost": ..., "free_disposal": ...}``.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputInvalid(f"cannot read instance file: {e}") from None
    recs = data["items"] if isinstance(data, dict) else data
    try:
        return Instance.from_records(recs)
    except (KeyError, TypeError, ValueError) as e:
        raise InputInvalid(f"bad instance record: {e}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify(args) -> int:
    results = run_checks(seed=args.seed, samples=args.samples)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
    if args.out:
        _emit({"checks": [r.__dict__ for r in results]}, args.out, "verify.json")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_bounds(args) -> int:
    rec = bundle_guarantee(args.val, args.cv).to_record()
    if args.mu_min is not None or args.sigma_max is not None or args.n is not None:
        if None in (args.mu_min, args.sigma_max, args.n):
            raise InputInvalid("--mu-min, --sigma-max and --n go together")
        rec["many_item_fraction_lb"] = many_item_fraction_bound(args.mu_min, args.sigma_max, args.n)
    _emit(rec, args.out, "bounds.json")
    return EXIT_OK


def cmd_optimize(args) -> int:
    inst = load_instance(args.instance_file)
    if args.scheme.upper() == "LP":
        res = lp_opt_discrete(inst)
        _emit(res.to_record(), args.out, "optimize.json")
        return EXIT_OK
    try:
        kind = SchemeKind(args.scheme.upper())
    except ValueError:
        raise InputInvalid(f"unknown scheme {args.scheme!r}") from None
    res = optimize_scheme(kind, inst, samples=args.samples, seed=args.seed, restarts=args.restarts)
    X = inst.sample(make_rng(args.seed, 2), args.samples)
    rec = {"search": res.to_record(), "evaluation": summarize_on_draws(res.prices, X, inst.costs),
           "samples": args.samples, "seed": args.seed}
    _emit(rec, args.out, "optimize.json")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = load_config(args.config).with_overrides(
        samples=args.samples_override, master_seed=args.seed_override, output=args.out)
    out = config.output
    if not out:
        raise ConfigInvalid("no output directory: set output in the config or pass --out")

    def progress(done, total):
        if done == total or done % 25 == 0:
            print(f"{done}/{total} instances", file=sys.stderr, flush=True)

    rows = run_experiment(config, workers=args.workers, progress=progress)
    tables = write_results(rows, config, out)
    for rec in tables["performance"]:
        print(f"{rec['scenario']:<18} {rec['family']:<12} {rec['scheme']:<5} "
              f"median {rec['median']:.4f}  p10 {rec['p10']:.4f}")
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_case_study(args) -> int:
    if args.name != "appendix-d":
        raise InputInvalid(f"unknown case study {args.name!r}")
    rep = size_pricing_case_study(samples=args.samples, seed=args.seed)
    _emit(rep, args.out, "size_pricing_case.json")
    det = rep["DET"]["profit"]
    ok = (0.260 <= det <= 0.270 and 0.98 <= rep["PBDC"]["fraction_of_det"] <= 1.0
          and 0.15 <= rep["BSP"]["fraction_of_det"] <= 0.25)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_er_pair(args) -> int:
    summary = er_pair_summary()
    zs = np.linspace(1.0, 4.0, 10_000)
    rev = np.array([er_pair_bundle_revenue(z) for z in zs])
    inst = Instance((MarginalSpec.equal_revenue_tail(ER_PAIR_RHO),) * 2)
    # the value law has kinks at 2 and 3, so use a fine grid
    curve = BundleCurve(inst, kind="PB", step=ER_PAIR_STEP)
    spots = list(ER_PAIR_SPOTS)
    summary.update({
        "sweep_peak": float(rev.max()),
        "sweep_argmax": float(zs[int(np.argmax(rev))]),
        "convolution_step": ER_PAIR_STEP,
        "convolution_spots": {str(z): {"closed_form": er_pair_bundle_revenue(z), "convolution": float(curve(z))}
                              for z in spots},
    })
    _emit(summary, args.out, "equal_revenue_pair.json")
    return EXIT_OK if math.isclose(summary["sweep_peak"], 2 * ER_PAIR_RHO, abs_tol=1e-4) else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the flags work before or after the subcommand; the copy attached to the
    # subcommands has no defaults so it cannot clobber values given earlier
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    g.add_argument("--workers", type=int, default=d(1), help="worker processes for experiments")
    g.add_argument("--samples", type=int, default=d(DEFAULT_SAMPLES), help="Monte Carlo draws")
    g.add_argument("--out", default=d(None), help="output file or directory")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="pbdc", description="Multi-item pricing: schemes, bounds, experiments.",
                                parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", parents=[common], help="run the bound checks and print a pass/fail table")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("bounds", parents=[common], help="bundle-price guarantee for given welfare moments")
    s.add_argument("--val", type=float, required=True, help="mean welfare E[sum (x_i - c_i)^+]")
    s.add_argument("--cv", type=float, required=True, help="its coefficient of variation")
    s.add_argument("--mu-min", type=float, help="smallest per-item mean margin")
    s.add_argument("--sigma-max", type=float, help="largest per-item standard deviation")
    s.add_argument("--n", type=int, help="number of items")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("optimize", parents=[common], help="optimize one scheme on an instance file")
    s.add_argument("--scheme", required=True, help="PC, PB, PBDC, BSP, MB, DET or LP")
    s.add_argument("--instance-file", required=True)
    s.add_argument("--restarts", type=int, default=None)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("experiment", parents=[common], help="run an experiment config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("case-study", parents=[common], help="run a named case study")
    s.add_argument("name", choices=["appendix-d"])
    s.set_defaults(func=cmd_case_study)

    s = sub.add_parser("example1", parents=[common], help="two-item equal-revenue example")
    s.set_defaults(func=cmd_er_pair)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    raw = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(raw)
    # experiment configs carry their own seed and sample count; flags override them only when given
    given = {a.split("=")[0] for a in raw}
    args.samples_override = args.samples if "--samples" in given else None
    args.seed_override = args.seed if "--seed" in given else None
    if args.samples < 100:
        print("error: --samples must be at least 100", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigInvalid, InputInvalid, PreconditionViolated) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
