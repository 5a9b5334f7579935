"""Experiment engine: instance generation, per-instance optimization and evaluation,
aggregation into report tables, and result persistence."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy

from .config import (
    EXPERIMENT_FAMILIES,
    ExperimentConfig,
    Scenario,
)
from .distributions import EULER_GAMMA, Family, Instance, MarginalSpec, parse_family
from .evaluation import make_rng, summarize_on_draws
from .mechanisms import SchemeKind
from .optimization import opt_bsp, opt_deterministic, opt_single_price

GEN_STREAM = 0
EVAL_STREAM = 2
WIN_TOL = 1e-9
GUMBEL_SCALE = 0.25
LOGNORMAL_SD = 0.5

# fixed marginals for the heterogeneous-cost scenario
FIXED_MEANS = {
    Family.EXPONENTIAL: 1.25,
    Family.GUMBEL: 1.5,
    Family.LOGNORMAL: 0.5,  # log-mean
    Family.NORMAL: 1.5,
    Family.UNIFORM: 2.0,  # upper end b
}

GRID_MEANS = {
    Family.EXPONENTIAL: (0.5, 1.25, 2.0),
    Family.GUMBEL: (0.5, 1.5, 2.5),
    Family.LOGNORMAL: (0.0, 0.5, 1.0),  # log-means, valuation means e^{mu + 1/8}
    Family.NORMAL: (0.5, 1.5, 2.5),
    Family.UNIFORM: (0.4, 1.0, 1.6),
}
GRID_COSTS = (0.0, 1.25, 2.5)
GRID_UNIFORM_COST_FACTORS = (0.0, 0.75, 1.5)


class EmptyInput(ValueError):
    pass


def family_code(fam: Family) -> int:
    return EXPERIMENT_FAMILIES.index(fam)


# ---------------------------------------------------------------------------
# instance generation


def _marginal(fam: Family, level: float, cost: float) -> MarginalSpec:
    """Marginal of the given family from its location-type parameter ``level``
    (mean, log-mean or Uniform upper end, as used by the tables)."""
    if fam is Family.EXPONENTIAL:
        return MarginalSpec.exponential(1.0 / level, cost, True)
    if fam is Family.GUMBEL:
        return MarginalSpec.gumbel(level - GUMBEL_SCALE * EULER_GAMMA, GUMBEL_SCALE, cost, True)
    if fam is Family.LOGNORMAL:
        return MarginalSpec.lognormal(level, LOGNORMAL_SD, cost, True)
    if fam is Family.UNIFORM:
        return MarginalSpec.uniform(0.0, level, cost, True)
    raise ValueError(fam)


def _random_item(fam: Family, rng, vary_items: bool, vary_costs: bool) -> MarginalSpec:
    if fam is Family.NORMAL:
        if vary_items:
            mean, var = rng.uniform(-1.0, 2.5), rng.uniform(0.25, 1.75)
        else:
            mean, var = FIXED_MEANS[fam], 1.0
        cost = rng.uniform(0.0, 2.5) if vary_costs else 0.2
        return MarginalSpec.normal(mean, math.sqrt(var), cost, True)
    if vary_items:
        level = {
            Family.EXPONENTIAL: lambda: rng.uniform(0.2, 2.0),
            Family.GUMBEL: lambda: rng.uniform(0.0, 2.5),
            Family.LOGNORMAL: lambda: rng.uniform(-1.5, 1.0),
            Family.UNIFORM: lambda: rng.uniform(0.4, 4.0),
        }[fam]()
    else:
        level = FIXED_MEANS[fam]
    if fam is Family.UNIFORM:
        mean = level / 2.0
        cost = rng.uniform(0.0, 1.5 * mean) if vary_costs else 0.5 * mean
    else:
        cost = rng.uniform(0.0, 2.5) if vary_costs else 0.2
    return _marginal(fam, level, cost)


def _grid_instances(fam: Family) -> list[Instance]:
    options = []
    for mean in GRID_MEANS[fam]:
        if fam is Family.UNIFORM:
            for f in GRID_UNIFORM_COST_FACTORS:
                options.append(MarginalSpec.uniform(0.0, 2.0 * mean, f * mean, True))
        elif fam is Family.NORMAL:
            for c in GRID_COSTS:
                options.append(MarginalSpec.normal(mean, 1.0, c, True))
        else:
            for c in GRID_COSTS:
                options.append(_marginal(fam, mean, c))
    return [Instance((a, b, c)) for a in options for b in options for c in options]


def instance_key(config: ExperimentConfig, fam: Family, n: int, index: int) -> tuple:
    return (config.master_seed, config.scenario.code, family_code(fam), n, index)


@lru_cache(maxsize=8)
def _grid_cached(fam: Family) -> tuple:
    return tuple(_grid_instances(fam))


def make_instance(config: ExperimentConfig, fam: Family, n: int, index: int) -> Instance:
    """Instance ``index`` of one (family, n) combination; each has its own stream."""
    if config.scenario is Scenario.GRID:
        return _grid_cached(fam)[index]
    vary_items = config.scenario in (Scenario.HETEROGENEOUS_ITEMS, Scenario.BOTH_HETEROGENEOUS)
    vary_costs = config.scenario in (Scenario.HETEROGENEOUS_COSTS, Scenario.BOTH_HETEROGENEOUS)
    rng = make_rng(instance_key(config, fam, n, index), GEN_STREAM)
    return Instance(tuple(_random_item(fam, rng, vary_items, vary_costs) for _ in range(n)))


def generate_instances(config: ExperimentConfig, family=None, n: int | None = None) -> list[Instance]:
    """Instances for one (family, n) combination, fixed by the master seed."""
    fam = parse_family(family) if family is not None else config.families[0]
    n = n if n is not None else config.n_values[0]
    if config.scenario is Scenario.GRID:
        return list(_grid_cached(fam))
    return [make_instance(config, fam, n, i) for i in range(config.instances_per_combo)]


# ---------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class SchemeOutcome:
    profit: float
    std_error: float
    fraction: float
    prices: tuple
    producer_surplus: float
    consumer_surplus: float
    deadweight_loss: float
    overinclusion_loss: float
    welfare: float
    max_residual: float


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    family: str
    n: int
    index: int
    seed: str
    outcomes: dict  # scheme tag -> SchemeOutcome

    def best_schemes(self, tol=WIN_TOL):
        best = max(o.profit for o in self.outcomes.values())
        return [k for k, o in self.outcomes.items() if o.profit >= best - tol]


def optimize_and_evaluate(instance: Instance, schemes, samples: int, seed, opt_samples=None,
                          bsp_restarts: int = 3, det_restarts: int = 32) -> dict:
    """Optimize each scheme, then evaluate all of them on one shared set of draws."""
    opt_samples = opt_samples or samples
    found = {}
    for s in schemes:
        s = SchemeKind(s)
        if s in (SchemeKind.PC, SchemeKind.PB, SchemeKind.PBDC):
            found[s] = opt_single_price(s, instance).prices
        elif s is SchemeKind.BSP:
            found[s] = opt_bsp(instance, restarts=bsp_restarts, samples=opt_samples, seed=seed).prices
        elif s is SchemeKind.DET:
            found[s] = opt_deterministic(instance, restarts=det_restarts, samples=opt_samples, seed=seed).prices
        else:
            raise ValueError(f"unsupported scheme {s}")
    X = instance.sample(make_rng(seed, EVAL_STREAM), samples)
    summaries = {s: summarize_on_draws(p, X, instance.costs) for s, p in found.items()}
    best = max(v["profit"] for v in summaries.values())
    out = {}
    for s, p in found.items():
        v = summaries[s]
        frac = 1.0 if best <= 0 else min(max(v["profit"], 0.0) / best, 1.0)
        out[s.value] = SchemeOutcome(
            v["profit"], v["std_error"], frac, tuple(p.flat()),
            v["producer_surplus"], v["consumer_surplus"], v["deadweight_loss"],
            v["overinclusion_loss"], v["welfare"], v["max_residual"],
        )
    return out


def _run_task(task):
    config, fam_value, n, index = task
    fam = Family(fam_value)
    inst = make_instance(config, fam, n, index)
    key = instance_key(config, fam, n, index)
    outcomes = optimize_and_evaluate(inst, config.schemes, config.samples, key, config.opt_samples,
                                     config.bsp_restarts, config.det_restarts)
    return ResultRow(config.scenario.value, fam.value, n, index, "-".join(map(str, key)), outcomes)


def experiment_tasks(config: ExperimentConfig):
    return [(config, fam.value, n, i)
            for fam in config.families
            for n in config.n_values
            for i in range(config.instances_per_combo)]


def run_experiment(config: ExperimentConfig, workers: int = 1, progress=None) -> list[ResultRow]:
    """Rows in (family, n, index) order; identical for any worker count."""
    tasks = experiment_tasks(config)
    rows = []
    if workers <= 1:
        for t in tasks:
            rows.append(_run_task(t))
            if progress:
                progress(len(rows), len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for row in ex.map(_run_task, tasks, chunksize=1):
                rows.append(row)
                if progress:
                    progress(len(rows), len(tasks))
    return rows


# ---------------------------------------------------------------------------
# aggregation


OUTCOME_FIELDS = ("profit", "std_error", "fraction", "prices", "producer_surplus", "consumer_surplus",
                  "deadweight_loss", "overinclusion_loss", "welfare", "max_residual")


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ";".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    if not rows:
        raise EmptyInput("no rows")
    schemes = list(rows[0].outcomes)
    header = ["scenario", "family", "n", "index", "seed"] + [f"{s}_{f}" for s in schemes for f in OUTCOME_FIELDS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        line = [r.scenario, r.family, r.n, r.index, r.seed]
        for s in schemes:
            o = r.outcomes[s]
            line += [_fmt(getattr(o, f)) for f in OUTCOME_FIELDS]
        w.writerow([_fmt(x) for x in line])
    return buf.getvalue()


def aggregate(rows) -> dict:
    """Report tables as lists of dicts.

    * ``performance``: median and 10th percentile fraction-of-best per
      (scenario, family, scheme)
    * ``wins``: rows on which each scheme is best; ties within ``WIN_TOL``
      count for every tied scheme
    * ``economics``: mean welfare split per (scenario, n, scheme)
    * ``profit_by_n``: mean profit per (scenario, family, n, scheme)
    """
    rows = list(rows)
    if not rows:
        raise EmptyInput("no rows to aggregate")
    schemes = list(rows[0].outcomes)
    perf, wins, econ, by_n = [], [], [], []
    tie_rows = 0
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.scenario, r.family), []).append(r)
        if len(r.best_schemes()) > 1:
            tie_rows += 1
    for (scen, fam), rs in groups.items():
        best_lists = [r.best_schemes() for r in rs]
        for s in schemes:
            fr = np.array([r.outcomes[s].fraction for r in rs])
            perf.append({"scenario": scen, "family": fam, "scheme": s, "rows": len(rs),
                         "median": float(np.quantile(fr, 0.5)), "p10": float(np.quantile(fr, 0.1))})
            wins.append({"scenario": scen, "family": fam, "scheme": s,
                         "wins": sum(s in b for b in best_lists), "rows": len(rs)})
    by_scen_n: dict = {}
    by_fam_n: dict = {}
    for r in rows:
        by_scen_n.setdefault((r.scenario, r.n), []).append(r)
        by_fam_n.setdefault((r.scenario, r.family, r.n), []).append(r)
    for (scen, n), rs in sorted(by_scen_n.items()):
        for s in schemes:
            o = [r.outcomes[s] for r in rs]
            ps = float(np.mean([x.producer_surplus for x in o]))
            cs = float(np.mean([x.consumer_surplus for x in o]))
            econ.append({"scenario": scen, "n": n, "scheme": s, "rows": len(rs),
                         "producer_surplus": ps, "consumer_surplus": cs, "total_surplus": ps + cs,
                         "deadweight_loss": float(np.mean([x.deadweight_loss for x in o])),
                         "overinclusion_loss": float(np.mean([x.overinclusion_loss for x in o])),
                         "welfare": float(np.mean([x.welfare for x in o]))})
    for (scen, fam, n), rs in sorted(by_fam_n.items()):
        for s in schemes:
            by_n.append({"scenario": scen, "family": fam, "n": n, "scheme": s, "rows": len(rs),
                         "mean_profit": float(np.mean([r.outcomes[s].profit for r in rs]))})
    return {"performance": perf, "wins": wins, "economics": econ, "profit_by_n": by_n,
            "tie_rows": tie_rows}


def _table_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(records[0]), lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow({k: _fmt(v) for k, v in rec.items()})
    return buf.getvalue()


def write_results(rows, config: ExperimentConfig, out_dir) -> dict:
    """Write results.csv, the aggregate tables and a run manifest; returns the tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(rows_to_csv(rows))
    tables = aggregate(rows)
    for name in ("performance", "wins", "economics", "profit_by_n"):
        (out / f"table_{name}.csv").write_text(_table_csv(tables[name]))
    manifest = {
        "config": config.to_record(),
        "rows": len(rows),
        "tie_rows": tables["tie_rows"],
        "max_welfare_residual": max(o.max_residual for r in rows for o in r.outcomes.values()),
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "columns": rows_to_csv(rows[:1]).splitlines()[0].split(","),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return tables


# ---------------------------------------------------------------------------
# two-item case study where size pricing fails


def size_pricing_trap() -> Instance:
    return Instance((MarginalSpec.uniform(0.0, 1.0), MarginalSpec.uniform(0.0, 5.0, cost=4.5)))


def size_pricing_case_study(samples: int = 100_000, seed: int = 0, restarts: int = 32) -> dict:
    """A cheap item U(0,1) next to an expensive item U(0,5) with cost 4.5.

    Size pricing must pick one price for "any single item", so it either
    sells the expensive item below cost or prices the cheap one out; cost
    refunds avoid the dilemma.
    """
    inst = size_pricing_trap()
    det = opt_deterministic(inst, restarts=restarts, samples=samples, seed=seed)
    bsp = opt_bsp(inst, restarts=8, samples=samples, seed=seed)
    pbdc = opt_single_price(SchemeKind.PBDC, inst)
    pc = opt_single_price(SchemeKind.PC, inst)
    pb = opt_single_price(SchemeKind.PB, inst)
    X = inst.sample(make_rng(seed, EVAL_STREAM), samples)
    report = {}
    for name, res in (("DET", det), ("BSP", bsp), ("PBDC", pbdc), ("PC", pc), ("PB", pb)):
        ev = summarize_on_draws(res.prices, X, inst.costs)
        report[name] = {"prices": res.prices.flat(), "search_value": res.value,
                        "profit": ev["profit"], "std_error": ev["std_error"]}
    base = report["DET"]["profit"]
    for name in report:
        report[name]["fraction_of_det"] = report[name]["profit"] / base
    report["PBDC"]["curve_value"] = pbdc.value
    return report
