"""Numeric checks of the revenue guarantees, run by ``pbdc verify``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .distributions import Instance, MarginalSpec, sample
from .evaluation import make_rng, mc_profit
from .mechanisms import PBDC, SchemeKind
from .optimization import opt_single_price
from .theory import (
    ER_PAIR_RHO,
    cantelli,
    many_item_fraction_bound,
    discount_fraction,
    er_pair_bundle_revenue,
    er_pair_summary,
    key_inequality_violations,
    tau_constant_scan,
    bundle_guarantee,
    variance_by_quadrature,
    flat_revenue_variance_check,
    welfare_bound_report,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _timed(name, fn):
    t = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as e:  # a crashing check is a failed check
        passed, detail = False, f"{type(e).__name__}: {e}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t)


def check_closed_forms():
    r = bundle_guarantee(1.0, 1.0)
    ok = abs(r.epsilon - 0.4) < 1e-12 and abs(r.fraction_lb - 0.04) < 1e-12 and abs(r.price - 0.6) < 1e-12
    return ok, f"cv=1: eps={r.epsilon:.6g} fraction={r.fraction_lb:.6g} price={r.price:.6g}"


def check_price_floor(rng, count=10_000):
    """The recommended price keeps at least a third of mean welfare; eps grows with cv."""
    vals = rng.uniform(0.01, 100.0, count)
    cvs = np.sort(rng.uniform(0.0, 50.0, count))
    eps = np.array([discount_fraction(c) for c in cvs])
    prices = np.array([bundle_guarantee(v, c).price for v, c in zip(vals, cvs)])
    ok = bool(np.all(prices >= vals / 3.0 - 1e-12) and np.all(np.diff(eps) >= 0) and np.all(eps < 2.0 / 3.0))
    return ok, f"min price/val {np.min(prices / vals):.6f}, max eps {eps.max():.6f}"


def check_key_inequality(rng, count=100_000):
    bad = key_inequality_violations(rng, count)
    return bad == 0, f"{bad} violations in {count} inputs"


def check_tau_scan():
    best, tau = tau_constant_scan()
    ok = abs(best - 5.1952) <= 5e-4 and abs(math.exp(tau) - 1.25 - tau) <= 1e-3
    return ok, f"max {best:.6f} at tau {tau:.6f}"


def check_er_pair():
    s = er_pair_summary()
    target = (3 + math.log(2)) / (3 + 2 * math.log(2))
    zs = np.linspace(1.0, 4.0, 10_000)  # step 1/3333, so 2 and 3 are grid points
    rev = np.array([er_pair_bundle_revenue(z) for z in zs])
    peak = rev.max()
    cont3 = abs(er_pair_bundle_revenue(3.0) - er_pair_bundle_revenue(3.0 + 1e-13))
    ok = abs(s["ratio"] - target) <= 1e-12 and abs(peak - 2 * ER_PAIR_RHO) <= 1e-9 and cont3 <= 1e-12
    return ok, f"ratio {s['ratio']:.9f}, sweep peak {peak:.9f} vs {2 * ER_PAIR_RHO:.9f}"


def check_flat_revenue_variance():
    u = flat_revenue_variance_check(MarginalSpec.uniform(0.0, 1.0), 0.25)
    er = flat_revenue_variance_check(MarginalSpec.equal_revenue(0.1, 1.0), 0.1)
    q = variance_by_quadrature(MarginalSpec.equal_revenue(0.1, 1.0))
    ok = u[2] and er[2] and abs(q - er[0]) < 1e-6
    return ok, f"uniform {u[0]:.6f} <= {u[1]}, equal-revenue {er[0]:.6f} <= {er[1]}"


def cantelli_specs():
    return [
        MarginalSpec.uniform(0.0, 1.0), MarginalSpec.exponential(1.0), MarginalSpec.normal(0.0, 1.0),
        MarginalSpec.gumbel(0.0, 1.0), MarginalSpec.lognormal(0.0, 0.5), MarginalSpec.uniform(-2.0, 5.0),
        MarginalSpec.exponential(3.0), MarginalSpec.normal(2.0, 0.3), MarginalSpec.lognormal(1.0, 0.25),
        MarginalSpec.discrete([(0.0, 0.5), (1.0, 0.3), (4.0, 0.2)]),
    ]


def check_cantelli(rng, samples=1_000_000):
    worst = -np.inf
    for spec in cantelli_specs():
        x = np.asarray(sample(spec, rng, samples), dtype=float)
        mu, var = float(np.mean(x)), float(np.var(x))
        for t in np.linspace(0.1, 3.0, 10) * math.sqrt(var):
            p = float(np.mean(x <= mu - t))
            se = math.sqrt(max(p * (1 - p), 1.0 / samples) / samples)
            worst = max(worst, (p - cantelli(mu, var, t)) / se)
    return worst <= 4.0, f"largest excess over the bound {worst:.2f} standard errors"


def random_finite_instance(rng, n) -> Instance:
    items = []
    for _ in range(n):
        kind = rng.integers(4)
        c = float(rng.uniform(0.0, 0.5))
        if kind == 0:
            items.append(MarginalSpec.uniform(0.0, float(rng.uniform(0.5, 3.0)), c))
        elif kind == 1:
            items.append(MarginalSpec.exponential(float(rng.uniform(0.5, 3.0)), c))
        elif kind == 2:
            items.append(MarginalSpec.normal(float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.2, 1.0)), c))
        else:
            items.append(MarginalSpec.lognormal(float(rng.uniform(-1.0, 0.5)), float(rng.uniform(0.2, 0.6)), c))
    return Instance(tuple(items))


def check_bundle_guarantee(rng, count=20, samples=100_000, seed=0):
    worst, floor_ok = np.inf, True
    for i in range(count):
        inst = random_finite_instance(rng, int(rng.integers(1, 9)))
        rep = welfare_bound_report(inst)
        floor_ok &= rep.price >= rep.val_plus / 3.0 - 1e-12
        est = mc_profit(PBDC.with_margin(rep.price, inst.costs), inst, samples, (seed, i))
        worst = min(worst, (est.mean - rep.revenue_lb) / max(est.std_error, 1e-15))
    return worst >= -4.0 and floor_ok, f"smallest margin over the guarantee {worst:.2f} standard errors"


def check_many_item_bound(ns=(13, 50, 200)):
    ratios = []
    for n in ns:
        inst = Instance(tuple(MarginalSpec.uniform(0.0, 1.0) for _ in range(n)))
        res = opt_single_price(SchemeKind.PBDC, inst)
        ratios.append(res.value / (0.5 * n))
    bounds = [many_item_fraction_bound(0.5, math.sqrt(1 / 12), n) for n in ns]
    ok = all(r >= b for r, b in zip(ratios, bounds)) and all(np.diff(ratios) > 0)
    return ok, ", ".join(f"n={n}: {r:.4f} >= {b:.4f}" for n, r, b in zip(ns, ratios, bounds))


def run_checks(seed: int = 0, samples: int = 100_000) -> list[CheckResult]:
    rng = lambda *k: make_rng(seed, 7, *k)
    return [
        _timed("closed forms at cv=1", check_closed_forms),
        _timed("price floor and discount monotonicity", lambda: check_price_floor(rng(1))),
        _timed("key inequality on random inputs", lambda: check_key_inequality(rng(2))),
        _timed("constant scan", check_tau_scan),
        _timed("two-item equal-revenue example", check_er_pair),
        _timed("variance of flat revenue curves", check_flat_revenue_variance),
        _timed("one-sided Chebyshev on samples", lambda: check_cantelli(rng(3), max(10 * samples, 10_000))),
        _timed("bundle guarantee on random instances", lambda: check_bundle_guarantee(rng(4), 20, samples, seed)),
        _timed("many-item guarantee, iid uniform", check_many_item_bound),
    ]
