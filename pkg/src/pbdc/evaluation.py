"""Expected-profit evaluation: Monte Carlo, grid convolution and exact enumeration."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import (
    Family,
    GridPmf,
    Instance,
    MarginalSpec,
    TAIL_QUANTILE,
    _tail,
    to_grid,
)
from .mechanisms import buyer_outcomes, welfare_components

DEFAULT_SAMPLES = 100_000
GRID_BINS = 4096
MAX_SUPPORT = 1_000_000


class SupportTooLarge(ValueError):
    pass


class Method(str, enum.Enum):
    MONTE_CARLO = "MonteCarlo"
    CONVOLUTION = "Convolution"
    EXACT = "ExactDiscrete"


@dataclass(frozen=True)
class ProfitEstimate:
    mean: float
    std_error: float
    method: Method
    samples: int | None = None
    seed: object = None
    step: float | None = None

    def to_record(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "method": self.method.value,
            "samples": self.samples,
            "seed": self.seed,
            "step": self.step,
        }


def make_rng(seed, *keys) -> np.random.Generator:
    """Generator for ``(seed, *keys)``; distinct key tuples give independent streams.

    The stream depends only on the key tuple, never on call order, so work can
    be split across processes without changing any draw.
    """
    if isinstance(seed, (tuple, list)):
        base, extra = int(seed[0]), tuple(int(k) for k in seed[1:])
    else:
        base, extra = int(seed), ()
    ss = np.random.SeedSequence(base, spawn_key=extra + tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def draw_valuations(instance: Instance, samples: int, seed, *keys) -> np.ndarray:
    return instance.sample(make_rng(seed, *keys), samples)


def profits_on_draws(prices, X, costs) -> np.ndarray:
    Q, pay = buyer_outcomes(prices, X, costs)
    return pay - Q @ np.asarray(costs, dtype=float)


def summarize_on_draws(prices, X, costs, weights=None) -> dict:
    """Profit and mean welfare split of ``prices`` on fixed draws.

    With ``weights`` (probabilities summing to 1) the draws are treated as an
    exact discrete distribution and the standard error is zero.
    """
    Q, pay = buyer_outcomes(prices, X, costs)
    ps, cs, dwl, oil, w = welfare_components(Q, pay, X, costs)
    resid = np.abs(ps + cs + dwl + oil - w)
    if weights is None:
        mean = lambda a: float(a.mean())
        se = float(ps.std(ddof=1) / np.sqrt(len(ps))) if len(ps) > 1 else 0.0
    else:
        wts = np.asarray(weights, dtype=float)
        mean = lambda a: float(a @ wts)
        se = 0.0
    return {
        "profit": mean(ps),
        "std_error": se,
        "producer_surplus": mean(ps),
        "consumer_surplus": mean(cs),
        "deadweight_loss": mean(dwl),
        "overinclusion_loss": mean(oil),
        "welfare": mean(w),
        "max_residual": float(resid.max()) if len(resid) else 0.0,
    }


def mc_profit(prices, instance: Instance, samples: int = DEFAULT_SAMPLES, seed=0) -> ProfitEstimate:
    """Sample-mean profit with its standard error; fixed by ``seed``."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    X = draw_valuations(instance, samples, seed)
    prof = profits_on_draws(prices, X, instance.costs)
    se = float(prof.std(ddof=1) / np.sqrt(samples))
    return ProfitEstimate(float(prof.mean()), se, Method.MONTE_CARLO, samples, seed)


# ---------------------------------------------------------------------------
# discrete instances


@dataclass(frozen=True)
class DiscreteInstance:
    """Product of finite marginals; ``values[i]`` and ``probs[i]`` describe item ``i``."""

    values: tuple
    probs: tuple
    costs: tuple

    def __post_init__(self):
        vals = tuple(tuple(float(v) for v in vs) for vs in self.values)
        prs = tuple(tuple(float(p) for p in ps) for ps in self.probs)
        costs = tuple(float(c) for c in self.costs)
        if not (len(vals) == len(prs) == len(costs)) or not vals:
            raise ValueError("values, probs and costs must have the same positive length")
        for vs, ps in zip(vals, prs):
            if len(vs) != len(ps) or not vs:
                raise ValueError("each item needs matching values and probabilities")
            if any(p < 0 for p in ps) or abs(sum(ps) - 1.0) > 1e-12:
                raise ValueError("item probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "probs", prs)
        object.__setattr__(self, "costs", costs)

    @classmethod
    def iid(cls, pairs, n, cost=0.0) -> "DiscreteInstance":
        v, p = zip(*pairs)
        return cls((v,) * n, (p,) * n, (cost,) * n)

    @classmethod
    def from_instance(cls, instance: Instance) -> "DiscreteInstance":
        vals, prs = [], []
        for it in instance.items:
            if it.family is not Family.DISCRETE:
                raise TypeError("every item must have point-mass marginals")
            atoms = it.atoms()
            vals.append(tuple(v for v, _ in atoms))
            prs.append(tuple(p for _, p in atoms))
        return cls(tuple(vals), tuple(prs), tuple(instance.costs))

    def to_instance(self) -> Instance:
        return Instance(tuple(
            MarginalSpec.discrete(list(zip(v, p)), c) for v, p, c in zip(self.values, self.probs, self.costs)
        ))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def support_size(self) -> int:
        return int(np.prod([len(v) for v in self.values]))

    def support(self, limit: int = MAX_SUPPORT):
        """All joint types ``X`` (T x n) with probabilities ``pi`` (T,)."""
        if self.support_size > limit:
            raise SupportTooLarge(f"joint support has {self.support_size} types (limit {limit})")
        idx = np.array(list(itertools.product(*[range(len(v)) for v in self.values])), dtype=int)
        X = np.column_stack([np.array(v)[idx[:, i]] for i, v in enumerate(self.values)])
        pi = np.prod(np.column_stack([np.array(p)[idx[:, i]] for i, p in enumerate(self.probs)]), axis=1)
        return X, pi


def exact_profit_discrete(prices, instance: DiscreteInstance) -> ProfitEstimate:
    X, pi = instance.support()
    prof = profits_on_draws(prices, X, instance.costs)
    return ProfitEstimate(float(prof @ pi), 0.0, Method.EXACT)


# ---------------------------------------------------------------------------
# single-price bundle curves


def _exact_sum_distribution(parts: Sequence[dict], limit=MAX_SUPPORT):
    dist = {0.0: 1.0}
    for part in parts:
        nxt: dict[float, float] = {}
        for a, pa in dist.items():
            for b, pb in part.items():
                key = round(a + b, 12)
                nxt[key] = nxt.get(key, 0.0) + pa * pb
        if len(nxt) > limit:
            return None
        dist = nxt
    pts = np.array(sorted(dist))
    return pts, np.array([dist[p] for p in pts])


class BundleCurve:
    """Expected profit of a single bundle price, for PB or PBDC.

    With ``W`` the sum of per-item margins (``(x - c)^+`` for PBDC, ``x - c``
    for PB) the profit at bundle price ``P`` is ``m * P[W >= m]`` where
    ``m = P - sum(c)``. ``W`` is computed exactly when every marginal is a
    finite point-mass law, and otherwise by convolving per-item grids while
    keeping atoms separate from the spread-out part.
    """

    def __init__(self, instance: Instance, kind: str = "PBDC", step: float | None = None):
        kind = str(getattr(kind, "value", kind)).upper()
        if kind not in ("PB", "PBDC"):
            raise ValueError("bundle curves exist for PB and PBDC only")
        self.kind = kind
        self.instance = instance
        self.total_cost = float(instance.costs.sum())
        positive = kind == "PBDC"
        self.exact = all(it.family is Family.DISCRETE for it in instance.items)
        if self.exact:
            parts = []
            for it in instance.items:
                d: dict[float, float] = {}
                for v, p in it.atoms():
                    y = max(v - it.cost, 0.0) if positive else v - it.cost
                    d[round(y, 12)] = d.get(round(y, 12), 0.0) + p
                parts.append(d)
            res = _exact_sum_distribution(parts)
            if res is None:
                self.exact = False
            else:
                self.points, self.masses = res
                self.tail = np.cumsum(self.masses[::-1])[::-1]
                self.step = None
                return
        self._build_grid(positive, step)

    def _build_grid(self, positive, step):
        items = self.instance.items
        lo = [(0.0 if positive else it.support()[0] - it.cost) for it in items]
        hi = [max(it.support()[1] - it.cost, 0.0) if positive else it.support()[1] - it.cost for it in items]
        if step is None:
            span = sum(max(h, 0.0) for h in hi) if positive else sum(h - l for h, l in zip(hi, lo))
            step = max(span, 1e-9) / GRID_BINS
        self.step = h = float(step)
        total = atoms = None
        origin = 0.0
        for it, l, u in zip(items, lo, hi):
            g = to_grid(it, h, u, rounding="nearest", positive_part=positive, floor=None if positive else l)
            a = np.zeros_like(g.masses)
            for v, p in it.atoms():
                y = max(v - it.cost, 0.0) if positive else v - it.cost
                if positive and y == 0.0:
                    continue
                k = int(np.clip(round((y - g.origin) / h), 0, len(a) - 1))
                a[k] += p
            if positive:
                a[0] += 1.0 - float(_tail(it, it.cost, strict=True))
            a = np.minimum(a, g.masses)
            if total is None:
                total, atoms, origin = g.masses, a, g.origin
            else:
                total = np.convolve(total, g.masses)
                atoms = np.convolve(atoms, a)
                origin += g.origin
        self.origin = origin
        self.grid_masses = total / total.sum()
        self.atom_masses = atoms
        cont = np.clip(self.grid_masses - atoms, 0.0, None)
        self.cont_tail = np.concatenate([np.cumsum(cont[::-1])[::-1], [0.0]])
        self.atom_tail = np.concatenate([np.cumsum(atoms[::-1])[::-1], [0.0]])
        self.points = origin + h * np.arange(len(total))

    # -- survival and profit ---------------------------------------------------------
    def survival(self, t):
        """P[W >= t]."""
        t = np.asarray(t, dtype=float)
        if self.exact:
            k = np.searchsorted(self.points, t - 1e-12, side="left")
            out = np.concatenate([self.tail, [0.0]])[k]
        else:
            h = self.step
            # atoms sit exactly on grid points
            ka = np.clip(np.ceil((t - self.origin) / h - 1e-9), 0, len(self.points)).astype(int)
            atom_part = self.atom_tail[ka]
            # spread-out mass of bin k covers (x_k - h/2, x_k + h/2]
            u = (t - self.origin) / h + 0.5
            k = np.clip(np.floor(u), 0, len(self.points)).astype(int)
            frac = np.clip(u - k, 0.0, 1.0)
            k1 = np.minimum(k + 1, len(self.points))
            cont = self.cont_tail[k] * (1 - frac) + self.cont_tail[k1] * frac
            cont = np.where(u <= 0, self.cont_tail[0], cont)
            out = atom_part + cont
        return float(out) if out.ndim == 0 else out

    def margin_profit(self, m):
        m = np.asarray(m, dtype=float)
        out = m * self.survival(m)
        return float(out) if out.ndim == 0 else out

    def __call__(self, price):
        return self.margin_profit(np.asarray(price, dtype=float) - self.total_cost)

    def candidate_margins(self) -> np.ndarray:
        """Margins where the profit can peak: support points (exact) or grid points and bin edges."""
        if self.exact:
            return self.points[self.points >= 0]
        h = self.step
        pts = np.concatenate([self.points, self.points + 0.5 * h])
        return pts[pts >= 0]

    def estimate(self, price) -> ProfitEstimate:
        return ProfitEstimate(self(price), 0.0, Method.EXACT if self.exact else Method.CONVOLUTION,
                              step=self.step)


def bundle_profit_curve(instance: Instance, step: float | None = None, kind: str = "PBDC") -> BundleCurve:
    return BundleCurve(instance, kind, step)
