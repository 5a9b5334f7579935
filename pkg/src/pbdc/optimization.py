"""Optimal prices within each scheme, optimal deterministic menus and the lottery LP."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .distributions import Family, Instance, MarginalSpec, _tail, pos_part_moments
from .evaluation import (
    MAX_SUPPORT,
    BundleCurve,
    DiscreteInstance,
    SupportTooLarge,
    make_rng,
)
from .lp import LotteryMenu, optimal_menu_lp
from .mechanisms import (
    BSP,
    PB,
    PBDC,
    PC,
    TIE_TOL,
    FullDeterministic,
    MixedBundling,
    SchemeKind,
    TooManyItems,
    _mask_matrix,
    subset_payment,
)

PC_GRID = 1024
DEFAULT_RESTARTS = 32
MAX_LP_TYPES = 2000
OPT_STREAM = 1  # draws used for searching, kept apart from evaluation draws


@dataclass(frozen=True)
class OptResult:
    prices: object
    value: float
    evaluations: int
    method: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"value": self.value, "evaluations": self.evaluations, **self.method}
        if isinstance(self.prices, LotteryMenu):
            rec["scheme"] = "LP"
        else:
            rec["scheme"] = self.prices.kind.value
            rec["prices"] = self.prices.flat()
        return rec


# ---------------------------------------------------------------------------
# single price per item or per bundle


def _maximize_on_interval(f, lo, hi, tol):
    if hi - lo <= tol:
        x = 0.5 * (lo + hi)
        return x, f(x)
    res = optimize.minimize_scalar(lambda p: -f(p), bounds=(lo, hi), method="bounded",
                                   options={"xatol": tol})
    return float(res.x), -float(res.fun)


def opt_item_price(spec: MarginalSpec, tolerance: float = 1e-9):
    """Best posted price ``p`` for one item: maximizes ``(p - c) P[x >= p]``."""
    c = spec.cost
    lo, hi = spec.support()
    f = lambda p: (p - c) * float(_tail(spec, p, strict=False))
    atoms = [v for v, _ in spec.atoms() if v > c]
    if spec.family is Family.DISCRETE:
        cands = atoms
        evals = len(cands)
        if not cands:
            return c, 0.0, evals
        vals = [f(p) for p in cands]
        k = int(np.argmax(vals))
        return cands[k], max(vals[k], 0.0), evals
    a, b = max(lo, c), hi
    if b <= a:
        return c, 0.0, 1
    grid = np.linspace(a, b, PC_GRID)
    vals = (grid - c) * _tail(spec, grid, strict=False)
    cand = list(zip(grid.tolist(), vals.tolist())) + [(p, f(p)) for p in atoms]
    k = int(np.argmax(vals))
    step = grid[1] - grid[0]
    p_ref, v_ref = _maximize_on_interval(f, max(a, grid[k] - step), min(b, grid[k] + step), tolerance)
    cand.append((p_ref, v_ref))
    p, v = max(cand, key=lambda t: (t[1], -t[0]))
    if v <= 0:
        return c, 0.0, len(cand)
    return p, v, len(cand) + 30


def opt_single_price(kind, instance: Instance, tolerance: float = 1e-9, step: float | None = None) -> OptResult:
    """Optimal PC prices (item by item), or the optimal PB / PBDC bundle price."""
    kind = SchemeKind(getattr(kind, "value", kind))
    if isinstance(instance, DiscreteInstance):
        instance = instance.to_instance()
    if kind is SchemeKind.PC:
        out = [opt_item_price(it, tolerance) for it in instance.items]
        prices = PC(tuple(max(p, 0.0) for p, _, _ in out))
        return OptResult(prices, float(sum(v for _, v, _ in out)), sum(e for _, _, e in out),
                         {"method": "grid+bounded-scalar"})
    if kind not in (SchemeKind.PB, SchemeKind.PBDC):
        raise ValueError("single-price optimization covers PC, PB and PBDC")
    curve = BundleCurve(instance, kind.value, step)
    m, v, evals = _best_margin(curve, tolerance)
    total = curve.total_cost
    prices = PB(total + m) if kind is SchemeKind.PB else PBDC(total + m, tuple(instance.costs))
    meth = {"method": "exact-support" if curve.exact else "convolution", "step": curve.step}
    return OptResult(prices, v, evals, meth)


def _best_margin(curve: BundleCurve, tolerance):
    cands = curve.candidate_margins()
    if len(cands) == 0:
        return 0.0, 0.0, 0
    vals = curve.margin_profit(cands)
    k = int(np.argmax(vals))
    m, v = float(cands[k]), float(vals[k])
    evals = len(cands)
    if not curve.exact:
        h = curve.step
        lo, hi = max(0.0, m - h), m + h
        # keep the refinement between atoms so jumps are not straddled
        pts = curve.points[(curve.points > lo) & (curve.points < hi)]
        segs = [lo, *pts.tolist(), hi]
        for a, b in zip(segs[:-1], segs[1:]):
            x, fx = _maximize_on_interval(lambda t: curve.margin_profit(t), a, b, tolerance)
            evals += 30
            if fx > v:
                m, v = x, fx
    if v <= 0:
        return 0.0, 0.0, evals
    return m, v, evals


# ---------------------------------------------------------------------------
# search over explicit per-entry prices on fixed draws


class EntryPricing:
    """Profit of per-entry prices on a fixed weighted sample.

    Entry ``k`` gives the buyer value ``U[:, k]`` and costs the firm
    ``C[:, k]``; both may vary by draw (for size-based pricing the entry "k
    items" means the buyer's best k items). Choice follows the menu rule: max
    surplus, firm-favourable ties, then lowest index, no purchase first.
    """

    def __init__(self, U, C, weights):
        self.U = np.asarray(U, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        self.N, self.K = self.U.shape
        self.evaluations = 0
        self._UT = self._CT = None

    def _choose(self, P, exclude=None):
        S = self.U - P
        prof = P - self.C
        if exclude is not None:
            S = S.copy()
            S[:, exclude] = -np.inf
        best = np.maximum(S.max(axis=1), 0.0)
        score = np.where(S >= best[:, None] - TIE_TOL, prof, -np.inf)
        k = np.argmax(score, axis=1)
        chosen = score[np.arange(self.N), k]
        # no purchase wins unless some tied entry is strictly more profitable
        buy = chosen > 0
        if not buy.all():
            zero_ok = best <= TIE_TOL
            buy |= ~zero_ok
        k = np.where(buy, k, -1)
        surplus = np.where(buy, S[np.arange(self.N), np.maximum(k, 0)], 0.0)
        profit = np.where(buy, prof[np.arange(self.N), np.maximum(k, 0)], 0.0)
        return k, surplus, profit

    def value(self, P) -> float:
        """Same choice rule as ``_choose`` with only the profit kept.

        Works column by column on transposed copies, which is several times
        faster than row-wise reductions over a handful of entries.
        """
        self.evaluations += 1
        if self._UT is None:
            self._UT = np.ascontiguousarray(self.U.T)
            self._CT = np.ascontiguousarray(self.C.T)
        P = np.asarray(P, dtype=float)
        S = self._UT - P[:, None]
        best = np.maximum.reduce(S, axis=0)
        np.maximum(best, 0.0, out=best)
        thr = best - TIE_TOL
        chosen = np.full(self.N, -np.inf)
        for k in range(self.K):
            np.maximum(chosen, np.where(S[k] >= thr, P[k] - self._CT[k], -np.inf), out=chosen)
        profit = np.where((chosen > 0) | (best > TIE_TOL), chosen, 0.0)
        return float(self.w @ profit)

    def line_search(self, P, k, lo, hi):
        """Best value of entry ``k``'s price in ``[lo, hi]`` with the others fixed.

        Draw ``i`` takes entry ``k`` exactly when its price is at most
        ``t_i = U_ik - (best alternative surplus)``, so the profit is piecewise
        linear in the price and peaks at a threshold or an end point.
        """
        P = np.asarray(P, dtype=float)
        _, alt_s, alt_p = self._choose(P, exclude=k)
        t = self.U[:, k] - alt_s
        c = self.C[:, k]
        order = np.argsort(-t, kind="stable")
        ts, ws, cs, ap = t[order], self.w[order], c[order], alt_p[order]
        W = np.cumsum(ws)
        WC = np.cumsum(ws * cs)
        AP = np.cumsum(ws * ap)
        total_alt = AP[-1]
        # any price above every threshold sells nothing, so cap an open upper end
        hi = min(hi, max(ts[0], lo) + 1.0)
        # candidate prices: thresholds inside [lo, hi] plus both ends
        inside = (ts >= lo) & (ts <= hi)
        cand = np.concatenate([ts[inside], [lo, hi]])
        # j(p): number of draws with t >= p
        j = np.searchsorted(-ts, -cand, side="right")
        Wj = np.where(j > 0, W[np.maximum(j - 1, 0)], 0.0)
        WCj = np.where(j > 0, WC[np.maximum(j - 1, 0)], 0.0)
        APj = np.where(j > 0, AP[np.maximum(j - 1, 0)], 0.0)
        f = cand * Wj - WCj + (total_alt - APj)
        top = np.argsort(-f, kind="stable")[:3]
        return cand[top]

    def coordinate_pass(self, P, val, bounds_fn):
        improved = False
        for k in range(self.K):
            lo, hi = bounds_fn(P, k)
            if hi < lo:
                continue
            for p in self.line_search(P, k, lo, hi):
                for q in (p, p - 2 * TIE_TOL):
                    if not lo <= q <= hi:
                        continue
                    Q = P.copy()
                    Q[k] = q
                    v = self.value(Q)
                    if v > val + 1e-12:
                        P, val, improved = Q, v, True
        return P, val, improved


def _pattern_search(engine: EntryPricing, P, val, step, min_step, moves_fn):
    while step >= min_step:
        improved = False
        for Q in moves_fn(P, step):
            v = engine.value(Q)
            if v > val + 1e-12:
                P, val, improved = Q, v, True
                break
        if not improved:
            step *= 0.5
    return P, val


def _local_search(engine, P, bounds_fn, moves_fn, step, min_step, max_rounds=50):
    val = engine.value(P)
    for _ in range(max_rounds):
        P, val, _ = engine.coordinate_pass(P, val, bounds_fn)
        P2, val2 = _pattern_search(engine, P, val, step, min_step, moves_fn)
        if val2 <= val + 1e-12:
            break
        P, val = P2, val2
        step = max(min_step, step * 0.25)
    return P, val


def _best_of(results):
    """Deterministic merge: highest value, then lexicographically smallest prices."""
    return max(results, key=lambda r: (r[1], tuple(-x for x in r[0])))


# ---------------------------------------------------------------------------
# sample construction


def search_sample(instance, samples: int, seed):
    """Draws and weights for price search: the exact support for small discrete
    instances, otherwise Monte Carlo draws from the search stream."""
    if isinstance(instance, DiscreteInstance):
        X, pi = instance.support()
        return X, pi, np.asarray(instance.costs), True
    if all(it.family is Family.DISCRETE for it in instance.items):
        d = DiscreteInstance.from_instance(instance)
        if d.support_size <= min(MAX_SUPPORT, max(samples, 1)):
            X, pi = d.support()
            return X, pi, np.asarray(d.costs), True
    X = instance.sample(make_rng(seed, OPT_STREAM), samples)
    return X, np.full(samples, 1.0 / samples), instance.costs, False


def _welfare_scale(X, w, c):
    return max(float(w @ np.maximum(X - c, 0.0).sum(axis=1)), 1e-6)


def _as_instance(instance):
    return instance.to_instance() if isinstance(instance, DiscreteInstance) else instance


# ---------------------------------------------------------------------------
# bundle-size pricing


def size_entries(X, c):
    """Values and costs of the best k items for every draw (k = 1..n)."""
    C = np.broadcast_to(c, X.shape)
    order = np.lexsort((C, -X), axis=-1)
    U = np.cumsum(np.take_along_axis(X, order, axis=1), axis=1)
    Cc = np.cumsum(np.take_along_axis(np.ascontiguousarray(C), order, axis=1), axis=1)
    return U, Cc


def _bsp_bounds(P, k):
    lo = P[k - 1] if k > 0 else 0.0
    hi = P[k + 1] if k + 1 < len(P) else np.inf
    return lo, hi


def _bsp_moves(P, step):
    n = len(P)
    for k in range(n):
        for sgn in (1.0, -1.0):
            Q = P.copy()
            Q[k:] += sgn * step  # shift a whole upper block, keeps order
            if Q[0] >= 0 and np.all(np.diff(Q) >= 0):
                yield Q
            Q = P.copy()
            Q[k] = max(Q[k] + sgn * step, 0.0)
            Q = _project_monotone(Q, k)
            yield Q


def _project_monotone(Q, k):
    Q = Q.copy()
    Q[k + 1:] = np.maximum(Q[k + 1:], Q[k])
    Q[:k] = np.minimum(Q[:k], Q[k])
    return np.maximum(Q, 0.0)


def opt_bsp(instance, restarts: int = 8, samples: int = 100_000, seed=0, warm_starts=()) -> OptResult:
    """Multi-start coordinate ascent for size prices ``P_1 <= ... <= P_n``."""
    inst = _as_instance(instance)
    n = inst.n
    if n > 10:
        raise TooManyItems("size-price search supports n <= 10")
    X, w, c, exact = search_sample(instance, samples, seed)
    U, Cc = size_entries(X, c)
    eng = EntryPricing(U, Cc, w)
    scale = _welfare_scale(X, w, c)
    starts = [np.maximum.accumulate(np.maximum(np.asarray(s, dtype=float), 0.0)) for s in warm_starts]
    pb = opt_single_price(SchemeKind.PB, inst).prices
    starts.append(np.full(n, pb.price))
    pc = opt_single_price(SchemeKind.PC, inst).prices
    starts.append(np.cumsum(np.sort(pc.prices)))
    pbdc = opt_single_price(SchemeKind.PBDC, inst).prices
    starts.append(np.maximum.accumulate(pbdc.margin + np.cumsum(np.sort(c)[::-1])))
    rng = make_rng(seed, OPT_STREAM, 1)
    while len(starts) < restarts:
        starts.append(np.sort(rng.random(n)) * 1.5 * (scale + c.sum()))
    results = []
    for s in starts[:max(restarts, 3)]:
        P, v = _local_search(eng, _project_monotone(s, 0), _bsp_bounds, _bsp_moves,
                             0.1 * scale, 1e-3 * scale)
        results.append((P, v))
    P, v = _best_of(results)
    return OptResult(BSP(tuple(P)), v, eng.evaluations,
                     {"method": "coordinate+pattern", "samples": len(w), "exact": exact,
                      "seed": seed, "restarts": len(results)})


# ---------------------------------------------------------------------------
# full deterministic menus and mixed bundling


def _det_bounds(P, k):
    return 0.0, np.inf


def _det_moves(P, step):
    for k in range(len(P)):
        for sgn in (1.0, -1.0):
            Q = P.copy()
            Q[k] = max(Q[k] + sgn * step, 0.0)
            yield Q


def scheme_subset_prices(prices, n, cap):
    """Subset prices (bitmask order) of any deterministic scheme; unoffered subsets get ``cap``."""
    out = []
    for m in range(1, 1 << n):
        s = subset_payment(prices, m, n)
        out.append(cap if s is None else min(s, cap))
    return np.array(out)


def opt_mixed_bundling(instance, samples: int = 100_000, seed=0) -> OptResult:
    """Pattern search over item prices and the bundle price."""
    inst = _as_instance(instance)
    n = inst.n
    X, w, c, exact = search_sample(instance, samples, seed)
    A = _mask_matrix(n)[1:]
    eng = EntryPricing(X @ A.T, np.broadcast_to(A @ c, (len(w), len(A))), w)
    scale = _welfare_scale(X, w, c)
    cap = 10.0 * (float(X.max(initial=0.0)) * n + 1.0)

    def value(theta):
        return eng.value(scheme_subset_prices(MixedBundling(theta[:n], theta[n]), n, cap))

    pc = np.array(opt_single_price(SchemeKind.PC, inst).prices.prices)
    pb = opt_single_price(SchemeKind.PB, inst).prices.price
    starts = [np.append(pc * a, pb * b) for a in (1.0, 1.5, 2.0) for b in (1.0, 1.25, 1.5)]
    results = []
    for theta in starts:
        val = value(theta)
        step = 0.1 * scale
        while step >= 1e-3 * scale:
            improved = False
            for k in range(n + 1):
                for sgn in (1.0, -1.0):
                    cand = theta.copy()
                    cand[k] = max(cand[k] + sgn * step, 0.0)
                    v = value(cand)
                    if v > val + 1e-12:
                        theta, val, improved = cand, v, True
                        break
                if improved:
                    break
            if not improved:
                step *= 0.5
        results.append((theta, val))
    theta, val = _best_of(results)
    return OptResult(MixedBundling(theta[:n], theta[n]), val, eng.evaluations,
                     {"method": "pattern", "samples": len(w), "exact": exact, "seed": seed})


def opt_deterministic(instance, restarts: int = DEFAULT_RESTARTS, samples: int = 100_000, seed=0,
                      warm_starts=()) -> OptResult:
    """Best price for every non-empty subset (n <= 3) by multi-start search.

    Starts: optima of PC, PB, PBDC, BSP and mixed bundling written as subset
    prices, then random price vectors from the restart streams.
    """
    inst = _as_instance(instance)
    n = inst.n
    if n > 3:
        raise TooManyItems("full deterministic menu search supports n <= 3")
    X, w, c, exact = search_sample(instance, samples, seed)
    A = _mask_matrix(n)[1:]
    eng = EntryPricing(X @ A.T, np.broadcast_to(A @ c, (len(w), len(A))), w)
    scale = _welfare_scale(X, w, c)
    cap = float(X.max(initial=0.0)) * n + c.sum() + 1.0
    warm = [opt_single_price(SchemeKind.PC, inst).prices,
            opt_single_price(SchemeKind.PB, inst).prices,
            opt_single_price(SchemeKind.PBDC, inst).prices,
            opt_bsp(instance, restarts=4, samples=samples, seed=seed).prices,
            opt_mixed_bundling(instance, samples=samples, seed=seed).prices]
    starts = [scheme_subset_prices(p, n, cap) for p in warm]
    starts += [np.asarray(s, dtype=float) for s in warm_starts]
    means = np.array([w @ np.maximum(X[:, i] - c[i], 0.0) for i in range(n)])
    r = 0
    while len(starts) < restarts:
        rng = make_rng(seed, OPT_STREAM, 2, r)
        starts.append(A @ c + rng.random(len(A)) * 1.5 * (A @ means))
        r += 1
    results = []
    for s in starts:
        P, v = _local_search(eng, np.maximum(s, 0.0), _det_bounds, _det_moves, 0.1 * scale, 1e-3 * scale)
        results.append((P, v))
    P, v = _best_of(results)
    return OptResult(FullDeterministic(tuple(P)), v, eng.evaluations,
                     {"method": "multistart-pattern", "samples": len(w), "exact": exact,
                      "seed": seed, "restarts": len(results)})


# ---------------------------------------------------------------------------
# optimal lottery menu


def lp_opt_discrete(instance: DiscreteInstance) -> OptResult:
    """Optimal mechanism value (lotteries allowed) on a finite type space."""
    if not isinstance(instance, DiscreteInstance):
        instance = DiscreteInstance.from_instance(instance)
    if instance.support_size > MAX_LP_TYPES:
        raise SupportTooLarge(f"{instance.support_size} types exceeds the LP limit of {MAX_LP_TYPES}")
    X, pi = instance.support()
    menu = optimal_menu_lp(X, pi, np.asarray(instance.costs))
    if menu.max_ic_violation() > 1e-7 or menu.max_ir_violation() > 1e-7:
        raise RuntimeError("LP solution violates incentive constraints")
    return OptResult(menu, menu.value, menu.iterations, {"method": "dual-revised-simplex", "types": len(pi)})


def optimize_scheme(kind, instance, samples: int = 100_000, seed=0, restarts: int | None = None) -> OptResult:
    kind = SchemeKind(getattr(kind, "value", kind))
    if kind in (SchemeKind.PC, SchemeKind.PB, SchemeKind.PBDC):
        return opt_single_price(kind, instance)
    if kind is SchemeKind.BSP:
        return opt_bsp(instance, restarts or 8, samples, seed)
    if kind is SchemeKind.MB:
        return opt_mixed_bundling(instance, samples, seed)
    if kind is SchemeKind.DET:
        return opt_deterministic(instance, restarts or DEFAULT_RESTARTS, samples, seed)
    raise ValueError(f"no optimizer for {kind.value}")
