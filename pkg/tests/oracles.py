"""Independent reference implementations used to check the package.

Everything here is written directly from the scheme definitions in plain
Python loops (or scipy's HiGHS for the LP) and shares no code with the
vectorized paths under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import optimize

TOL = 1e-9


def subsets(n):
    for r in range(1, n + 1):
        for s in itertools.combinations(range(n), r):
            yield frozenset(s)


def oracle_menu(kind, params, n, costs=None):
    """``[(subset, payment)]`` offered by a scheme, from its definition."""
    costs = [0.0] * n if costs is None else list(costs)
    full = frozenset(range(n))
    if kind == "PC":
        return [(S, sum(params[i] for i in S)) for S in subsets(n)]
    if kind == "PB":
        return [(full, params[0])]
    if kind == "PBD":
        P0, refunds = params[0], params[1:]
        return [(S, P0 - sum(refunds[i] for i in range(n) if i not in S)) for S in subsets(n)]
    if kind == "PBDC":
        P0 = params[0]
        return [(S, P0 - sum(costs[i] for i in range(n) if i not in S)) for S in subsets(n)]
    if kind == "BSP":
        return [(S, params[len(S) - 1]) for S in subsets(n)]
    if kind == "MB":
        p, bundle = params[:n], params[n]
        return [(S, min(bundle, sum(p)) if S == full else sum(p[i] for i in S)) for S in subsets(n)]
    if kind == "DET":
        return [(S, params[sum(1 << i for i in S) - 1]) for S in subsets(n)]
    raise ValueError(kind)


def oracle_choice(menu, x, costs):
    """(subset, payment) picked by a buyer with values ``x``: max surplus, then
    max firm profit; no purchase only if nothing at least as good pays more."""
    best_surplus = max([0.0] + [sum(x[i] for i in S) - s for S, s in menu])
    cands = [(frozenset(), 0.0, 0.0)] if best_surplus <= TOL else []
    for S, s in menu:
        u = sum(x[i] for i in S) - s
        if u >= best_surplus - TOL:
            cands.append((S, s, s - sum(costs[i] for i in S)))
    top = max(c[2] for c in cands)
    S, s, _ = next(c for c in cands if c[2] == top)
    return S, s


def oracle_profit(menu, x, costs):
    S, s = oracle_choice(menu, x, costs)
    return s - sum(costs[i] for i in S)


def oracle_welfare(S, s, x, costs):
    """Producer, consumer, deadweight and overinclusion parts for one purchase."""
    ps = s - sum(costs[i] for i in S)
    cs = sum(x[i] for i in S) - s
    dwl = sum(x[i] - costs[i] for i in range(len(x)) if i not in S and x[i] > costs[i])
    oil = sum(costs[i] - x[i] for i in S if x[i] < costs[i])
    return ps, cs, dwl, oil


def joint_support(values, probs):
    for combo in itertools.product(*[list(zip(v, p)) for v, p in zip(values, probs)]):
        yield [v for v, _ in combo], math.prod(p for _, p in combo)


def oracle_expected_profit(kind, params, values, probs, costs):
    n = len(values)
    menu = oracle_menu(kind, params, n, costs)
    return sum(pr * oracle_profit(menu, x, costs) for x, pr in joint_support(values, probs))


def oracle_best_pc(values, probs, costs):
    """Optimal item prices by trying every support point of every item."""
    total = 0.0
    for v, p, c in zip(values, probs, costs):
        best = 0.0
        for price in v:
            best = max(best, (price - c) * sum(q for w, q in zip(v, p) if w >= price))
        total += best
    return total


def oracle_best_pbdc(values, probs, costs):
    """Optimal single margin for the cost-refund bundle: the buyer pays margin plus
    the costs of the items worth at least their cost, so only the sums of
    positive margins matter."""
    dist = {0.0: 1.0}
    for v, p, c in zip(values, probs, costs):
        nxt = {}
        for a, pa in dist.items():
            for w, q in zip(v, p):
                key = round(a + max(w - c, 0.0), 12)
                nxt[key] = nxt.get(key, 0.0) + pa * q
        dist = nxt
    best = 0.0
    for m in dist:
        best = max(best, m * sum(q for w, q in dist.items() if w >= m - 1e-12))
    return best


def oracle_myerson(values, probs, cost=0.0):
    return max([0.0] + [(t - cost) * sum(q for w, q in zip(values, probs) if w >= t) for t in values])


def oracle_lp_value(X, pi, costs):
    """Optimal lottery-menu profit on a finite type space via scipy HiGHS."""
    X = np.asarray(X, dtype=float)
    pi = np.asarray(pi, dtype=float)
    c = np.asarray(costs, dtype=float)
    T, n = X.shape
    nv = T * (n + 1)  # per type: q_1..q_n, s

    def qi(t, i):
        return t * (n + 1) + i

    def si(t):
        return t * (n + 1) + n

    obj = np.zeros(nv)
    for t in range(T):
        obj[si(t)] = -pi[t]
        for i in range(n):
            obj[qi(t, i)] = pi[t] * c[i]
    rows, rhs = [], []
    for t in range(T):
        # IR: s_t - q_t . x_t <= 0
        r = np.zeros(nv)
        r[si(t)] = 1.0
        for i in range(n):
            r[qi(t, i)] = -X[t, i]
        rows.append(r)
        rhs.append(0.0)
        for u in range(T):
            if u == t:
                continue
            # IC: q_u . x_t - s_u - (q_t . x_t - s_t) <= 0
            r = np.zeros(nv)
            for i in range(n):
                r[qi(u, i)] += X[t, i]
                r[qi(t, i)] -= X[t, i]
            r[si(u)] -= 1.0
            r[si(t)] += 1.0
            rows.append(r)
            rhs.append(0.0)
    bounds = [(0.0, 1.0) if (k % (n + 1)) < n else (None, None) for k in range(nv)]
    res = optimize.linprog(obj, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return -res.fun


def uniform_pos_part_moments(a, b, c):
    """Mean and variance of (X - c)^+ for X ~ U(a, b), by exact integration."""
    lo = max(a, c)
    if lo >= b:
        return 0.0, 0.0
    w = b - a
    m1 = ((b - c) ** 2 - (lo - c) ** 2) / (2 * w)
    m2 = ((b - c) ** 3 - (lo - c) ** 3) / (3 * w)
    return m1, m2 - m1 * m1


def trap_cost_refund_profit(P):
    """Cost-refund bundle profit for x1 ~ U(0,1) (cost 0), x2 ~ U(0,5) (cost 4.5).

    The buyer pays the margin m = P - 4.5 when x1 + (x2 - 4.5)^+ >= m. The second
    term is 0 with probability 0.9 and otherwise uniform on (0, 0.5).
    """
    from scipy import integrate

    m = P - 4.5
    s1 = lambda t: min(max(1.0 - t, 0.0), 1.0)
    spread = integrate.quad(lambda y: s1(m - y) * 2.0, 0.0, 0.5, points=[m - 1, m], limit=200)[0]
    return m * (0.9 * s1(m) + 0.1 * spread)
