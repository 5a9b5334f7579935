"""Dense simplex solvers and the optimal-lottery-menu LP for discrete instances.

``DenseSimplex`` is a plain tableau method for ``max c.z, A z <= b, z >= 0``
with ``b >= 0``. The menu LP has ``T^2`` incentive constraints, far too many
to write down, so it is solved through its dual with a revised simplex whose
columns are priced implicitly: the reduced cost of the column belonging to the
constraint "type t does not prefer type s's entry" is minus that constraint's
violation under the current multipliers, which are the menu itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
DEGENERATE_STREAK = 50


class LPError(RuntimeError):
    pass


class Unbounded(LPError):
    pass


class DenseSimplex:
    """Tableau simplex for ``max c.z, A z <= b, z >= 0, b >= 0``.

    Entering variables follow the largest reduced cost; after a run of
    degenerate pivots the rule switches to Bland's lowest-index choice, which
    cannot cycle, until the objective moves again.
    """

    def __init__(self, c, A, b, max_iter: int = 200_000):
        c = np.asarray(c, dtype=float)
        A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, len(c))
        b = np.asarray(b, dtype=float).reshape(-1)
        if np.any(b < 0):
            raise LPError("right-hand side must be non-negative")
        m, nv = A.shape
        self.n_struct = nv
        self.body = np.hstack([A, np.eye(m)])
        self.rhs = b.copy()
        self.cost = np.concatenate([c, np.zeros(m)])
        self.red = self.cost.copy()
        self.basis = np.arange(nv, nv + m)
        self.max_iter = max_iter
        self.iterations = 0

    @property
    def m(self):
        return self.body.shape[0]

    def objective(self) -> float:
        return float(self.cost[self.basis] @ self.rhs)

    def solution(self) -> np.ndarray:
        z = np.zeros(self.body.shape[1])
        z[self.basis] = self.rhs
        return z[: self.n_struct]

    def _pivot(self, r, j):
        prow = self.body[r] / self.body[r, j]
        prhs = self.rhs[r] / self.body[r, j]
        col = self.body[:, j].copy()
        col[r] = 0.0
        nz = np.flatnonzero(np.abs(col) > 0)
        if len(nz):
            self.body[nz] -= np.outer(col[nz], prow)
            self.rhs[nz] -= col[nz] * prhs
        self.body[r] = prow
        self.rhs[r] = prhs
        self.red -= self.red[j] * prow
        self.red[j] = 0.0
        self.basis[r] = j
        self.iterations += 1
        if self.iterations > self.max_iter:
            raise LPError("iteration limit reached")

    def primal(self):
        streak = 0
        last = self.objective()
        while True:
            d = self.red.copy()
            d[self.basis] = 0.0
            if streak >= DEGENERATE_STREAK:
                cand = np.flatnonzero(d > PIVOT_TOL)
                if len(cand) == 0:
                    return
                j = int(cand[0])
            else:
                j = int(np.argmax(d))
                if d[j] <= PIVOT_TOL:
                    return
            col = self.body[:, j]
            pos = np.flatnonzero(col > PIVOT_TOL)
            if len(pos) == 0:
                raise Unbounded("objective is unbounded")
            ratios = np.maximum(self.rhs[pos], 0.0) / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12]
            r = int(ties[np.argmin(self.basis[ties])])
            self._pivot(r, j)
            obj = self.objective()
            streak = streak + 1 if obj <= last + 1e-12 else 0
            last = max(last, obj)


def solve_lp(c, A, b, max_iter: int = 200_000):
    """Optimal ``(value, z)`` of ``max c.z, A z <= b, z >= 0`` with ``b >= 0``."""
    s = DenseSimplex(c, A, b, max_iter)
    s.primal()
    return s.objective(), s.solution()


# ---------------------------------------------------------------------------
# optimal (lottery) menu on a discrete type space


@dataclass(frozen=True)
class LotteryMenu:
    """Per-type allocation probabilities and payments with the firm's expected profit."""

    types: np.ndarray
    probs: np.ndarray
    allocations: np.ndarray
    payments: np.ndarray
    costs: np.ndarray
    value: float
    iterations: int = 0

    def utilities(self):
        """``U[t, t']``: utility of type ``t`` reporting ``t'``."""
        return self.types @ self.allocations.T - self.payments[None, :]

    def max_ic_violation(self) -> float:
        U = self.utilities()
        return float(np.max(U.max(axis=1) - np.diag(U)))

    def max_ir_violation(self) -> float:
        return float(max(0.0, -np.min(np.diag(self.utilities()))))


class _MenuDual:
    """Revised simplex on the dual of the menu LP.

    Primal variables are ``z = (q, u)``: allocations ``q_t`` in ``[0, 1]^n`` and
    utilities ``u_t >= 0``, maximizing ``sum_t pi_t (q_t.(x_t - c) - u_t)``.
    Dual columns, in index order:

    * ``v_j`` (bound ``q_j <= 1``), cost 1, column ``e_j``
    * ``w_j`` (surplus of dual row ``j``), cost 0, column ``-e_j``
    * ``y_ts`` (incentive row ``t`` vs ``s``), cost 0, column: ``-1`` at ``u_t``,
      ``+1`` at ``u_s``, ``x_t - x_s`` at ``q_s``

    The simplex multipliers of a basis are a candidate ``z``; the reduced cost
    of ``y_ts`` is minus the incentive violation of ``z``, so pricing scans the
    full ``T x T`` violation matrix without materializing any column.
    """

    REFACTOR_EVERY = 250

    def __init__(self, X, pi, costs, max_iter):
        self.X = X
        self.T, self.n = X.shape
        self.nq = self.T * self.n
        self.N = self.nq + self.T
        self.rhs = np.concatenate([(pi[:, None] * (X - costs[None, :])).reshape(-1), -pi])
        self.max_iter = max_iter
        self.iterations = 0
        # starting basis: v_j where the objective coefficient is positive, else w_j
        ids = np.where(self.rhs > 0, np.arange(self.N), self.N + np.arange(self.N))
        ids[self.nq:] = self.N + np.arange(self.nq, self.N)
        self.basis = ids.astype(np.int64)
        self._refactor()

    def column_entries(self, k):
        """Row indices and values of column ``k`` (at most ``n + 2`` nonzeros)."""
        if k < self.N:
            return np.array([k]), np.array([1.0])
        if k < 2 * self.N:
            return np.array([k - self.N]), np.array([-1.0])
        t, s = divmod(k - 2 * self.N, self.T)
        rows = np.concatenate([np.arange(s * self.n, (s + 1) * self.n), [self.nq + t, self.nq + s]])
        vals = np.concatenate([self.X[t] - self.X[s], [-1.0, 1.0]])
        return rows, vals

    def column(self, k):
        col = np.zeros(self.N)
        rows, vals = self.column_entries(k)
        np.add.at(col, rows, vals)
        return col

    def cost(self, k):
        return np.where(np.asarray(k) < self.N, 1.0, 0.0)

    def _refactor(self):
        B = np.column_stack([self.column(k) for k in self.basis])
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.rhs
        self.z = self.cost(self.basis) @ self.Binv

    def reduced_costs(self, z):
        q = z[: self.nq].reshape(self.T, self.n)
        u = z[self.nq:]
        r_v = 1.0 - z[: self.nq]
        r_w = z.copy()
        own = (q * self.X).sum(axis=1)
        # violation[t, s] = u_s - u_t + q_s.(x_t - x_s)
        viol = self.X @ q.T - own[None, :] + u[None, :] - u[:, None]
        np.fill_diagonal(viol, 0.0)
        return r_v, r_w, -viol.reshape(-1)

    def entering(self, z, bland):
        r_v, r_w, r_y = self.reduced_costs(z)
        r = np.concatenate([r_v, np.full(self.T, np.inf), r_w, r_y])
        if bland:
            cand = np.flatnonzero(r < -PIVOT_TOL)
            return (int(cand[0]), r[cand[0]]) if len(cand) else (None, 0.0)
        k = int(np.argmin(r))
        return (k, r[k]) if r[k] < -PIVOT_TOL else (None, 0.0)

    def run(self):
        streak = 0
        since = 0
        while True:
            k, rk = self.entering(self.z, bland=streak >= DEGENERATE_STREAK)
            if k is None:
                if since:
                    self._refactor()
                    since = 0
                    k, rk = self.entering(self.z, bland=True)
                if k is None:
                    return self.z
            rows, vals = self.column_entries(k)
            d = self.Binv[:, rows] @ vals
            pos = np.flatnonzero(d > PIVOT_TOL)
            if len(pos) == 0:
                raise Unbounded("menu dual is unbounded, which cannot happen for a valid instance")
            ratios = np.maximum(self.xB[pos], 0.0) / d[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12]
            r = int(ties[np.argmin(self.basis[ties])])
            piv = d[r]
            self.xB -= best * d
            self.xB[r] = best
            row = self.Binv[r] / piv
            self.z += rk * row
            nz = np.flatnonzero(d)
            self.Binv[nz] -= d[nz, None] * row[None, :]
            self.Binv[r] = row
            self.basis[r] = k
            streak = streak + 1 if best * -rk <= 1e-14 else 0
            self.iterations += 1
            since += 1
            if since >= self.REFACTOR_EVERY:
                self._refactor()
                since = 0
            if self.iterations > self.max_iter:
                raise LPError("iteration limit reached")


def optimal_menu_lp(X, pi, costs, max_iter: int = 1_000_000) -> LotteryMenu:
    """Profit-optimal menu (lotteries allowed) for types ``X`` with probabilities ``pi``.

    Every incentive and participation constraint is enforced; the returned
    menu's payments are ``s_t = q_t.x_t - u_t``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pi = np.asarray(pi, dtype=float)
    c = np.asarray(costs, dtype=float)
    keep = pi > 0
    Xk, pk = X[keep], pi[keep]
    T, n = Xk.shape
    solver = _MenuDual(Xk, pk, c, max_iter)
    z = solver.run()
    q = np.clip(z[: T * n].reshape(T, n), 0.0, 1.0)
    u = np.maximum(z[T * n:], 0.0)
    s = (q * Xk).sum(axis=1) - u
    Q = np.zeros(X.shape)
    S = np.zeros(len(X))
    Q[keep], S[keep] = q, s
    if not keep.all():
        # zero-probability types take their favourite entry (or nothing)
        U = X[~keep] @ q.T - s[None, :]
        choice = np.argmax(np.concatenate([np.zeros((U.shape[0], 1)), U], axis=1), axis=1)
        has = choice > 0
        idx = np.flatnonzero(~keep)
        Q[idx[has]] = q[choice[has] - 1]
        S[idx[has]] = s[choice[has] - 1]
    value = float(pi @ (S - Q @ c))
    return LotteryMenu(X, pi, Q, S, c, value, solver.iterations)
