"""Closed-form revenue guarantees and the numeric checks behind them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .distributions import MarginalSpec, pos_part_moments, survival


class PreconditionViolated(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class ConstraintViolation(ValueError):
    pass


def cantelli(mean, variance, t) -> float:
    """One-sided Chebyshev bound on ``P[X <= mean - t]`` (and ``P[X >= mean + t]``)."""
    if variance < 0 or t < 0:
        raise ValueError("need variance >= 0 and t >= 0")
    if t == 0:
        return 1.0
    return variance / (variance + t * t)


@dataclass(frozen=True)
class BoundReport:
    """Guarantee for selling the bundle with cost refunds at one price.

    ``val_plus`` is the mean welfare ``E[sum (x_i - c_i)^+]`` and ``cv_plus`` its
    coefficient of variation. The bundle margin ``price`` earns at least
    ``fraction_lb * val_plus`` in expectation.
    """

    val_plus: float
    cv_plus: float
    epsilon: float
    price: float
    fraction_lb: float
    fraction_lb_simple: float
    revenue_lb: float
    fraction_direct: float

    def to_record(self) -> dict:
        return dict(self.__dict__)


def discount_fraction(cv: float) -> float:
    """Fraction of mean welfare to give up when pricing the bundle."""
    c23 = cv ** (2.0 / 3.0)
    return 2.0 * c23 / (3.0 * c23 + 2.0)


def bundle_guarantee(val_plus: float, cv_plus: float) -> BoundReport:
    if not val_plus > 0:
        raise PreconditionViolated("mean welfare must be positive")
    if not (cv_plus >= 0 and math.isfinite(cv_plus)):
        raise PreconditionViolated("coefficient of variation must be finite and non-negative")
    C = float(cv_plus)
    c23 = C ** (2.0 / 3.0)
    eps = discount_fraction(C)
    frac = 4.0 / (4.0 + 24.0 * c23 + 45.0 * c23 * c23 + 27.0 * C * C)
    simple = 1.0 - 6.0 * c23
    # the guarantee before simplification: (1 - eps) * (1 - C^2 / (C^2 + eps^2))
    # written as a ratio so tiny C does not underflow eps^2
    direct = 1.0 if C == 0 else (1.0 - eps) / (1.0 + (C / eps) ** 2)
    return BoundReport(
        val_plus=float(val_plus),
        cv_plus=C,
        epsilon=eps,
        price=(1.0 - eps) * val_plus,
        fraction_lb=frac,
        fraction_lb_simple=simple,
        revenue_lb=frac * val_plus,
        fraction_direct=direct,
    )


def many_item_fraction_bound(mu_min: float, sigma_max: float, n: int) -> float:
    """Guaranteed fraction of mean welfare for ``n`` items with per-item mean
    margin at least ``mu_min`` and standard deviation at most ``sigma_max``."""
    if not mu_min > 0:
        raise PreconditionViolated("mu_min must be positive")
    ratio = sigma_max / mu_min
    if not n > ratio * ratio:
        raise PreconditionViolated(f"need n > (sigma/mu)^2 = {ratio * ratio:g}")
    return 1.0 - 6.0 * ratio ** (2.0 / 3.0) * n ** (-1.0 / 3.0)


def welfare_bound_report(instance) -> BoundReport:
    """``bundle_guarantee`` for an instance's exact welfare moments."""
    mean, var = instance.welfare_moments()
    return bundle_guarantee(mean, math.sqrt(var) / mean if mean > 0 else 0.0)


# ---------------------------------------------------------------------------
# the key inequality on tail probabilities


@dataclass(frozen=True)
class KeyInequalityInput:
    p: tuple
    r: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        r = tuple(float(v) for v in self.r)
        if len(p) != len(r) or not p:
            raise ConstraintViolation("p and r must be non-empty and of equal length")
        if any(not (0.0 <= a <= b + 1e-15) for a, b in zip(p, r)):
            raise ConstraintViolation("need 0 <= p_i <= r_i")
        if abs(sum(r) - 1.0) > 1e-12:
            raise ConstraintViolation("r must sum to 1")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)

    @property
    def tau(self) -> float:
        return float(sum(a * (1.0 - b) for a, b in zip(self.p, self.r)))


def key_inequality_sides(p, tau):
    """Probability of at most one success among independent events ``p`` and the
    bound ``(5/4 + tau) e^{-tau}``."""
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    n = len(p)
    prefix = np.concatenate([[1.0], np.cumprod(q)[:-1]]) if n else np.ones(0)
    suffix = np.concatenate([np.cumprod(q[::-1])[::-1][1:], [1.0]]) if n else np.ones(0)
    lhs = float(np.prod(q) + np.sum(p * prefix * suffix))
    rhs = (1.25 + tau) * math.exp(-tau)
    return lhs, rhs


def key_inequality_holds(inp: KeyInequalityInput):
    lhs, rhs = key_inequality_sides(inp.p, inp.tau)
    return lhs, rhs, lhs <= rhs + 1e-12


def random_key_inputs(rng: np.random.Generator, count: int, n_max: int = 10):
    """Random feasible inputs: ``r`` uniform on the simplex, ``p_i`` uniform on ``[0, r_i]``."""
    for _ in range(count):
        n = int(rng.integers(1, n_max + 1))
        r = rng.dirichlet(np.ones(n))
        r /= r.sum()
        p = rng.random(n) * r
        yield p, r


def key_inequality_violations(rng: np.random.Generator, count: int, n_max: int = 10) -> int:
    bad = 0
    for p, r in random_key_inputs(rng, count, n_max):
        tau = float(np.sum(p * (1.0 - r)))
        lhs, rhs = key_inequality_sides(p, tau)
        bad += lhs > rhs + 1e-12
    return bad


# ---------------------------------------------------------------------------
# constant scan

_SPREAD = 2.0 / (2.0 + (0.5 * 3.2) ** 2)


def tau_objective(tau):
    """Approximation constant as a function of ``tau``."""
    tau = np.asarray(tau, dtype=float)
    m = np.minimum((1.25 + tau) * np.exp(-tau), 1.0)
    return 2.0 / (1.0 - m * _SPREAD) + 1.0 + tau


def tau_objective_reference(tau: float) -> float:
    """Same quantity computed step by step in plain floats."""
    bound = (5.0 / 4.0 + tau) / math.exp(tau)
    if bound > 1.0:
        bound = 1.0
    denominator = 2.0 + 1.6 * 1.6
    core = 1.0 - bound * 2.0 / denominator
    return 2.0 * (1.0 / core) + (1.0 + tau)


def tau_constant_scan(grid_points: int = 100_000):
    """Maximum of ``tau_objective`` on ``[0, 1]`` and where it occurs.

    The maximiser is the kink where ``(5/4 + tau) e^{-tau}`` crosses 1; after the
    grid pass it is located by bisection on ``5/4 + tau - e^tau``.
    """
    if grid_points < 1000:
        raise ValueError("need at least 1000 grid points")
    grid = np.linspace(0.0, 1.0, grid_points)
    vals = tau_objective(grid)
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    g = lambda t: 1.25 + t - math.exp(t)
    if g(lo) * g(hi) < 0:
        tau = optimize.bisect(g, lo, hi, xtol=1e-15)
    else:
        res = optimize.minimize_scalar(lambda t: -float(tau_objective(t)), bounds=(lo, hi), method="bounded")
        tau = float(res.x)
    best = float(tau_objective(tau))
    if vals[k] > best:
        tau, best = float(grid[k]), float(vals[k])
    return best, float(tau)


# ---------------------------------------------------------------------------
# two-item equal-revenue example

ER_PAIR_RHO = 3.0 / (3.0 + math.log(2.0))


def er_pair_bundle_revenue(z: float, rho: float = ER_PAIR_RHO) -> float:
    """Bundle revenue ``z * P[x1 + x2 >= z]`` for two copies of the equal-revenue tail law.

    On ``[1, 2]`` the value is the limit from the left at 2; the law's atom at 2
    makes the true revenue jump down just above ``z = 2``.
    """
    if not 0 < rho <= 1:
        raise OutOfRange("rho must lie in (0, 1]")
    if not 1.0 <= z <= 4.0:
        raise OutOfRange("bundle price must lie in [1, 4]")
    if z <= 2.0:
        return 2.0 * rho + (z - 2.0) * rho * rho
    if z <= 3.0:
        return 2.0 * rho * rho * (math.log(z - 1.0) / z + 1.0)
    return 2.0 * rho * rho * ((math.log(2.0) - math.log(z - 2.0)) / z + 1.0 / (z - 2.0))


def er_pair_summary() -> dict:
    rho = ER_PAIR_RHO
    pc = 2.0 * rho
    mixed = 2.0 * rho * (2.0 - rho)
    return {"rho": rho, "pc": pc, "pb": pc, "mixed": mixed, "ratio": pc / mixed}


# ---------------------------------------------------------------------------
# variance of bounded laws with a flat revenue curve


def flat_revenue_variance_check(spec: MarginalSpec, v: float, grid: int = 10_000):
    """Variance of a ``[0, 1]`` law whose revenue curve ``y * P[X >= y]`` stays below ``v``.

    Returns ``(variance, 2 v, variance <= 2 v)``.
    """
    lo, hi = spec.support()
    if lo < -1e-12 or hi > 1.0 + 1e-12:
        raise PreconditionViolated("support must lie in [0, 1]")
    ys = np.linspace(0.0, 1.0, grid + 1)[1:]
    rev = ys * np.asarray(survival(spec, ys))
    if np.max(rev) > v + 1e-12:
        raise PreconditionViolated(f"revenue curve reaches {np.max(rev):.6g} > {v}")
    if spec.cost:
        raise PreconditionViolated("cost must be zero")
    _, var = pos_part_moments(spec) if lo >= 0 else (None, None)
    return var, 2.0 * v, var <= 2.0 * v + 1e-12


def variance_by_quadrature(spec: MarginalSpec) -> float:
    """Independent variance on ``[0, 1]`` from ``E[X^k] = k int y^{k-1} P[X > y] dy``."""
    sf = lambda y: float(survival(spec, y))
    pts = spec.breakpoints()
    pts = [p for p in pts if 0 < p < 1] or None
    m1 = integrate.quad(sf, 0, 1, points=pts, limit=200)[0]
    m2 = integrate.quad(lambda y: 2 * y * sf(y), 0, 1, points=pts, limit=200)[0]
    return m2 - m1 * m1
