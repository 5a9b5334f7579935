"""Pricing schemes, explicit menus, buyer choice and the welfare split.

Every scheme here is a deterministic menu: a set of (allocation, payment)
entries where allocations are 0/1 item indicators. Entry ``mask`` (an integer
bitmask over items, bit ``i`` for item ``i``) is the subset obtained; mask 0 is
the no-purchase entry. The buyer picks the entry with the largest surplus
``allocation . x - payment``; surplus ties go to the entry with the largest
firm profit ``payment - allocation . costs``, then to the smaller index.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import Family, Instance, MarginalSpec

TIE_TOL = 1e-9
MAX_EXPLICIT_ITEMS = 20
MAX_DETERMINISTIC_ITEMS = 4


class ConstraintViolation(ValueError):
    pass


class TooManyItems(ValueError):
    pass


class SchemeKind(str, enum.Enum):
    PC = "PC"
    PB = "PB"
    PBD = "PBD"
    PCUD = "PCUD"
    TP = "TP"
    PBDC = "PBDC"
    BSP = "BSP"
    MB = "MB"
    DET = "DET"


def _floats(xs) -> tuple:
    return tuple(float(x) for x in xs)


def _check_finite(values, what):
    if not all(math.isfinite(v) for v in values):
        raise ConstraintViolation(f"{what} must be finite")


@dataclass(frozen=True)
class PC:
    """Separate price per item."""

    prices: tuple
    kind = SchemeKind.PC

    def __post_init__(self):
        object.__setattr__(self, "prices", _floats(self.prices))
        _check_finite(self.prices, "prices")
        if any(p < 0 for p in self.prices):
            raise ConstraintViolation("item prices must be non-negative")

    @property
    def n(self):
        return len(self.prices)

    def flat(self):
        return list(self.prices)


@dataclass(frozen=True)
class PB:
    """Grand bundle only."""

    price: float
    kind = SchemeKind.PB

    def __post_init__(self):
        object.__setattr__(self, "price", float(self.price))
        _check_finite([self.price], "price")
        if self.price < 0:
            raise ConstraintViolation("bundle price must be non-negative")

    n = None

    def flat(self):
        return [self.price]


@dataclass(frozen=True)
class PBD:
    """Bundle at ``bundle`` with refund ``refunds[i]`` for each item handed back."""

    bundle: float
    refunds: tuple
    kind = SchemeKind.PBD

    def __post_init__(self):
        object.__setattr__(self, "bundle", float(self.bundle))
        object.__setattr__(self, "refunds", _floats(self.refunds))
        _check_finite((self.bundle,) + self.refunds, "prices")
        if any(p < 0 for p in self.refunds):
            raise ConstraintViolation("refunds must be non-negative")
        if self.bundle < sum(self.refunds) - 1e-12 * max(1.0, abs(self.bundle)):
            raise ConstraintViolation("bundle price must cover the sum of refunds")

    @property
    def n(self):
        return len(self.refunds)

    def flat(self):
        return [self.bundle, *self.refunds]


@dataclass(frozen=True)
class PCUD:
    """Item prices with ``discount`` off every item beyond the first."""

    discount: float
    prices: tuple
    kind = SchemeKind.PCUD

    def __post_init__(self):
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "prices", _floats(self.prices))
        _check_finite((self.discount,) + self.prices, "prices")
        if self.discount < 0 or any(p < self.discount for p in self.prices):
            raise ConstraintViolation("need item prices >= discount >= 0")

    @property
    def n(self):
        return len(self.prices)

    def flat(self):
        return [self.discount, *self.prices]


@dataclass(frozen=True)
class TP:
    """Entry fee ``tariff`` plus per-item prices."""

    tariff: float
    prices: tuple
    kind = SchemeKind.TP

    def __post_init__(self):
        object.__setattr__(self, "tariff", float(self.tariff))
        object.__setattr__(self, "prices", _floats(self.prices))
        _check_finite((self.tariff,) + self.prices, "prices")
        if self.tariff < 0 or any(p < 0 for p in self.prices):
            raise ConstraintViolation("tariff and item prices must be non-negative")

    @property
    def n(self):
        return len(self.prices)

    def flat(self):
        return [self.tariff, *self.prices]


@dataclass(frozen=True)
class PBDC:
    """Bundle at ``price``; any item may be returned for a refund equal to its cost."""

    price: float
    costs: tuple
    kind = SchemeKind.PBDC

    def __post_init__(self):
        object.__setattr__(self, "price", float(self.price))
        object.__setattr__(self, "costs", _floats(self.costs))
        _check_finite((self.price,) + self.costs, "prices")
        total = sum(self.costs)
        if self.price < total - 1e-12 * max(1.0, abs(total)):
            raise ConstraintViolation("bundle price must cover the total cost")

    @classmethod
    def with_margin(cls, margin: float, costs) -> "PBDC":
        costs = _floats(costs)
        return cls(sum(costs) + max(float(margin), 0.0), costs)

    @property
    def margin(self) -> float:
        return self.price - sum(self.costs)

    @property
    def n(self):
        return len(self.costs)

    def flat(self):
        return [self.price]


@dataclass(frozen=True)
class BSP:
    """Price depends only on how many items are bought; ``prices[k-1]`` for k items."""

    prices: tuple
    kind = SchemeKind.BSP

    def __post_init__(self):
        object.__setattr__(self, "prices", _floats(self.prices))
        _check_finite(self.prices, "prices")
        prev = 0.0
        for p in self.prices:
            if p < prev:
                raise ConstraintViolation("size prices must satisfy 0 <= P1 <= ... <= Pn")
            prev = p

    @property
    def n(self):
        return len(self.prices)

    def flat(self):
        return list(self.prices)


@dataclass(frozen=True)
class MixedBundling:
    """Item prices plus a grand-bundle price."""

    prices: tuple
    bundle: float
    kind = SchemeKind.MB

    def __post_init__(self):
        object.__setattr__(self, "prices", _floats(self.prices))
        object.__setattr__(self, "bundle", float(self.bundle))
        _check_finite(self.prices + (self.bundle,), "prices")
        if self.bundle < 0 or any(p < 0 for p in self.prices):
            raise ConstraintViolation("prices must be non-negative")

    @property
    def n(self):
        return len(self.prices)

    def flat(self):
        return [*self.prices, self.bundle]


@dataclass(frozen=True)
class FullDeterministic:
    """A separate price for every non-empty subset; ``prices[mask-1]`` for bitmask ``mask``."""

    prices: tuple
    kind = SchemeKind.DET

    def __post_init__(self):
        object.__setattr__(self, "prices", _floats(self.prices))
        _check_finite(self.prices, "prices")
        k = len(self.prices) + 1
        if k < 2 or k & (k - 1):
            raise ConstraintViolation("need exactly 2^n - 1 subset prices")
        if self.n > MAX_DETERMINISTIC_ITEMS:
            raise TooManyItems(f"full deterministic menus support n <= {MAX_DETERMINISTIC_ITEMS}")

    @property
    def n(self):
        return (len(self.prices) + 1).bit_length() - 1

    def flat(self):
        return list(self.prices)


SCHEME_TYPES = {
    SchemeKind.PC: PC,
    SchemeKind.PB: PB,
    SchemeKind.PBD: PBD,
    SchemeKind.PCUD: PCUD,
    SchemeKind.TP: TP,
    SchemeKind.PBDC: PBDC,
    SchemeKind.BSP: BSP,
    SchemeKind.MB: MixedBundling,
    SchemeKind.DET: FullDeterministic,
}


def scheme_from_flat(kind, values: Sequence[float], costs=None):
    """Rebuild a scheme from its tag and flat price list (inverse of ``.flat()``)."""
    kind = SchemeKind(kind)
    v = [float(x) for x in values]
    if kind is SchemeKind.PB:
        return PB(v[0])
    if kind is SchemeKind.PBD:
        return PBD(v[0], v[1:])
    if kind is SchemeKind.PCUD:
        return PCUD(v[0], v[1:])
    if kind is SchemeKind.TP:
        return TP(v[0], v[1:])
    if kind is SchemeKind.PBDC:
        if costs is None:
            raise ValueError("PBDC needs item costs")
        return PBDC(v[0], costs)
    if kind is SchemeKind.MB:
        return MixedBundling(v[:-1], v[-1])
    return SCHEME_TYPES[kind](v)


# ---------------------------------------------------------------------------
# conversions between equivalent representations


def convert(prices, target):
    """Translate between PBD, PCUD and TP representations of the same menu."""
    target = SchemeKind(target)
    if target not in (SchemeKind.PBD, SchemeKind.PCUD, SchemeKind.TP):
        raise ValueError("conversion target must be PBD, PCUD or TP")
    if isinstance(prices, PBD):
        refunds, tariff = prices.refunds, prices.bundle - sum(prices.refunds)
    elif isinstance(prices, PCUD):
        refunds = tuple(p - prices.discount for p in prices.prices)
        tariff = prices.discount
    elif isinstance(prices, TP):
        refunds, tariff = prices.prices, prices.tariff
    else:
        raise ConstraintViolation(f"cannot convert {type(prices).__name__}")
    if any(r < 0 for r in refunds) or tariff < 0:
        raise ConstraintViolation("source prices violate their class constraints")
    if target is SchemeKind.TP:
        return TP(tariff, refunds)
    if target is SchemeKind.PCUD:
        return PCUD(tariff, tuple(r + tariff for r in refunds))
    if isinstance(prices, PBD):
        return prices
    return PBD(tariff + sum(refunds), refunds)


def as_tariff(prices) -> tuple[float, np.ndarray] | None:
    """(entry fee, per-item prices) for schemes of two-part-tariff form, else None."""
    if isinstance(prices, PC):
        return 0.0, np.array(prices.prices)
    if isinstance(prices, (PBD, PCUD)):
        tp = convert(prices, SchemeKind.TP)
        return tp.tariff, np.array(tp.prices)
    if isinstance(prices, TP):
        return prices.tariff, np.array(prices.prices)
    if isinstance(prices, PBDC):
        return prices.margin, np.array(prices.costs)
    return None


# ---------------------------------------------------------------------------
# explicit menus


@dataclass(frozen=True)
class MenuEntry:
    allocation: tuple
    payment: float


@dataclass(frozen=True)
class Menu:
    """Explicit menu; row 0 is always the no-purchase entry."""

    allocations: np.ndarray = field(repr=False)
    payments: np.ndarray
    masks: tuple | None = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.allocations, dtype=float))
        s = np.asarray(self.payments, dtype=float).reshape(-1)
        if a.shape[0] != s.shape[0]:
            raise ValueError("allocations and payments differ in length")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("allocations must lie in [0, 1]")
        if a.shape[0] == 0 or np.any(a[0] != 0) or s[0] != 0:
            raise ValueError("row 0 must be the no-purchase entry (0, 0)")
        rows = {(tuple(r), p) for r, p in zip(a.tolist(), s.tolist())}
        if len(rows) != len(s):
            raise ValueError("duplicate menu entries")
        object.__setattr__(self, "allocations", a)
        object.__setattr__(self, "payments", s)

    @classmethod
    def from_entries(cls, entries, n=None) -> "Menu":
        entries = list(entries)
        if n is None:
            n = len(entries[0][0])
        rows = [(tuple(float(q) for q in a), float(s)) for a, s in entries]
        zero = (tuple([0.0] * n), 0.0)
        rows = [zero] + [r for r in rows if r != zero]
        return cls(np.array([r[0] for r in rows]).reshape(len(rows), n), np.array([r[1] for r in rows]))

    @property
    def n(self):
        return self.allocations.shape[1]

    @property
    def entries(self) -> list[MenuEntry]:
        return [MenuEntry(tuple(a), float(s)) for a, s in zip(self.allocations.tolist(), self.payments)]

    def __len__(self):
        return len(self.payments)

    def subset_prices(self) -> dict:
        """``{frozenset(items): payment}`` for 0/1 allocations."""
        out = {}
        for a, s in zip(self.allocations, self.payments):
            out[frozenset(np.flatnonzero(a > 0.5).tolist())] = float(s)
        return out

    def stripped(self, costs) -> "Menu":
        """Drop entries priced below the production cost of their allocation."""
        c = np.asarray(costs, dtype=float)
        keep = self.payments >= self.allocations @ c - 1e-12
        keep[0] = True
        masks = None if self.masks is None else tuple(m for m, k in zip(self.masks, keep) if k)
        return Menu(self.allocations[keep], self.payments[keep], masks)


def _mask_matrix(n: int) -> np.ndarray:
    masks = np.arange(1 << n)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(float)


def subset_payment(prices, mask: int, n: int) -> float | None:
    """Payment for subset ``mask`` under the scheme; None if the subset is not offered."""
    if mask == 0:
        return 0.0
    size = bin(mask).count("1")
    items = [i for i in range(n) if mask >> i & 1]
    full = (1 << n) - 1
    tp = as_tariff(prices)
    if tp is not None:
        tariff, p = tp
        return float(tariff + sum(p[i] for i in items))
    if isinstance(prices, PB):
        return prices.price if mask == full else None
    if isinstance(prices, BSP):
        return prices.prices[size - 1]
    if isinstance(prices, MixedBundling):
        alone = sum(prices.prices[i] for i in items)
        return min(alone, prices.bundle) if mask == full else alone
    if isinstance(prices, FullDeterministic):
        return prices.prices[mask - 1]
    raise TypeError(f"unknown scheme {type(prices).__name__}")


def _scheme_n(prices, instance_or_n) -> int:
    if isinstance(instance_or_n, Instance):
        n = instance_or_n.n
    elif instance_or_n is not None:
        n = int(instance_or_n)
    else:
        n = prices.n
    if n is None:
        raise ValueError("number of items is required for this scheme")
    if prices.n is not None and prices.n != n:
        raise ValueError(f"scheme is for {prices.n} items, instance has {n}")
    return n


def expand_menu(prices, instance_or_n=None, max_items: int = MAX_EXPLICIT_ITEMS) -> Menu:
    """Explicit menu with one entry per offered subset, plus no-purchase.

    Entries priced below their production cost are kept; use ``Menu.stripped``
    to remove them.
    """
    n = _scheme_n(prices, instance_or_n)
    if n > max_items:
        raise TooManyItems(f"explicit menus are limited to {max_items} items")
    A = _mask_matrix(n)
    masks, pays = [], []
    for m in range(1 << n):
        s = subset_payment(prices, m, n)
        if s is not None:
            masks.append(m)
            pays.append(s)
    return Menu(A[masks], np.array(pays), tuple(masks))


# ---------------------------------------------------------------------------
# buyer choice


@dataclass(frozen=True)
class BuyerOutcome:
    chosen_entry: int
    payment: float
    allocation: tuple


def choose_entries(allocations, payments, X, costs=None, tol: float = TIE_TOL) -> np.ndarray:
    """Index of the chosen entry for every valuation row of ``X``."""
    A = np.asarray(allocations, dtype=float)
    s = np.asarray(payments, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = np.zeros(A.shape[1]) if costs is None else np.asarray(costs, dtype=float)
    profit = s - A @ c
    out = np.empty(X.shape[0], dtype=np.int64)
    block = max(1, 2_000_000 // max(1, len(s)))
    for lo in range(0, X.shape[0], block):
        U = X[lo:lo + block] @ A.T - s
        best = U.max(axis=1, keepdims=True)
        score = np.where(U >= best - tol, profit, -np.inf)
        out[lo:lo + block] = np.argmax(score, axis=1)
    return out


def best_response(menu: Menu, valuations, costs=None) -> BuyerOutcome:
    """The entry a buyer with these valuations picks (firm wins surplus ties)."""
    k = int(choose_entries(menu.allocations, menu.payments, np.asarray(valuations, dtype=float)[None, :], costs)[0])
    return BuyerOutcome(k, float(menu.payments[k]), tuple(menu.allocations[k]))


def _tariff_outcomes(tariff, p, X, c, tol):
    g = X - p
    m = p - c
    pos = g > tol
    zero = np.abs(g) <= tol
    take = pos | (zero & (m > 0))
    any_pos = pos.any(axis=1)
    # only zero-gain items available: keep the most profitable one if none is strictly profitable
    only_zero = ~any_pos & zero.any(axis=1) & ~take.any(axis=1)
    if only_zero.any():
        mz = np.where(zero[only_zero], m, -np.inf)
        j = np.argmax(mz, axis=1)
        take[np.flatnonzero(only_zero), j] = True
    nonempty = take.any(axis=1)
    surplus = np.where(take, g, 0.0).sum(axis=1) - tariff
    profit = tariff + np.where(take, m, 0.0).sum(axis=1)
    buy = nonempty & ((surplus > tol) | ((surplus >= -tol) & (profit > 0)))
    Q = (take & buy[:, None]).astype(float)
    pay = np.where(buy, tariff + (Q * p).sum(axis=1), 0.0)
    return Q, pay


def _size_outcomes(P, X, c, tol):
    N, n = X.shape
    C = np.broadcast_to(c, X.shape)
    order = np.lexsort((C, -X), axis=-1)
    xs = np.take_along_axis(X, order, axis=1)
    cs = np.take_along_axis(np.ascontiguousarray(C), order, axis=1)
    U = np.concatenate([np.zeros((N, 1)), np.cumsum(xs, axis=1) - P], axis=1)
    prof = np.concatenate([np.zeros((N, 1)), P - np.cumsum(cs, axis=1)], axis=1)
    best = U.max(axis=1, keepdims=True)
    k = np.argmax(np.where(U >= best - tol, prof, -np.inf), axis=1)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n)[None, :].repeat(N, axis=0), axis=1)
    Q = (rank < k[:, None]).astype(float)
    Pfull = np.concatenate([[0.0], P])
    return Q, Pfull[k]


def buyer_outcomes(prices, X, costs, tol: float = TIE_TOL):
    """Allocations ``Q`` (N x n) and payments (N,) for every valuation row.

    Tariff-form schemes (PC, PBD, PCUD, TP, PBDC), PB and BSP use direct
    per-row logic; mixed bundling and full menus go through the explicit menu.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = np.asarray(costs, dtype=float)
    N, n = X.shape
    if prices.n is not None and prices.n != n:
        raise ValueError(f"scheme is for {prices.n} items, draws have {n}")
    tp = as_tariff(prices)
    if tp is not None:
        return _tariff_outcomes(tp[0], tp[1], X, c, tol)
    if isinstance(prices, PB):
        surplus = X.sum(axis=1) - prices.price
        profit = prices.price - c.sum()
        buy = (surplus > tol) | ((surplus >= -tol) & (profit > 0))
        return np.repeat(buy[:, None], n, axis=1).astype(float), np.where(buy, prices.price, 0.0)
    if isinstance(prices, BSP):
        return _size_outcomes(np.array(prices.prices), X, c, tol)
    menu = expand_menu(prices, n)
    k = choose_entries(menu.allocations, menu.payments, X, c, tol)
    return menu.allocations[k], menu.payments[k]


# ---------------------------------------------------------------------------
# welfare accounting


@dataclass(frozen=True)
class WelfareBreakdown:
    producer_surplus: float
    consumer_surplus: float
    deadweight_loss: float
    overinclusion_loss: float
    welfare: float

    def residual(self) -> float:
        return (self.producer_surplus + self.consumer_surplus + self.deadweight_loss
                + self.overinclusion_loss - self.welfare)


def welfare_components(Q, pay, X, costs):
    """Per-draw arrays (PS, CS, DWL, OIL, welfare) for outcomes ``(Q, pay)``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pay = np.asarray(pay, dtype=float).reshape(-1)
    c = np.asarray(costs, dtype=float)
    gain = X - c
    ps = pay - Q @ c
    cs = (Q * X).sum(axis=1) - pay
    dwl = np.where(gain > 0, (1.0 - Q) * gain, 0.0).sum(axis=1)
    oil = np.where(gain < 0, -Q * gain, 0.0).sum(axis=1)
    w = np.maximum(gain, 0.0).sum(axis=1)
    return ps, cs, dwl, oil, w


def welfare_breakdown(menu: Menu, valuations, costs) -> WelfareBreakdown:
    out = best_response(menu, valuations, costs)
    parts = welfare_components(np.array(out.allocation)[None, :], [out.payment], valuations, costs)
    return WelfareBreakdown(*(float(a[0]) for a in parts))


# ---------------------------------------------------------------------------
# cost transform


def _clamp_is_noop(spec: MarginalSpec) -> bool:
    if not spec.free_disposal:
        return True
    fam, p = spec.family, spec.params
    if fam is Family.UNIFORM:
        return p[0] >= 0
    if fam is Family.DISCRETE:
        return all(v >= 0 for v, _ in p)
    return fam in (Family.EXPONENTIAL, Family.LOGNORMAL, Family.EQUAL_REVENUE_TAIL, Family.EQUAL_REVENUE)


def _shift_spec(spec: MarginalSpec) -> MarginalSpec:
    c = spec.cost
    if c == 0:
        return spec
    fam, p = spec.family, spec.params
    if fam is Family.DISCRETE:
        vals = tuple(((max(v, 0.0) if spec.free_disposal else v) + spec.shift - c, q) for v, q in p)
        return MarginalSpec(fam, vals, 0.0, False)
    if _clamp_is_noop(spec) and spec.shift == 0:
        if fam is Family.UNIFORM:
            return MarginalSpec(fam, (p[0] - c, p[1] - c), 0.0, False)
        if fam in (Family.NORMAL, Family.GUMBEL):
            return MarginalSpec(fam, (p[0] - c, p[1]), 0.0, False)
    return replace(spec, cost=0.0, shift=spec.shift - c)


def cost_transform(instance: Instance) -> Instance:
    """Subtract each item's cost from its valuation and zero the cost.

    Profit of any menu on the original instance equals revenue of the same
    allocations with payments reduced by their production cost.
    """
    return Instance(tuple(_shift_spec(it) for it in instance.items))


def transform_prices(prices, costs):
    """Payments of ``prices`` after the cost transform, as an explicit or compact scheme."""
    c = np.asarray(costs, dtype=float)
    if isinstance(prices, PBDC):
        return _uniform_subset_menu(prices.margin, len(c))
    menu = expand_menu(prices, len(c))
    return Menu(menu.allocations, menu.payments - menu.allocations @ c, menu.masks)


def _uniform_subset_menu(price, n):
    A = _mask_matrix(n)
    pays = np.full(1 << n, float(price))
    pays[0] = 0.0
    return Menu(A, pays, tuple(range(1 << n)))
