import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbdc.distributions import Family, Instance, MarginalSpec
from pbdc.evaluation import make_rng
from pbdc.mechanisms import (
    BSP,
    PB,
    PBD,
    PBDC,
    PC,
    PCUD,
    TP,
    ConstraintViolation,
    FullDeterministic,
    Menu,
    MixedBundling,
    SchemeKind,
    TooManyItems,
    best_response,
    buyer_outcomes,
    convert,
    cost_transform,
    expand_menu,
    scheme_from_flat,
    transform_prices,
    welfare_breakdown,
    welfare_components,
)

from oracles import oracle_choice, oracle_menu, oracle_welfare


def as_map(menu: Menu):
    return {k: pytest.approx(v) for k, v in menu.subset_prices().items()}


# -- constructors ------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    lambda: PC((-1.0, 2.0)),
    lambda: PB(-1.0),
    lambda: PBD(4.0, (2.0, 3.0)),
    lambda: PCUD(3.0, (2.0, 5.0)),
    lambda: TP(-1.0, (1.0,)),
    lambda: PBDC(1.0, (2.0, 0.0)),
    lambda: BSP((3.0, 2.0)),
    lambda: FullDeterministic(tuple(range(31))),
])
def test_constraints_checked_at_construction(bad):
    with pytest.raises((ConstraintViolation, TooManyItems)):
        bad()


def test_pbdc_at_total_cost_allowed():
    assert PBDC(2.0, (2.0, 0.0)).margin == 0.0


@pytest.mark.parametrize("p", [
    PC((1, 2)), PB(3), PBD(10, (2, 3)), PCUD(5, (7, 8)), TP(5, (2, 3)), BSP((2, 3)),
    MixedBundling((2, 2), 3), FullDeterministic((2, 2, 3)),
])
def test_flat_round_trip(p):
    assert scheme_from_flat(p.kind, p.flat()) == p


# -- conversions -------------------------------------------------------------------


def test_pbd_to_pcud_and_tp():
    assert convert(PBD(10, (2, 3)), SchemeKind.PCUD) == PCUD(5, (7, 8))
    assert convert(PBD(10, (2, 3)), SchemeKind.TP) == TP(5, (2, 3))


def test_degenerate_pbd_is_pc():
    assert convert(PBD(5, (2, 3)), SchemeKind.PCUD) == PCUD(0, (2, 3))


def test_conversion_rejects_other_schemes():
    with pytest.raises(ConstraintViolation):
        convert(PC((1, 2)), SchemeKind.TP)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=5), st.integers(0, 50))
def test_conversion_round_trips_exactly(refunds, extra):
    # integer-valued prices keep every step exact in binary floating point
    m = PBD(sum(refunds) + extra, tuple(refunds))
    assert convert(convert(m, SchemeKind.PCUD), SchemeKind.PBD) == m
    assert convert(convert(m, SchemeKind.TP), SchemeKind.PBD) == m
    menus = [expand_menu(x).subset_prices() for x in (m, convert(m, "PCUD"), convert(m, "TP"))]
    assert menus[0] == menus[1] == menus[2]


# -- explicit menus ----------------------------------------------------------------


def test_pbdc_menu_refunds_returned_costs():
    menu = expand_menu(PBDC(3, (2, 0)))
    assert menu.subset_prices() == {frozenset(): 0, frozenset({0}): 3, frozenset({1}): 1, frozenset({0, 1}): 3}


def test_pc_and_bsp_menus():
    assert expand_menu(PC((1, 2))).subset_prices() == {
        frozenset(): 0, frozenset({0}): 1, frozenset({1}): 2, frozenset({0, 1}): 3}
    assert expand_menu(BSP((2, 3))).subset_prices() == {
        frozenset(): 0, frozenset({0}): 2, frozenset({1}): 2, frozenset({0, 1}): 3}


def test_pb_menu_has_only_the_bundle():
    assert expand_menu(PB(4), 3).subset_prices() == {frozenset(): 0, frozenset({0, 1, 2}): 4}


def test_explicit_expansion_cap():
    with pytest.raises(TooManyItems):
        expand_menu(PC(tuple([1.0] * 21)))


def test_menu_requires_no_purchase_and_no_duplicates():
    with pytest.raises(ValueError):
        Menu(np.array([[1.0]]), np.array([1.0]))
    with pytest.raises(ValueError):
        Menu(np.array([[0.0], [1.0], [1.0]]), np.array([0.0, 1.0, 1.0]))


@pytest.mark.parametrize("kind,params,n", [
    ("PC", [1.0, 2.5, 0.5], 3), ("PBD", [6.0, 1.0, 2.0, 0.5], 3), ("BSP", [1.0, 2.0, 2.5], 3),
    ("MB", [1.0, 2.0, 1.5, 3.0], 3), ("DET", [1, 2, 2.5, 1.5, 2, 3, 4], 3), ("PB", [2.0], 3),
])
def test_menu_matches_definition(kind, params, n):
    prices = scheme_from_flat(kind, params, (0.0,) * n)
    got = {k: v for k, v in expand_menu(prices, n).subset_prices().items() if k}
    want = dict(oracle_menu(kind, params, n))
    assert got == pytest.approx(want)


# -- buyer choice ------------------------------------------------------------------


def test_zero_surplus_tie_goes_to_sale():
    menu = Menu.from_entries([((1, 1), 3)])
    assert best_response(menu, (1, 2)).chosen_entry == 1


def test_bundle_beats_single_on_tie():
    menu = Menu.from_entries([((0, 1), 2), ((1, 1), 3)])
    out = best_response(menu, (1, 2), (0, 0))
    assert out.allocation == (1.0, 1.0) and out.payment == 3


def test_low_values_buy_nothing():
    out = best_response(expand_menu(PC((1, 2))), (-5, -5))
    assert out.chosen_entry == 0 and out.payment == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000), st.floats(0.1, 100))
def test_choice_invariant_to_scaling(n, seed, scale):
    rng = np.random.default_rng(seed)
    A = (rng.random((6, n)) < 0.5).astype(float)
    A[0] = 0
    rows = {(tuple(a), 0.0) for a in A[:1]}
    pays = [0.0]
    keep = [A[0]]
    for a in A[1:]:
        p = float(rng.uniform(0, 3))
        if (tuple(a), p) not in rows and a.any():
            rows.add((tuple(a), p))
            keep.append(a)
            pays.append(p)
    menu = Menu(np.array(keep), np.array(pays))
    x = rng.uniform(0, 3, n)
    k1 = best_response(menu, x).chosen_entry
    k2 = best_response(Menu(menu.allocations, menu.payments * scale), x * scale).chosen_entry
    assert k1 == k2


def _random_scheme(rng, kind, n, c):
    if kind == "PC":
        return PC(tuple(rng.integers(0, 5, n).astype(float)))
    if kind == "PB":
        return PB(float(rng.integers(0, 3 * n + 1)))
    if kind == "PBD":
        r = rng.integers(0, 4, n).astype(float)
        return PBD(float(r.sum() + rng.integers(0, 4)), tuple(r))
    if kind == "PBDC":
        return PBDC(float(sum(c) + rng.integers(0, 4)), tuple(c))
    if kind == "BSP":
        return BSP(tuple(np.sort(rng.integers(0, 3 * n, n)).astype(float)))
    if kind == "MB":
        return MixedBundling(tuple(rng.integers(0, 5, n).astype(float)), float(rng.integers(0, 3 * n)))
    return FullDeterministic(tuple(rng.integers(0, 3 * n, (1 << n) - 1).astype(float)))


@pytest.mark.parametrize("kind", ["PC", "PB", "PBD", "PBDC", "BSP", "MB", "DET"])
def test_fast_choice_matches_brute_force(kind):
    """Integer values make surplus and profit ties common; every path must agree."""
    rng = np.random.default_rng(42)
    for _ in range(150):
        n = int(rng.integers(1, 4))
        c = rng.integers(0, 3, n).astype(float)
        prices = _random_scheme(rng, kind, n, c)
        X = rng.integers(-1, 5, (30, n)).astype(float)
        Q, pay = buyer_outcomes(prices, X, c)
        menu = oracle_menu(kind, prices.flat() if kind != "PBDC" else [prices.price], n, c)
        for x, q, s in zip(X, Q, pay):
            S, s0 = oracle_choice(menu, x, c)
            assert s - q @ c == pytest.approx(s0 - sum(c[i] for i in S), abs=1e-12)
            assert q @ x - s == pytest.approx(sum(x[i] for i in S) - s0, abs=1e-12)


# -- welfare -----------------------------------------------------------------------


def test_pb_welfare_example():
    wb = welfare_breakdown(expand_menu(PB(3), 2), (1, 3), (2, 0))
    assert (wb.producer_surplus, wb.consumer_surplus, wb.deadweight_loss, wb.overinclusion_loss) == (1, 1, 0, 1)
    assert wb.welfare == 3 and wb.residual() == 0


def test_pbdc_welfare_example():
    wb = welfare_breakdown(expand_menu(PBDC(3, (2, 0))), (1, 3), (2, 0))
    assert (wb.producer_surplus, wb.consumer_surplus, wb.deadweight_loss, wb.overinclusion_loss) == (1, 2, 0, 0)


def test_no_purchase_is_all_deadweight():
    wb = welfare_breakdown(expand_menu(PB(100), 2), (5, 5), (0, 0))
    assert (wb.producer_surplus, wb.consumer_surplus, wb.deadweight_loss, wb.overinclusion_loss) == (0, 0, 10, 0)


@pytest.mark.parametrize("kind", ["PC", "PB", "PBD", "PBDC", "BSP", "MB", "DET"])
def test_welfare_identity_every_draw(kind):
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        c = rng.uniform(0, 2, n)
        prices = _random_scheme(rng, kind, n, np.round(c, 6))
        c = np.round(c, 6)
        X = rng.normal(1.5, 1.5, (500, n))
        Q, pay = buyer_outcomes(prices, X, c)
        ps, cs, dwl, oil, w = welfare_components(Q, pay, X, c)
        assert np.max(np.abs(ps + cs + dwl + oil - w)) <= 1e-9
        for x, q, s, parts in zip(X[:20], Q[:20], pay[:20], zip(ps, cs, dwl, oil)):
            S = frozenset(np.flatnonzero(q > 0.5).tolist())
            assert parts == pytest.approx(oracle_welfare(S, s, x, c), abs=1e-12)


def test_cost_refunds_dominate_plain_bundle_per_draw():
    rng = make_rng(9)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        c = rng.uniform(0, 1.5, n)
        P = float(c.sum() + rng.uniform(0, 2 * n))
        X = rng.uniform(0, 2.5, (500, n))
        a = welfare_components(*buyer_outcomes(PB(P), X, c), X, c)
        b = welfare_components(*buyer_outcomes(PBDC(P, tuple(c)), X, c), X, c)
        tol = 1e-12
        assert np.all(b[0] >= a[0] - tol)  # producer surplus
        assert np.all(b[1] >= a[1] - tol)  # consumer surplus
        assert np.all(b[2] <= a[2] + tol)  # deadweight loss
        assert np.all(b[3] <= a[3] + tol)  # overinclusion loss


# -- cost transform ----------------------------------------------------------------


def test_uniform_cost_shift():
    out = cost_transform(Instance((MarginalSpec.uniform(0, 3, 2),)))
    assert out.items[0] == MarginalSpec.uniform(-2, 1)


def test_zero_cost_unchanged():
    inst = Instance((MarginalSpec.exponential(1.0), MarginalSpec.normal(1, 1)))
    assert cost_transform(inst) == inst


def test_pbdc_becomes_one_price_per_subset():
    menu = transform_prices(PBDC(5, (1, 2, 0.5)), (1, 2, 0.5))
    pays = {k: v for k, v in menu.subset_prices().items() if k}
    assert len(pays) == 7 and set(pays.values()) == {1.5}


@pytest.mark.parametrize("prices", [PC((1.0, 2.5)), BSP((1.5, 3.0)), MixedBundling((1.0, 2.0), 2.5),
                                    PBDC(4.0, (2.0, 0.5))])
def test_profit_equals_transformed_revenue(prices):
    inst = Instance((MarginalSpec.uniform(0, 3, 2.0), MarginalSpec.exponential(0.7, 0.5, True)))
    X = inst.sample(make_rng(3), 5000)
    Q, pay = buyer_outcomes(prices, X, inst.costs)
    profit = pay - Q @ inst.costs
    shifted = cost_transform(inst)
    assert np.allclose(shifted.costs, 0)
    menu = transform_prices(prices, inst.costs)
    Xs = X - inst.costs
    Qt, payt = buyer_outcomes(FullDeterministic(tuple(menu.payments[1:])), Xs, np.zeros(2))
    assert np.allclose(payt, profit, atol=1e-12)


def test_transformed_samples_match_shifted_draws():
    spec = MarginalSpec.normal(0.5, 1.0, 0.8, True)  # clamp matters, so the shift is kept separately
    out = cost_transform(Instance((spec,))).items[0]
    assert out.cost == 0 and out.family is Family.NORMAL
    a = MarginalSpec.normal(0.5, 1.0, 0.8, True)
    x = Instance((a,)).sample(make_rng(1), 1000)[:, 0] - 0.8
    y = Instance((out,)).sample(make_rng(1), 1000)[:, 0]
    assert np.allclose(x, y)
