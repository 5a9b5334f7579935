import math

import numpy as np
import pytest

from pbdc.distributions import Instance, MarginalSpec
from pbdc.evaluation import DiscreteInstance, SupportTooLarge, exact_profit_discrete
from pbdc.mechanisms import BSP, PB, PBDC, PC, SchemeKind, TooManyItems
from pbdc.optimization import (
    lp_opt_discrete,
    opt_bsp,
    opt_deterministic,
    opt_item_price,
    opt_mixed_bundling,
    opt_single_price,
    optimize_scheme,
)
from pbdc.theory import ER_PAIR_RHO

from oracles import oracle_best_pbdc, oracle_best_pc, oracle_myerson

COIN2 = DiscreteInstance.iid([(1, 0.5), (2, 0.5)], 2)
THREE_POINT_PAIR = DiscreteInstance.iid([(0, 1 / 9), (1, 4 / 9), (2, 4 / 9)], 2)


# -- single prices -----------------------------------------------------------------


def test_item_price_uniform_with_cost():
    p, v, _ = opt_item_price(MarginalSpec.uniform(0, 3, 2))
    assert p == pytest.approx(2.5, abs=1e-6)
    assert v == pytest.approx(1 / 12, abs=1e-9)


def test_item_price_exponential():
    p, v, _ = opt_item_price(MarginalSpec.exponential(1.0))
    assert p == pytest.approx(1.0, abs=1e-6)
    assert v == pytest.approx(math.exp(-1), abs=1e-9)


def test_item_price_never_sells_at_a_loss():
    p, v, _ = opt_item_price(MarginalSpec.uniform(0, 1, 2.0))
    assert v == 0.0


def test_pc_on_two_costly_uniforms():
    res = opt_single_price("PC", Instance((MarginalSpec.uniform(0, 3, 2),) * 2))
    assert res.value == pytest.approx(1 / 6, abs=1e-6)
    assert res.prices.prices == pytest.approx((2.5, 2.5), abs=1e-6)


def test_cost_refund_bundle_on_point_masses():
    inst = Instance((MarginalSpec.discrete([(3.0, 1.0)], 1.0), MarginalSpec.discrete([(2.0, 1.0)], 0.5)))
    res = opt_single_price("PBDC", inst)
    assert res.prices.price == pytest.approx(5.0)
    assert res.value == pytest.approx(3.5)


def test_coin_pair_single_prices():
    assert opt_single_price("PB", COIN2).value == pytest.approx(2.25, abs=1e-12)
    assert opt_single_price("PC", COIN2).value == pytest.approx(2.0, abs=1e-12)


def test_three_point_pair_single_prices():
    assert opt_single_price("PC", THREE_POINT_PAIR).value == pytest.approx(16 / 9, abs=1e-12)
    assert opt_single_price("PB", THREE_POINT_PAIR).value == pytest.approx(16 / 9, abs=1e-12)


def test_single_price_rejects_menus():
    with pytest.raises(ValueError):
        opt_single_price("BSP", COIN2)


def _random_discrete(rng, n_max=3, k_max=5, costs=True):
    n = int(rng.integers(1, n_max + 1))
    vals, probs = [], []
    for _ in range(n):
        k = int(rng.integers(1, k_max + 1))
        v = np.unique(np.round(rng.uniform(0, 4, k), 2))
        vals.append(tuple(v.tolist()))
        probs.append(tuple(rng.dirichlet(np.ones(len(v))).tolist()))
    c = tuple(np.round(rng.uniform(0, 1, n), 2).tolist()) if costs else (0.0,) * n
    return DiscreteInstance(tuple(vals), tuple(probs), c)


def test_single_prices_match_exhaustive_oracles():
    rng = np.random.default_rng(5)
    for _ in range(40):
        inst = _random_discrete(rng)
        pc = opt_single_price("PC", inst)
        assert pc.value == pytest.approx(oracle_best_pc(inst.values, inst.probs, inst.costs), abs=1e-9)
        pbdc = opt_single_price("PBDC", inst)
        assert pbdc.value == pytest.approx(oracle_best_pbdc(inst.values, inst.probs, inst.costs), abs=1e-9)
        # the reported value is the profit at the reported prices
        assert exact_profit_discrete(pbdc.prices, inst).mean == pytest.approx(pbdc.value, abs=1e-9)
        assert exact_profit_discrete(pc.prices, inst).mean == pytest.approx(pc.value, abs=1e-9)


@pytest.mark.parametrize("kind", ["PB", "PBDC"])
def test_bundle_price_is_locally_optimal(kind):
    from pbdc.evaluation import BundleCurve

    inst = Instance((MarginalSpec.exponential(1.0, 0.2), MarginalSpec.uniform(0, 2, 0.5),
                     MarginalSpec.normal(1.0, 0.5, 0.1, True)))
    tol = 1e-6
    res = opt_single_price(kind, inst, tolerance=tol)
    curve = BundleCurve(inst, kind)
    P = res.prices.price
    assert curve(P) == pytest.approx(res.value, abs=1e-12)
    assert curve(P + tol) <= res.value + 1e-12
    assert curve(P - tol) <= res.value + 1e-12


# -- size prices and full menus ----------------------------------------------------


def test_bsp_dominates_pure_bundle_on_symmetric_instance():
    inst = Instance((MarginalSpec.uniform(0, 1),) * 3)
    pb = opt_single_price("PB", inst).value
    res = opt_bsp(inst, restarts=3, samples=20_000, seed=1)
    assert res.value >= pb - 1e-3  # search value is on its own sample; PB is exact
    assert list(res.prices.prices) == sorted(res.prices.prices)


def test_bsp_coin_pair():
    res = opt_bsp(COIN2, restarts=3)
    assert res.value >= 2.25 - 1e-12
    assert exact_profit_discrete(res.prices, COIN2).mean == pytest.approx(res.value, abs=1e-12)


def test_bsp_limits_items():
    with pytest.raises(TooManyItems):
        opt_bsp(Instance((MarginalSpec.uniform(0, 1),) * 11))


def test_deterministic_three_point_pair():
    res = opt_deterministic(THREE_POINT_PAIR, restarts=8)
    assert res.value >= 160 / 81 - 1e-9
    assert exact_profit_discrete(res.prices, THREE_POINT_PAIR).mean == pytest.approx(res.value, abs=1e-12)


def test_deterministic_single_uniform():
    res = opt_deterministic(Instance((MarginalSpec.uniform(0, 1),)), restarts=4, samples=50_000)
    assert res.prices.prices[0] == pytest.approx(0.5, abs=0.02)
    assert res.value == pytest.approx(0.25, abs=0.01)


def test_deterministic_limits_items():
    with pytest.raises(TooManyItems):
        opt_deterministic(Instance((MarginalSpec.uniform(0, 1),) * 4))


def test_mixed_bundling_on_three_point_pair():
    res = opt_mixed_bundling(THREE_POINT_PAIR)
    assert res.value >= 160 / 81 - 1e-9


def test_searches_are_reproducible():
    inst = Instance((MarginalSpec.exponential(1.0, 0.1), MarginalSpec.uniform(0, 2, 0.3)))
    a = opt_bsp(inst, restarts=3, samples=5000, seed=9)
    b = opt_bsp(inst, restarts=3, samples=5000, seed=9)
    assert a == b
    a = opt_deterministic(inst, restarts=6, samples=5000, seed=9)
    b = opt_deterministic(inst, restarts=6, samples=5000, seed=9)
    assert a == b


def test_optimize_scheme_dispatch():
    assert optimize_scheme("PB", COIN2).value == pytest.approx(2.25)
    assert optimize_scheme(SchemeKind.MB, THREE_POINT_PAIR).value >= 160 / 81 - 1e-9
    with pytest.raises(ValueError):
        optimize_scheme("PBD", COIN2)


# -- lottery LP --------------------------------------------------------------------


def test_lp_single_item():
    inst = DiscreteInstance(((1.0, 2.0),), ((0.5, 0.5),), (0.0,))
    assert lp_opt_discrete(inst).value == pytest.approx(1.0, abs=1e-9)
    assert oracle_myerson((1.0, 2.0), (0.5, 0.5)) == 1.0


def test_lp_three_point_pair_bounds():
    v = lp_opt_discrete(THREE_POINT_PAIR).value
    assert 160 / 81 - 1e-9 <= v <= 32 / 9 + 1e-9


def test_lp_support_cap():
    big = DiscreteInstance.iid([(float(v), 1 / 45) for v in range(45)], 2)
    with pytest.raises(SupportTooLarge):
        lp_opt_discrete(big)


def test_lp_dominates_schemes_and_is_at_most_n_times_item_pricing():
    rng = np.random.default_rng(17)
    for trial in range(15):
        inst = _random_discrete(rng, costs=bool(trial % 2))
        lp = lp_opt_discrete(inst).value
        pc = oracle_best_pc(inst.values, inst.probs, inst.costs)
        assert lp <= inst.n * pc + 1e-6
        for kind in ("PC", "PB", "PBDC"):
            assert lp >= opt_single_price(kind, inst).value - 1e-6
        assert lp >= opt_bsp(inst, restarts=3).value - 1e-6
        assert lp >= opt_mixed_bundling(inst).value - 1e-6
        if inst.n <= 3:
            assert lp >= opt_deterministic(inst, restarts=6).value - 1e-6


def equal_revenue_tail_atoms(rho, k):
    """Mean-preserving discretization: zero, ``k`` equal-width bins on ``[1, 2)``
    at their conditional means, and the atom at 2."""
    edges = np.linspace(1.0, 2.0, k + 1)
    a, b = edges[:-1], edges[1:]
    mass = rho * (1 / a - 1 / b)
    means = rho * np.log(b / a) / mass
    vals = [0.0, *means.tolist(), 2.0]
    probs = [1 - rho, *mass.tolist(), rho / 2]
    return tuple(vals), tuple(probs)


@pytest.mark.slow
def test_lp_on_discretized_equal_revenue_pair():
    rho = ER_PAIR_RHO
    v, p = equal_revenue_tail_atoms(rho, 12)
    assert sum(p) == pytest.approx(1.0)
    assert np.dot(v, p) == pytest.approx(rho * (math.log(2) + 1), abs=1e-12)  # exact mean kept
    inst = DiscreteInstance((v, v), (p, p), (0.0, 0.0))
    assert lp_opt_discrete(inst).value >= 2 * rho * (2 - rho) - 0.02
