import warnings
from fractions import Fraction

import numpy as np
import pytest

from elmdkit.arbitrage import decide_na, emm_deflator
from elmdkit.deflator import DeflatorDecomposition, DomainError, build_deflator_paths, minimal_market_deflator, solve_market_price_of_risk
from elmdkit.market import ItoMarketSpec, MinimalMarketSpec, RateCurve, ScenarioTree, TreeNode
from elmdkit.portfolio import stack_assets
from elmdkit.pricing import (
    HeavyTailWarning,
    bond_gap_experiment,
    bond_paths_deterministic,
    bond_paths_minimal_market,
    claim_name,
    claim_payoff,
    price_forward_measure,
    price_real_world,
    price_risk_neutral,
    pricing_csv,
)
from elmdkit.sde import PathBundle, martingale_test, simulate_besq4_paths, simulate_stochastic_exponential

from conftest import one_period_tree

N = 100_000
BOND = 1 - np.exp(-0.5)


def within(res, target, c=3.0):
    return abs(res.price - target) <= c * res.stderr


def _one_asset(n=N, seed=0, refine=1):
    spec = ItoMarketSpec.constant(1.0, 0.05, 0.2, 0.02)
    bundle = simulate_stochastic_exponential(spec, n, seed, refine=refine)
    sol = solve_market_price_of_risk(spec)
    return spec, bundle, build_deflator_paths(sol, bundle), sol.rate_curve()


def test_unit_claim_trivial_deflator():
    dec = DeflatorDecomposition(np.ones((10, 2)), np.ones((10, 2)), np.ones((10, 2)), "constructed")
    assert price_real_world(np.ones(10), dec).price == 1.0


def test_real_world_bond_minimal_market():
    dec = minimal_market_deflator(MinimalMarketSpec(1.0), np.array([0.0, 1.0]), N, 1)
    res = price_real_world(np.ones(N), dec)
    assert within(res, BOND)


def test_real_world_deflated_asset():
    _, bundle, dec, _ = _one_asset()
    res = price_real_world(bundle["S1"][:, -1], dec)
    assert within(res, 1.0)


def test_risk_neutral_unit_claim():
    _, _, dec, curve = _one_asset()
    res = price_risk_neutral(np.ones(N), dec.D, curve)
    assert within(res, np.exp(-0.02))


def test_same_seed_identity():
    _, bundle, dec, curve = _one_asset(seed=4)
    H = np.maximum(bundle["S1"][:, -1] - 1.0, 0.0)
    rw = price_real_world(H, dec)
    rn = price_risk_neutral(H, dec.D, curve)
    assert rw.price == pytest.approx(rn.price, rel=1e-12)


def test_binomial_call_exact(binomial):
    cert = decide_na(binomial)
    H = {1: Fraction(1), 2: Fraction(0)}
    rn = price_risk_neutral(H, cert, tree=binomial)
    rw = price_real_world(H, emm_deflator(binomial, cert), binomial)
    assert rn.price == rw.price == Fraction(1, 3)
    assert rn.exact and rn.csv_row()[2] == "1/3"


def test_forward_unit_claim_gives_bond():
    _, bundle, dec, curve = _one_asset()
    P = np.broadcast_to(bond_paths_deterministic(curve, bundle.grid), dec.Z.shape)
    res = price_forward_measure(np.ones(N), P, dec)
    # P_T = 1, so the estimate is exactly mean(Z_T / Z_0), which is P_0 in expectation
    assert res.price == pytest.approx(np.mean(dec.Z[:, -1] / dec.Z[:, 0]), rel=1e-12)
    assert within(res, P[0, 0])
    assert P[0, 0] == pytest.approx(np.exp(-0.02), rel=1e-14)


def test_forward_minimal_market_bond():
    grid = np.linspace(0, 1, 3)
    spec = MinimalMarketSpec(1.0)
    dec = minimal_market_deflator(spec, grid, N, 2)
    X = simulate_besq4_paths(1.0, grid, N, 2)["X"]
    P = bond_paths_minimal_market(X, grid, 0.0)
    assert P[0, 0] == pytest.approx(BOND, rel=1e-14)
    fwd = price_forward_measure(np.ones(N), P, dec)
    rw = price_real_world(np.ones(N), dec)
    assert abs(fwd.price - rw.price) <= 3 * np.hypot(fwd.stderr, rw.stderr)
    # the bond is a fair asset: P Z is a true martingale even though Z is not
    b = PathBundle(2, grid, {"PZ": P * dec.Z})
    assert martingale_test(b, "PZ").passed


def _two_period_tree():
    half = Fraction(1, 2)
    f = Fraction
    nodes = [
        TreeNode(0, None, 0, f(1), (f(1),), f(1), (1, 2)),
        TreeNode(1, 0, 1, half, (f(2),), f(1), (3, 4)),
        TreeNode(2, 0, 1, half, (half,), f(1), (5, 6)),
        TreeNode(3, 1, 2, f(1, 3), (f(4),), f(1), ()),
        TreeNode(4, 1, 2, f(2, 3), (f(1),), f(1), ()),
        TreeNode(5, 2, 2, half, (f(1),), f(1), ()),
        TreeNode(6, 2, 2, half, (f(1, 4),), f(1), ()),
    ]
    return ScenarioTree.from_nodes(nodes)


def test_forward_digital_on_tree():
    tree = _two_period_tree()
    cert = decide_na(tree)
    dec = emm_deflator(tree, cert)
    H = {leaf: Fraction(int(tree[leaf].S[0] > 1)) for leaf in tree.leaves()}
    bond = price_real_world({leaf: Fraction(1) for leaf in tree.leaves()}, dec, tree).node_prices
    fwd = price_forward_measure(H, bond, dec, tree)
    # with B = 1 the bond is 1 everywhere and forward = Q expectation
    expected = sum(cert.q[leaf] * H[leaf] for leaf in tree.leaves())
    assert fwd.price == expected == Fraction(1, 9)


def test_tree_node_prices_are_consistent():
    tree = _two_period_tree()
    cert = decide_na(tree)
    dec = emm_deflator(tree, cert)
    H = {leaf: max(tree[leaf].S[0] - 1, Fraction(0)) for leaf in tree.leaves()}
    res = price_real_world(H, dec, tree)
    # pi Z is a tree martingale
    from elmdkit.market import is_tree_martingale

    assert is_tree_martingale(tree, {n: res.node_prices[n] * dec.Z[n] for n in tree.nodes})


def test_negative_claim_rejected():
    with pytest.raises(DomainError):
        price_real_world(-np.ones(3), DeflatorDecomposition(np.ones((3, 2)), None, None, "constructed"))


def test_heavy_tail_warning():
    samples = np.zeros(1000)
    samples[:5] = 1000.0
    samples[5:] = 0.001
    dec = DeflatorDecomposition(np.ones((1000, 2)), None, None, "constructed")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = price_real_world(samples, dec)
    assert res.warning is not None
    assert any(issubclass(w.category, HeavyTailWarning) for w in caught)


def test_bond_gap_unit_horizon():
    rep = bond_gap_experiment(1.0, 0.0, N, 0)
    assert rep.real_world_consistent
    assert rep.risk_neutral == 1.0
    assert rep.gap_exact == pytest.approx(0.6065306597, abs=1e-9)
    assert rep.gap_flagged


def test_bond_gap_discounting_scales_both():
    a = bond_gap_experiment(1.0, 0.0, 10_000, 5)
    b = bond_gap_experiment(1.0, 0.02, 10_000, 5)
    assert b.real_world == pytest.approx(a.real_world * np.exp(-0.02), rel=1e-12)
    assert b.risk_neutral == pytest.approx(np.exp(-0.02), rel=1e-15)


def test_bond_gap_long_horizon():
    rep = bond_gap_experiment(50.0, 0.0, N, 6)
    assert rep.real_world_exact == pytest.approx(1 - np.exp(-0.01), rel=1e-12)
    assert rep.real_world_exact == pytest.approx(0.00995, abs=1e-5)
    assert rep.to_json()["gap_ratio"] == pytest.approx(0.99, abs=0.002)
    assert rep.real_world_consistent


def test_claim_specs():
    terminal = np.array([[0.5], [1.5]])
    np.testing.assert_array_equal(claim_payoff({"type": "call", "strike": 1}, terminal), [0.0, 0.5])
    np.testing.assert_array_equal(claim_payoff({"type": "put", "strike": 1}, terminal), [0.5, 0.0])
    np.testing.assert_array_equal(claim_payoff({"type": "digital", "strike": 1}, terminal), [0.0, 1.0])
    assert claim_payoff({"type": "call", "strike": "1/2"}, (Fraction(2),)) == Fraction(3, 2)
    assert claim_name({"type": "call", "strike": 1}) == "call(S1,K=1)"
    with pytest.raises(ValueError):
        claim_payoff({"type": "barrier", "strike": 1}, terminal)


def test_pricing_csv(binomial):
    cert = decide_na(binomial)
    res = price_risk_neutral({1: Fraction(1), 2: Fraction(0)}, cert, tree=binomial, claim="call")
    text = pricing_csv([res])
    assert text.splitlines() == ["claim,method,price,stderr,n,seed", "call,risk-neutral,1/3,0.0,tree,"]
