import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elmdkit import rng
from elmdkit.arbitrage import EMM, decide_na, emm_deflator
from elmdkit.deflator import build_deflator_paths, solve_market_price_of_risk
from elmdkit.market import ItoMarketSpec, savings_account_values
from elmdkit.portfolio import (
    DYNAMIC,
    Strategy,
    StrategyError,
    build_mean_self_financing,
    constant_proportion,
    deflated_test,
    deflated_tree_martingale,
    first_negative,
    pnl_from_increments,
    pnl_process,
    roll_forward,
)
from elmdkit.random_trees import martingale_tree, random_tree
from elmdkit.sde import MARTINGALE, simulate_stochastic_exponential

SPEC = ItoMarketSpec.constant(1.0, 0.05, 0.2, 0.02)


def _setup(n=2000, seed=0, refine=12):
    bundle = simulate_stochastic_exponential(SPEC, n, seed, refine=refine)
    sol = solve_market_price_of_risk(SPEC)
    B, _ = savings_account_values(sol.rate_curve(), bundle.grid)
    return bundle, B, build_deflator_paths(sol, bundle)


def test_pure_savings():
    bundle, B, _ = _setup()
    path = roll_forward(Strategy(np.zeros((12, 1)), 2.0), bundle, B)
    np.testing.assert_allclose(path.V, np.broadcast_to(2.0 * B, path.V.shape), rtol=1e-14)


def test_buy_and_hold_without_interest():
    spec = ItoMarketSpec.constant(1.0, 0.05, 0.2, 0.0)
    bundle = simulate_stochastic_exponential(spec, 100, 1, refine=5)
    path = roll_forward(Strategy(np.ones((5, 1)), 3.0), bundle, np.ones(6))
    np.testing.assert_allclose(path.V, 3.0 + bundle["S1"] - 1.0, rtol=1e-14)


def test_accounting_identity_paths():
    bundle, B, _ = _setup()
    path = roll_forward(Strategy(constant_proportion([0.6]), 1.0), bundle, B)
    assert np.max(np.abs(path.accounting_residual())) < 1e-12
    np.testing.assert_array_equal(path.pnl, 0.0)


def test_numeraire_change_paths():
    bundle, B, _ = _setup()
    strategy = Strategy(constant_proportion([0.4]), 1.0)
    raw = roll_forward(strategy, bundle, B)
    discounted = bundle.with_process("S1", bundle["S1"] / B[None, :])
    path = roll_forward(strategy, discounted, np.ones_like(B))
    np.testing.assert_allclose(path.V, raw.V / B[None, :], rtol=1e-10)


def test_strategy_shape_mismatch():
    bundle, B, _ = _setup()
    with pytest.raises(StrategyError):
        roll_forward(Strategy(np.ones((7, 2)), 1.0), bundle, B)


def test_dynamic_needs_eta():
    with pytest.raises(StrategyError):
        Strategy(np.ones((3, 1)), 1.0, DYNAMIC)


def test_deflated_buy_and_hold_is_martingale():
    bundle, B, dec = _setup(n=100_000, seed=3)
    path = roll_forward(Strategy(np.ones((12, 1)), 1.0), bundle, B)
    assert deflated_test(path, dec, bundle.grid).verdict == MARTINGALE


# --- P&L ---------------------------------------------------------------


def test_constant_eta_no_pnl():
    B = np.exp(0.02 * np.linspace(0, 1, 6))
    np.testing.assert_allclose(pnl_process(np.full(5, 0.7), B), 0.0, atol=1e-15)


def test_unit_savings_account():
    eta = np.array([0.5, 1.0, -0.25, 2.0])
    C = pnl_process(eta, np.ones(5))
    np.testing.assert_allclose(C[0, 1:], eta - eta[0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fractions(-5, 5, max_denominator=7), min_size=1, max_size=8), st.integers(0, 10**6))
def test_pnl_definition_matches_increment_form(eta, seed):
    rnd = random.Random(seed)
    B = [Fraction(1)]
    for _ in eta:
        B.append(B[-1] * Fraction(rnd.randint(9, 13), 10))
    eta = np.array(eta, dtype=object)
    B = np.array(B, dtype=object)
    assert (pnl_process(eta, B) == pnl_from_increments(eta, B)).all()


def test_first_negative():
    V = np.array([[1.0, 0.5], [1.0, -1e-13], [1.0, -0.1]])
    assert first_negative(V) == 2


# --- trees -------------------------------------------------------------


def test_tree_self_financing_exact(binomial):
    path = roll_forward(Strategy({0: [Fraction(1, 2)]}, Fraction(1)), binomial)
    assert path.V == {0: 1, 1: Fraction(3, 2), 2: Fraction(3, 4)}
    assert all(v == 0 for v in path.accounting_residual().values())
    dec = emm_deflator(binomial, decide_na(binomial))
    assert deflated_tree_martingale(binomial, path, dec)


def test_tree_unknown_node(binomial):
    with pytest.raises(StrategyError):
        roll_forward(Strategy({9: [Fraction(1)]}, Fraction(1)), binomial)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_tree_deflated_value_is_martingale(seed):
    rnd = random.Random(seed)
    tree = martingale_tree(rnd, random_tree(rnd))
    cert = decide_na(tree)
    assert cert.kind == EMM
    delta = {n: [Fraction(rnd.randint(-4, 4), 4) for _ in range(tree.n_assets)] for n in tree.internal_nodes()}
    path = roll_forward(Strategy(delta, Fraction(rnd.randint(0, 8), 4)), tree)
    assert deflated_tree_martingale(tree, path, emm_deflator(tree, cert))
    # numeraire change is exact on trees
    disc = tree.with_prices({n: [s / tree[n].B for s in tree[n].S] for n in tree.nodes})
    disc = disc.with_savings_account({n: Fraction(1) for n in tree.nodes})
    again = roll_forward(Strategy(delta, path.v0), disc)
    assert all(again.V[n] == path.V[n] / tree[n].B for n in tree.nodes)


def test_tree_dynamic_pnl(binomial):
    path = roll_forward(Strategy({0: [Fraction(1)]}, Fraction(0), DYNAMIC, {0: Fraction(1, 2)}), binomial)
    assert path.V[0] == Fraction(3, 2)
    assert all(v == 0 for v in path.accounting_residual().values())


# --- mean self-financing ------------------------------------------------


def _independent(n, steps, grid):
    return rng.normals(0, rng.INDEPENDENT, n, (steps,)) * np.sqrt(np.diff(grid))[None, :]


def test_zero_vartheta_reduces_to_base():
    bundle, B, dec = _setup(n=500)
    base = Strategy(constant_proportion([0.5]), 1.0)
    _, path, report = build_mean_self_financing(base, 0.0, bundle, B, dec, _independent(500, 12, bundle.grid))
    np.testing.assert_allclose(path.pnl, 0.0, atol=1e-14)
    np.testing.assert_allclose(path.V, roll_forward(base, bundle, B).V, rtol=1e-13)
    assert report.pnl_identity_error < 1e-12


def test_mean_self_financing_construction():
    n = 100_000
    bundle, B, dec = _setup(n=n, seed=8)
    base = Strategy(constant_proportion([0.5]), 1.0)
    strategy, path, report = build_mean_self_financing(base, 0.1, bundle, B, dec, _independent(n, 12, bundle.grid))
    assert strategy.kind == DYNAMIC
    assert report.negative_path is None
    assert report.pnl_test.passed and report.deflated_test.passed
    assert report.covariation_consistent
    assert report.passed
    assert np.max(np.abs(path.accounting_residual())) < 1e-12


def test_negative_value_reported():
    n = 2000
    bundle, B, dec = _setup(n=n, seed=9)
    base = Strategy(constant_proportion([0.5]), 0.01)
    _, _, report = build_mean_self_financing(base, 5.0, bundle, B, dec, _independent(n, 12, bundle.grid))
    assert report.negative_path is not None and not report.passed
