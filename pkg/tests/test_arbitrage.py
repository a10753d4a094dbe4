import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from elmdkit.arbitrage import (
    ARBITRAGE,
    ARBITRAGE_EXISTS,
    EMM,
    NO_ARBITRAGE,
    SizeLimitError,
    brute_force_na,
    decide_na,
    emm_deflator,
    find_savings_account,
)
from elmdkit.deflator import DomainError
from elmdkit.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, linprog_exact
from elmdkit.market import is_tree_martingale
from elmdkit.portfolio import Strategy, roll_forward
from elmdkit.random_trees import martingale_tree, random_tree, suite_tree

from conftest import one_period_tree

# --- exact LP -----------------------------------------------------------


def test_lp_simple_optimum():
    # max x + y  s.t.  x + 2y <= 4, 3x + y <= 6
    res = linprog_exact([1, 1], A_ub=[[1, 2], [3, 1]], b_ub=[4, 6])
    assert res.status == OPTIMAL
    assert res.value == Fraction(14, 5)
    assert res.x == (Fraction(8, 5), Fraction(6, 5))


def test_lp_infeasible_and_unbounded():
    assert linprog_exact([1], A_eq=[[1]], b_eq=[-1]).status == INFEASIBLE
    assert linprog_exact([1, 0], A_ub=[[-1, 1]], b_ub=[1]).status == UNBOUNDED


def test_lp_free_variables():
    res = linprog_exact([-1], A_ub=[[-1]], b_ub=[3], free=[0])
    assert res.status == OPTIMAL and res.x == (Fraction(-3),)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_lp_matches_scipy(seed):
    g = np.random.default_rng(seed)
    n, m = g.integers(2, 5), g.integers(1, 4)
    A = g.integers(-3, 6, size=(m, n))
    b = g.integers(1, 10, size=m)
    c = g.integers(-2, 5, size=n)
    ours = linprog_exact(c.tolist(), A_ub=A.tolist(), b_ub=b.tolist())
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(0, None)] * n, method="highs")
    if ref.status == 3:
        assert ours.status == UNBOUNDED
    else:
        assert ours.status == OPTIMAL
        assert float(ours.value) == pytest.approx(-ref.fun, abs=1e-7)


# --- decide_na ----------------------------------------------------------


def test_binomial_emm(binomial):
    cert = decide_na(binomial)
    assert cert.kind == EMM
    assert (cert.q[1], cert.q[2]) == (Fraction(1, 3), Fraction(2, 3))
    assert cert.verify(binomial)


def test_binomial_arbitrage(binomial_arbitrage):
    cert = decide_na(binomial_arbitrage)
    assert cert.kind == ARBITRAGE and cert.verify(binomial_arbitrage)
    assert cert.delta[0][0] > 0
    assert all(g >= 0 for g in cert.gains.values())
    # buying one share gains at least 1/2 in every state
    gains = [binomial_arbitrage[c].S[0] - 1 for c in (1, 2)]
    assert min(gains) == Fraction(1, 2)


def test_discounting_changes_the_measure():
    tree = one_period_tree(2, Fraction(1, 2), b1=Fraction(5, 4))
    cert = decide_na(tree)
    assert cert.kind == EMM and cert.q[1] == Fraction(1, 2)


def test_tampered_certificate_fails(binomial):
    cert = decide_na(binomial)
    bad = type(cert)(EMM, q={0: 1, 1: Fraction(1, 2), 2: Fraction(1, 2)},
                     q_transition={0: 1, 1: Fraction(1, 2), 2: Fraction(1, 2)},
                     density={0: 1, 1: 1, 2: 1})
    assert not bad.verify(binomial)


def test_arbitrage_rolls_forward_to_claimed_gains(binomial_arbitrage):
    cert = decide_na(binomial_arbitrage)
    path = roll_forward(Strategy(dict(cert.delta), Fraction(0)), binomial_arbitrage)
    for leaf in binomial_arbitrage.leaves():
        assert path.V[leaf] / binomial_arbitrage[leaf].B == cert.gains[leaf]


def test_emm_deflator_is_deflator(binomial):
    cert = decide_na(binomial)
    dec = emm_deflator(binomial, cert)
    assert is_tree_martingale(binomial, {n: binomial[n].S[0] * dec.Z[n] for n in binomial.nodes})
    with pytest.raises(DomainError):
        emm_deflator(binomial, decide_na(one_period_tree(2, Fraction(3, 2))))


def test_assets_equal_to_savings_account():
    rnd = random.Random(0)
    tree = random_tree(rnd, periods=2)
    tree = tree.with_prices({n: [tree[n].B] * tree.n_assets for n in tree.nodes})
    assert brute_force_na(tree) == NO_ARBITRAGE
    assert decide_na(tree).kind == EMM


def test_brute_force_binomials(binomial, binomial_arbitrage):
    assert brute_force_na(binomial) == NO_ARBITRAGE
    assert brute_force_na(binomial_arbitrage) == ARBITRAGE_EXISTS


def test_brute_force_size_limit():
    tree = random_tree(random.Random(1), periods=4, children=(2, 2))
    with pytest.raises(SizeLimitError):
        brute_force_na(tree)


def test_find_savings_account(binomial):
    assert find_savings_account(binomial, {0: 1, 1: 1, 2: 1}).kind == EMM
    with pytest.raises(DomainError):
        find_savings_account(binomial, {0: 1, 1: 1, 2: Fraction(6, 5)})


def test_find_savings_account_first_asset():
    # first asset deterministic and positive: discounting by it makes it constant
    tree = one_period_tree(Fraction(6, 5), Fraction(6, 5), s0=Fraction(1))
    cert = find_savings_account(tree, {n: tree[n].S[0] for n in tree.nodes})
    assert cert.kind == EMM


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_lp_and_enumeration_agree(seed):
    tree = suite_tree(random.Random(seed))
    cert = decide_na(tree)
    assert cert.verify(tree)
    assert (cert.kind == EMM) == (brute_force_na(tree) == NO_ARBITRAGE)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_martingale_trees_are_arbitrage_free(seed):
    rnd = random.Random(seed)
    tree = martingale_tree(rnd, random_tree(rnd))
    assert decide_na(tree).kind == EMM
