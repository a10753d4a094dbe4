"""Exact no-arbitrage decisions and prices on scenario trees.

Every answer is a rational number and every certificate is re-verified
in exact arithmetic before it is returned.

    python3 demos/03_trees.py
"""

import random
from fractions import Fraction
from pathlib import Path

from elmdkit import brute_force_na, decide_na, emm_deflator, load_market, multiplicative_doob_decompose
from elmdkit import price_real_world, price_risk_neutral
from elmdkit.random_trees import random_martingale, random_savings_account, random_tree

MARKETS = Path(__file__).parent / "markets"

# %% S_1 in {2, 1/2}: a martingale measure exists
tree = load_market(MARKETS / "binomial.json")
cert = decide_na(tree)
print(cert.kind, {k: str(v) for k, v in cert.q.items()})

call = {leaf: max(tree[leaf].S[0] - 1, Fraction(0)) for leaf in tree.leaves()}
print("call, risk-neutral:", price_risk_neutral(call, cert, tree=tree).price)
print("call, real-world:  ", price_real_world(call, emm_deflator(tree, cert), tree).price)

# %% S_1 in {2, 3/2}: buying the stock cannot lose
bad = load_market(MARKETS / "binomial_arbitrage.json")
arb = decide_na(bad)
print(arb.kind, "hold", [str(h) for h in arb.delta[0]], "gains", {k: str(v) for k, v in arb.gains.items()})
print("enumeration agrees:", brute_force_na(bad))

# %% splitting a deflator into martingale part and savings account
rnd = random.Random(4)
t = random_tree(rnd, periods=2)
D, B = random_martingale(rnd, t), random_savings_account(rnd, t)
dec = multiplicative_doob_decompose(t, {n: D[n] / B[n] for n in t.nodes})
print("recovered D and 1/B exactly:", dec.D == D and dec.C == {n: 1 / B[n] for n in t.nodes})
