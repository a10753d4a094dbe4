"""Random exact scenario trees, martingales and savings accounts."""

from __future__ import annotations

import random
from fractions import Fraction

from .market import ScenarioTree, TreeNode


def random_probabilities(rnd: random.Random, k: int) -> list[Fraction]:
    weights = [rnd.randint(1, 6) for _ in range(k)]
    total = sum(weights)
    return [Fraction(w, total) for w in weights]


def random_price(rnd: random.Random, low=Fraction(1, 4), high=Fraction(4)) -> Fraction:
    denom = rnd.choice([1, 2, 3, 4, 5, 8])
    lo, hi = int(low * denom), int(high * denom)
    return Fraction(rnd.randint(max(lo, 1), hi), denom)


def random_tree(
    rnd: random.Random,
    periods: int | None = None,
    children: tuple[int, int] = (2, 3),
    n_assets: int | None = None,
    with_rate: bool = True,
) -> ScenarioTree:
    """Tree with i.i.d. rational prices in [1/4, 4] and a random predictable
    savings account growing by 0, 1/20 or 1/10 per step."""
    periods = rnd.randint(1, 3) if periods is None else periods
    d = rnd.randint(1, 2) if n_assets is None else n_assets
    nodes: dict[int, dict] = {0: dict(parent=None, t=0, prob=Fraction(1),
                                      S=tuple(random_price(rnd) for _ in range(d)), B=Fraction(1), children=[])}
    frontier, next_id = [0], 1
    for t in range(1, periods + 1):
        new_frontier = []
        for nid in frontier:
            k = rnd.randint(*children)
            growth = rnd.choice([Fraction(0), Fraction(1, 20), Fraction(1, 10)]) if with_rate else Fraction(0)
            b_next = nodes[nid]["B"] * (1 + growth)
            for p in random_probabilities(rnd, k):
                nodes[next_id] = dict(parent=nid, t=t, prob=p, S=tuple(random_price(rnd) for _ in range(d)),
                                      B=b_next, children=[])
                nodes[nid]["children"].append(next_id)
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return ScenarioTree.from_nodes(
        TreeNode(nid, v["parent"], v["t"], v["prob"], v["S"], v["B"], tuple(v["children"])) for nid, v in nodes.items()
    )


def random_martingale(rnd: random.Random, tree: ScenarioTree, start: Fraction = Fraction(1)) -> dict[int, Fraction]:
    """Strictly positive exact martingale on ``tree`` starting at ``start``."""
    M = {tree.root: Fraction(start)}
    for nid in tree.preorder():
        kids = tree[nid].children
        if not kids:
            continue
        while True:
            moves = [Fraction(rnd.randint(-8, 8), 10) for _ in kids[:-1]]
            head = sum((tree[c].prob * u for c, u in zip(kids, moves)), Fraction(0))
            last = -head / tree[kids[-1]].prob
            if last > -1:
                break
        for c, u in zip(kids, moves + [last]):
            M[c] = M[nid] * (1 + u)
    return M


def random_savings_account(rnd: random.Random, tree: ScenarioTree) -> dict[int, Fraction]:
    B = {tree.root: Fraction(1)}
    for nid in tree.preorder():
        kids = tree[nid].children
        if kids:
            nxt = B[nid] * Fraction(rnd.randint(8, 14), 10)
            B.update({c: nxt for c in kids})
    return B


def martingale_tree(rnd: random.Random, tree: ScenarioTree) -> ScenarioTree:
    """Replace prices so that ``S / B`` is a martingale under ``P`` itself,
    which guarantees an EMM exists (``P`` is one)."""
    B = {nid: tree[nid].B for nid in tree.nodes}
    discounted = [random_martingale(rnd, tree, random_price(rnd)) for _ in range(tree.n_assets)]
    return tree.with_prices({nid: [m[nid] * B[nid] for m in discounted] for nid in tree.nodes})


def suite_tree(rnd: random.Random) -> ScenarioTree:
    """Mixed instance for the NA equivalence suite.

    Draws i.i.d. price trees (mostly arbitrage), martingale trees (always
    arbitrage-free) and martingale trees with one perturbed node, where one
    child's discounted price is moved onto its parent's so that only
    boundary (not strictly positive) martingale weights may remain.
    """
    kind = rnd.random()
    tree = random_tree(rnd)
    if kind < 0.35:
        return tree
    tree = martingale_tree(rnd, tree)
    if kind < 0.7:
        return tree
    nid = rnd.choice(tree.internal_nodes())
    kids = tree[nid].children
    victim = rnd.choice(kids)
    b_kid = tree[victim].B
    S = {n: list(tree[n].S) for n in tree.nodes}
    i = rnd.randrange(tree.n_assets)
    if rnd.random() < 0.5:
        S[victim][i] = tree[nid].S[i] / tree[nid].B * b_kid
    else:
        S[victim][i] = S[victim][i] + Fraction(rnd.randint(1, 4), 4) * b_kid
    return tree.with_prices(S)
