"""No-arbitrage on scenario trees.

:func:`decide_na` returns either an equivalent martingale measure for the
market discounted by its savings account or a self-financing arbitrage,
both verified exactly before being returned. A market on a finite tree is
free of arbitrage iff every one-period sub-market is, and the martingale
conditions are local to each node, so the search runs node by node with
two small exact LPs.

:func:`brute_force_na` answers the same question without any LP: it
enumerates the extreme rays of the cone of nonnegative one-period gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Mapping

import sympy

from .deflator import CONSTRUCTED, DeflatorDecomposition, DomainError
from .lp import OPTIMAL, linprog_exact
from .market import ScenarioTree, format_fraction, is_tree_martingale

EMM = "emm"
ARBITRAGE = "arbitrage"

NO_ARBITRAGE = "no-arbitrage"
ARBITRAGE_EXISTS = "arbitrage-exists"


class CertificateError(RuntimeError):
    """A computed certificate failed its own exact verification."""


class SizeLimitError(ValueError):
    pass


def discounted_prices(tree: ScenarioTree) -> dict[int, tuple[Fraction, ...]]:
    return {nid: tuple(s / node.B for s in node.S) for nid, node in tree.nodes.items()}


@dataclass(frozen=True)
class LPCertificate:
    """Outcome of :func:`decide_na`.

    For ``kind == "emm"``: ``q`` holds the unconditional measure of every
    node, ``q_transition`` the conditional one-step weights and ``density``
    the density process ``dQ/dP`` on each node.

    For ``kind == "arbitrage"``: ``delta[node]`` are the asset holdings kept
    from ``node`` to its children (financed in the savings account, zero
    initial value) and ``gains[leaf]`` the discounted terminal value.
    """

    kind: str
    q: dict[int, Fraction] = field(default_factory=dict)
    q_transition: dict[int, Fraction] = field(default_factory=dict)
    density: dict[int, Fraction] = field(default_factory=dict)
    delta: dict[int, tuple[Fraction, ...]] = field(default_factory=dict)
    gains: dict[int, Fraction] = field(default_factory=dict)
    node: int | None = None

    def verify(self, tree: ScenarioTree) -> bool:
        if self.kind == EMM:
            return _verify_emm(tree, self)
        if self.kind == ARBITRAGE:
            return _verify_arbitrage(tree, self)
        return False

    def to_json(self) -> dict:
        if self.kind == EMM:
            return {
                "kind": EMM,
                "q": {str(k): format_fraction(v) for k, v in self.q.items()},
                "q_transition": {str(k): format_fraction(v) for k, v in self.q_transition.items()},
            }
        return {
            "kind": ARBITRAGE,
            "node": self.node,
            "delta": {str(k): [format_fraction(x) for x in v] for k, v in self.delta.items()},
            "gains": {str(k): format_fraction(v) for k, v in self.gains.items()},
        }


def _verify_emm(tree: ScenarioTree, cert: LPCertificate) -> bool:
    if any(cert.q_transition[nid] <= 0 for nid in tree.nodes if nid != tree.root):
        return False
    for nid in tree.internal_nodes():
        if sum((cert.q_transition[c] for c in tree[nid].children), Fraction(0)) != 1:
            return False
    if sum((cert.q[leaf] for leaf in tree.leaves()), Fraction(0)) != 1:
        return False
    X = discounted_prices(tree)
    for nid in tree.internal_nodes():
        kids = tree[nid].children
        for i in range(tree.n_assets):
            if sum((cert.q_transition[c] * X[c][i] for c in kids), Fraction(0)) != X[nid][i]:
                return False
    P = tree.path_probability()
    return all(cert.density[nid] == cert.q[nid] / P[nid] for nid in tree.nodes) and is_tree_martingale(
        tree, cert.density
    )


def _verify_arbitrage(tree: ScenarioTree, cert: LPCertificate) -> bool:
    X = discounted_prices(tree)
    value = {tree.root: Fraction(0)}
    for nid in tree.preorder():
        hold = cert.delta.get(nid, (Fraction(0),) * tree.n_assets)
        for c in tree[nid].children:
            value[c] = value[nid] + sum((h * (X[c][i] - X[nid][i]) for i, h in enumerate(hold)), Fraction(0))
    leaves = tree.leaves()
    if any(value[leaf] != cert.gains.get(leaf) for leaf in leaves):
        return False
    return all(value[leaf] >= 0 for leaf in leaves) and any(value[leaf] > 0 for leaf in leaves)


def _local_emm(x_node, x_kids) -> tuple[Fraction, ...] | None:
    """Strictly positive one-step weights making ``x`` a martingale, or None.

    Maximises the smallest weight ``t``: variables ``(q_1..q_K, t)``.
    """
    K, d = len(x_kids), len(x_node)
    A_eq = [[Fraction(1)] * K + [Fraction(0)]]
    b_eq = [Fraction(1)]
    for i in range(d):
        A_eq.append([xk[i] for xk in x_kids] + [Fraction(0)])
        b_eq.append(x_node[i])
    A_ub = []
    for k in range(K):
        row = [Fraction(0)] * (K + 1)
        row[k], row[K] = Fraction(-1), Fraction(1)
        A_ub.append(row)
    res = linprog_exact([0] * K + [1], A_eq, b_eq, A_ub, [0] * K)
    if res.status != OPTIMAL or res.value <= 0:
        return None
    return res.x[:K]


def _local_arbitrage(x_node, x_kids) -> tuple[Fraction, ...] | None:
    """Holdings with nonnegative, not all zero one-step gains, or None.

    Maximises the total gain with the total capped at one.
    """
    d = len(x_node)
    moves = [[xk[i] - x_node[i] for i in range(d)] for xk in x_kids]
    total = [sum((mv[i] for mv in moves), Fraction(0)) for i in range(d)]
    A_ub = [[-v for v in mv] for mv in moves] + [total]
    b_ub = [0] * len(moves) + [1]
    res = linprog_exact(total, A_ub=A_ub, b_ub=b_ub, free=range(d))
    if res.status != OPTIMAL or res.value <= 0:
        return None
    return res.x


def decide_na(tree: ScenarioTree) -> LPCertificate:
    """Return a verified EMM certificate or a verified arbitrage certificate."""
    X = discounted_prices(tree)
    q_transition = {tree.root: Fraction(1)}
    for nid in tree.internal_nodes():
        kids = tree[nid].children
        x_kids = [X[c] for c in kids]
        weights = _local_emm(X[nid], x_kids)
        if weights is not None:
            q_transition.update(zip(kids, weights))
            continue
        hold = _local_arbitrage(X[nid], x_kids)
        if hold is None:
            raise CertificateError(f"node {nid}: neither a positive martingale measure nor an arbitrage was found")
        cert = _arbitrage_certificate(tree, nid, hold, X)
        break
    else:
        q = {tree.root: Fraction(1)}
        for nid in tree.preorder():
            for c in tree[nid].children:
                q[c] = q[nid] * q_transition[c]
        P = tree.path_probability()
        cert = LPCertificate(EMM, q=q, q_transition=q_transition, density={n: q[n] / P[n] for n in q})
    if not cert.verify(tree):
        raise CertificateError(f"{cert.kind} certificate failed exact verification")
    return cert


def _arbitrage_certificate(tree, nid, hold, X) -> LPCertificate:
    zero = (Fraction(0),) * tree.n_assets
    delta = {n: (tuple(hold) if n == nid else zero) for n in tree.internal_nodes()}
    gains = {}
    for c in tree[nid].children:
        g = sum((h * (X[c][i] - X[nid][i]) for i, h in enumerate(hold)), Fraction(0))
        stack = [c]
        while stack:
            n = stack.pop()
            if tree[n].children:
                stack.extend(tree[n].children)
            else:
                gains[n] = g
    for leaf in tree.leaves():
        gains.setdefault(leaf, Fraction(0))
    return LPCertificate(ARBITRAGE, delta=delta, gains=gains, node=nid)


def emm_deflator(tree: ScenarioTree, cert: LPCertificate) -> DeflatorDecomposition:
    """``Z = D / B`` with ``D`` the density process of the EMM."""
    if cert.kind != EMM:
        raise DomainError("an arbitrage certificate carries no deflator")
    D = dict(cert.density)
    C = {nid: 1 / tree[nid].B for nid in tree.nodes}
    return DeflatorDecomposition({n: D[n] * C[n] for n in D}, D, C, CONSTRUCTED)


def find_savings_account(tree: ScenarioTree, B: Mapping[int, Fraction]) -> LPCertificate:
    """Run :func:`decide_na` with a caller-supplied savings account."""
    B = {k: Fraction(v) for k, v in B.items()}
    if set(B) != set(tree.nodes):
        raise DomainError("candidate savings account must be given on every node")
    if B[tree.root] != 1:
        raise DomainError("candidate savings account must equal 1 at the root")
    if any(v <= 0 for v in B.values()):
        raise DomainError("candidate savings account must be strictly positive")
    for nid in tree.internal_nodes():
        if len({B[c] for c in tree[nid].children}) != 1:
            raise DomainError(f"candidate savings account not predictable below node {nid}")
    return decide_na(tree.with_savings_account(B))


# ---------------------------------------------------------------------------
# oracle

MAX_PERIODS, MAX_CHILDREN, MAX_ASSETS = 3, 4, 3


def _nonnegative_gain_exists(moves: list[list[Fraction]]) -> bool:
    """Does the span of the gain vectors meet the nonnegative orthant
    outside the origin?

    ``moves[k]`` is the discounted price change into child ``k``; the gains
    of holdings ``h`` are ``Y h``. Every extreme ray of
    ``{Y h} & R^K_+`` spans a one-dimensional subspace
    ``{Y h : (Y h)_j = 0, j in J}``, so trying every zero pattern ``J``
    finds one whenever the cone is nontrivial.
    """
    Y = sympy.Matrix(moves)
    K = Y.rows
    for size in range(K):
        for zeros in combinations(range(K), size):
            if zeros:
                basis = Y.extract(list(zeros), list(range(Y.cols))).nullspace()
                if not basis:
                    continue
                G = Y * sympy.Matrix.hstack(*basis)
            else:
                G = Y
            if G.rank() != 1:
                continue
            ray = next(G.col(j) for j in range(G.cols) if any(v != 0 for v in G.col(j)))
            if all(v >= 0 for v in ray) or all(v <= 0 for v in ray):
                return True
    return False


def brute_force_na(tree: ScenarioTree) -> str:
    if tree.horizon > MAX_PERIODS or tree.n_assets > MAX_ASSETS:
        raise SizeLimitError(f"oracle limited to {MAX_PERIODS} periods and {MAX_ASSETS} assets")
    if any(len(tree[n].children) > MAX_CHILDREN for n in tree.nodes):
        raise SizeLimitError(f"oracle limited to {MAX_CHILDREN} children per node")
    for nid in tree.internal_nodes():
        node = tree[nid]
        here = [sympy.Rational(s.numerator, s.denominator) / sympy.Rational(node.B.numerator, node.B.denominator)
                for s in node.S]
        moves = []
        for c in node.children:
            kid = tree[c]
            b = sympy.Rational(kid.B.numerator, kid.B.denominator)
            moves.append([sympy.Rational(s.numerator, s.denominator) / b - here[i] for i, s in enumerate(kid.S)])
        if _nonnegative_gain_exists(moves):
            return ARBITRAGE_EXISTS
    return NO_ARBITRAGE
