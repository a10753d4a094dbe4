"""Portfolio accounting for self-financing and dynamic strategies.

Holdings are indexed by trading period: on a grid ``t_0 < ... < t_N`` the
holdings ``delta[:, k]`` (assets) and ``eta[:, k]`` (savings account) are
kept over ``(t_k, t_{k+1}]`` and chosen with information up to ``t_k``. On
a tree, ``delta[node]`` is kept from ``node`` to its children. The value
``V`` at a time is the value of the holdings carried into it, before any
rebalancing there, and the accounting identity

    V = V_0 + delta . dS + eta . dB + C

holds with ``C`` the cumulative capital injected while rebalancing (the
P&L process, zero for self-financing strategies).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .deflator import DeflatorDecomposition
from .market import ScenarioTree, is_tree_martingale
from .sde import MartingaleTestReport, PathBundle, mean_and_stderr, martingale_test

SELF_FINANCING = "sf"
DYNAMIC = "dyn"

NEGATIVE_TOL = 1e-12


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class Strategy:
    """Trading strategy in the assets and the savings account.

    ``delta`` on paths is an array ``(N, d)`` or ``(n_paths, N, d)``, or a
    rule ``delta(k, S_k, V_k) -> (n_paths, d)`` evaluated on the values at
    ``t_k``; on a tree it maps internal nodes to holdings. ``eta`` is given
    only for dynamic strategies; for self-financing ones it is derived.
    """

    delta: object
    v0: float | Fraction = 1.0
    kind: str = SELF_FINANCING
    eta: object = None

    def __post_init__(self):
        if self.kind not in (SELF_FINANCING, DYNAMIC):
            raise StrategyError(f"unknown strategy kind {self.kind!r}")
        if self.kind == DYNAMIC and self.eta is None:
            raise StrategyError("dynamic strategies need explicit savings-account holdings")
        if self.kind == SELF_FINANCING and self.v0 < 0:
            raise StrategyError("initial value must be nonnegative")


def constant_proportion(weights) -> Callable:
    """Rule keeping the fraction ``weights[i]`` of wealth in asset ``i``."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))

    def rule(k, S, V):
        return V[:, None] * w[None, :] / S

    return rule


def scheduled_proportion(weights) -> Callable:
    """Like :func:`constant_proportion` with one weight vector per period."""
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = w[:, None]

    def rule(k, S, V):
        return V[:, None] * w[k][None, :] / S

    return rule


@dataclass(frozen=True)
class PortfolioPath:
    V: object
    v0: object
    gains_assets: object
    gains_savings: object
    pnl: object
    delta: object = None
    eta: object = None
    kind: str = SELF_FINANCING

    def accounting_residual(self):
        """``V - (V_0 + delta.dS + eta.dB + C)``; zero up to rounding on
        paths and exactly zero on trees."""
        if isinstance(self.V, Mapping):
            return {n: self.V[n] - (self.v0 + self.gains_assets[n] + self.gains_savings[n] + self.pnl[n])
                    for n in self.V}
        return self.V - (self.v0 + self.gains_assets + self.gains_savings + self.pnl)


def stack_assets(bundle: PathBundle, labels=None) -> np.ndarray:
    """``(n_paths, N + 1, d)`` array of the asset processes ``S1, S2, ...``."""
    if labels is None:
        labels = sorted((lab for lab in bundle.labels if lab[:1] == "S" and lab[1:].isdigit()),
                        key=lambda lab: int(lab[1:]))
    return np.stack([bundle[lab] for lab in labels], axis=2)


def _as_path_array(x, n_paths: int, n_steps: int, tail: tuple = ()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    try:
        return np.broadcast_to(x, (n_paths, n_steps, *tail))
    except ValueError as exc:
        raise StrategyError(f"holdings of shape {x.shape} do not match {(n_paths, n_steps, *tail)}") from exc


def roll_forward(strategy: Strategy, market, B=None, assets=None) -> PortfolioPath:
    """Evolve a strategy on simulated paths or on a scenario tree.

    ``market`` is a :class:`PathBundle` (with ``B`` the savings account on
    its grid) or a :class:`ScenarioTree` (which carries its own ``B``).
    """
    if isinstance(market, ScenarioTree):
        return _roll_tree(strategy, market)
    S = stack_assets(market, assets)
    n, steps, d = S.shape[0], S.shape[1] - 1, S.shape[2]
    if B is None:
        raise StrategyError("paths need the savings account values")
    B = np.broadcast_to(np.asarray(B, dtype=float), (n, steps + 1))
    dS = np.diff(S, axis=1)
    dB = np.diff(B, axis=1)

    if strategy.kind == DYNAMIC:
        delta = _as_path_array(strategy.delta, n, steps, (d,))
        eta = _as_path_array(strategy.eta, n, steps)
        V = np.empty((n, steps + 1))
        V[:, 0] = np.einsum("pd,pd->p", delta[:, 0], S[:, 0]) + eta[:, 0] * B[:, 0]
        V[:, 1:] = np.einsum("pkd,pkd->pk", delta, S[:, 1:]) + eta * B[:, 1:]
        gains_s = _cum(np.einsum("pkd,pkd->pk", delta, dS))
        gains_b = _cum(eta * dB)
        pnl = V - V[:, :1] - gains_s - gains_b
        return PortfolioPath(V, V[:, :1].copy(), gains_s, gains_b, pnl, delta, eta, DYNAMIC)

    rule = strategy.delta if callable(strategy.delta) else None
    fixed = None if rule else _as_path_array(strategy.delta, n, steps, (d,))
    V = np.empty((n, steps + 1))
    V[:, 0] = strategy.v0
    delta = np.empty((n, steps, d))
    eta = np.empty((n, steps))
    for k in range(steps):
        hold = np.asarray(rule(k, S[:, k], V[:, k]) if rule else fixed[:, k], dtype=float)
        if hold.shape != (n, d):
            hold = _as_path_array(hold, n, 1, (d,))[:, 0]
        delta[:, k] = hold
        eta[:, k] = (V[:, k] - np.einsum("pd,pd->p", hold, S[:, k])) / B[:, k]
        V[:, k + 1] = np.einsum("pd,pd->p", hold, S[:, k + 1]) + eta[:, k] * B[:, k + 1]
    gains_s = _cum(np.einsum("pkd,pkd->pk", delta, dS))
    gains_b = _cum(eta * dB)
    return PortfolioPath(V, float(strategy.v0), gains_s, gains_b, np.zeros_like(V), delta, eta, SELF_FINANCING)


def _cum(increments: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros_like(increments[:, :1]), np.cumsum(increments, axis=1)], axis=1)


def _roll_tree(strategy: Strategy, tree: ScenarioTree) -> PortfolioPath:
    d = tree.n_assets
    zero = (Fraction(0),) * d
    holdings = {}
    for nid, hold in dict(strategy.delta).items():
        nid = int(nid)
        if nid not in tree.nodes:
            raise StrategyError(f"holdings given for unknown node {nid}")
        if not tree[nid].children:
            raise StrategyError(f"holdings at leaf {nid} are not predictable for any period")
        if len(hold) != d:
            raise StrategyError(f"node {nid}: {len(hold)} holdings for {d} assets")
        holdings[nid] = tuple(Fraction(h) for h in hold)

    dynamic = strategy.kind == DYNAMIC
    eta_given = {int(k): Fraction(v) for k, v in dict(strategy.eta).items()} if dynamic else {}
    root = tree.root
    V, gs, gb, eta = {}, {root: Fraction(0)}, {root: Fraction(0)}, {}

    def dot(h, s):
        return sum((a * b for a, b in zip(h, s)), Fraction(0))

    if dynamic:
        V[root] = dot(holdings.get(root, zero), tree[root].S) + eta_given.get(root, Fraction(0)) * tree[root].B
    else:
        V[root] = Fraction(strategy.v0)
    for nid in tree.preorder():
        node = tree[nid]
        if not node.children:
            continue
        hold = holdings.get(nid, zero)
        if dynamic:
            eta[nid] = eta_given.get(nid, Fraction(0))
        else:
            eta[nid] = (V[nid] - dot(hold, node.S)) / node.B
        for c in node.children:
            kid = tree[c]
            V[c] = dot(hold, kid.S) + eta[nid] * kid.B
            gs[c] = gs[nid] + dot(hold, [a - b for a, b in zip(kid.S, node.S)])
            gb[c] = gb[nid] + eta[nid] * (kid.B - node.B)
    v0 = V[root]
    pnl = {n: V[n] - v0 - gs[n] - gb[n] for n in V} if dynamic else {n: Fraction(0) for n in V}
    return PortfolioPath(V, v0, gs, gb, pnl, holdings, eta, strategy.kind)


def pnl_process(eta, B) -> np.ndarray:
    """P&L ``C_k = eta_k B_k - eta_0 B_0 - sum_{j<=k} eta_j (B_j - B_{j-1})``.

    ``eta[:, k]`` is the savings holding over period ``k + 1``; the holding
    at time 0 is taken to be the first period's. Works on float or
    ``Fraction`` object arrays.
    """
    eta = np.asarray(eta)
    eta = eta[None, :] if eta.ndim == 1 else eta
    B = np.broadcast_to(np.asarray(B), (eta.shape[0], eta.shape[1] + 1))
    carried = eta * B[:, 1:]
    paid = np.cumsum(eta * (B[:, 1:] - B[:, :-1]), axis=1)
    C = carried - (eta[:, :1] * B[:, :1]) - paid
    return np.concatenate([np.zeros_like(C[:, :1]), C], axis=1)


def pnl_from_increments(eta, B) -> np.ndarray:
    """``B_- . eta``: capital injected when the holding changes at ``t_k``."""
    eta = np.asarray(eta)
    eta = eta[None, :] if eta.ndim == 1 else eta
    B = np.broadcast_to(np.asarray(B), (eta.shape[0], eta.shape[1] + 1))
    inflow = (eta[:, 1:] - eta[:, :-1]) * B[:, 1:-1]
    zero = np.zeros_like(eta[:, :1])
    return np.concatenate([zero, zero, np.cumsum(inflow, axis=1)], axis=1)


# ---------------------------------------------------------------------------
# verification


def deflated_test(portfolio: PortfolioPath, deflator: DeflatorDecomposition, grid, mode: str = "supermartingale",
                  confidence: float = 3.0, label: str = "VZ") -> MartingaleTestReport:
    """Martingale/supermartingale test of ``V Z`` against ``V_0 Z_0``."""
    VZ = portfolio.V * np.asarray(deflator.Z)
    bundle = PathBundle(0, np.asarray(grid, dtype=float), {label: VZ})
    return martingale_test(bundle, label, float(VZ[0, 0]), mode, confidence)


def deflated_tree_martingale(tree: ScenarioTree, portfolio: PortfolioPath, deflator: DeflatorDecomposition) -> bool:
    return is_tree_martingale(tree, {n: portfolio.V[n] * deflator.Z[n] for n in tree.nodes})


def first_negative(V: np.ndarray, tol: float = NEGATIVE_TOL) -> int | None:
    bad = np.nonzero(np.any(V < -tol, axis=1))[0]
    return int(bad[0]) if bad.size else None


@dataclass(frozen=True)
class MeanSelfFinancingReport:
    pnl_test: MartingaleTestReport
    deflated_test: MartingaleTestReport
    covariation_mean: float
    covariation_stderr: float
    confidence: float
    negative_path: int | None
    pnl_identity_error: float
    extra: dict = field(default_factory=dict)

    @property
    def covariation_consistent(self) -> bool:
        return abs(self.covariation_mean) <= self.confidence * self.covariation_stderr

    @property
    def passed(self) -> bool:
        return (self.negative_path is None and self.pnl_test.passed and self.deflated_test.passed
                and self.covariation_consistent)

    def to_json(self) -> dict:
        return {
            "pnl_test": self.pnl_test.to_json(),
            "deflated_test": self.deflated_test.to_json(),
            "covariation_mean": self.covariation_mean,
            "covariation_stderr": self.covariation_stderr,
            "covariation_consistent": self.covariation_consistent,
            "negative_path": self.negative_path,
            "pnl_identity_error": self.pnl_identity_error,
            "passed": self.passed,
        }


def build_mean_self_financing(base: Strategy, vartheta, market: PathBundle, B, deflator: DeflatorDecomposition,
                              independent_increments: np.ndarray, confidence: float = 3.0):
    """Add ``eta = vartheta . W~`` savings holdings to a self-financing strategy.

    ``independent_increments`` are increments of a Wiener process independent
    of the deflator's drivers, shape ``(n_paths, N)``. The holding over
    period ``k + 1`` uses increments up to ``t_k`` only. Returns the dynamic
    strategy, its portfolio and a report with the P&L mean-zero test, the
    supermartingale test of ``V Z`` and the sample covariation of ``eta``
    with ``Z``.
    """
    if base.kind != SELF_FINANCING:
        raise StrategyError("base strategy must be self-financing")
    dWt = np.asarray(independent_increments, dtype=float)
    n, steps = dWt.shape
    theta = _as_path_array(vartheta, n, steps)
    flow = theta * dWt  # vartheta_k dW~_k over period k + 1
    adapted = np.concatenate([np.zeros((n, 1)), np.cumsum(flow, axis=1)], axis=1)  # eta~ at t_0..t_N
    extra = adapted[:, :-1]

    base_path = roll_forward(base, market, B)
    strategy = Strategy(base_path.delta, float(base.v0), DYNAMIC, base_path.eta + extra)
    path = roll_forward(strategy, market, B)

    B_full = np.broadcast_to(np.asarray(B, dtype=float), path.V.shape)
    pnl_direct = pnl_process(extra, B_full)
    identity_error = float(np.max(np.abs(pnl_direct - path.pnl)))

    grid = market.grid
    pnl_report = martingale_test(PathBundle(market.seed, grid, {"C": path.pnl}), "C", 0.0, "martingale", confidence)
    vz_report = deflated_test(path, deflator, grid, "supermartingale", confidence)
    Z = np.asarray(deflator.Z)
    cov = np.sum(flow * np.diff(Z, axis=1), axis=1)
    cov_mean, cov_se = mean_and_stderr(cov)
    report = MeanSelfFinancingReport(pnl_report, vz_report, float(cov_mean), float(cov_se), confidence,
                                     first_negative(path.V), identity_error)
    return strategy, path, report
