"""Deflators of multiplicative form ``Z = D C`` with ``C = 1/B``.

For Ito markets the martingale part ``D = E(-theta . W)`` is constructed
from the market price of risk, which solves ``sigma theta = a - r 1`` cell
by cell. When that system has no solution, a left null vector of the
volatility matrix certifies that no deflator of this form exists.

On scenario trees the multiplicative Doob decomposition of a positive
process is computed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from .market import (
    ItoMarketSpec,
    MinimalMarketSpec,
    RateCurve,
    ScenarioTree,
    is_tree_martingale,
    savings_account_values,
)
from .sde import PathBundle, cell_index, simulate_besq4_paths

RANK_RTOL = 1e-10
RESIDUAL_TOL = 1e-10

CONSTRUCTED = "constructed"
DECOMPOSED = "decomposed"


class DomainError(ValueError):
    pass


class PreconditionError(ValueError):
    """Inputs do not satisfy the hypothesis of the check being run."""


@dataclass(frozen=True)
class RiskPriceSolution:
    breaks: np.ndarray
    theta: np.ndarray  # (N, m)
    rate: np.ndarray  # (N,)
    residual: np.ndarray  # (N,)
    rate_free: bool = False

    def rate_curve(self) -> RateCurve:
        return RateCurve(self.breaks, self.rate)

    def to_json(self) -> dict:
        return {
            "kind": "deflator",
            "theta": self.theta.tolist(),
            "rate": self.rate.tolist(),
            "rate_free": self.rate_free,
            "max_residual": float(self.residual.max()),
        }


@dataclass(frozen=True)
class InfeasibilityCertificate:
    """Left null vector ``y`` of the system at grid cell ``cell``.

    ``y . sigma = 0`` (and ``y . 1 = 0`` when the rate is free) while
    ``y . (a - r 1)`` (resp. ``y . a``) is nonzero, so no ``theta`` (and
    ``r``) can satisfy the deflator equations on that cell.
    """

    cell: int
    witness: np.ndarray
    inner_product: float
    rate_free: bool
    explanation: str

    def check(self, market: ItoMarketSpec, rate: RateCurve | None = None, tol: float = 1e-12) -> bool:
        y = self.witness
        sigma = market.vol[self.cell]
        ok = np.max(np.abs(y @ sigma)) <= tol
        if self.rate_free:
            ok = ok and abs(y.sum()) <= tol
            rhs = market.drift[self.cell]
        else:
            rate = rate if rate is not None else market.rate
            rhs = market.drift[self.cell] - rate.rates[self.cell]
        return bool(ok and abs(y @ rhs) > 1e-8)

    def to_json(self) -> dict:
        return {
            "kind": "infeasible",
            "cell": self.cell,
            "witness": self.witness.tolist(),
            "inner_product": self.inner_product,
            "rate_free": self.rate_free,
            "explanation": self.explanation,
        }


_MARKET_RATE = object()


def solve_market_price_of_risk(market: ItoMarketSpec, rate=_MARKET_RATE):
    """Solve ``sigma theta = a - r 1`` on every grid cell.

    ``rate`` defaults to the market's own rate curve; pass ``None`` to treat
    the short rate as an extra unknown shared by all assets. Underdetermined
    systems get the least-norm solution (in ``(theta, r)`` when the rate is
    free). Returns a :class:`RiskPriceSolution` or, for the first cell with
    no solution, an :class:`InfeasibilityCertificate`.
    """
    if rate is _MARKET_RATE:
        rate = market.rate
    rate_free = rate is None
    if not rate_free and not np.array_equal(rate.breaks, market.grid):
        raise ValueError("rate curve must live on the market grid")

    d, m = market.n_assets, market.n_drivers
    thetas, rates, residuals = [], [], []
    for k in range(market.n_cells):
        sigma, a = market.vol[k], market.drift[k]
        if rate_free:
            A, rhs = np.hstack([sigma, np.ones((d, 1))]), a
        else:
            A, rhs = sigma, a - rate.rates[k]
        U, s, Vt = np.linalg.svd(A)
        rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        coef = U[:, :rank].T @ rhs
        x = Vt[:rank].T @ (coef / s[:rank])
        resid = float(np.linalg.norm(A @ x - rhs))
        if resid >= RESIDUAL_TOL:
            null = U[:, rank:]
            y = null @ (null.T @ rhs)
            y /= np.linalg.norm(y)
            what = "sigma^T y = 0, 1^T y = 0, a^T y" if rate_free else "sigma^T y = 0, (a - r)^T y"
            return InfeasibilityCertificate(
                cell=k,
                witness=y,
                inner_product=float(y @ rhs),
                rate_free=rate_free,
                explanation=f"cell {k}: {what} = {y @ rhs:.6g} != 0, so no market price of risk exists",
            )
        if rate_free:
            thetas.append(x[:m])
            rates.append(x[m])
        else:
            thetas.append(x)
            rates.append(rate.rates[k])
        residuals.append(resid)
    return RiskPriceSolution(market.grid.copy(), np.array(thetas), np.array(rates), np.array(residuals), rate_free)


@dataclass(frozen=True)
class DeflatorDecomposition:
    """``Z = D C`` on paths (arrays ``(n_paths, len(grid))``) or on tree
    nodes (dicts of Fractions). ``C`` is the inverse savings account."""

    Z: object
    D: object
    C: object
    provenance: str
    grid: np.ndarray | None = None

    @property
    def on_tree(self) -> bool:
        return isinstance(self.Z, Mapping)

    @property
    def savings_account(self):
        if self.on_tree:
            return {k: 1 / v for k, v in self.C.items()}
        return 1.0 / self.C


def build_deflator_paths(solution: RiskPriceSolution, bundle: PathBundle, rate: RateCurve | None = None,
                         d0: float = 1.0) -> DeflatorDecomposition:
    """Construct ``D = d0 E(-theta . W)``, ``C = 1/B`` and ``Z = D C`` along
    the driver increments stored in ``bundle`` (log-exact steps)."""
    rate = solution.rate_curve() if rate is None else rate
    dW = bundle.increments["W"]
    grid = bundle.grid
    dt = np.diff(grid)
    theta = solution.theta[cell_index(solution.breaks, grid)]  # (N, m)
    if theta.shape[1] != dW.shape[2]:
        raise ValueError(f"theta has {theta.shape[1]} components but the bundle has {dW.shape[2]} drivers")
    log_step = -np.einsum("nm,pnm->pn", theta, dW) - 0.5 * np.sum(theta**2, axis=1) * dt
    D = d0 * np.exp(np.concatenate([np.zeros((dW.shape[0], 1)), np.cumsum(log_step, axis=1)], axis=1))
    _, b_inv = savings_account_values(rate, grid)
    C = np.broadcast_to(b_inv, D.shape)
    return DeflatorDecomposition(D * C, D, C, CONSTRUCTED, grid.copy())


def minimal_market_deflator(spec: MinimalMarketSpec, grid, n_paths: int, seed: int) -> DeflatorDecomposition:
    """``Z = D / B`` with ``D`` the inverse squared Bessel(4) process."""
    grid = np.asarray(grid, dtype=float)
    bessel = simulate_besq4_paths(1.0 / spec.d0, grid, n_paths, seed)
    b_inv = np.exp(-spec.r * grid)
    D = bessel["D"]
    C = np.broadcast_to(b_inv, D.shape)
    return DeflatorDecomposition(D * C, D, C, CONSTRUCTED, grid)


def multiplicative_doob_decompose(tree: ScenarioTree, Z: Mapping[int, Fraction]) -> DeflatorDecomposition:
    """Exact multiplicative decomposition ``Z = D C`` on a tree.

    ``C`` is predictable with ``C_child = C_node E[Z_child / Z_node | node]``
    and ``C_root = 1``; ``D = Z / C`` is then a tree martingale.
    """
    Z = {nid: Fraction(Z[nid]) for nid in tree.nodes}
    bad = [nid for nid, z in Z.items() if z <= 0]
    if bad:
        raise DomainError(f"deflator must be strictly positive, fails at nodes {sorted(bad)}")
    C = {tree.root: Fraction(1)}
    for nid in tree.preorder():
        node = tree[nid]
        if not node.children:
            continue
        growth = sum((tree[c].prob * Z[c] for c in node.children), Fraction(0)) / Z[nid]
        for c in node.children:
            C[c] = C[nid] * growth
    D = {nid: Z[nid] / C[nid] for nid in Z}
    return DeflatorDecomposition(Z, D, C, DECOMPOSED)


def _check_savings_account(tree: ScenarioTree, B: Mapping[int, Fraction], name: str) -> None:
    if B[tree.root] != 1:
        raise PreconditionError(f"{name} must equal 1 at the root")
    for nid in tree.nodes:
        if B[nid] <= 0:
            raise PreconditionError(f"{name} not positive at node {nid}")
    for nid in tree.internal_nodes():
        if len({B[c] for c in tree[nid].children}) != 1:
            raise PreconditionError(f"{name} not predictable below node {nid}")


def verify_savings_account_uniqueness(tree: ScenarioTree, D: Mapping[int, Fraction],
                                      B: Mapping[int, Fraction], B_hat: Mapping[int, Fraction]) -> str:
    """Return ``"equal"`` or ``"unequal"`` for two savings accounts that both
    turn ``D`` into a deflator of the same strictly positive asset.

    Raises :class:`PreconditionError` when no strictly positive asset is
    deflated to a martingale by both ``D/B`` and ``D/B_hat``.
    """
    B = {k: Fraction(v) for k, v in B.items()}
    B_hat = {k: Fraction(v) for k, v in B_hat.items()}
    _check_savings_account(tree, B, "B")
    _check_savings_account(tree, B_hat, "B_hat")
    if any(Fraction(D[nid]) <= 0 for nid in tree.nodes):
        raise PreconditionError("D must be strictly positive")

    witness = None
    for i in range(tree.n_assets):
        if any(tree[nid].S[i] <= 0 for nid in tree.nodes):
            continue
        under_b = {nid: tree[nid].S[i] * D[nid] / B[nid] for nid in tree.nodes}
        under_hat = {nid: tree[nid].S[i] * D[nid] / B_hat[nid] for nid in tree.nodes}
        if is_tree_martingale(tree, under_b) and is_tree_martingale(tree, under_hat):
            witness = i
            break
    if witness is None:
        raise PreconditionError("no strictly positive asset is deflated to a martingale by both D/B and D/B_hat")
    return "equal" if all(B[nid] == B_hat[nid] for nid in tree.nodes) else "unequal"
