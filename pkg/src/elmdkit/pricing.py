"""Real-world, risk-neutral and forward-measure pricing.

Path prices are time-zero Monte Carlo estimates with standard errors; tree
prices are exact conditional expectations at every node. Pricing methods
evaluated on the same paths are coupled sample by sample, so identities
between them hold per path rather than only in distribution.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .deflator import DeflatorDecomposition, DomainError
from .market import RateCurve, ScenarioTree, format_fraction, parse_fraction
from .sde import mean_and_stderr, sample_besq4_exact

REAL_WORLD = "real-world"
RISK_NEUTRAL = "risk-neutral"
FORWARD = "forward"


class HeavyTailWarning(UserWarning):
    """A few samples carry most of a Monte Carlo mean."""


@dataclass(frozen=True)
class PricingResult:
    claim: str
    method: str
    price: float | Fraction
    stderr: float = 0.0
    n_paths: int | None = None
    seed: int | None = None
    node_prices: dict[int, Fraction] = field(default_factory=dict)
    warning: str | None = None

    @property
    def exact(self) -> bool:
        return self.n_paths is None

    def csv_row(self) -> list[str]:
        price = format_fraction(self.price) if isinstance(self.price, Fraction) else repr(float(self.price))
        return [self.claim, self.method, price, repr(float(self.stderr)),
                "tree" if self.n_paths is None else str(self.n_paths), "" if self.seed is None else str(self.seed)]


CSV_HEADER = ["claim", "method", "price", "stderr", "n", "seed"]


def pricing_csv(results) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_HEADER)
    for res in results:
        out.writerow(res.csv_row())
    return buf.getvalue()


def _check_claim(H) -> None:
    if isinstance(H, Mapping):
        negative = any(v < 0 for v in H.values())
    else:
        negative = bool(np.any(np.asarray(H) < 0))
    if negative:
        raise DomainError("claims must be nonnegative")


def _tail_warning(samples: np.ndarray) -> str | None:
    total = samples.sum()
    if total <= 0 or len(samples) < 100:
        return None
    top = np.sort(samples)[-max(1, len(samples) // 100):].sum()
    if top > 0.5 * total:
        msg = f"top 1% of samples carry {top / total:.0%} of the mean; integrability is doubtful"
        warnings.warn(msg, HeavyTailWarning, stacklevel=3)
        return msg
    return None


def _mc_result(samples, claim, method, seed) -> PricingResult:
    samples = np.asarray(samples, dtype=float)
    mean, se = mean_and_stderr(samples)
    return PricingResult(claim, method, float(mean), float(se), len(samples), seed, warning=_tail_warning(samples))


def _backward(tree: ScenarioTree, leaf_values: Mapping[int, Fraction], weight) -> dict[int, Fraction]:
    out = {leaf: Fraction(leaf_values[leaf]) for leaf in tree.leaves()}
    for nid in reversed(tree.preorder()):
        kids = tree[nid].children
        if kids:
            out[nid] = sum((weight(nid, c) * out[c] for c in kids), Fraction(0))
    return out


# ---------------------------------------------------------------------------


def real_world_samples(H, deflator: DeflatorDecomposition) -> np.ndarray:
    """Per-path ``H Z_T / Z_0``."""
    Z = np.asarray(deflator.Z)
    return np.asarray(H, dtype=float) * Z[:, -1] / Z[:, 0]


def risk_neutral_samples(H, density, rate: RateCurve) -> np.ndarray:
    """Per-path ``(D_T / D_0) H / B_T``."""
    D = np.asarray(density)
    b_inv_T = float(np.exp(-rate.integral(rate.breaks[-1])))
    return (D[:, -1] / D[:, 0]) * np.asarray(H, dtype=float) * b_inv_T


def price_real_world(H, deflator: DeflatorDecomposition, tree: ScenarioTree | None = None,
                     claim: str = "claim", seed: int | None = None) -> PricingResult:
    """``pi_t = Z_t^{-1} E[H Z_T | F_t]``.

    On paths ``H`` is an array of terminal payoffs and the price is the
    time-zero estimate. On a tree ``H`` maps leaves to payoffs and every
    node gets its exact price.
    """
    _check_claim(H)
    if tree is None:
        return _mc_result(real_world_samples(H, deflator), claim, REAL_WORLD, seed)
    Z = deflator.Z
    deflated = _backward(tree, {leaf: Fraction(H[leaf]) * Z[leaf] for leaf in tree.leaves()},
                         lambda v, c: tree[c].prob)
    prices = {nid: deflated[nid] / Z[nid] for nid in deflated}
    return PricingResult(claim, REAL_WORLD, prices[tree.root], node_prices=prices)


def price_risk_neutral(H, density, rate: RateCurve | None = None, tree: ScenarioTree | None = None,
                       claim: str = "claim", seed: int | None = None) -> PricingResult:
    """``pi_t = B_t E_Q[H / B_T | F_t]``.

    On paths ``density`` holds the paths of the density martingale ``D``
    (its first column is ``D_0``) and ``rate`` the deterministic short rate.
    On a tree ``density`` is the EMM certificate (or its one-step weights)
    and the savings account is the tree's own.
    """
    _check_claim(H)
    if tree is None:
        return _mc_result(risk_neutral_samples(H, density, rate), claim, RISK_NEUTRAL, seed)
    q = getattr(density, "q_transition", density)
    discounted = _backward(tree, {leaf: Fraction(H[leaf]) / tree[leaf].B for leaf in tree.leaves()},
                           lambda v, c: q[c])
    prices = {nid: tree[nid].B * discounted[nid] for nid in discounted}
    return PricingResult(claim, RISK_NEUTRAL, prices[tree.root], node_prices=prices)


def price_forward_measure(H, bond, deflator: DeflatorDecomposition, tree: ScenarioTree | None = None,
                          claim: str = "claim", seed: int | None = None) -> PricingResult:
    """``pi_t = P_t E_{Q^T}[H | F_t]`` with ``dQ^T/dP`` driven by ``P Z / (P_0 Z_0)``.

    Only valid when ``P Z`` is a true martingale; checking that (e.g. with
    :func:`elmdkit.sde.martingale_test`) is the caller's job. ``bond`` is an
    array of bond price paths, or a node map on a tree.
    """
    _check_claim(H)
    if tree is None:
        P = np.asarray(bond, dtype=float)
        Z = np.asarray(deflator.Z)
        p0 = float(P[0, 0])
        weights = P[:, -1] * Z[:, -1] / (p0 * Z[:, 0])
        return _mc_result(p0 * np.asarray(H, dtype=float) * weights, claim, FORWARD, seed)
    Z = deflator.Z
    P = {k: Fraction(v) for k, v in bond.items()}
    expect = _backward(tree, {leaf: Fraction(H[leaf]) for leaf in tree.leaves()},
                       lambda v, c: tree[c].prob * P[c] * Z[c] / (P[v] * Z[v]))
    prices = {nid: P[nid] * expect[nid] for nid in expect}
    return PricingResult(claim, FORWARD, prices[tree.root], node_prices=prices)


def bond_paths_deterministic(rate: RateCurve, grid) -> np.ndarray:
    """``P_t = B_t / B_T`` on ``grid`` for a deterministic savings account."""
    grid = np.asarray(grid, dtype=float)
    integral = rate.integral(grid)
    return np.exp(integral - integral[-1])


def bond_paths_minimal_market(X: np.ndarray, grid, r: float) -> np.ndarray:
    """Real-world bond ``P_t = (B_t / B_T)(1 - exp(-X_t / (2 (T - t))))``
    for ``D = 1/X`` with ``X`` a squared Bessel(4) process; ``P_T = 1``."""
    grid = np.asarray(grid, dtype=float)
    T = grid[-1]
    P = np.ones_like(X)
    tau = T - grid[:-1]
    P[:, :-1] = -np.expm1(-X[:, :-1] / (2.0 * tau))
    return P * np.exp(-r * (T - grid))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BondGapReport:
    T: float
    r: float
    n_paths: int
    seed: int
    real_world: float
    real_world_stderr: float
    risk_neutral: float
    gap: float
    gap_stderr: float
    real_world_exact: float
    gap_exact: float
    confidence: float = 3.0

    @property
    def real_world_consistent(self) -> bool:
        return abs(self.real_world - self.real_world_exact) <= self.confidence * self.real_world_stderr

    @property
    def gap_consistent(self) -> bool:
        return abs(self.gap - self.gap_exact) <= self.confidence * self.gap_stderr

    @property
    def gap_flagged(self) -> bool:
        """Risk-neutral price exceeds the real-world one beyond noise."""
        return self.gap > self.confidence * self.gap_stderr

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "r": self.r,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "real_world": self.real_world,
            "real_world_stderr": self.real_world_stderr,
            "real_world_exact": self.real_world_exact,
            "risk_neutral": self.risk_neutral,
            "gap": self.gap,
            "gap_stderr": self.gap_stderr,
            "gap_exact": self.gap_exact,
            "gap_ratio": self.gap / self.risk_neutral,
            "confidence": self.confidence,
            "real_world_consistent": self.real_world_consistent,
            "gap_flagged": self.gap_flagged,
        }


def bond_gap_experiment(T: float, r: float = 0.0, n_paths: int = 100_000, seed: int = 0,
                        confidence: float = 3.0) -> BondGapReport:
    """Zero-coupon bond under the minimal market model, priced two ways.

    The real-world price ``E[D_T] / B_T`` uses exact squared Bessel draws;
    the formal risk-neutral price is ``1 / B_T``. Closed form of the former:
    ``(1 - exp(-1 / (2T))) / B_T``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    b_inv = float(np.exp(-r * T))
    D_T = 1.0 / sample_besq4_exact(1.0, T, n_paths, seed)
    rw, se = mean_and_stderr(D_T * b_inv)
    exact = b_inv * -np.expm1(-1.0 / (2.0 * T))
    return BondGapReport(
        T=T, r=r, n_paths=n_paths, seed=seed,
        real_world=float(rw), real_world_stderr=float(se),
        risk_neutral=b_inv, gap=b_inv - float(rw), gap_stderr=float(se),
        real_world_exact=float(exact), gap_exact=b_inv * float(np.exp(-1.0 / (2.0 * T))),
        confidence=confidence,
    )


# ---------------------------------------------------------------------------
# claim specs: {"type": "bond" | "asset" | "call" | "put" | "digital", "asset": i, "strike": K}


def claim_name(spec: Mapping) -> str:
    kind = spec.get("type", "bond")
    if kind == "bond":
        return "bond"
    asset = int(spec.get("asset", 0)) + 1
    if kind == "asset":
        return f"S{asset}"
    return f"{kind}(S{asset},K={spec['strike']})"


def claim_payoff(spec: Mapping, terminal):
    """Payoff of a claim spec on terminal prices.

    ``terminal`` is an ``(n_paths, d)`` float array or a tuple of Fractions
    for a single tree leaf.
    """
    kind = spec.get("type", "bond")
    exact = isinstance(terminal, tuple)
    if kind == "bond":
        return Fraction(1) if exact else np.ones(np.asarray(terminal).shape[0])
    s = terminal[int(spec.get("asset", 0))] if exact else np.asarray(terminal)[:, int(spec.get("asset", 0))]
    if kind == "asset":
        return s
    K = parse_fraction(str(spec["strike"])) if exact else float(Fraction(str(spec["strike"])))
    if kind == "call":
        return max(s - K, Fraction(0)) if exact else np.maximum(s - K, 0.0)
    if kind == "put":
        return max(K - s, Fraction(0)) if exact else np.maximum(K - s, 0.0)
    if kind == "digital":
        return Fraction(int(s > K)) if exact else (s > K).astype(float)
    raise ValueError(f"unknown claim type {kind!r}")
