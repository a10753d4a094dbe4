"""Market data model: Ito markets with piecewise-constant coefficients,
deterministic savings accounts, and finite scenario trees.

Continuous-time quantities are float64. Scenario trees carry exact
``fractions.Fraction`` values throughout so that no-arbitrage questions on
them can be decided without tolerances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np


class MarketError(ValueError):
    """Base class for market input problems."""


class MarketParseError(MarketError):
    """Input is not well-formed JSON or misses required keys."""


class MarketValidationError(MarketError):
    """Input parsed but violates a model invariant."""


def parse_fraction(value: Any) -> Fraction:
    """Parse ``"p/q"`` strings, ints or exact decimal strings into a Fraction.

    Floats are rejected: a float literal is not an exact rational and
    would silently change tree arithmetic.
    """
    if isinstance(value, bool):
        raise MarketParseError(f"not a rational: {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise MarketParseError(f"not a rational: {value!r}") from exc
    raise MarketParseError(f"rationals must be 'p/q' strings, got {value!r}")


def format_fraction(value: Fraction) -> str:
    """``"p/q"``, or ``"p"`` for integers."""
    return str(Fraction(value))


# ---------------------------------------------------------------------------
# continuous time


@dataclass(frozen=True)
class RateCurve:
    """Short rate, constant on each cell of ``breaks``."""

    breaks: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or breaks.ndim != 1 or len(breaks) != len(rates) + 1:
            raise MarketValidationError("rate curve needs one rate per grid cell")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def constant(cls, r: float, T: float) -> "RateCurve":
        return cls(np.array([0.0, T]), np.array([r]))

    def integral(self, times) -> np.ndarray:
        """Exact integral of the rate from 0 to each of ``times``."""
        times = np.asarray(times, dtype=float)
        if np.any(times < self.breaks[0]) or np.any(times > self.breaks[-1] * (1 + 1e-12)):
            raise MarketValidationError("evaluation times outside the rate curve grid")
        cum = np.concatenate([[0.0], np.cumsum(self.rates * np.diff(self.breaks))])
        cell = np.clip(np.searchsorted(self.breaks, times, side="right") - 1, 0, len(self.rates) - 1)
        return cum[cell] + self.rates[cell] * (times - self.breaks[cell])


def savings_account_values(rate: RateCurve, grid) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(B, B_inv)`` on ``grid`` for ``B_t = exp(int_0^t r ds)``.

    ``B_inv`` is computed as ``exp(-integral)`` so it is itself an
    exponential of the (negated) rate integral, i.e. again a savings account.
    """
    integral = rate.integral(grid)
    return np.exp(integral), np.exp(-integral)


@dataclass(frozen=True)
class ItoMarketSpec:
    """Multi-asset stochastic-exponential market.

    Each asset is ``S^i = s0[i] * E(drift[:, i] . lambda + vol[:, i, :] . W)``
    with coefficients constant on each grid cell and ``m`` independent
    Wiener drivers.

    ``rate`` is ``None`` when the savings account is left free (to be solved
    for when searching a deflator).
    """

    grid: np.ndarray
    s0: np.ndarray
    drift: np.ndarray  # (N, d)
    vol: np.ndarray  # (N, d, m)
    rate: RateCurve | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        drift = np.asarray(self.drift, dtype=float)
        vol = np.asarray(self.vol, dtype=float)
        for name, arr in (("grid", grid), ("s0", s0), ("drift", drift), ("vol", vol)):
            if not np.all(np.isfinite(arr)):
                raise MarketValidationError(f"{name} contains non-finite values")
        if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0:
            raise MarketValidationError("grid must start at 0 and contain at least one cell")
        if np.any(np.diff(grid) <= 0):
            raise MarketValidationError("grid must be strictly increasing")
        n_cells, d = len(grid) - 1, len(s0)
        if d < 1:
            raise MarketValidationError("at least one asset is required")
        if np.any(s0 <= 0):
            raise MarketValidationError("initial asset values must be > 0")
        if drift.shape != (n_cells, d):
            raise MarketValidationError(f"drift must have shape {(n_cells, d)}, got {drift.shape}")
        if vol.ndim != 3 or vol.shape[:2] != (n_cells, d) or vol.shape[2] < 1:
            raise MarketValidationError(f"vol must have shape {(n_cells, d, 'm')}, got {vol.shape}")
        if self.rate is not None and not np.array_equal(self.rate.breaks, grid):
            raise MarketValidationError("rate curve must live on the market grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "vol", vol)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def n_assets(self) -> int:
        return len(self.s0)

    @property
    def n_drivers(self) -> int:
        return self.vol.shape[2]

    @property
    def n_cells(self) -> int:
        return len(self.grid) - 1

    @classmethod
    def constant(cls, s0, drift, vol, rate: float | None, T: float = 1.0) -> "ItoMarketSpec":
        """Single-cell market from constant coefficients.

        ``vol`` may be a scalar (d = m = 1), a length-d vector (m = 1) or a
        (d, m) matrix.
        """
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        d = len(s0)
        drift = np.broadcast_to(np.asarray(drift, dtype=float), (d,))
        vol = np.asarray(vol, dtype=float)
        if vol.ndim == 0:
            vol = np.full((d, 1), float(vol))
        elif vol.ndim == 1:
            vol = vol.reshape(d, 1)
        curve = None if rate is None else RateCurve.constant(rate, T)
        return cls(np.array([0.0, T]), s0, drift[None, :], vol[None, :, :], curve)

    def to_json(self) -> dict:
        return {
            "type": "ito",
            "T": self.T,
            "grid": self.grid.tolist(),
            "rate": None if self.rate is None else self.rate.rates.tolist(),
            "assets": [
                {"s0": float(self.s0[i]), "drift": self.drift[:, i].tolist(), "vol": self.vol[:, i, :].tolist()}
                for i in range(self.n_assets)
            ],
        }


@dataclass(frozen=True)
class MinimalMarketSpec:
    """Bond market under the minimal market model: ``Z = D / B`` with ``D``
    the inverse of a squared Bessel process of dimension four started at
    ``1 / d0`` and a constant short rate."""

    T: float
    r: float = 0.0
    d0: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and self.d0 > 0 and np.isfinite(self.r)):
            raise MarketValidationError("minimal market model needs T > 0 and d0 > 0")

    def to_json(self) -> dict:
        return {"type": "mmm", "T": self.T, "r": self.r, "d0": self.d0}


# ---------------------------------------------------------------------------
# scenario trees


@dataclass(frozen=True)
class TreeNode:
    id: int
    parent: int | None
    t: int
    prob: Fraction
    S: tuple[Fraction, ...]
    B: Fraction
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class ScenarioTree:
    """Finite scenario tree with exact rational data.

    ``prob`` is the transition probability from the parent. ``B`` is the
    savings account value at the node; it must agree across siblings
    (predictability) and equal 1 at the root.
    """

    nodes: Mapping[int, TreeNode]
    root: int
    horizon: int = field(init=False)
    n_assets: int = field(init=False)

    def __post_init__(self):
        _validate_tree(self.nodes, self.root)
        object.__setattr__(self, "horizon", max(n.t for n in self.nodes.values()))
        object.__setattr__(self, "n_assets", len(self.nodes[self.root].S))

    @classmethod
    def from_nodes(cls, nodes: Iterable[TreeNode]) -> "ScenarioTree":
        table: dict[int, TreeNode] = {}
        for node in nodes:
            if node.id in table:
                raise MarketValidationError(f"duplicate node id {node.id}")
            table[node.id] = node
        roots = [n.id for n in table.values() if n.parent is None]
        if len(roots) != 1:
            raise MarketValidationError(f"tree must have exactly one root, found {len(roots)}")
        return cls(table, roots[0])

    def __getitem__(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def preorder(self) -> list[int]:
        """Node ids with parents before children (children in listed order)."""
        order, stack = [], [self.root]
        while stack:
            nid = stack.pop()
            order.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return order

    def internal_nodes(self) -> list[int]:
        return [nid for nid in self.preorder() if self.nodes[nid].children]

    def leaves(self) -> list[int]:
        return [nid for nid in self.preorder() if not self.nodes[nid].children]

    def path_probability(self) -> dict[int, Fraction]:
        """Unconditional probability of reaching each node."""
        out = {self.root: Fraction(1)}
        for nid in self.preorder():
            for c in self.nodes[nid].children:
                out[c] = out[nid] * self.nodes[c].prob
        return out

    def with_savings_account(self, B: Mapping[int, Fraction]) -> "ScenarioTree":
        """Copy of the tree with the savings account replaced (re-validated)."""
        nodes = {nid: TreeNode(n.id, n.parent, n.t, n.prob, n.S, Fraction(B[nid]), n.children)
                 for nid, n in self.nodes.items()}
        return ScenarioTree(nodes, self.root)

    def with_prices(self, S: Mapping[int, Iterable[Fraction]]) -> "ScenarioTree":
        nodes = {nid: TreeNode(n.id, n.parent, n.t, n.prob, tuple(Fraction(x) for x in S[nid]), n.B, n.children)
                 for nid, n in self.nodes.items()}
        return ScenarioTree(nodes, self.root)

    def to_json(self) -> dict:
        return {
            "type": "tree",
            "nodes": [
                {
                    "id": n.id,
                    "parent": n.parent,
                    "t": n.t,
                    "prob": format_fraction(n.prob),
                    "S": [format_fraction(x) for x in n.S],
                    "B": format_fraction(n.B),
                    "children": list(n.children),
                }
                for n in (self.nodes[i] for i in self.preorder())
            ],
        }


def _validate_tree(nodes: Mapping[int, TreeNode], root: int) -> None:
    if root not in nodes:
        raise MarketValidationError("root id not among nodes")
    r = nodes[root]
    if r.parent is not None or r.t != 0:
        raise MarketValidationError("root must have no parent and time index 0")
    if r.B != 1:
        raise MarketValidationError(f"savings account at the root must be 1, got {r.B}")
    d = len(r.S)
    if d < 1:
        raise MarketValidationError("at least one asset is required")

    seen = set()
    stack = [root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise MarketValidationError(f"node {nid} reachable twice (not a tree)")
        seen.add(nid)
        node = nodes[nid]
        if len(node.S) != d:
            raise MarketValidationError(f"node {nid} has {len(node.S)} prices, expected {d}")
        if any(x < 0 for x in node.S):
            raise MarketValidationError(f"negative asset price at node {nid}")
        if node.B <= 0:
            raise MarketValidationError(f"savings account not positive at node {nid}")
        if node.prob <= 0:
            raise MarketValidationError(f"transition probability at node {nid} must be > 0")
        if not node.children:
            continue
        total = Fraction(0)
        for c in node.children:
            if c not in nodes:
                raise MarketValidationError(f"node {nid} lists unknown child {c}")
            child = nodes[c]
            if child.parent != nid:
                raise MarketValidationError(f"child {c} does not point back to parent {nid}")
            if child.t != node.t + 1:
                raise MarketValidationError(f"child {c} of node {nid} has time {child.t}, expected {node.t + 1}")
            total += child.prob
        if total != 1:
            raise MarketValidationError(f"child probabilities at node {nid} sum to {total}")
        if len({nodes[c].B for c in node.children}) != 1:
            raise MarketValidationError(f"B not predictable: children of node {nid} disagree on B")
        stack.extend(node.children)

    if len(seen) != len(nodes):
        orphans = sorted(set(nodes) - seen)
        raise MarketValidationError(f"nodes not connected to the root: {orphans}")
    horizon = max(nodes[n].t for n in seen)
    for nid in seen:
        if not nodes[nid].children and nodes[nid].t != horizon:
            raise MarketValidationError(f"leaf {nid} at time {nodes[nid].t}, all leaves must be at {horizon}")


# ---------------------------------------------------------------------------
# JSON ingestion


def market_from_json(data: Mapping[str, Any]):
    """Build a validated market object from decoded JSON."""
    if not isinstance(data, Mapping):
        raise MarketParseError("market file must hold a JSON object")
    kind = data.get("type", "ito")
    try:
        if kind == "tree":
            return _tree_from_json(data)
        if kind == "mmm":
            return MinimalMarketSpec(float(data["T"]), float(data.get("r", 0.0)), float(data.get("d0", 1.0)))
        if kind == "ito":
            return _ito_from_json(data)
    except KeyError as exc:
        raise MarketParseError(f"missing key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MarketError):
            raise
        raise MarketParseError(str(exc)) from exc
    raise MarketParseError(f"unknown market type {kind!r}")


def _ito_from_json(data: Mapping[str, Any]) -> ItoMarketSpec:
    if "assets" not in data:
        # shorthand: {"S0":1, "a":0.05, "sigma":0.2, "r":0.02, "T":1}
        return ItoMarketSpec.constant(data["S0"], data["a"], data["sigma"], data.get("r"), float(data.get("T", 1.0)))
    T = float(data["T"])
    grid = np.asarray(data.get("grid", [0.0, T]), dtype=float)
    if not np.isclose(grid[-1], T):
        raise MarketValidationError(f"grid ends at {grid[-1]}, expected T = {T}")
    assets = data["assets"]
    s0 = [float(a["s0"]) for a in assets]
    drift = np.array([a["drift"] for a in assets], dtype=float).T
    vol = np.array([a["vol"] for a in assets], dtype=float).transpose(1, 0, 2)
    rate = data.get("rate")
    curve = None if rate is None else RateCurve(grid, np.asarray(rate, dtype=float))
    return ItoMarketSpec(grid, s0, drift, vol, curve)


def _tree_from_json(data: Mapping[str, Any]) -> ScenarioTree:
    nodes = []
    for raw in data["nodes"]:
        nodes.append(TreeNode(
            id=int(raw["id"]),
            parent=None if raw.get("parent") is None else int(raw["parent"]),
            t=int(raw["t"]),
            prob=parse_fraction(raw.get("prob", "1")),
            S=tuple(parse_fraction(x) for x in raw["S"]),
            B=parse_fraction(raw.get("B", "1")),
            children=tuple(int(c) for c in raw.get("children", ())),
        ))
    return ScenarioTree.from_nodes(nodes)


def load_market(path) -> ItoMarketSpec | ScenarioTree | MinimalMarketSpec:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MarketParseError(f"{path}: malformed JSON ({exc})") from exc
    return market_from_json(data)


def dump_market(market, path) -> None:
    Path(path).write_text(json.dumps(market.to_json(), indent=2))


def conditional_expectation(tree: ScenarioTree, values: Mapping[int, Fraction]) -> dict[int, Fraction]:
    """One-step conditional expectation ``E[X_{k+1} | node]`` at every internal node."""
    return {
        nid: sum((tree[c].prob * Fraction(values[c]) for c in tree[nid].children), Fraction(0))
        for nid in tree.internal_nodes()
    }


def is_tree_martingale(tree: ScenarioTree, values: Mapping[int, Fraction]) -> bool:
    """Exact check of ``sum_c p_c X_c == X_node`` at every internal node."""
    return all(v == values[nid] for nid, v in conditional_expectation(tree, values).items())
