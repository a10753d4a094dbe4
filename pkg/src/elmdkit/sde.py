"""Seeded path simulation and statistical martingale checks.

All simulators are deterministic functions of ``(seed, grid, n_paths)``;
see :mod:`elmdkit.rng` for the stream layout. Sample means are reduced with
a fixed pairwise tree so totals are bit-stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng
from .market import ItoMarketSpec


def refine_grid(grid, refine: int = 1) -> np.ndarray:
    """Split every cell of ``grid`` into ``refine`` equal sub-cells."""
    grid = np.asarray(grid, dtype=float)
    if refine < 1:
        raise ValueError("refine must be >= 1")
    if refine == 1:
        return grid.copy()
    frac = np.arange(refine) / refine
    inner = (grid[:-1, None] + np.diff(grid)[:, None] * frac[None, :]).ravel()
    return np.append(inner, grid[-1])


def cell_index(coarse, fine) -> np.ndarray:
    """For each cell of ``fine`` the index of the ``coarse`` cell holding it."""
    coarse = np.asarray(coarse, dtype=float)
    mids = 0.5 * (np.asarray(fine)[:-1] + np.asarray(fine)[1:])
    return np.searchsorted(coarse, mids, side="right") - 1


def pairwise_sum(x, axis: int = 0) -> np.ndarray:
    """Sum along ``axis`` by a fixed balanced binary tree."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    if x.shape[0] == 0:
        return np.zeros(x.shape[1:])
    while x.shape[0] > 1:
        if x.shape[0] % 2:
            x = np.concatenate([x, np.zeros((1, *x.shape[1:]))], axis=0)
        x = x[0::2] + x[1::2]
    return x[0]


def mean_and_stderr(x, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    mean = pairwise_sum(x, axis) / n
    if n < 2:
        return mean, np.zeros_like(mean)
    dev = x - np.expand_dims(mean, axis)
    var = pairwise_sum(dev * dev, axis) / (n - 1)
    return mean, np.sqrt(var / n)


@dataclass(frozen=True)
class PathBundle:
    """Simulated trajectories on a common grid.

    ``values[label]`` has shape ``(n_paths, len(grid))``. ``increments``
    holds driver increments, e.g. ``increments["W"]`` of shape
    ``(n_paths, len(grid) - 1, m)``.
    """

    seed: int
    grid: np.ndarray
    values: dict[str, np.ndarray]
    increments: dict[str, np.ndarray] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return next(iter(self.values.values())).shape[0]

    @property
    def labels(self) -> list[str]:
        return list(self.values)

    def __getitem__(self, label: str) -> np.ndarray:
        return self.values[label]

    def with_process(self, label: str, values) -> "PathBundle":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_paths, len(self.grid)):
            raise ValueError(f"process {label!r} has shape {values.shape}")
        return replace(self, values={**self.values, label: values})

    def to_csv(self, path, labels=None) -> None:
        """Write ``path,t,label,value`` rows, one per path, time and process."""
        labels = self.labels if labels is None else list(labels)
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["path", "t", "label", "value"])
            for p in range(self.n_paths):
                for k, t in enumerate(self.grid):
                    for lab in labels:
                        out.writerow([p, repr(float(t)), lab, repr(float(self.values[lab][p, k]))])


def asset_label(i: int) -> str:
    return f"S{i + 1}"


def simulate_stochastic_exponential(
    spec: ItoMarketSpec,
    n_paths: int,
    seed: int,
    refine: int = 1,
    workers: int = 1,
    substream: int = rng.ASSETS,
) -> PathBundle:
    """Simulate every asset of ``spec`` with the log-exact scheme.

    On each cell ``S_{k+1} = S_k exp((a - |sigma|^2 / 2) dt + sigma . dW)``;
    all assets of a path share the driver increments.
    """
    grid = refine_grid(spec.grid, refine)
    dt = np.diff(grid)
    cells = cell_index(spec.grid, grid)
    m = spec.n_drivers
    dW = rng.normals(seed, substream, n_paths, (len(dt), m), workers) * np.sqrt(dt)[None, :, None]

    vol = spec.vol[cells]  # (N, d, m)
    drift = spec.drift[cells]  # (N, d)
    log_step = (drift - 0.5 * np.sum(vol**2, axis=2)) * dt[:, None] + np.einsum("ndm,pnm->pnd", vol, dW)
    log_path = np.concatenate([np.zeros((n_paths, 1, spec.n_assets)), np.cumsum(log_step, axis=1)], axis=1)
    values = {asset_label(i): spec.s0[i] * np.exp(log_path[:, :, i]) for i in range(spec.n_assets)}
    return PathBundle(seed, grid, values, {"W": dW})


# ---------------------------------------------------------------------------
# squared Bessel process of dimension four


def _besq4_step(gen: np.random.Generator, x, t):
    # X_t / t ~ noncentral chi^2(4, x / t) = chi^2(4 + 2K), K ~ Poisson(x / (2t))
    k = gen.poisson(x / (2.0 * t))
    return 2.0 * t * gen.gamma(2.0 + k)


def sample_besq4_exact(x0: float, t: float, n: int, seed: int, substream: int = rng.DEFLATOR) -> np.ndarray:
    """Exact draws of ``X_t`` for a squared Bessel(4) process with ``X_0 = x0``.

    The inverse ``1 / X_t`` is the strict local martingale solving
    ``dD = -2 D^{3/2} dW`` with ``D_0 = 1 / x0``.
    """
    if not (x0 > 0 and t > 0):
        raise ValueError("need x0 > 0 and t > 0")
    return rng.per_path(seed, substream, n, lambda g, rows: _besq4_step(g, np.full(rows, float(x0)), t))


def simulate_besq4_paths(x0: float, grid, n_paths: int, seed: int, substream: int = rng.DEFLATOR) -> PathBundle:
    """Chain exact transitions along ``grid``; labels ``X`` and ``D = 1/X``."""
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    if x0 <= 0 or np.any(dt <= 0):
        raise ValueError("need x0 > 0 and a strictly increasing grid")

    def draw(g, rows):
        out = np.empty((rows, len(grid)))
        out[:, 0] = x0
        for k, h in enumerate(dt):
            out[:, k + 1] = _besq4_step(g, out[:, k], h)
        return out

    X = rng.per_path(seed, substream, n_paths, draw)
    return PathBundle(seed, grid, {"X": X, "D": 1.0 / X})


# ---------------------------------------------------------------------------
# generic scheme


def euler_maruyama(
    drift: Callable[[float, np.ndarray], np.ndarray],
    diffusion: Callable[[float, np.ndarray], np.ndarray],
    x0: float,
    grid,
    n_paths: int,
    seed: int,
    floor: float | None = None,
    substream: int = rng.ASSETS,
    label: str = "X",
) -> PathBundle:
    """Scalar Euler scheme ``X += b(t, X) dt + s(t, X) dW``.

    With ``floor`` set, the state is clamped at ``floor`` after each step and
    the number of clamp events is reported in ``info["clamps"]``; a non-zero
    count means an exact sampler should be preferred.
    """
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    dW = rng.normals(seed, substream, n_paths, (len(dt),)) * np.sqrt(dt)[None, :]
    x = np.empty((n_paths, len(grid)))
    x[:, 0] = x0
    clamps = 0
    for k, h in enumerate(dt):
        t, cur = grid[k], x[:, k]
        nxt = cur + drift(t, cur) * h + diffusion(t, cur) * dW[:, k]
        if floor is not None:
            low = nxt < floor
            clamps += int(np.count_nonzero(low))
            nxt[low] = floor
        x[:, k + 1] = nxt
    return PathBundle(seed, grid, {label: x}, {"W": dW[:, :, None]}, {"clamps": clamps})


# ---------------------------------------------------------------------------
# Yor's formula


def stochastic_exponential_milstein(drift, vol, dW, dt) -> np.ndarray:
    """First-order discretisation of ``dY = Y dX`` with ``X = drift . lambda + vol . W``.

    ``drift`` is a scalar per cell (shape ``(N,)``), ``vol`` has shape
    ``(N, m)`` and ``dW`` ``(n_paths, N, m)``. Returns ``(n_paths, N + 1)``.
    """
    dt = np.asarray(dt, dtype=float)
    drift = np.broadcast_to(np.asarray(drift, dtype=float), dt.shape)
    vol = np.broadcast_to(np.asarray(vol, dtype=float), (len(dt), dW.shape[2]))
    noise = np.einsum("nm,pnm->pn", vol, dW)
    factor = 1.0 + drift * dt + noise + 0.5 * (noise**2 - np.sum(vol**2, axis=1) * dt)
    return np.concatenate([np.ones((dW.shape[0], 1)), np.cumprod(factor, axis=1)], axis=1)


def stochastic_exponential_logexact(drift, vol, dW, dt) -> np.ndarray:
    dt = np.asarray(dt, dtype=float)
    drift = np.broadcast_to(np.asarray(drift, dtype=float), dt.shape)
    vol = np.broadcast_to(np.asarray(vol, dtype=float), (len(dt), dW.shape[2]))
    step = (drift - 0.5 * np.sum(vol**2, axis=1)) * dt + np.einsum("nm,pnm->pn", vol, dW)
    return np.exp(np.concatenate([np.zeros((dW.shape[0], 1)), np.cumsum(step, axis=1)], axis=1))


def yor_gap(x_drift, x_vol, y_drift, y_vol, dW, dt, scheme=stochastic_exponential_milstein) -> float:
    """Max relative gap between ``E(X) E(Y)`` and ``E(X + Y + [X, Y])``.

    The bracket is accumulated as ``sum sigma_X . sigma_Y dt``.
    """
    x_vol = np.broadcast_to(np.asarray(x_vol, dtype=float), (len(dt), dW.shape[2]))
    y_vol = np.broadcast_to(np.asarray(y_vol, dtype=float), (len(dt), dW.shape[2]))
    bracket = np.sum(x_vol * y_vol, axis=1)
    ex = scheme(x_drift, x_vol, dW, dt)
    ey = scheme(y_drift, y_vol, dW, dt)
    exy = scheme(np.asarray(x_drift) + np.asarray(y_drift) + bracket, x_vol + y_vol, dW, dt)
    return float(np.max(np.abs(ex * ey - exy) / exy))


def yor_convergence(x_drift, x_vol, y_drift, y_vol, T: float, n_steps: int, n_paths: int, seed: int,
                    scheme=stochastic_exponential_milstein) -> dict:
    """Yor gaps on ``n_steps`` and ``2 n_steps`` cells with coupled increments.

    Coefficients are constant (scalars or m-vectors). The coarse increments
    are sums of adjacent fine ones, so both gaps are measured on the same
    Brownian paths.
    """
    x_vol, y_vol = np.atleast_1d(x_vol).astype(float), np.atleast_1d(y_vol).astype(float)
    m = len(x_vol)
    fine_dt = np.full(2 * n_steps, T / (2 * n_steps))
    dW_fine = rng.normals(seed, rng.ASSETS, n_paths, (2 * n_steps, m)) * np.sqrt(fine_dt)[None, :, None]
    dW_coarse = dW_fine[:, 0::2] + dW_fine[:, 1::2]
    coarse = yor_gap(x_drift, x_vol, y_drift, y_vol, dW_coarse, np.full(n_steps, T / n_steps), scheme)
    fine = yor_gap(x_drift, x_vol, y_drift, y_vol, dW_fine, fine_dt, scheme)
    return {"gap_coarse": coarse, "gap_fine": fine, "ratio": fine / coarse if coarse > 0 else float("nan")}


# ---------------------------------------------------------------------------
# martingale tests

MARTINGALE = "consistent-martingale"
STRICT_SUPERMARTINGALE = "consistent-supermartingale-strict"
REJECTED = "rejected"


@dataclass(frozen=True)
class MartingaleTestReport:
    label: str
    mode: str
    reference: float
    confidence: float
    times: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    verdict: str
    worst_index: int

    @property
    def passed(self) -> bool:
        return self.verdict != REJECTED

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "mode": self.mode,
            "reference": self.reference,
            "confidence": self.confidence,
            "verdict": self.verdict,
            "final_mean": float(self.means[-1]),
            "final_stderr": float(self.stderrs[-1]),
            "worst_time": float(self.times[self.worst_index]),
        }


def martingale_test(
    bundle: PathBundle,
    label: str,
    reference: float | None = None,
    mode: str = "martingale",
    confidence: float = 3.0,
) -> MartingaleTestReport:
    """Compare per-time sample means of a process with its reference value.

    ``martingale`` mode rejects when ``|mean_t - ref| > c SE_t`` at some grid
    time; ``supermartingale`` mode only when ``mean_t - ref > c SE_t``. A
    supermartingale whose terminal mean sits below ``ref - c SE_T`` is
    reported as strict. The slack never drops below a relative 1e-12, so
    times where all paths agree are compared exactly up to rounding.
    """
    if mode not in ("martingale", "supermartingale"):
        raise ValueError(f"unknown mode {mode!r}")
    values = bundle[label]
    if reference is None:
        reference = float(values[0, 0])
    means, ses = mean_and_stderr(values, axis=0)
    # rounding leaves a tiny nonzero SE where all paths agree, so the exact
    # comparison tolerance is a floor rather than a zero-SE special case
    slack = np.maximum(confidence * ses, 1e-12 * max(abs(reference), 1.0))
    excess = means - reference
    bad = np.abs(excess) > slack if mode == "martingale" else excess > slack
    score = np.abs(excess) / slack if mode == "martingale" else excess / slack
    worst = int(np.argmax(score))
    if bad.any():
        verdict = REJECTED
    elif mode == "supermartingale" and excess[-1] < -slack[-1]:
        verdict = STRICT_SUPERMARTINGALE
    else:
        verdict = MARTINGALE
    return MartingaleTestReport(label, mode, float(reference), float(confidence), bundle.grid.copy(),
                                means, ses, verdict, worst)
