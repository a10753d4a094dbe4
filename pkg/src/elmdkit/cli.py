"""Command line front end.

Exit codes: 0 success (deflator / EMM found, checks passed), 1 input error,
2 arbitrage or no deflator (pricing and verification refuse to run),
3 a statistical or exact verification failed.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import rng
from .arbitrage import EMM, NO_ARBITRAGE, brute_force_na, decide_na, emm_deflator
from .deflator import (
    InfeasibilityCertificate,
    build_deflator_paths,
    minimal_market_deflator,
    multiplicative_doob_decompose,
    solve_market_price_of_risk,
)
from .market import (
    ItoMarketSpec,
    MarketError,
    MinimalMarketSpec,
    ScenarioTree,
    format_fraction,
    load_market,
    parse_fraction,
    savings_account_values,
)
from .portfolio import (
    DYNAMIC,
    SELF_FINANCING,
    Strategy,
    StrategyError,
    build_mean_self_financing,
    deflated_test,
    deflated_tree_martingale,
    roll_forward,
    scheduled_proportion,
    stack_assets,
)
from .pricing import (
    PricingResult,
    bond_gap_experiment,
    bond_paths_deterministic,
    bond_paths_minimal_market,
    claim_name,
    claim_payoff,
    price_forward_measure,
    price_real_world,
    price_risk_neutral,
    pricing_csv,
    real_world_samples,
    risk_neutral_samples,
)
from .random_trees import suite_tree
from .sde import cell_index, martingale_test, simulate_besq4_paths, simulate_stochastic_exponential

DEFAULT_SEED = 20211110
DEFAULT_PATHS = 100_000
DEFAULT_CONFIDENCE = 3.0

EXIT_OK, EXIT_INPUT, EXIT_ARBITRAGE, EXIT_FAILED = 0, 1, 2, 3


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None = None
    seed: int = DEFAULT_SEED
    n_paths: int = DEFAULT_PATHS
    refine: int = 1
    out: str | None = None
    confidence: float = DEFAULT_CONFIDENCE
    fmt: str = "json"


def _fractions_json(values: dict) -> dict:
    return {str(k): format_fraction(v) for k, v in values.items()}


def _emit(cfg: RunConfig, payload, filename: str, text: str | None = None) -> None:
    text = text if text is not None else json.dumps(payload, indent=2)
    print(text.rstrip("\n"))
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text if text.endswith("\n") else text + "\n")


def _load(path) -> object:
    try:
        return load_market(path)
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except MarketError as exc:
        raise InputError(str(exc)) from exc


def _json_arg(value: str):
    """Inline JSON or a path to a JSON file."""
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        pass
    try:
        return json.loads(Path(value).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON from {value!r}") from exc


# ---------------------------------------------------------------------------
# diagnose


def diagnose(market) -> tuple[int, dict, object]:
    if isinstance(market, ScenarioTree):
        cert = decide_na(market)
        return (EXIT_OK if cert.kind == EMM else EXIT_ARBITRAGE), {"market": "tree", "certificate": cert.to_json()}, cert
    if isinstance(market, MinimalMarketSpec):
        report = {"market": "mmm", "deflator": "inverse squared Bessel(4) over savings account",
                  "strict_local_martingale": True, "r": market.r, "T": market.T}
        return EXIT_OK, report, None
    result = solve_market_price_of_risk(market)
    code = EXIT_ARBITRAGE if isinstance(result, InfeasibilityCertificate) else EXIT_OK
    return code, {"market": "ito", "result": result.to_json()}, result


def cmd_diagnose(cfg: RunConfig) -> int:
    code, report, _ = diagnose(_load(cfg.input))
    report["exit_code"] = code
    _emit(cfg, report, "diagnose.json")
    return code


# ---------------------------------------------------------------------------
# price


def _ito_setup(cfg: RunConfig, market: ItoMarketSpec, solution):
    bundle = simulate_stochastic_exponential(market, cfg.n_paths, cfg.seed, refine=cfg.refine)
    deflator = build_deflator_paths(solution, bundle)
    B, _ = savings_account_values(solution.rate_curve(), bundle.grid)
    return bundle, deflator, B


def price_market(cfg: RunConfig, market, claim: dict, method: str) -> tuple[list[PricingResult], str | None]:
    """Price ``claim`` by each requested method; also returns a note on the
    per-path real-world / risk-neutral identity when both are requested."""
    code, _, result = diagnose(market)
    if code != EXIT_OK:
        raise _Refused("market admits no deflator; pricing refused")
    methods = ["real-world", "risk-neutral"] if method == "both" else [method]
    name = claim_name(claim)
    out = []
    if isinstance(market, ScenarioTree):
        deflator = emm_deflator(market, result)
        H = {leaf: claim_payoff(claim, market[leaf].S) for leaf in market.leaves()}
        for m in methods:
            if m == "real-world":
                out.append(price_real_world(H, deflator, market, name))
            elif m == "risk-neutral":
                out.append(price_risk_neutral(H, result, tree=market, claim=name))
            else:
                bond = price_real_world({leaf: Fraction(1) for leaf in market.leaves()}, deflator, market).node_prices
                out.append(price_forward_measure(H, bond, deflator, market, name))
        note = None
        if method == "both":
            gap = max(abs(a - b) for a, b in zip(out[0].node_prices.values(), out[1].node_prices.values()))
            note = f"real-world minus risk-neutral, max over nodes: {format_fraction(gap)} (exact)"
        return out, note

    if isinstance(market, MinimalMarketSpec):
        if claim.get("type", "bond") != "bond":
            raise InputError("the minimal market model prices the zero-coupon bond only")
        grid = np.array([0.0, market.T])
        deflator = minimal_market_deflator(market, grid, cfg.n_paths, cfg.seed)
        H = np.ones(cfg.n_paths)
        for m in methods:
            if m == "real-world":
                out.append(price_real_world(H, deflator, claim=name, seed=cfg.seed))
            elif m == "risk-neutral":
                # formal price under a putative risk-neutral measure: B_T^{-1}
                out.append(PricingResult(name, "risk-neutral", float(np.exp(-market.r * market.T)), 0.0,
                                         cfg.n_paths, cfg.seed))
            else:
                X = simulate_besq4_paths(1.0 / market.d0, grid, cfg.n_paths, cfg.seed)["X"]
                P = bond_paths_minimal_market(X, grid, market.r)
                out.append(price_forward_measure(H, P, deflator, claim=name, seed=cfg.seed))
        note = None
        if method == "both":
            note = "minimal market model: deflator is a strict local martingale, prices differ by the bond gap"
        return out, note

    bundle, deflator, _ = _ito_setup(cfg, market, result)
    terminal = stack_assets(bundle)[:, -1, :]
    H = claim_payoff(claim, terminal)
    curve = result.rate_curve()
    for m in methods:
        if m == "real-world":
            out.append(price_real_world(H, deflator, claim=name, seed=cfg.seed))
        elif m == "risk-neutral":
            out.append(price_risk_neutral(H, deflator.D, curve, claim=name, seed=cfg.seed))
        else:
            P = np.broadcast_to(bond_paths_deterministic(curve, bundle.grid), deflator.Z.shape)
            out.append(price_forward_measure(H, P, deflator, claim=name, seed=cfg.seed))
    note = None
    if method == "both":
        rw = real_world_samples(H, deflator)
        rn = risk_neutral_samples(H, deflator.D, curve)
        scale = np.maximum(np.abs(rw), np.finfo(float).tiny)
        note = f"real-world vs risk-neutral per-path max relative difference: {np.max(np.abs(rw - rn) / scale):.3e}"
    return out, note


class _Refused(Exception):
    pass


def cmd_price(cfg: RunConfig, claim: dict, method: str) -> int:
    market = _load(cfg.input)
    try:
        results, note = price_market(cfg, market, claim, method)
    except _Refused as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARBITRAGE
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad claim spec: {exc}") from exc
    if note:
        print(f"note: {note}", file=sys.stderr)
    if cfg.fmt == "csv":
        _emit(cfg, None, "prices.csv", pricing_csv(results))
    else:
        rows = [dict(zip(["claim", "method", "price", "stderr", "n", "seed"], r.csv_row())) for r in results]
        _emit(cfg, rows, "prices.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bondgap


def cmd_bondgap(cfg: RunConfig, T: float, r: float) -> int:
    report = bond_gap_experiment(T, r, cfg.n_paths, cfg.seed, cfg.confidence)
    _emit(cfg, report.to_json(), "bondgap.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _per_cell(values, market: ItoMarketSpec, grid, width: int | None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    cells = cell_index(market.grid, grid)
    if width is None:
        arr = np.broadcast_to(arr, (market.n_cells,)) if arr.ndim == 0 else arr
        if arr.shape != (market.n_cells,):
            raise StrategyError(f"expected {market.n_cells} per-cell values, got shape {arr.shape}")
        return arr[cells]
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (market.n_cells, width))
    if arr.shape != (market.n_cells, width):
        raise StrategyError(f"expected per-cell holdings of shape {(market.n_cells, width)}, got {arr.shape}")
    return arr[cells]


def _path_strategy(spec: dict, market: ItoMarketSpec, grid) -> Strategy:
    v0 = float(spec.get("V0", 1.0))
    delta = spec.get("delta", {"proportion": [0.0] * market.n_assets})
    if isinstance(delta, dict) and "proportion" in delta:
        rule = scheduled_proportion(_per_cell(delta["proportion"], market, grid, market.n_assets))
        return Strategy(rule, v0)
    return Strategy(_per_cell(delta, market, grid, market.n_assets), v0)


def _tree_strategy(spec: dict, tree: ScenarioTree) -> Strategy:
    kind = spec.get("kind", SELF_FINANCING)
    delta = {int(k): [parse_fraction(x) for x in v] for k, v in spec.get("delta", {}).items()}
    eta = {int(k): parse_fraction(v) for k, v in spec.get("eta", {}).items()} if kind == DYNAMIC else None
    return Strategy(delta, parse_fraction(spec.get("V0", "1")), kind, eta)


def cmd_verify(cfg: RunConfig, strategy_path: str) -> int:
    market = _load(cfg.input)
    spec = _json_arg(strategy_path)
    code, _, result = diagnose(market)
    if code != EXIT_OK:
        print("error: market admits no deflator; verification refused", file=sys.stderr)
        return EXIT_ARBITRAGE
    if isinstance(market, MinimalMarketSpec):
        raise InputError("strategies are verified on Ito or tree markets only")
    try:
        if isinstance(market, ScenarioTree):
            deflator = emm_deflator(market, result)
            path = roll_forward(_tree_strategy(spec, market), market)
            ok = deflated_tree_martingale(market, path, deflator)
            report = {"market": "tree", "kind": path.kind, "deflated_martingale_exact": ok,
                      "V": _fractions_json(path.V), "pnl": _fractions_json(path.pnl)}
            _emit(cfg, report, "verify.json")
            return EXIT_OK if ok else EXIT_FAILED

        bundle, deflator, B = _ito_setup(cfg, market, result)
        base = _path_strategy(spec, market, bundle.grid)
        reports = []
        for i in range(market.n_assets):
            lab = f"S{i + 1}"
            deflated = bundle.with_process(lab + "Z", bundle[lab] * deflator.Z)
            reports.append(martingale_test(deflated, lab + "Z", None, "martingale", cfg.confidence).to_json())
        if spec.get("kind", SELF_FINANCING) == DYNAMIC:
            eta = spec.get("eta", {})
            vartheta = _per_cell(eta.get("vartheta", 0.0), market, bundle.grid, None)
            w_tilde = rng.normals(cfg.seed, rng.INDEPENDENT, cfg.n_paths, (len(bundle.grid) - 1,))
            w_tilde = w_tilde * np.sqrt(np.diff(bundle.grid))[None, :]
            _, path, msf = build_mean_self_financing(base, vartheta, bundle, B, deflator, w_tilde, cfg.confidence)
            reports += [msf.pnl_test.to_json(), msf.deflated_test.to_json()]
            summary = {"market": "ito", "kind": DYNAMIC, "tests": reports, "mean_self_financing": msf.to_json()}
            passed = msf.passed
        else:
            path = roll_forward(base, bundle, B)
            if np.any(path.V < -1e-12):
                raise InputError("strategy value goes negative; only nonnegative portfolios are verified")
            reports.append(deflated_test(path, deflator, bundle.grid, "supermartingale", cfg.confidence).to_json())
            summary = {"market": "ito", "kind": SELF_FINANCING, "tests": reports}
            passed = True
        passed = passed and all(r["verdict"] != "rejected" for r in reports)
    except StrategyError as exc:
        raise InputError(f"strategy does not fit the market: {exc}") from exc
    summary["passed"] = passed
    _emit(cfg, summary, "verify.json")
    return EXIT_OK if passed else EXIT_FAILED


# ---------------------------------------------------------------------------
# decompose / na-suite


def cmd_decompose(cfg: RunConfig, z_path: str | None) -> int:
    tree = _load(cfg.input)
    if not isinstance(tree, ScenarioTree):
        raise InputError("decompose needs a tree market")
    if z_path is None:
        cert = decide_na(tree)
        if cert.kind != EMM:
            print("error: tree admits arbitrage, no deflator to decompose", file=sys.stderr)
            return EXIT_ARBITRAGE
        Z = emm_deflator(tree, cert).Z
    else:
        raw = _json_arg(z_path)
        try:
            Z = {int(k): parse_fraction(v) for k, v in raw.items()}
            missing = set(tree.nodes) - set(Z)
            if missing:
                raise InputError(f"deflator missing at nodes {sorted(missing)}")
        except (MarketError, ValueError) as exc:
            raise InputError(str(exc)) from exc
    dec = multiplicative_doob_decompose(tree, Z)
    report = {"Z": _fractions_json(dec.Z), "D": _fractions_json(dec.D), "C": _fractions_json(dec.C),
              "B": _fractions_json(dec.savings_account)}
    _emit(cfg, report, "decompose.json")
    return EXIT_OK


def run_na_suite(count: int, seed: int) -> dict:
    rnd = random.Random(seed)
    summary = {"count": count, "seed": seed, "emm": 0, "arbitrage": 0, "disagreements": [], "verified": 0}
    for i in range(count):
        tree = suite_tree(rnd)
        cert = decide_na(tree)
        oracle = brute_force_na(tree)
        summary[cert.kind] += 1
        summary["verified"] += bool(cert.verify(tree))
        if (cert.kind == EMM) != (oracle == NO_ARBITRAGE):
            summary["disagreements"].append(i)
    return summary


def cmd_na_suite(cfg: RunConfig, count: int) -> int:
    summary = run_na_suite(count, cfg.seed)
    _emit(cfg, summary, "na_suite.json")
    ok = not summary["disagreements"] and summary["verified"] == count
    return EXIT_OK if ok else EXIT_FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"u64 seed (default {DEFAULT_SEED})")
    common.add_argument("--n-paths", type=int, default=DEFAULT_PATHS, help=f"Monte Carlo paths (default {DEFAULT_PATHS})")
    common.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE, help="standard-error multiplier (default 3)")
    common.add_argument("--refine", type=int, default=1, help="sub-steps per market grid cell (default 1)")
    common.add_argument("--out", help="directory for report files")
    common.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json")

    parser = argparse.ArgumentParser(prog="elmdkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", parents=[common], help="find a deflator / EMM or a certificate against it")
    p.add_argument("market")
    p = sub.add_parser("price", parents=[common], help="price a claim")
    p.add_argument("market")
    p.add_argument("--claim", default='{"type": "bond"}', help="claim JSON (inline or file)")
    p.add_argument("--method", choices=["real-world", "risk-neutral", "forward", "both"], default="real-world")
    p = sub.add_parser("bondgap", parents=[common], help="real-world vs risk-neutral bond under the minimal market model")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--r", type=float, default=0.0)
    p = sub.add_parser("verify", parents=[common], help="roll a strategy forward and test its deflated value")
    p.add_argument("market")
    p.add_argument("strategy", help="strategy JSON (inline or file)")
    p = sub.add_parser("decompose", parents=[common], help="multiplicative decomposition of a tree deflator")
    p.add_argument("market")
    p.add_argument("--z", help="deflator node values JSON; defaults to the EMM deflator")
    p = sub.add_parser("na-suite", parents=[common], help="randomised LP vs enumeration no-arbitrage check")
    p.add_argument("--count", type=int, default=1000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(args.command, getattr(args, "market", None), args.seed, args.n_paths, args.refine,
                    args.out, args.confidence, args.fmt)
    try:
        if cfg.n_paths < 2 or cfg.refine < 1:
            raise InputError("--n-paths must be >= 2 and --refine >= 1")
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        if args.command == "price":
            return cmd_price(cfg, _json_arg(args.claim), args.method)
        if args.command == "bondgap":
            return cmd_bondgap(cfg, args.T, args.r)
        if args.command == "verify":
            return cmd_verify(cfg, args.strategy)
        if args.command == "decompose":
            return cmd_decompose(cfg, args.z)
        return cmd_na_suite(cfg, args.count)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
