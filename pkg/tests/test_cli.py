import json

import pytest

from elmdkit.cli import DEFAULT_SEED, build_parser, main

from conftest import MARKETS, STRATEGIES

SMALL = ["--n-paths", "20000"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_defaults_documented():
    args = build_parser().parse_args(["bondgap"])
    assert args.seed == DEFAULT_SEED and args.n_paths == 100_000 and args.confidence == 3.0


def test_diagnose_one_asset(capsys):
    code, out, _ = run(capsys, "diagnose", MARKETS / "one_asset.json")
    assert code == 0
    assert json.loads(out)["result"]["theta"][0][0] == pytest.approx(0.15, abs=1e-12)


def test_diagnose_shared_vol(capsys):
    code, out, _ = run(capsys, "diagnose", MARKETS / "shared_vol.json")
    assert code == 2 and json.loads(out)["result"]["kind"] == "infeasible"


def test_diagnose_arbitrage_tree(capsys):
    code, out, _ = run(capsys, "diagnose", MARKETS / "binomial_arbitrage.json")
    report = json.loads(out)
    assert code == 2
    assert report["certificate"]["kind"] == "arbitrage" and "delta" in report["certificate"]


def test_diagnose_malformed(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"type": "tree", "nodes": [{"id": 0}]}')
    code, _, err = run(capsys, "diagnose", bad)
    assert code == 1 and err.startswith("error:")
    assert run(capsys, "diagnose", tmp_path / "missing.json")[0] == 1


def test_price_minimal_market_bond(capsys):
    code, out, _ = run(capsys, "price", MARKETS / "mmm.json", "--format", "csv")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header == "claim,method,price,stderr,n,seed"
    fields = row.split(",")
    price, se = float(fields[2]), float(fields[3])
    assert abs(price - 0.3934693) <= 3 * se
    assert fields[4:] == ["100000", str(DEFAULT_SEED)]


def test_price_binomial_call_exact(capsys):
    code, out, _ = run(capsys, "price", MARKETS / "binomial.json", "--claim", '{"type":"call","strike":1}',
                       "--format", "csv")
    assert code == 0 and out.strip().splitlines()[1].split(",")[-4] == "1/3"


def test_price_both_notes_identity(capsys):
    code, out, err = run(capsys, "price", MARKETS / "one_asset.json", "--method", "both", *SMALL,
                         "--claim", '{"type":"put","strike":1}')
    rows = json.loads(out)
    assert code == 0 and [r["method"] for r in rows] == ["real-world", "risk-neutral"]
    assert rows[0]["seed"] == rows[1]["seed"]
    assert float(rows[0]["price"]) == pytest.approx(float(rows[1]["price"]), rel=1e-12)
    assert "per-path" in err


def test_price_refused_on_arbitrage(capsys):
    assert run(capsys, "price", MARKETS / "binomial_arbitrage.json")[0] == 2
    assert run(capsys, "price", MARKETS / "shared_vol.json")[0] == 2


def test_price_bad_claim(capsys):
    code, _, err = run(capsys, "price", MARKETS / "one_asset.json", "--claim", '{"type":"call"}', *SMALL)
    assert code == 1


def test_bondgap(capsys, tmp_path):
    code, out, _ = run(capsys, "bondgap", "--T", 1, "--r", 0, "--out", tmp_path)
    report = json.loads(out)
    assert code == 0 and report["risk_neutral"] == 1.0
    assert report["real_world_consistent"] and report["gap_flagged"]
    assert json.loads((tmp_path / "bondgap.json").read_text()) == report


def test_verify_buy_and_hold(capsys):
    code, out, _ = run(capsys, "verify", MARKETS / "one_asset.json", STRATEGIES / "buy_and_hold.json", "--refine", 12)
    report = json.loads(out)
    assert code == 0 and report["passed"]
    assert report["tests"][-1]["verdict"] == "consistent-martingale"


def test_verify_mean_self_financing(capsys):
    code, out, _ = run(capsys, "verify", MARKETS / "one_asset.json", STRATEGIES / "mean_self_financing.json",
                       "--refine", 12)
    report = json.loads(out)
    assert code == 0
    msf = report["mean_self_financing"]
    assert msf["pnl_test"]["verdict"] != "rejected" and msf["deflated_test"]["verdict"] != "rejected"


def test_verify_tree(capsys):
    code, out, _ = run(capsys, "verify", MARKETS / "binomial.json", STRATEGIES / "tree_sf.json")
    assert code == 0 and json.loads(out)["deflated_martingale_exact"]


def test_verify_refused_on_arbitrage_tree(capsys):
    assert run(capsys, "verify", MARKETS / "binomial_arbitrage.json", STRATEGIES / "tree_sf.json")[0] == 2


def test_verify_mismatch(capsys):
    code, _, err = run(capsys, "verify", MARKETS / "one_asset.json", '{"kind":"sf","V0":1,"delta":[[1,2]]}', *SMALL)
    assert code == 1 and "does not fit" in err


def test_decompose(capsys):
    code, out, _ = run(capsys, "decompose", MARKETS / "binomial.json", "--z", '{"0":"1","1":"2","2":"2/3"}')
    report = json.loads(out)
    assert code == 0
    assert report["C"] == {"0": "1", "1": "4/3", "2": "4/3"}
    assert report["D"] == {"0": "1", "1": "3/2", "2": "1/2"}


def test_decompose_default_deflator(capsys):
    code, out, _ = run(capsys, "decompose", MARKETS / "binomial.json")
    assert code == 0 and json.loads(out)["Z"] == {"0": "1", "1": "2/3", "2": "4/3"}


def test_na_suite_small(capsys):
    code, out, _ = run(capsys, "na-suite", "--count", 40, "--seed", 3)
    report = json.loads(out)
    assert code == 0 and report["disagreements"] == [] and report["verified"] == 40


def test_runs_bit_identical(capsys):
    argv = ["price", MARKETS / "one_asset.json", "--claim", '{"type":"call","strike":1}', *SMALL]
    first = run(capsys, *argv)
    assert run(capsys, *argv) == first
