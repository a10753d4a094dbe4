from fractions import Fraction
from pathlib import Path

import pytest

from elmdkit.market import ScenarioTree, TreeNode

MARKETS = Path(__file__).resolve().parent.parent / "demos" / "markets"
STRATEGIES = MARKETS.parent / "strategies"

_acceptance: dict[int, tuple[str, str]] = {}


def one_period_tree(up, down, p_up=Fraction(1, 2), s0=Fraction(1), b1=Fraction(1)) -> ScenarioTree:
    return ScenarioTree.from_nodes([
        TreeNode(0, None, 0, Fraction(1), (Fraction(s0),), Fraction(1), (1, 2)),
        TreeNode(1, 0, 1, Fraction(p_up), (Fraction(up),), Fraction(b1), ()),
        TreeNode(2, 0, 1, 1 - Fraction(p_up), (Fraction(down),), Fraction(b1), ()),
    ])


@pytest.fixture
def binomial():
    return one_period_tree(2, Fraction(1, 2))


@pytest.fixture
def binomial_arbitrage():
    return one_period_tree(2, Fraction(3, 2))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        previous = _acceptance.get(number, (title, "PASS"))[1]
        _acceptance[number] = (title, "FAIL" if failed or previous == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, verdict = _acceptance[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
