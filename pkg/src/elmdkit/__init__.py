"""Deflators, no-arbitrage certificates and real-world pricing for
continuous (Ito) and discrete (scenario tree) markets."""

from .arbitrage import LPCertificate, brute_force_na, decide_na, emm_deflator, find_savings_account
from .deflator import (
    DeflatorDecomposition,
    DomainError,
    InfeasibilityCertificate,
    PreconditionError,
    RiskPriceSolution,
    build_deflator_paths,
    minimal_market_deflator,
    multiplicative_doob_decompose,
    solve_market_price_of_risk,
    verify_savings_account_uniqueness,
)
from .market import (
    ItoMarketSpec,
    MarketError,
    MinimalMarketSpec,
    RateCurve,
    ScenarioTree,
    TreeNode,
    load_market,
    savings_account_values,
)
from .portfolio import Strategy, build_mean_self_financing, pnl_process, roll_forward
from .pricing import (
    bond_gap_experiment,
    price_forward_measure,
    price_real_world,
    price_risk_neutral,
)
from .sde import (
    PathBundle,
    euler_maruyama,
    martingale_test,
    sample_besq4_exact,
    simulate_besq4_paths,
    simulate_stochastic_exponential,
)

__version__ = "0.1.0"
