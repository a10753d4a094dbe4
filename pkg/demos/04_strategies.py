"""Self-financing and mean self-financing strategies under a deflator.

A nonnegative self-financing portfolio deflated by Z has nonincreasing
mean. Adding savings-account holdings driven by an independent Brownian
motion breaks self-financing path by path, but the P&L keeps zero mean
and V Z stays a supermartingale.

    python3 demos/04_strategies.py
"""

import numpy as np

from elmdkit import ItoMarketSpec, build_deflator_paths, savings_account_values, simulate_stochastic_exponential
from elmdkit import Strategy, build_mean_self_financing, roll_forward, solve_market_price_of_risk
from elmdkit import rng
from elmdkit.portfolio import constant_proportion, deflated_test

market = ItoMarketSpec.constant(1.0, 0.05, 0.2, 0.02)
n, cells = 100_000, 12
bundle = simulate_stochastic_exponential(market, n, seed=0, refine=cells)
sol = solve_market_price_of_risk(market)
deflator = build_deflator_paths(sol, bundle)
B, _ = savings_account_values(sol.rate_curve(), bundle.grid)

# %% constant 60/40 split between stock and savings account
base = Strategy(constant_proportion([0.6]), v0=1.0)
path = roll_forward(base, bundle, B)
print("60/40 V Z:", deflated_test(path, deflator, bundle.grid).verdict)
print("mean V_T:", path.V[:, -1].mean().round(4), "accounting residual:", np.abs(path.accounting_residual()).max())

# %% extra savings holdings eta = 0.1 * W~, W~ independent of the deflator
w_tilde = rng.normals(0, rng.INDEPENDENT, n, (cells,)) * np.sqrt(np.diff(bundle.grid))
_, dyn, report = build_mean_self_financing(base, 0.1, bundle, B, deflator, w_tilde)
print("P&L mean-zero:", report.pnl_test.verdict)
print("V Z:          ", report.deflated_test.verdict)
print(f"sum d(eta) dZ: {report.covariation_mean:.2e} +- {report.covariation_stderr:.2e}")
print("P&L spread at T:", dyn.pnl[:, -1].std().round(4))
