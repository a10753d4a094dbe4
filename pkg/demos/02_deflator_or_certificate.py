"""Finding a market price of risk, or proving there is none.

With one asset the deflator D = E(-theta . W) always exists. Two assets
driven by the same Brownian motion but with different drifts cannot share
a savings account: the solver returns a left null vector that witnesses
the contradiction.

    python3 demos/02_deflator_or_certificate.py
"""

import numpy as np

from elmdkit import ItoMarketSpec, build_deflator_paths, martingale_test, simulate_stochastic_exponential
from elmdkit import solve_market_price_of_risk

# %% one asset: theta = (a - r) / sigma
market = ItoMarketSpec.constant(s0=1.0, drift=0.05, vol=0.2, rate=0.02)
sol = solve_market_price_of_risk(market)
print("theta =", sol.theta[0, 0])

# %% deflate simulated prices: S Z should have constant mean
bundle = simulate_stochastic_exponential(market, n_paths=100_000, seed=0, refine=10)
Z = build_deflator_paths(sol, bundle).Z
deflated = bundle.with_process("SZ", bundle["S1"] * Z)
print("S  :", martingale_test(bundle, "S1").verdict)
print("S Z:", martingale_test(deflated, "SZ").verdict)

# %% two assets, shared volatility, free rate
bad = ItoMarketSpec.constant([1.0, 1.0], [0.05, 0.07], [[0.2], [0.2]], rate=None)
cert = solve_market_price_of_risk(bad)
print(cert.explanation)
print("witness", np.round(cert.witness, 4), "checks:", cert.check(bad))
