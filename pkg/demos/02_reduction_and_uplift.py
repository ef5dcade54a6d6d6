"""Filtration reduction and the unique consistent uplift.

A trader who hedges only drivers 0 and 1 works in a fictitious complete
market without driver 2.  Its unique measure extends back to the full
market in exactly one way that is consistent across all such reductions:
the neglected driver keeps its physical intensity (its risk is unpriced).
Batching instead aggregates drivers 1 and 2 into one hedged-on-average
driver; the batch premium is then shared in proportion to the physical
weights, here including a time-varying intensity.
"""

import numpy as np

from upliftemm import (
    DiscreteJumpSpec,
    DiscretePlan,
    MarketSpec,
    TimeFunction,
    build_uplifted_emm,
    reduce_market,
    verify_uplift,
)

market = MarketSpec(
    horizon=1.0,
    s0=[100.0, 50.0, 25.0],
    alpha=[0.21, 0.175, -0.04],
    rate=0.02,
    sigma=[[0.2], [0.3], [0.1]],
    jumps=DiscreteJumpSpec(
        intensities=[2.0, 1.0, 3.0],
        loadings=[[0.1, -0.2, 0.2], [0.05, 0.1, -0.15], [-0.1, 0.3, 0.25]],
    ),
)

# -- complete neglect ---------------------------------------------------------
plan = DiscretePlan(retain=(0, 1), neglect=(2,))
emm, fict, fict_emm = build_uplifted_emm(market, plan)

print("fictitious market drivers:", fict.spec.n_jump_drivers)
print("fictitious solution:")
print("  theta* =", fict_emm.theta[0].constant_value)
print("  lambda~* =", [f.constant_value for f in fict_emm.intensities])
print("uplifted measure on the full market:")
print("  lambda~* =", [f.constant_value for f in emm.intensities])
print("  (driver 2 keeps its physical rate 3.0: no risk premium)")
check = verify_uplift(emm, market)
print("residual in the original equations:", check.max_residual)

# -- batching with a time-varying intensity ------------------------------------
grid = np.linspace(0.0, 1.0, 256)
lam2 = TimeFunction.samples([0.0, 1.0], [1.0, 2.0])  # 1 + t events/year
tv_market = MarketSpec(
    horizon=1.0,
    s0=market.s0,
    alpha=market.alpha,
    rate=market.rate,
    sigma=market.sigma,
    jumps=DiscreteJumpSpec(
        intensities=[2.0, 1.0, lam2],
        loadings=market.jumps.loadings,
    ),
)
batch_plan = DiscretePlan(retain=(0,), batches=((1, 2),))
fict_tv = reduce_market(tv_market, batch_plan, grid)
gamma = fict_tv.spec.jumps.intensities[1]
ybar0 = fict_tv.spec.jumps.loadings[0][1]
print("\nbatched driver intensity gamma(t): ",
      [round(gamma.value(t), 4) for t in (0.0, 0.5, 1.0)])
print("batched loading for stock 0:       ",
      [round(ybar0.value(t), 4) for t in (0.0, 0.5, 1.0)])

emm_tv, _, fict_emm_tv = build_uplifted_emm(tv_market, batch_plan, grid)
gamma_star = fict_emm_tv.intensities[1]
for m in (1, 2):
    ratio = np.atleast_1d(emm_tv.intensities[m].value(grid)) / np.atleast_1d(
        gamma_star.value(grid)
    )
    weight = np.atleast_1d(tv_market.jumps.intensities[m].value(grid)) / (
        np.atleast_1d(tv_market.jumps.intensities[1].value(grid))
        + np.atleast_1d(tv_market.jumps.intensities[2].value(grid))
    )
    print(f"driver {m}: max |premium share - physical weight| =",
          np.max(np.abs(ratio - weight)))
print("uplift verification:", verify_uplift(emm_tv, tv_market, grid).passed)
