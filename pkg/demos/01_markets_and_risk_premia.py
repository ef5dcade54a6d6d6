"""Describe a jump-diffusion market and inspect its risk-premium system.

Three stocks share one Brownian driver and three independent Poisson jump
drivers.  With four sources of randomness and three traded assets the
market is incomplete: the risk-premium equations have one degree of
freedom, so there is a continuum of pricing measures.
"""

import numpy as np

from upliftemm import (
    DiscreteJumpSpec,
    MarketSpec,
    assemble_mpr_system,
    solve_mpr,
    validate_market,
)

market = MarketSpec(
    horizon=1.0,
    s0=[100.0, 50.0, 25.0],
    alpha=[0.21, 0.175, -0.04],      # physical drifts (per year)
    rate=0.02,                       # money-market rate
    sigma=[[0.2], [0.3], [0.1]],     # one Brownian column
    jumps=DiscreteJumpSpec(
        intensities=[2.0, 1.0, 3.0],            # events per year
        loadings=[                              # relative jump sizes
            [0.1, -0.2, 0.2],
            [0.05, 0.1, -0.15],
            [-0.1, 0.3, 0.25],
        ],
    ),
)

print("validation:", validate_market(market))

system = assemble_mpr_system(market, t=0.0)
print("\nunknowns:", system.unknowns)
print("coefficient matrix:\n", system.matrix)
print("excess returns after moving known compensators:", system.rhs)

classification = solve_mpr(system)
print("\nclassification:", classification.tag)
print("rank:", classification.rank, " nullspace:", classification.nullspace_dim)
print("minimum-norm candidate (not unique!):", classification.solution)

# dropping the third jump driver leaves 3 equations in 3 unknowns
reduced = MarketSpec(
    horizon=1.0,
    s0=market.s0,
    alpha=market.alpha,
    rate=market.rate,
    sigma=market.sigma,
    jumps=DiscreteJumpSpec(
        intensities=market.jumps.intensities[:2],
        loadings=[row[:2] for row in market.jumps.loadings],
    ),
)
complete = solve_mpr(assemble_mpr_system(reduced, 0.0))
print("\nafter dropping driver 2:", complete.tag)
print("theta* =", complete.solution[0])
print("risk-neutral intensities =", complete.solution[1:])
print("residual =", complete.residual)
assert np.allclose(complete.solution, [0.5, 1.5, 1.2])
