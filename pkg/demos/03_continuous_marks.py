"""Continuously distributed jump sizes: cells, and the reweighted density.

When jump sizes have a density, reduction partitions the mark space into
cells; each cell becomes a discrete driver whose loading is the cell's
conditional mean.  The unique consistent uplift keeps the density's shape
inside every cell and rescales cell probabilities to the solved
intensities; an uncovered remainder keeps the physical measure entirely.
"""

from scipy.integrate import quad

from upliftemm import (
    ContinuousJumpSpec,
    ContinuousPlan,
    Density,
    MarketSpec,
    build_uplifted_emm,
    reduce_market,
    verify_uplift,
)

market = MarketSpec(
    horizon=1.0,
    s0=[100.0, 80.0],
    alpha=[0.08, 0.03],
    rate=0.02,
    sigma=[[0.25], [0.4]],
    jumps=ContinuousJumpSpec(
        density=Density("uniform", (-0.5, 0.5), {}),
        total_intensity=4.0,
    ),
)

# discretize the mark space into two half cells (3 drivers for 2 stocks:
# this reduction alone cannot be complete, but it shows the bookkeeping)
plan = ContinuousPlan(cells=((-0.5, 0.0), (0.0, 0.5)))
import warnings

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    fict = reduce_market(market, plan)
print("cell intensities:", fict.spec.jumps.intensity_values(0.0))
print("cell conditional means:", fict.spec.jumps.loading_values(0.0)[0])

# a complete variant: hedge only the negative marks, neglect the rest
plan = ContinuousPlan(cells=((-0.5, 0.0),), neglect_remainder=True)
emm, fict, fict_emm = build_uplifted_emm(market, plan)
mm = emm.jump_measure
print("\nsolved cell intensity:", mm.cell_intensities[0].constant_value)
print("risk-neutral total intensity:", mm.total_intensity(0.0))
print("verification:", verify_uplift(emm, market).max_residual)

# the reweighted density: scaled uniform on the cell, physical elsewhere
for y in (-0.25, 0.25):
    print(f"f~*({y:+.2f}) = {mm.density_value(y):.6f}  "
          f"(physical 1.0); intensity ratio {mm.phi(y, 0.0):.4f}")

total, _ = quad(mm.density_value, -0.5, 0.5, points=[0.0])
print("density integrates to", total)

# conditional means inside a cell never move: only the cell weights do
num, _ = quad(lambda y: y * mm.density_value(y), -0.5, 0.0)
mass, _ = quad(mm.density_value, -0.5, 0.0)
print("cell conditional mean under f~*:", num / mass, "(physical -0.25)")
