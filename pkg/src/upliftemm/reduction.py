"""Fictitious markets from reduction plans.

A trader who cannot hedge every source of randomness picks a reduction
plan: keep some Brownian drivers, keep some jump drivers, merge others
into batches (hedged on average), drop the rest entirely.  Continuous
mark spaces are reduced by partitioning the support into cells, each
becoming a discrete driver with the cell's intensity and conditional
mean jump size.  The result is a fictitious market specification whose
driver count can match the number of stocks, making it complete.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCell, EmptyRetention, PlanMismatch, ShapeMismatch
from .model import (
    ContinuousJumpSpec,
    DiscreteJumpSpec,
    MarketSpec,
    DEFAULT_GRID_POINTS,
    default_grid,
)
from .timefns import TimeFunction

__all__ = [
    "DiscretePlan",
    "ContinuousPlan",
    "FictitiousMarket",
    "reduce_complete_neglect",
    "reduce_batch",
    "reduce_continuous",
    "reduce_market",
    "project_price_closed_form",
    "batch_weights",
]


@dataclass(frozen=True)
class DiscretePlan:
    """Partition of the jump drivers into retained, batched, and neglected.

    ``keep_brownians`` selects Brownian columns (None keeps all).  The
    union of ``retain``, the members of every batch, and ``neglect`` must
    be exactly {0, ..., M-1}.
    """

    retain: tuple[int, ...] = ()
    batches: tuple[tuple[int, ...], ...] = ()
    neglect: tuple[int, ...] = ()
    keep_brownians: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "retain", tuple(int(i) for i in self.retain))
        object.__setattr__(
            self, "batches", tuple(tuple(int(i) for i in b) for b in self.batches)
        )
        object.__setattr__(self, "neglect", tuple(int(i) for i in self.neglect))
        if self.keep_brownians is not None:
            object.__setattr__(
                self, "keep_brownians", tuple(int(i) for i in self.keep_brownians)
            )

    def validate(self, spec: MarketSpec) -> None:
        M = spec.n_jump_drivers
        mentioned = list(self.retain) + list(self.neglect)
        for b in self.batches:
            if len(b) < 2:
                raise ShapeMismatch("a batch needs at least two members")
            mentioned.extend(b)
        if sorted(mentioned) != list(range(M)):
            raise ShapeMismatch(
                "retain + batches + neglect must partition the driver set"
            )
        if self.keep_brownians is not None:
            D = spec.n_brownians
            kb = self.keep_brownians
            if len(set(kb)) != len(kb) or any(d < 0 or d >= D for d in kb):
                raise ShapeMismatch("keep_brownians out of range")

    def kept_brownians(self, spec: MarketSpec) -> tuple[int, ...]:
        if self.keep_brownians is None:
            return tuple(range(spec.n_brownians))
        return tuple(sorted(self.keep_brownians))

    def to_json(self):
        doc = {
            "retain": list(self.retain),
            "batches": [list(b) for b in self.batches],
            "neglect": list(self.neglect),
        }
        if self.keep_brownians is not None:
            doc["keep_brownians"] = list(self.keep_brownians)
        return doc


@dataclass(frozen=True)
class ContinuousPlan:
    """Disjoint cells of the mark space; the uncovered remainder may be
    kept as an (unhedged, unpriced) cell or must be empty."""

    cells: tuple[tuple[float, float], ...]
    neglect_remainder: bool = False
    keep_brownians: tuple[int, ...] | None = None

    def __post_init__(self):
        cells = tuple((float(a), float(b)) for a, b in self.cells)
        object.__setattr__(self, "cells", cells)
        if self.keep_brownians is not None:
            object.__setattr__(
                self, "keep_brownians", tuple(int(i) for i in self.keep_brownians)
            )

    def validate(self, spec: MarketSpec) -> None:
        if not isinstance(spec.jumps, ContinuousJumpSpec):
            raise PlanMismatch("cell plans apply to continuous mark spaces")
        lo, hi = spec.jumps.support
        cells = sorted(self.cells)
        for a, b in cells:
            if not (lo - 1e-12 <= a < b <= hi + 1e-12):
                raise ShapeMismatch(f"cell ({a:g}, {b:g}) escapes the support")
        for (_, b1), (a2, _) in zip(cells, cells[1:]):
            if a2 < b1 - 1e-12:
                raise ShapeMismatch("cells overlap")
        if not self.neglect_remainder:
            covered = sum(b - a for a, b in cells)
            if covered < (hi - lo) * (1.0 - 1e-9):
                raise ShapeMismatch(
                    "cells do not cover the support; set neglect_remainder"
                )

    def kept_brownians(self, spec: MarketSpec) -> tuple[int, ...]:
        if self.keep_brownians is None:
            return tuple(range(spec.n_brownians))
        return tuple(sorted(self.keep_brownians))

    def to_json(self):
        doc = {
            "cells": [list(c) for c in self.cells],
            "neglect_remainder": self.neglect_remainder,
        }
        if self.keep_brownians is not None:
            doc["keep_brownians"] = list(self.keep_brownians)
        return doc


ReductionPlan = DiscretePlan | ContinuousPlan


@dataclass(frozen=True)
class FictitiousMarket:
    """A reduced market plus the provenance needed to undo the reduction.

    ``driver_groups[k]`` lists the original driver indices aggregated into
    reduced driver k (singletons for retained drivers); ``weights[k]``
    holds the conditional probabilities delta of each member within its
    group.  For continuous reductions the groups refer to cells instead
    and ``cells``/``remainder`` describe the mark-space partition.
    """

    spec: MarketSpec
    original: MarketSpec
    plan: ReductionPlan
    brownian_map: tuple[int, ...]
    driver_groups: tuple[tuple[int, ...], ...] = ()
    weights: tuple[tuple[TimeFunction, ...], ...] = ()
    neglected: tuple[int, ...] = ()
    cells: tuple[tuple[float, float], ...] = ()
    remainder_mass: TimeFunction | None = None
    grid: np.ndarray | None = field(default=None, compare=False)

    def reduced_index_of(self, original_driver: int) -> int | None:
        for k, group in enumerate(self.driver_groups):
            if original_driver in group:
                return k
        return None

    def reduced_brownian_of(self, original_d: int) -> int | None:
        try:
            return self.brownian_map.index(original_d)
        except ValueError:
            return None


def _subset_sigma(spec: MarketSpec, kept: tuple[int, ...]):
    if spec.n_brownians == 0 or not kept:
        return tuple(() for _ in range(spec.n))
    return tuple(tuple(row[d] for d in kept) for row in spec.sigma)


def _completeness_warning(spec: MarketSpec, n_drivers: int) -> None:
    if n_drivers != spec.n:
        warnings.warn(
            f"reduced market has {n_drivers} drivers for {spec.n} stocks; "
            "completeness needs them equal",
            stacklevel=3,
        )


def batch_weights(
    spec: MarketSpec, batch: tuple[int, ...], grid=None
) -> tuple[TimeFunction, tuple[TimeFunction, ...]]:
    """Aggregate intensity gamma and member weights delta_m of a batch.

    delta_m(t) = lambda_m(t) / gamma(t).  Constant and step intensities
    produce exact constant/step weights; interpolated ones are sampled on
    the grid (default 256 points).  Weights built here are reused verbatim
    by the uplift so the two stay consistent bit for bit.
    """
    jumps: DiscreteJumpSpec = spec.jumps
    members = [jumps.intensities[m] for m in batch]
    if all(fn.is_constant for fn in members):
        vals = np.array([fn.constant_value for fn in members])
        gamma = float(np.sum(vals))
        return (
            TimeFunction.constant(gamma),
            tuple(TimeFunction.constant(v / gamma) for v in vals),
        )
    kinds = {fn.kind for fn in members if not fn.is_constant}
    if kinds == {"piecewise"}:
        knots = np.unique(
            np.concatenate([[0.0, spec.horizon]] + [fn.breakpoints() for fn in members])
        )
        mids = 0.5 * (knots[:-1] + knots[1:])
        vals = np.vstack([np.atleast_1d(fn.value(mids)) for fn in members])
        gvals = vals.sum(axis=0)
        gamma = TimeFunction.piecewise(knots, gvals)
        deltas = tuple(TimeFunction.piecewise(knots, v / gvals) for v in vals)
        return gamma, deltas
    if grid is None:
        grid = default_grid(spec.horizon, DEFAULT_GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    vals = np.vstack([np.atleast_1d(fn.value(grid)) for fn in members])
    gvals = vals.sum(axis=0)
    gamma = TimeFunction.samples(grid, gvals)
    deltas = tuple(TimeFunction.samples(grid, v / gvals) for v in vals)
    return gamma, deltas


def _batched_loading(
    spec: MarketSpec, i: int, batch, deltas, grid
) -> TimeFunction:
    """Convex combination of member loadings with weights delta_m(t)."""
    jumps: DiscreteJumpSpec = spec.jumps
    members = [jumps.loadings[i][m] for m in batch]
    if all(d.is_constant for d in deltas) and all(fn.is_constant for fn in members):
        val = sum(
            d.constant_value * fn.constant_value for d, fn in zip(deltas, members)
        )
        return TimeFunction.constant(val)
    if all(d.kind == "piecewise" or d.is_constant for d in deltas) and all(
        fn.is_constant for fn in members
    ):
        knots = np.unique(
            np.concatenate(
                [[0.0, spec.horizon]]
                + [d.breakpoints() for d in deltas if not d.is_constant]
            )
        )
        mids = 0.5 * (knots[:-1] + knots[1:])
        acc = np.zeros(len(mids))
        for d, fn in zip(deltas, members):
            acc += np.atleast_1d(d.value(mids)) * fn.constant_value
        return TimeFunction.piecewise(knots, acc)
    acc = np.zeros(len(grid))
    for d, fn in zip(deltas, members):
        acc += np.atleast_1d(d.value(grid)) * np.atleast_1d(fn.value(grid))
    return TimeFunction.samples(grid, acc)


def reduce_complete_neglect(spec: MarketSpec, plan: DiscretePlan) -> FictitiousMarket:
    """Drop the neglected drivers (and Brownian columns) entirely.

    Retained drivers are untouched; the drift keeps alpha and recomputes
    the jump compensator from the retained intensities only.
    """
    if plan.batches:
        raise PlanMismatch("complete neglect admits no batches")
    jumps: DiscreteJumpSpec | None = spec.jumps
    if jumps is not None and not isinstance(jumps, DiscreteJumpSpec):
        raise PlanMismatch("complete neglect applies to discrete jump drivers")
    plan.validate(spec)
    kept_b = plan.kept_brownians(spec)
    retained = tuple(sorted(plan.retain))
    if not kept_b and not retained:
        raise EmptyRetention("every driver neglected and no Brownians kept")
    _completeness_warning(spec, len(kept_b) + len(retained))

    new_jumps = None
    if retained:
        new_jumps = DiscreteJumpSpec(
            intensities=tuple(jumps.intensities[m] for m in retained),
            loadings=tuple(
                tuple(row[m] for m in retained) for row in jumps.loadings
            ),
            marks=(
                tuple(jumps.marks[m] for m in retained) if jumps.marks else None
            ),
        )
    reduced = MarketSpec(
        horizon=spec.horizon,
        s0=spec.s0,
        alpha=spec.alpha,
        rate=spec.rate,
        sigma=_subset_sigma(spec, kept_b),
        jumps=new_jumps,
    )
    return FictitiousMarket(
        spec=reduced,
        original=spec,
        plan=plan,
        brownian_map=kept_b,
        driver_groups=tuple((m,) for m in retained),
        weights=tuple((TimeFunction.constant(1.0),) for _ in retained),
        neglected=tuple(sorted(plan.neglect)),
    )


def reduce_batch(
    spec: MarketSpec, plan: DiscretePlan, grid=None
) -> FictitiousMarket:
    """Aggregate each batch into a single driver.

    The batch driver has intensity gamma(t) = sum of member intensities
    and loading ybar_i(t) = sum_m delta_m(t) y_im, the convex combination
    with weights delta_m(t) = lambda_m(t) / gamma(t).
    """
    if not plan.batches:
        raise PlanMismatch("batch reduction needs at least one batch")
    if not isinstance(spec.jumps, DiscreteJumpSpec):
        raise PlanMismatch("batching applies to discrete jump drivers")
    plan.validate(spec)
    if grid is None:
        grid = default_grid(spec.horizon, DEFAULT_GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    kept_b = plan.kept_brownians(spec)
    jumps = spec.jumps
    retained = tuple(sorted(plan.retain))

    groups: list[tuple[int, ...]] = [(m,) for m in retained]
    weights: list[tuple[TimeFunction, ...]] = [
        (TimeFunction.constant(1.0),) for _ in retained
    ]
    intensities = [jumps.intensities[m] for m in retained]
    load_cols: list[list[TimeFunction]] = [
        [jumps.loadings[i][m] for i in range(spec.n)] for m in retained
    ]
    for batch in plan.batches:
        batch = tuple(sorted(batch))
        gamma, deltas = batch_weights(spec, batch, grid)
        groups.append(batch)
        weights.append(deltas)
        intensities.append(gamma)
        load_cols.append(
            [_batched_loading(spec, i, batch, deltas, grid) for i in range(spec.n)]
        )

    _completeness_warning(spec, len(kept_b) + len(groups))
    new_jumps = DiscreteJumpSpec(
        intensities=tuple(intensities),
        loadings=tuple(
            tuple(load_cols[k][i] for k in range(len(groups)))
            for i in range(spec.n)
        ),
    )
    reduced = MarketSpec(
        horizon=spec.horizon,
        s0=spec.s0,
        alpha=spec.alpha,
        rate=spec.rate,
        sigma=_subset_sigma(spec, kept_b),
        jumps=new_jumps,
    )
    return FictitiousMarket(
        spec=reduced,
        original=spec,
        plan=plan,
        brownian_map=kept_b,
        driver_groups=tuple(groups),
        weights=tuple(weights),
        neglected=tuple(sorted(plan.neglect)),
        grid=grid,
    )


def reduce_continuous(
    spec: MarketSpec, plan: ContinuousPlan, grid=None
) -> FictitiousMarket:
    """Turn mark-space cells into discrete drivers.

    Cell k becomes a driver with intensity lambda_t(B) * mass_t(cell) and
    loading equal to the cell's conditional mean mark (shared by all
    stocks, since every stock jumps by the mark itself).  An uncovered
    remainder is treated like a neglected driver.
    """
    if not isinstance(spec.jumps, ContinuousJumpSpec):
        raise PlanMismatch("continuous reduction needs a continuous mark space")
    plan.validate(spec)
    if grid is None:
        grid = default_grid(spec.horizon, DEFAULT_GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    kept_b = plan.kept_brownians(spec)
    jumps = spec.jumps
    dens = jumps.density
    total = jumps.total_intensity
    time_varying = dens.is_time_varying

    intensities: list[TimeFunction] = []
    loadings: list[TimeFunction] = []
    for a, b in plan.cells:
        if time_varying:
            mass = np.array([dens.mass(a, b, float(t)) for t in grid])
            if np.any(mass < 1e-12):
                raise EmptyCell(f"cell ({a:g}, {b:g}) has ~zero probability")
            mean = np.array([dens.restricted_mean(a, b, float(t)) for t in grid])
            lam = TimeFunction.samples(
                grid, np.atleast_1d(total.value(grid)) * mass
            )
            loadings.append(TimeFunction.samples(grid, mean))
        else:
            mass = dens.mass(a, b)
            if mass < 1e-12:
                raise EmptyCell(f"cell ({a:g}, {b:g}) has ~zero probability")
            lam = total.scaled(mass)
            loadings.append(TimeFunction.constant(dens.restricted_mean(a, b)))
        intensities.append(lam)

    _completeness_warning(spec, len(kept_b) + len(intensities))
    new_jumps = DiscreteJumpSpec(
        intensities=tuple(intensities),
        loadings=tuple(tuple(loadings) for _ in range(spec.n)),
        marks=None,
    )
    reduced = MarketSpec(
        horizon=spec.horizon,
        s0=spec.s0,
        alpha=spec.alpha,
        rate=spec.rate,
        sigma=_subset_sigma(spec, kept_b),
        jumps=new_jumps,
    )
    covered = (
        sum(dens.mass(a, b) for a, b in plan.cells)
        if not time_varying
        else None
    )
    if time_varying:
        rem_vals = 1.0 - np.array(
            [sum(dens.mass(a, b, float(t)) for a, b in plan.cells) for t in grid]
        )
        remainder_mass = TimeFunction.samples(grid, np.maximum(rem_vals, 0.0))
    else:
        remainder_mass = TimeFunction.constant(max(1.0 - covered, 0.0))
    return FictitiousMarket(
        spec=reduced,
        original=spec,
        plan=plan,
        brownian_map=kept_b,
        driver_groups=tuple((k,) for k in range(len(plan.cells))),
        weights=tuple((TimeFunction.constant(1.0),) for _ in plan.cells),
        neglected=(),
        cells=plan.cells,
        remainder_mass=remainder_mass,
        grid=grid,
    )


def reduce_market(spec: MarketSpec, plan: ReductionPlan, grid=None) -> FictitiousMarket:
    """Dispatch to the reduction matching the plan's kind."""
    if isinstance(plan, ContinuousPlan):
        return reduce_continuous(spec, plan, grid)
    if plan.batches:
        return reduce_batch(spec, plan, grid)
    return reduce_complete_neglect(spec, plan)


def project_price_closed_form(
    spec: MarketSpec,
    plan: DiscretePlan,
    retained_path,
    t: float,
) -> np.ndarray:
    """Fictitious stock prices from a retained-driver path, in closed form.

    The full price factors into a retained part and a neglected part whose
    expectation is one, so the projection onto the reduced information set
    just drops the neglected jump products together with their compensator
    drift.  ``retained_path`` must be a path bundle of the reduced market
    containing time t among its output times.
    """
    if isinstance(plan, ContinuousPlan) or plan.batches:
        raise PlanMismatch(
            "closed-form projection requires a complete-neglect plan"
        )
    from .stochastic import stock_path_exact  # local import: avoids a cycle

    fict = reduce_complete_neglect(spec, plan)
    values = stock_path_exact(
        fict.spec,
        event_times=retained_path.event_times,
        event_marks=retained_path.event_marks,
        grid=retained_path.grid,
        dw=retained_path.dw,
        out_times=np.array([t]),
    )
    return values[:, 0]
