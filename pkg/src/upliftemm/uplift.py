"""Consistent uplift of the fictitious market's pricing measure.

Once the fictitious market is complete, its unique measure is pinned down
by Brownian risk premia theta*(t) and risk-neutral driver intensities.
Consistency across all possible reductions forces the extension back to
the original market: neglected drivers keep their physical intensities
(no risk premium), batched drivers split the batch intensity in
proportion to their physical weights, and a continuous mark density is
reweighted cell by cell while keeping its shape within each cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .densities import Density
from .errors import (
    EmptyCell,
    InvalidIntensities,
    NonpositiveGamma,
    NotComplete,
    PlanMismatch,
)
from .model import (
    ContinuousJumpSpec,
    DiscreteJumpSpec,
    MarketSpec,
    default_grid,
)
from .mpr import classify_over_grid
from .reduction import (
    ContinuousPlan,
    DiscretePlan,
    batch_weights,
    reduce_market,
)
from .timefns import TimeFunction

__all__ = [
    "Emm",
    "CellMeasure",
    "UpliftVerification",
    "solve_unique_emm",
    "uplift_complete_neglect",
    "uplift_batch",
    "uplift_continuous",
    "uplift_general",
    "build_uplifted_emm",
    "verify_uplift",
    "physical_emm",
]

VERIFY_TOL_DISCRETE = 1e-9
VERIFY_TOL_CONTINUOUS = 1e-7


@dataclass(frozen=True)
class CellMeasure:
    """Risk-neutral jump measure of a continuous mark space.

    Within each cell the density keeps the physical shape, scaled so that
    the cell carries intensity ``cell_intensities[k]``; the remainder (if
    any) keeps the physical intensity measure unchanged.
    """

    base: Density
    physical_intensity: TimeFunction
    cells: tuple[tuple[float, float], ...]
    cell_intensities: tuple[TimeFunction, ...]
    remainder_physical: bool = False

    def cell_of(self, y) -> int:
        for k, (a, b) in enumerate(self.cells):
            if a <= y <= b:
                return k
        return -1

    def remainder_intensity(self, t: float) -> float:
        if not self.remainder_physical:
            return 0.0
        covered = sum(self.base.mass(a, b, t) for a, b in self.cells)
        return float(self.physical_intensity.value(t)) * max(1.0 - covered, 0.0)

    def total_intensity(self, t: float) -> float:
        tot = sum(float(fn.value(t)) for fn in self.cell_intensities)
        return tot + self.remainder_intensity(t)

    def cell_probabilities(self, t: float) -> np.ndarray:
        """p~*(cell) = cell intensity / total intensity (remainder last)."""
        vals = [float(fn.value(t)) for fn in self.cell_intensities]
        if self.remainder_physical:
            vals.append(self.remainder_intensity(t))
        return np.asarray(vals) / self.total_intensity(t)

    def phi(self, y: float, t: float) -> float:
        """Intensity ratio d(lambda~)/d(lambda) at mark y."""
        k = self.cell_of(y)
        if k < 0:
            return 1.0 if self.remainder_physical else 0.0
        mass = self.base.mass(*self.cells[k], t)
        phys = float(self.physical_intensity.value(t)) * mass
        if phys <= 0.0:
            raise EmptyCell("physical cell intensity vanished")
        return float(self.cell_intensities[k].value(t)) / phys

    def density_value(self, y, t: float = 0.0):
        """The reweighted mark density f~*_t(y)."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        total = self.total_intensity(t)
        remainder = self.remainder_physical
        covered = np.zeros(y.shape, dtype=bool)
        base_pdf = self.base.pdf(y, t)
        for (a, b), lam in zip(self.cells, self.cell_intensities):
            inside = (y >= a) & (y <= b) & ~covered
            mass = self.base.mass(a, b, t)
            if mass > 0.0:
                out = np.where(
                    inside, base_pdf * (float(lam.value(t)) / total) / mass, out
                )
            covered |= inside
        if remainder:
            phys = float(self.physical_intensity.value(t))
            out = np.where(covered, out, base_pdf * phys / total)
        return out if out.ndim else float(out)

    def mean_jump_intensity(self, t: float) -> float:
        """integral of y d(lambda~_t)(y): the risk-neutral jump drift."""
        total = 0.0
        covered_mass = 0.0
        for (a, b), lam in zip(self.cells, self.cell_intensities):
            mass = self.base.mass(a, b, t)
            covered_mass += mass
            if mass > 0.0:
                total += float(lam.value(t)) * self.base.restricted_mean(a, b, t)
        if self.remainder_physical and covered_mass < 1.0:
            lo, hi = self.base.support
            full_mean = self.base.mean(t)
            cell_part = sum(
                self.base.mass(a, b, t) * self.base.restricted_mean(a, b, t)
                for a, b in self.cells
            )
            total += float(self.physical_intensity.value(t)) * (
                full_mean - cell_part
            )
        return total

    @cached_property
    def _is_constant(self) -> bool:
        return (
            not self.base.is_time_varying
            and self.physical_intensity.is_constant
            and all(fn.is_constant for fn in self.cell_intensities)
        )

    @cached_property
    def _pieces(self):
        """Sampling pieces at t=0: (prob, cdf_lo, cdf_hi) per region.

        Regions are the cells followed by the complement intervals of the
        remainder (when it keeps the physical measure).  Only valid for
        constant parameters.
        """
        total = self.total_intensity(0.0)
        probs, los, his = [], [], []
        for (a, b), lam in zip(self.cells, self.cell_intensities):
            probs.append(float(lam.value(0.0)) / total)
            los.append(self.base.cdf(a, 0.0))
            his.append(self.base.cdf(b, 0.0))
        if self.remainder_physical:
            phys = float(self.physical_intensity.value(0.0))
            lo, hi = self.base.support
            edges = sorted(self.cells)
            cursor = lo
            gaps = []
            for a, b in edges:
                if a > cursor:
                    gaps.append((cursor, a))
                cursor = max(cursor, b)
            if hi > cursor:
                gaps.append((cursor, hi))
            for a, b in gaps:
                mass = self.base.mass(a, b, 0.0)
                if mass > 0.0:
                    probs.append(phys * mass / total)
                    los.append(self.base.cdf(a, 0.0))
                    his.append(self.base.cdf(b, 0.0))
        return np.asarray(probs), np.asarray(los), np.asarray(his)

    def sample_marks(self, rng: np.random.Generator, times: np.ndarray) -> np.ndarray:
        """One mark per event time, drawn from the reweighted density.

        Each region (cell or remainder gap) keeps the physical shape, so a
        mark is an inverse-CDF draw of the base density restricted to the
        chosen region.
        """
        times = np.asarray(times, dtype=float)
        if times.size == 0:
            return np.zeros(0)
        if self._is_constant:
            probs, los, his = self._pieces
            cum = np.cumsum(probs) / probs.sum()
            ks = np.minimum(
                np.searchsorted(cum, rng.uniform(size=times.size), side="left"),
                len(probs) - 1,
            )
            u = rng.uniform(size=times.size)
            return np.asarray(self.base.ppf(los[ks] + u * (his[ks] - los[ks]), 0.0))
        marks = np.empty(times.shape)
        n_cells = len(self.cells)
        for j, t in enumerate(times):
            probs = self.cell_probabilities(float(t))
            cum = np.cumsum(probs) / probs.sum()
            k = int(
                min(np.searchsorted(cum, rng.uniform(), side="left"), len(probs) - 1)
            )
            u = rng.uniform()
            if k < n_cells:
                a, b = self.cells[k]
                clo = self.base.cdf(a, float(t))
                chi = self.base.cdf(b, float(t))
            else:  # remainder: physical conditional on the uncovered set
                marks[j] = self._sample_remainder(rng, float(t))
                continue
            marks[j] = self.base.ppf(clo + u * (chi - clo), float(t))
        return marks

    def _sample_remainder(self, rng: np.random.Generator, t: float) -> float:
        # rejection against the base density off the covered cells
        for _ in range(10000):
            y = float(self.base.ppf(rng.uniform(), t))
            if self.cell_of(y) < 0:
                return y
        raise EmptyCell("remainder has ~zero probability; cannot sample")

    def to_json(self):
        return {
            "base": self.base.to_json(),
            "physical_intensity": self.physical_intensity.to_json(),
            "cells": [list(c) for c in self.cells],
            "cell_intensities": [fn.to_json() for fn in self.cell_intensities],
            "remainder_physical": self.remainder_physical,
        }

    @staticmethod
    def from_json(obj) -> "CellMeasure":
        return CellMeasure(
            base=Density.from_json(obj["base"]),
            physical_intensity=TimeFunction.from_json(obj["physical_intensity"]),
            cells=tuple(tuple(c) for c in obj["cells"]),
            cell_intensities=tuple(
                TimeFunction.from_json(x) for x in obj["cell_intensities"]
            ),
            remainder_physical=bool(obj["remainder_physical"]),
        )


@dataclass(frozen=True)
class Emm:
    """An equivalent measure change for a jump-diffusion market.

    theta[d] shifts Brownian d (W + int theta dt is the new Brownian);
    for discrete markets ``intensities[m]`` is the risk-neutral rate of
    driver m, and for continuous ones ``jump_measure`` carries the
    reweighted intensity measure.  The same object parameterizes both
    direct simulation under the new measure and the density process along
    physical paths.
    """

    theta: tuple[TimeFunction, ...]
    intensities: tuple[TimeFunction, ...] | None = None
    jump_measure: CellMeasure | None = None
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "theta", tuple(TimeFunction.coerce(f) for f in self.theta)
        )
        if self.intensities is not None:
            object.__setattr__(
                self,
                "intensities",
                tuple(TimeFunction.coerce(f) for f in self.intensities),
            )

    def to_json(self):
        return {
            "theta": [fn.to_json() for fn in self.theta],
            "lambda_tilde": (
                None
                if self.intensities is None
                else [fn.to_json() for fn in self.intensities]
            ),
            "density": (
                None if self.jump_measure is None else self.jump_measure.to_json()
            ),
            "provenance": self.provenance,
        }

    @staticmethod
    def from_json(obj) -> "Emm":
        lam = obj.get("lambda_tilde")
        dens = obj.get("density")
        return Emm(
            theta=tuple(TimeFunction.from_json(x) for x in obj["theta"]),
            intensities=(
                None if lam is None else tuple(TimeFunction.from_json(x) for x in lam)
            ),
            jump_measure=None if dens is None else CellMeasure.from_json(dens),
            provenance=obj.get("provenance", ""),
        )


def physical_emm(spec: MarketSpec) -> Emm:
    """The identity measure change (theta = 0, intensities physical)."""
    theta = tuple(TimeFunction.constant(0.0) for _ in range(spec.n_brownians))
    if isinstance(spec.jumps, DiscreteJumpSpec):
        return Emm(theta=theta, intensities=spec.jumps.intensities,
                   provenance="physical")
    if isinstance(spec.jumps, ContinuousJumpSpec):
        lo, hi = spec.jumps.support
        measure = CellMeasure(
            base=spec.jumps.density,
            physical_intensity=spec.jumps.total_intensity,
            cells=((lo, hi),),
            cell_intensities=(spec.jumps.total_intensity,),
        )
        return Emm(theta=theta, jump_measure=measure, provenance="physical")
    return Emm(theta=theta, provenance="physical")


# -- solving the fictitious market --------------------------------------------


def _grid_to_fn(grid: np.ndarray, values: np.ndarray) -> TimeFunction:
    if np.all(values == values[0]):
        return TimeFunction.constant(float(values[0]))
    return TimeFunction.samples(grid, values)


def solve_unique_emm(spec: MarketSpec, grid=None) -> Emm:
    """Solve a (reduced) market's risk-premium system into a measure.

    Raises NotComplete unless the system is uniquely solvable at every
    grid time, and InvalidIntensities if a solution exists but is not a
    positive intensity vector.
    """
    if grid is None:
        grid = default_grid(spec.horizon)
    grid = np.asarray(grid, dtype=float)
    cls = classify_over_grid(spec, grid)
    if not cls.all_complete:
        bad = cls.first_failure()
        raise NotComplete(
            f"market is {bad.tag} at t={bad.t:g} "
            f"(rank {bad.rank}, nullspace {bad.nullspace_dim})"
        )
    if not cls.all_emm_valid:
        bad = next(e for e in cls.entries if e.nonpositive_intensities)
        raise InvalidIntensities(
            f"unique solution has nonpositive intensities "
            f"{bad.nonpositive_intensities} at t={bad.t:g}"
        )
    sol = cls.solution_matrix()
    D = spec.n_brownians
    theta = tuple(_grid_to_fn(grid, sol[:, d]) for d in range(D))
    lams = tuple(
        _grid_to_fn(grid, sol[:, D + m]) for m in range(spec.n_jump_drivers)
    )
    return Emm(theta=theta, intensities=lams or None, provenance="solved")


# -- uplift constructions -------------------------------------------------------


def _uplift_theta(fict_emm: Emm, spec: MarketSpec, kept: tuple[int, ...]):
    theta = [TimeFunction.constant(0.0)] * spec.n_brownians
    for reduced_d, original_d in enumerate(kept):
        theta[original_d] = fict_emm.theta[reduced_d]
    return tuple(theta)


def _require_discrete_solution(fict_emm: Emm):
    if fict_emm.intensities is None and fict_emm.theta == ():
        raise NotComplete("fictitious solution is empty")


def uplift_complete_neglect(
    fict_emm: Emm, spec: MarketSpec, plan: DiscretePlan
) -> Emm:
    """Extend a complete-neglect solution to the original market.

    Retained drivers keep their solved intensities; neglected ones carry
    no risk premium, so their risk-neutral intensities equal the physical
    ones.  Dropped Brownian drivers get theta = 0.
    """
    if plan.batches:
        raise PlanMismatch("plan contains batches; use the batching uplift")
    plan.validate(spec)
    _require_discrete_solution(fict_emm)
    kept = plan.kept_brownians(spec)
    theta = _uplift_theta(fict_emm, spec, kept)
    jumps: DiscreteJumpSpec | None = spec.jumps
    if jumps is None:
        return Emm(theta=theta, provenance="uplift: complete neglect")
    retained = tuple(sorted(plan.retain))
    fict_lams = fict_emm.intensities or ()
    if len(fict_lams) != len(retained):
        raise NotComplete("fictitious solution does not match the plan")
    lams: list[TimeFunction] = list(jumps.intensities)
    for k, m in enumerate(retained):
        lams[m] = fict_lams[k]
    _check_positive(lams, spec.horizon)
    return Emm(
        theta=theta,
        intensities=tuple(lams),
        provenance="uplift: complete neglect",
    )


def uplift_batch(
    fict_emm: Emm, spec: MarketSpec, plan: DiscretePlan, grid=None
) -> Emm:
    """Extend a batched solution: members split the batch intensity.

    Member m of a batch with solved intensity gamma*(t) receives
    lambda~*_m(t) = gamma*(t) * delta_m(t), the share proportional to its
    physical conditional probability within the batch.  Retained
    singletons and neglected drivers follow the complete-neglect rules.
    """
    if not plan.batches:
        raise PlanMismatch("plan has no batches; use the complete-neglect uplift")
    plan.validate(spec)
    _require_discrete_solution(fict_emm)
    if grid is None:
        grid = default_grid(spec.horizon)
    grid = np.asarray(grid, dtype=float)
    kept = plan.kept_brownians(spec)
    theta = _uplift_theta(fict_emm, spec, kept)
    jumps: DiscreteJumpSpec = spec.jumps
    retained = tuple(sorted(plan.retain))
    fict_lams = fict_emm.intensities or ()
    if len(fict_lams) != len(retained) + len(plan.batches):
        raise NotComplete("fictitious solution does not match the plan")

    lams: list[TimeFunction] = list(jumps.intensities)
    for k, m in enumerate(retained):
        lams[m] = fict_lams[k]
    for j, batch in enumerate(plan.batches):
        batch = tuple(sorted(batch))
        gamma_star = fict_lams[len(retained) + j]
        if gamma_star.min_value(0.0, spec.horizon) <= 0.0:
            raise NonpositiveGamma(
                f"solved batch intensity nonpositive for batch {batch}"
            )
        _, deltas = batch_weights(spec, batch, grid)
        for m, delta in zip(batch, deltas):
            lams[m] = _product_fn(gamma_star, delta, grid)
    _check_positive(lams, spec.horizon)
    return Emm(theta=theta, intensities=tuple(lams), provenance="uplift: batching")


def _product_fn(f: TimeFunction, g: TimeFunction, grid: np.ndarray) -> TimeFunction:
    """Pointwise product; exact for constants, grid-sampled otherwise."""
    if f.is_constant and g.is_constant:
        return TimeFunction.constant(f.constant_value * g.constant_value)
    if f.is_constant:
        return g.scaled(f.constant_value)
    if g.is_constant:
        return f.scaled(g.constant_value)
    vals = np.atleast_1d(f.value(grid)) * np.atleast_1d(g.value(grid))
    return TimeFunction.samples(grid, vals)


def _check_positive(lams, horizon: float):
    bad = [m for m, fn in enumerate(lams) if fn.min_value(0.0, horizon) <= 0.0]
    if bad:
        raise InvalidIntensities(f"uplifted intensities nonpositive: {bad}")


def uplift_continuous(
    fict_emm: Emm, spec: MarketSpec, plan: ContinuousPlan, grid=None
) -> Emm:
    """Extend a cell solution to a reweighted mark density.

    The unique consistent density keeps the physical shape within each
    cell and scales it to the solved cell probability; an uncovered
    remainder keeps the physical intensity measure (no risk premium).
    """
    if not isinstance(spec.jumps, ContinuousJumpSpec):
        raise PlanMismatch("continuous uplift needs a continuous mark space")
    plan.validate(spec)
    _require_discrete_solution(fict_emm)
    kept = plan.kept_brownians(spec)
    theta = _uplift_theta(fict_emm, spec, kept)
    fict_lams = fict_emm.intensities or ()
    if len(fict_lams) != len(plan.cells):
        raise NotComplete("fictitious solution does not match the cell count")
    dens = spec.jumps.density
    for (a, b), lam in zip(plan.cells, fict_lams):
        if dens.mass(a, b, 0.0) < 1e-12:
            raise EmptyCell(f"cell ({a:g}, {b:g}) has ~zero probability")
        if lam.min_value(0.0, spec.horizon) <= 0.0:
            raise InvalidIntensities("cell intensity nonpositive")
    measure = CellMeasure(
        base=dens,
        physical_intensity=spec.jumps.total_intensity,
        cells=plan.cells,
        cell_intensities=tuple(fict_lams),
        remainder_physical=plan.neglect_remainder,
    )
    return Emm(theta=theta, jump_measure=measure, provenance="uplift: continuous")


def uplift_general(
    fict_emm: Emm, spec: MarketSpec, plan, grid=None
) -> Emm:
    """Dispatch on the plan kind; compositions agree with one-shot results."""
    if isinstance(plan, ContinuousPlan):
        return uplift_continuous(fict_emm, spec, plan, grid)
    if plan.batches:
        return uplift_batch(fict_emm, spec, plan, grid)
    return uplift_complete_neglect(fict_emm, spec, plan)


def build_uplifted_emm(spec: MarketSpec, plan, grid=None):
    """reduce -> solve -> uplift in one call.

    Returns (emm, fictitious_market, fictitious_emm).
    """
    if grid is None:
        grid = default_grid(spec.horizon)
    fict = reduce_market(spec, plan, grid)
    fict_emm = solve_unique_emm(fict.spec, grid)
    emm = uplift_general(fict_emm, spec, plan, grid)
    return emm, fict, fict_emm


# -- verification ---------------------------------------------------------------


@dataclass(frozen=True)
class UpliftVerification:
    max_residual: float
    tolerance: float
    grid: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tolerance


def verify_uplift(emm: Emm, spec: MarketSpec, grid=None) -> UpliftVerification:
    """Substitute the measure into the original risk-premium equations.

    Reports the largest absolute residual over all stocks and grid times.
    Continuous mark spaces get a looser tolerance because their loadings
    carry quadrature error.
    """
    if grid is None:
        grid = default_grid(spec.horizon)
    grid = np.asarray(grid, dtype=float)
    continuous = isinstance(spec.jumps, ContinuousJumpSpec)
    tol = VERIFY_TOL_CONTINUOUS if continuous else VERIFY_TOL_DISCRETE
    worst = 0.0
    check_grid = grid if not spec.is_constant or not _emm_constant(emm) else grid[:1]
    for t in check_grid:
        t = float(t)
        sig = spec.sigma_values(t)
        theta = np.array([fn.value(t) for fn in emm.theta])
        lhs = np.array([fn.value(t) for fn in spec.alpha]) - spec.rate.value(t)
        rhs = sig @ theta if sig.size else np.zeros(spec.n)
        if isinstance(spec.jumps, DiscreteJumpSpec):
            lam = spec.jumps.intensity_values(t)
            lam_t = np.array([fn.value(t) for fn in emm.intensities])
            ys = spec.jumps.loading_values(t)
            rhs = rhs + ys @ (lam - lam_t)
        elif continuous:
            phys = spec.jumps.total_intensity.value(t) * spec.jumps.density.mean(t)
            rn = emm.jump_measure.mean_jump_intensity(t)
            rhs = rhs + (phys - rn)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return UpliftVerification(max_residual=worst, tolerance=tol, grid=grid)


def _emm_constant(emm: Emm) -> bool:
    fns = list(emm.theta) + list(emm.intensities or ())
    if emm.jump_measure is not None:
        fns.extend(emm.jump_measure.cell_intensities)
        fns.append(emm.jump_measure.physical_intensity)
    return all(fn.is_constant for fn in fns)
