"""Market-price-of-risk systems: assembly, solving, classification.

At a fixed time t the absence of arbitrage requires, for every stock i,

    alpha_i(t) - r(t) = sum_j sigma_ij(t) theta_j
                        + sum_m (lambda_m(t) - lambda_tilde_m) y_im(t),

a linear system in the unknowns x = [theta_1..theta_D,
lambda_tilde_1..lambda_tilde_M].  Moving known terms to the left gives
rows A[i] = [sigma_i1..sigma_iD, -y_i1..-y_iM] and right-hand side
b[i] = alpha_i - r - sum_m lambda_m y_im (so the coefficient of
lambda_tilde_m is -y_im).  A unique solution means the market is
complete; a consistent underdetermined system is incomplete but
arbitrage-free; an inconsistent one admits arbitrage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ShapeMismatch
from .model import DiscreteJumpSpec, MarketSpec, default_grid

__all__ = [
    "MprSystem",
    "MarketClassification",
    "GridClassification",
    "assemble_mpr_system",
    "solve_mpr",
    "classify_over_grid",
    "COMPLETE",
    "INCOMPLETE_ARBITRAGE_FREE",
    "ARBITRAGE",
]

COMPLETE = "Complete"
INCOMPLETE_ARBITRAGE_FREE = "IncompleteArbitrageFree"
ARBITRAGE = "Arbitrage"

# rank decisions: drop pivots below PIVOT_RTOL * max|A|
PIVOT_RTOL = 1e-12
# an underdetermined system counts as consistent when the least-squares
# residual is below CONSISTENCY_RTOL * (1 + |b|)
CONSISTENCY_RTOL = 1e-9


@dataclass(frozen=True)
class MprSystem:
    """The linear system A x = b at time t with labelled unknowns."""

    matrix: np.ndarray
    rhs: np.ndarray
    unknowns: tuple[str, ...]
    t: float

    @property
    def n_theta(self) -> int:
        return sum(1 for u in self.unknowns if u.startswith("theta"))

    @property
    def n_intensities(self) -> int:
        return len(self.unknowns) - self.n_theta

    def residual(self, x: np.ndarray) -> float:
        return float(np.max(np.abs(self.matrix @ x - self.rhs), initial=0.0))


@dataclass(frozen=True)
class MarketClassification:
    """Outcome of solving one MPR system."""

    tag: str
    t: float
    solution: np.ndarray | None
    rank: int
    nullspace_dim: int
    residual: float
    nonpositive_intensities: tuple[int, ...]
    solution_note: str = ""

    @property
    def is_complete(self) -> bool:
        return self.tag == COMPLETE

    @property
    def emm_valid(self) -> bool:
        return self.is_complete and not self.nonpositive_intensities


def assemble_mpr_system(spec: MarketSpec, t: float) -> MprSystem:
    """Build the risk-premium system of a (discrete-jump) market at time t."""
    if spec.jumps is not None and not isinstance(spec.jumps, DiscreteJumpSpec):
        raise ShapeMismatch(
            "continuous mark spaces have no finite unknown vector; "
            "reduce to cells first"
        )
    n, D = spec.n, spec.n_brownians
    M = spec.n_jump_drivers
    sig = spec.sigma_values(t)
    A = np.zeros((n, D + M))
    if D:
        A[:, :D] = sig
    alpha = np.array([fn.value(t) for fn in spec.alpha])
    b = alpha - spec.rate.value(t)
    if M:
        lams = spec.jumps.intensity_values(t)
        ys = spec.jumps.loading_values(t)
        A[:, D:] = -ys
        b = b - ys @ lams
    labels = tuple(f"theta_{d}" for d in range(D)) + tuple(
        f"lambda_tilde_{m}" for m in range(M)
    )
    return MprSystem(matrix=A, rhs=b, unknowns=labels, t=float(t))


def _pivot_rank(A: np.ndarray) -> int:
    if A.size == 0:
        return 0
    scale = np.max(np.abs(A))
    if scale == 0.0:
        return 0
    u = scipy.linalg.lu(A, permute_l=False)[2]
    piv = np.abs(np.diag(u))
    return int(np.sum(piv > PIVOT_RTOL * scale))


def solve_mpr(system: MprSystem) -> MarketClassification:
    """Classify a system as Complete / IncompleteArbitrageFree / Arbitrage.

    Complete systems return the unique solution; consistent underdetermined
    ones return the minimum-norm particular solution together with the
    nullspace dimension.  A complete solution with some lambda_tilde <= 0
    is flagged: the linear algebra succeeded but no equivalent measure of
    the assumed form exists.
    """
    A, b = system.matrix, system.rhs
    n_unknowns = A.shape[1]
    rank = _pivot_rank(A)
    null_dim = n_unknowns - rank

    if rank == n_unknowns and A.shape[0] == n_unknowns:
        x = scipy.linalg.lu_solve(scipy.linalg.lu_factor(A), b)
        tag, note = COMPLETE, ""
    else:
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        res = float(np.max(np.abs(A @ x - b), initial=0.0))
        if res > CONSISTENCY_RTOL * (1.0 + float(np.linalg.norm(b))):
            return MarketClassification(
                tag=ARBITRAGE,
                t=system.t,
                solution=None,
                rank=rank,
                nullspace_dim=null_dim,
                residual=res,
                nonpositive_intensities=(),
            )
        if rank == n_unknowns:
            tag, note = COMPLETE, "overdetermined but consistent"
        else:
            tag, note = INCOMPLETE_ARBITRAGE_FREE, "minimum-norm solution"

    nonpos = tuple(
        m
        for m in range(system.n_intensities)
        if x[system.n_theta + m] <= 0.0
    )
    return MarketClassification(
        tag=tag,
        t=system.t,
        solution=x,
        rank=rank,
        nullspace_dim=null_dim,
        residual=system.residual(x),
        nonpositive_intensities=nonpos,
        solution_note=note,
    )


@dataclass(frozen=True)
class GridClassification:
    """Per-time classifications over a sampling grid."""

    grid: np.ndarray
    entries: tuple[MarketClassification, ...]
    unknowns: tuple[str, ...]

    @property
    def all_complete(self) -> bool:
        return all(e.is_complete for e in self.entries)

    @property
    def all_emm_valid(self) -> bool:
        return all(e.emm_valid for e in self.entries)

    def solution_matrix(self) -> np.ndarray:
        """Stacked solutions, shape (len(grid), n_unknowns)."""
        if not self.all_complete:
            raise ValueError("grid contains non-complete classifications")
        return np.vstack([e.solution for e in self.entries])

    def first_failure(self) -> MarketClassification | None:
        for e in self.entries:
            if not e.is_complete:
                return e
        return None


def classify_over_grid(spec: MarketSpec, grid=None) -> GridClassification:
    """Classify the market at each grid time.

    Constant-coefficient markets are solved once and broadcast, so the
    result is exactly time-invariant.
    """
    if grid is None:
        grid = default_grid(spec.horizon)
    grid = np.asarray(grid, dtype=float)
    if spec.is_constant and len(grid) > 1:
        base = solve_mpr(assemble_mpr_system(spec, float(grid[0])))
        entries = tuple(
            MarketClassification(
                tag=base.tag,
                t=float(t),
                solution=base.solution,
                rank=base.rank,
                nullspace_dim=base.nullspace_dim,
                residual=base.residual,
                nonpositive_intensities=base.nonpositive_intensities,
                solution_note=base.solution_note,
            )
            for t in grid
        )
        unknowns = assemble_mpr_system(spec, float(grid[0])).unknowns
        return GridClassification(grid=grid, entries=entries, unknowns=unknowns)

    entries = []
    unknowns: tuple[str, ...] = ()
    for t in grid:
        system = assemble_mpr_system(spec, float(t))
        unknowns = system.unknowns
        entries.append(solve_mpr(system))
    return GridClassification(grid=grid, entries=tuple(entries), unknowns=unknowns)
