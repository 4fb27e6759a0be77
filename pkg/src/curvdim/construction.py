"""Partition refinement, step-midpoint approximants and step approximation of densities.

These build the approximations used to pass from step measures to general
bounded measures: a plan induced by a map is cut into small pieces that each
stay inside one step piece on both ends, every piece is interpolated on its
own, and the results are glued back with the source masses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .checkers import CheckPoint, CheckReport, Tolerance, nprime_grid, t_functional
from .errors import DomainError, MeasureError, ResolutionError
from .interpolation import interpolation_support
from .measures import DiscreteMeasure, from_cell_masses, level_count, renyi_entropy, uniform_on
from .spaces import CellSet, Euclidean, WeightedInterval
from .transport import TransportPlan, solve_w2

__all__ = [
    "refine_partition",
    "partition_images",
    "partition_properties",
    "step_midpoint_approximation",
    "entropy_bound",
    "w2_bound",
    "support_diameter",
    "step_approximation",
    "semicontinuity_gaps",
    "check_step_construction",
]


def _diameter(space, P: np.ndarray) -> float:
    if len(P) < 2:
        return 0.0
    best = 0.0
    step = max(1, 2_000_000 // len(P))
    for s in range(0, len(P), step):
        best = max(best, float(np.max(space.pairwise_distance(P[s : s + step], P))))
    return best


def _labels(measure: DiscreteMeasure, pieces: Sequence[CellSet], name: str) -> np.ndarray:
    lab = np.full(measure.grid.n_cells, -1, dtype=np.int64)
    for k, piece in enumerate(pieces):
        if np.any(lab[piece.indices] >= 0):
            raise MeasureError(f"{name} pieces overlap")
        lab[piece.indices] = k
    out = lab[measure.cells]
    if np.any(out < 0):
        raise MeasureError(f"some atoms of {name} lie outside every piece")
    return out


def _cell_diagonal(measure: DiscreteMeasure) -> float:
    return 2.0 * float(np.max(measure.grid.cell_radii[measure.cells]))


def refine_partition(plan: TransportPlan, mu0_pieces: Sequence[CellSet], mu1_pieces: Sequence[CellSet], eps: float) -> list[CellSet]:
    """Partition the support of the source into small parts compatible with the step pieces.

    Starting from ``A_i ∩ T^{-1}(B_j)``, parts are bisected at the median of
    their longest chart extent until the atoms of the part and of its image
    both have diameter below ``eps`` minus one full cell diagonal, which keeps
    the cell hulls themselves below ``eps``.

    Raises
    ------
    PlanError
        If the plan splits the mass of a source atom.
    ResolutionError
        If ``eps`` does not exceed the cell diagonal.
    """
    if not eps > 0:
        raise DomainError("eps must be > 0")
    mu0, mu1 = plan.mu0, plan.mu1
    if not (mu0.cell_aligned and mu1.cell_aligned):
        raise MeasureError("refine_partition needs cell-aligned marginals")
    T = plan.target_of()
    space = mu0.grid.space
    limit = eps - max(_cell_diagonal(mu0), _cell_diagonal(mu1))
    if limit <= 0:
        raise ResolutionError(f"eps={eps} is not larger than the cell diagonal; refine the grid")
    lab0 = _labels(mu0, mu0_pieces, "source")
    lab1 = _labels(mu1, mu1_pieces, "target")[T]
    X, Y = mu0.points, mu1.points[T]
    cx, cy = mu0.grid.centers[mu0.cells], mu1.grid.centers[mu1.cells[T]]

    stack = []
    for key in sorted(set(zip(lab0.tolist(), lab1.tolist()))):
        stack.append(np.nonzero((lab0 == key[0]) & (lab1 == key[1]))[0])
    parts = []
    while stack:
        g = stack.pop()
        dx, dy = _diameter(space, X[g]), _diameter(space, Y[g])
        if dx < limit and dy < limit:
            parts.append(g)
            continue
        chart = cx[g] if dx >= dy else cy[g]
        axis = int(np.argmax(chart.max(axis=0) - chart.min(axis=0)))
        order = np.lexsort((g, chart[:, axis]))
        half = len(g) // 2
        stack.append(g[order[half:]])
        stack.append(g[order[:half]])
    out = [CellSet(mu0.grid, mu0.cells[g]) for g in parts]
    out.sort(key=lambda c: int(c.indices[0]))
    return out


def _atom_index(measure: DiscreteMeasure) -> np.ndarray:
    pos = np.full(measure.grid.n_cells, -1, dtype=np.int64)
    pos[measure.cells] = np.arange(len(measure))
    return pos


def partition_images(plan: TransportPlan, parts: Sequence[CellSet]) -> list[CellSet]:
    """Target cells reached from each part under the plan's map."""
    T = plan.target_of()
    pos = _atom_index(plan.mu0)
    return [CellSet(plan.mu1.grid, plan.mu1.cells[T[pos[P.indices]]]) for P in parts]


def partition_properties(plan: TransportPlan, parts, mu0_pieces, mu1_pieces, eps: float) -> dict:
    """Verify the partition axioms, the four structural properties and mass equality."""
    mu0, mu1 = plan.mu0, plan.mu1
    images = partition_images(plan, parts)
    space = mu0.grid.space
    diag = max(_cell_diagonal(mu0), _cell_diagonal(mu1))
    pos0, pos1 = _atom_index(mu0), _atom_index(mu1)
    all_cells = np.concatenate([P.indices for P in parts]) if parts else np.array([], dtype=np.int64)
    covers = np.array_equal(np.sort(all_cells), mu0.cells) and np.unique(all_cells).size == all_cells.size

    def inside_one(S, pieces):
        return sum(1 for piece in pieces if S.issubset(piece)) == 1

    mass0 = [float(mu0.masses[pos0[P.indices]].sum()) for P in parts]
    mass1 = [float(mu1.masses[pos1[Q.indices]].sum()) for Q in images]
    diam_p = [_diameter(space, P.points()) + diag for P in parts]
    diam_q = [_diameter(space, Q.points()) + diag for Q in images]
    return {
        "parts": len(parts),
        "partition": bool(covers),
        "positive_measure": all(P.measure() > 0 and m > 0 for P, m in zip(parts, mass0)),
        "small_diameter": all(d < eps for d in diam_p) and all(d < eps for d in diam_q),
        "max_diameter": max(diam_p + diam_q) if parts else 0.0,
        "source_in_one_piece": all(inside_one(P, mu0_pieces) for P in parts),
        "image_in_one_piece": all(inside_one(Q, mu1_pieces) for Q in images),
        "mass_equality_error": max((abs(a - b) for a, b in zip(mass0, mass1)), default=0.0),
    }


@dataclass
class StepMidpoint:
    measure: DiscreteMeasure
    overlap_cells: int
    overlap_mass: float


def step_midpoint_approximation(space, plan: TransportPlan, partition: Sequence[CellSet], t: float, return_info: bool = False):
    """Glue ``sum_j mu0(P_j) * uniform(D_t(P_j, T(P_j)))``.

    The supports ``D_t`` of different parts may share boundary cells; their
    contributions are added, and the shared cells are reported when
    ``return_info`` is set.
    """
    if space != plan.space:
        raise DomainError("plan lives on a different space")
    images = partition_images(plan, partition)
    pos0 = _atom_index(plan.mu0)
    grid = plan.mu0.grid
    dense = np.zeros(grid.n_cells)
    hits = np.zeros(grid.n_cells, dtype=np.int64)
    for P, Q in zip(partition, images):
        w = float(plan.mu0.masses[pos0[P.indices]].sum())
        D = interpolation_support(P, Q, t)
        u = uniform_on(D)
        dense[u.cells] += w * u.masses
        hits[u.cells] += 1
    mu = from_cell_masses(grid, dense)
    if not return_info:
        return mu
    shared = hits > 1
    return StepMidpoint(mu, int(shared.sum()), float(dense[shared].sum()))


def entropy_bound(plan: TransportPlan, K: float, Nprime: float, t: float, eps: float) -> float:
    """Distorted average with distances shifted by ``eps`` toward smaller coefficients."""
    return t_functional(plan, K, Nprime, t, shift=eps)


def support_diameter(*measures: DiscreteMeasure) -> float:
    """Diameter of the union of the cells carrying the given measures."""
    grid = measures[0].grid
    space = grid.space
    cells = np.unique(np.concatenate([m.cells for m in measures]))
    if isinstance(space, (Euclidean, WeightedInterval)):
        corners = grid.corners(cells)
        if grid.dim == 1:
            return float(corners.max() - corners.min())
        try:
            corners = corners[ConvexHull(corners).vertices]
        except QhullError:
            pass
        return _diameter(space, corners)
    return _diameter(space, grid.points[cells]) + 2.0 * float(np.max(grid.cell_radii[cells]))


def w2_bound(eps: float, s: float, D: float, w2_sq: float) -> float:
    """``9 eps^2 + 6 eps s D + s^2 W2^2``."""
    return 9.0 * eps**2 + 6.0 * eps * s * D + s * s * w2_sq


def step_approximation(mu: DiscreteMeasure, n: int) -> DiscreteMeasure:
    """Step measure with at most ``n`` density levels approximating ``mu`` from below.

    Cells are sorted by density and cut into ``n`` bins at the reference-measure
    quantiles ``k/n``; each bin takes the smallest density it contains (so the
    lowest bin sits at the minimum density), and the result is renormalised.
    Bins for ``2n`` refine those for ``n``, so the error is monotone along
    dyadic ``n``.  A measure that already has at most ``n`` levels is returned
    unchanged.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if level_count(mu) <= n:
        return mu
    rho = mu.density
    vol = mu.grid.cell_measures[mu.cells]
    order = np.lexsort((mu.cells, rho))
    cum = np.cumsum(vol[order])
    mid = (cum - 0.5 * vol[order]) / cum[-1]
    bins = np.minimum((mid * n).astype(np.int64), n - 1)
    floor = np.full(n, np.inf)
    np.minimum.at(floor, bins, rho[order])
    new = np.empty_like(rho)
    new[order] = floor[bins]
    w = new * vol
    return DiscreteMeasure(mu.grid, w / w.sum(), cells=mu.cells)


def semicontinuity_gaps(mu0: DiscreteMeasure, mu1: DiscreteMeasure, K: float, Nprime: float, t: float, ns=(2, 4, 8, 16)) -> list[float]:
    """Positive part of ``T(pi_n) - T(pi)`` for step approximants with ``n`` levels."""
    base = t_functional(solve_w2(mu0, mu1), K, Nprime, t)
    out = []
    for n in ns:
        plan = solve_w2(step_approximation(mu0, n), step_approximation(mu1, n))
        out.append(max(0.0, t_functional(plan, K, Nprime, t) - base))
    return out


def check_step_construction(space, mu0: DiscreteMeasure, mu1: DiscreteMeasure, mu0_pieces, mu1_pieces, K: float, N: float, eps: float, s_grid=(0.25, 0.5, 0.75), Nprime_grid=None, tol: Tolerance | None = None) -> CheckReport:
    """Run the partition construction and test its entropy and W2 estimates.

    Points labelled ``entropy`` compare ``E_{N'}`` of the glued approximant
    with :func:`entropy_bound`; points labelled ``w2`` compare
    ``W2^2(mu0, approximant)`` with :func:`w2_bound`.  One point labelled
    ``partition`` counts violated structural properties.
    """
    tol = tol or Tolerance()
    Nprime_grid = tuple(nprime_grid(N) if Nprime_grid is None else Nprime_grid)
    plan = solve_w2(mu0, mu1)
    parts = refine_partition(plan, mu0_pieces, mu1_pieces, eps)
    props = partition_properties(plan, parts, mu0_pieces, mu1_pieces, eps)
    h = mu0.grid.resolution
    D = support_diameter(mu0, mu1)
    w2sq = plan.cost
    pts = []
    bad = sum(not props[k] for k in ("partition", "positive_measure", "small_diameter", "source_in_one_piece", "image_in_one_piece"))
    bad += props["mass_equality_error"] > 1e-12
    pts.append(CheckPoint(math.nan, math.nan, float(bad), 0.0, -float(bad), 0.0, bad == 0, False, "partition"))
    overlaps = {}
    for s in s_grid:
        info = step_midpoint_approximation(space, plan, parts, s, return_info=True)
        overlaps[repr(float(s))] = info.overlap_cells
        for Np in Nprime_grid:
            lhs = renyi_entropy(info.measure, Np)
            rhs = entropy_bound(plan, K, Np, s, eps)
            tv = tol.value(rhs, h)
            ok = math.isfinite(rhs) and rhs - lhs >= -tv
            pts.append(CheckPoint(s, Np, lhs, rhs, rhs - lhs, tv, bool(ok), not math.isfinite(rhs), "entropy"))
        lhs = solve_w2(mu0, info.measure).cost
        rhs = w2_bound(eps, s, D, w2sq)
        tv = tol.value(rhs, h)
        pts.append(CheckPoint(s, math.nan, lhs, rhs, rhs - lhs, tv, bool(rhs - lhs >= -tv), False, "w2"))
    diag = {**props, "eps": eps, "D": D, "w2_sq": w2sq, "overlap_cells": overlaps}
    return CheckReport("STEP", K, N, pts, tol, h, diag)
