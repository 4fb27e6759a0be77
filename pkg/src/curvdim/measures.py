"""Discrete probability measures on a grid and the Renyi entropy."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptySetError, MeasureError
from .spaces import CellSet, Grid

__all__ = [
    "DiscreteMeasure",
    "uniform_on",
    "step_measure",
    "from_density",
    "from_cell_masses",
    "dirac",
    "renyi_entropy",
    "total_variation",
    "level_count",
    "atoms_of",
    "MASS_TOL",
]

MASS_TOL = 1e-10


class DiscreteMeasure:
    """Finitely many weighted atoms.

    An atom is either a grid cell (``cells`` given; the atom sits at the cell
    centre and the mass is spread uniformly over the cell) or a free point
    (``cells is None``; ``points`` holds embedded coordinates).

    Parameters
    ----------
    grid : Grid
    masses : array_like
        Positive atom masses summing to 1.
    cells : array_like of int, optional
        Cell index of every atom; at most one atom per cell.
    points : array_like, optional
        Embedded positions of free atoms.
    """

    __slots__ = ("grid", "masses", "cells", "_points")

    def __init__(self, grid: Grid, masses, cells=None, points=None):
        masses = np.asarray(masses, dtype=float).ravel()
        if masses.size == 0:
            raise EmptySetError("a measure needs at least one atom")
        if np.any(~(masses > 0)):
            raise MeasureError("atom masses must be positive")
        if abs(float(masses.sum()) - 1.0) > MASS_TOL:
            raise MeasureError(f"total mass {masses.sum()!r} is not 1")
        self.grid = grid
        self.masses = masses
        if cells is not None:
            cells = np.asarray(cells, dtype=np.int64).ravel()
            if cells.shape != masses.shape:
                raise MeasureError("cells and masses differ in length")
            if np.unique(cells).size != cells.size:
                raise MeasureError("more than one atom in a cell")
            if np.any(cells < 0) or np.any(cells >= grid.n_cells):
                raise MeasureError("cell index out of range")
            self.cells = cells
            self._points = None
        else:
            if points is None:
                raise MeasureError("free atoms need positions")
            pts = grid.space.validate(points).reshape(-1, grid.space.ambient_dim)
            if len(pts) != masses.size:
                raise MeasureError("points and masses differ in length")
            self.cells = None
            self._points = pts

    @property
    def cell_aligned(self) -> bool:
        return self.cells is not None

    @property
    def points(self) -> np.ndarray:
        if self.cells is not None:
            return self.grid.points[self.cells]
        return self._points

    def __len__(self):
        return int(self.masses.size)

    @property
    def density(self) -> np.ndarray:
        """Density of each atom with respect to the reference measure."""
        self._need_cells("density")
        return self.masses / self.grid.cell_measures[self.cells]

    def support(self) -> CellSet:
        self._need_cells("support")
        return CellSet(self.grid, self.cells)

    def cell_masses(self) -> np.ndarray:
        """Mass of every grid cell (dense vector of length ``grid.n_cells``)."""
        self._need_cells("cell_masses")
        out = np.zeros(self.grid.n_cells)
        out[self.cells] = self.masses
        return out

    def _need_cells(self, what):
        if self.cells is None:
            raise MeasureError(f"{what} needs a cell-aligned measure; rasterize free atoms first")

    def __repr__(self):
        kind = "cell" if self.cell_aligned else "free"
        return f"DiscreteMeasure({len(self)} {kind} atoms)"


def from_cell_masses(grid: Grid, masses) -> DiscreteMeasure:
    """Cell-aligned measure from a dense per-cell mass vector (zero cells dropped)."""
    masses = np.asarray(masses, dtype=float).ravel()
    if masses.size != grid.n_cells:
        raise MeasureError("mass vector does not match the grid")
    if np.any(masses < 0):
        raise MeasureError("negative cell mass")
    cells = np.flatnonzero(masses > 0)
    m = masses[cells]
    total = m.sum()
    if not total > 0:
        raise EmptySetError("all cell masses are zero")
    return DiscreteMeasure(grid, m / total, cells=cells)


def uniform_on(A: CellSet) -> DiscreteMeasure:
    """Normalised restriction of the reference measure to ``A``."""
    if len(A) == 0:
        raise EmptySetError("uniform_on needs a nonempty set")
    w = A.grid.cell_measures[A.indices]
    total = w.sum()
    if not total > 0:
        raise EmptySetError("set has zero reference measure")
    return DiscreteMeasure(A.grid, w / total, cells=A.indices)


def step_measure(pieces: Sequence[tuple[CellSet, float]]) -> DiscreteMeasure:
    """Weighted sum of normalised uniform measures on disjoint cell sets.

    Pieces with zero weight are ignored.
    """
    pieces = list(pieces)
    if not pieces:
        raise EmptySetError("step_measure needs at least one piece")
    weights = np.array([float(lam) for _, lam in pieces])
    if np.any(weights < 0):
        raise MeasureError("piece weights must be >= 0")
    if abs(weights.sum() - 1.0) > MASS_TOL:
        raise MeasureError(f"piece weights sum to {weights.sum()!r}, not 1")
    grid = pieces[0][0].grid
    seen = np.zeros(grid.n_cells, dtype=bool)
    cells, masses = [], []
    for (A, lam) in pieces:
        if A.grid is not grid:
            raise MeasureError("pieces live on different grids")
        if np.any(seen[A.indices]):
            raise MeasureError("step pieces overlap")
        seen[A.indices] = True
        if lam == 0:
            continue
        u = uniform_on(A)
        cells.append(u.cells)
        masses.append(lam * u.masses)
    cells = np.concatenate(cells)
    masses = np.concatenate(masses)
    order = np.argsort(cells, kind="stable")
    masses = masses[order]
    return DiscreteMeasure(grid, masses / masses.sum(), cells=cells[order])


def from_density(A: CellSet, density: Callable[[np.ndarray], np.ndarray]) -> DiscreteMeasure:
    """Measure on ``A`` whose density (up to normalisation) is ``density(chart)``.

    The density is sampled at cell centres in chart coordinates and must be
    positive there.
    """
    if len(A) == 0:
        raise EmptySetError("from_density needs a nonempty set")
    rho = np.asarray(density(A.centers()), dtype=float).reshape(-1)
    if np.any(~(rho > 0)) or np.any(~np.isfinite(rho)):
        raise MeasureError("density must be finite and positive on the set")
    w = rho * A.grid.cell_measures[A.indices]
    return DiscreteMeasure(A.grid, w / w.sum(), cells=A.indices)


def dirac(grid: Grid, point) -> DiscreteMeasure:
    """Unit point mass at an embedded point (a free atom)."""
    return DiscreteMeasure(grid, [1.0], points=np.asarray(point, dtype=float).reshape(1, -1))


def renyi_entropy(mu: DiscreteMeasure, Nprime: float) -> float:
    """Renyi entropy ``-sum density**(1 - 1/N') * cell_measure``.

    ``Nprime == 1`` gives ``-m(support)``, the limit of the functional.
    """
    if not Nprime >= 1:
        raise MeasureError(f"Renyi entropy needs N' >= 1, got {Nprime}")
    rho = mu.density
    vol = mu.grid.cell_measures[mu.cells]
    return float(-np.sum(rho ** (1.0 - 1.0 / Nprime) * vol))


def total_variation(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Total variation distance between two cell-aligned measures on one grid."""
    if mu.grid is not nu.grid:
        raise MeasureError("measures live on different grids")
    return 0.5 * float(np.abs(mu.cell_masses() - nu.cell_masses()).sum())


def level_count(mu: DiscreteMeasure, rel_tol: float = 1e-12) -> int:
    """Number of distinct density values (up to ``rel_tol``)."""
    rho = np.sort(mu.density)
    if rho.size == 0:
        return 0
    gaps = np.diff(rho) > rel_tol * rho[-1]
    return int(1 + gaps.sum())


def atoms_of(mu: DiscreteMeasure) -> Iterable[tuple[int | None, np.ndarray, float]]:
    """Iterate ``(cell, point, mass)`` over the atoms."""
    pts = mu.points
    for i in range(len(mu)):
        yield (None if mu.cells is None else int(mu.cells[i])), pts[i], float(mu.masses[i])
