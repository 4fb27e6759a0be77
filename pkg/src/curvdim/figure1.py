"""Built-in planar example where the midpoint set is strictly larger than the interpolation support.

``A`` is one rectangle and ``B`` two squares sharing its horizontal extent
above and below.  Every geodesic from ``A`` to ``B`` is a segment, so the
half-way midpoint set is the whole Minkowski average of the two, a vertical
band with area 3.  Optimal transport between the uniform measures instead
sends the upper half of ``A`` to the upper square and the lower half to the
lower square, and its half-way support is two unit squares with area 2.
Splitting ``A`` and ``B`` into those matched halves removes the gap: for each
half the transport is a translation and both sets coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkers import Tolerance, check_sbm, check_bm
from .interpolation import displacement_interpolate, midpoint_set, support_set
from .measures import uniform_on
from .report import write_json, write_raster
from .spaces import CellSet, Euclidean, build_grid
from .transport import solve_w2

__all__ = ["Figure1Result", "figure1_sets", "reproduce_figure1"]

GRID_BOX = [(-5.5, -0.5), (-3.5, 3.5)]
A_BOX = [(-5.0, -4.0), (-1.0, 1.0)]
B_BOXES = [[(-2.0, -1.0), (2.0, 3.0)], [(-2.0, -1.0), (-3.0, -2.0)]]
A_HALVES = [[(-5.0, -4.0), (0.0, 1.0)], [(-5.0, -4.0), (-1.0, 0.0)]]
SPLIT_TIMES = (0.25, 0.5, 0.75)


def _cells(grid, box) -> CellSet:
    """Cells whose centre lies strictly inside ``box``."""
    lo = np.array([b[0] for b in box]) + 0.25 * grid.spacing
    hi = np.array([b[1] for b in box]) - 0.25 * grid.spacing
    return CellSet.from_box(grid, lo, hi)


def figure1_sets(h: float):
    """Grid and the sets ``A``, ``B``, ``A1``, ``A2``, ``B1``, ``B2``."""
    grid = build_grid(Euclidean(2), GRID_BOX, h)
    A = _cells(grid, A_BOX)
    B1, B2 = (_cells(grid, b) for b in B_BOXES)
    A1, A2 = (_cells(grid, b) for b in A_HALVES)
    return grid, {"A": A, "B": B1 | B2, "A1": A1, "A2": A2, "B1": B1, "B2": B2}


@dataclass
class Figure1Result:
    h: float
    m_midpoint: float
    m_support: float
    gap: float
    tol: float
    gap_ok: bool
    pairs: list[dict] = field(default_factory=list)
    sbm_pass: bool = True
    bm_pass: bool = True
    sets: dict = field(default_factory=dict)

    @property
    def split_ok(self) -> bool:
        return all(p["ok"] for p in self.pairs)

    @property
    def verdict(self) -> bool:
        return self.gap_ok and self.split_ok and self.sbm_pass and self.bm_pass

    def to_dict(self):
        return {
            "h": self.h,
            "m_midpoint_half": self.m_midpoint,
            "m_support_half": self.m_support,
            "gap": self.gap,
            "tol": self.tol,
            "gap_exceeds_10_tol": self.gap_ok,
            "split_pairs": self.pairs,
            "sbm_pass": self.sbm_pass,
            "bm_pass": self.bm_pass,
            "verdict": self.verdict,
        }


def reproduce_figure1(h: float = 0.025, out: str | Path | None = None, tol: Tolerance | None = None) -> Figure1Result:
    """Measure the gap at ``t = 1/2`` and its removal after splitting.

    The midpoint sets are rasterized faithfully (cells whose centre lies in the
    exact set), so the areas are estimates rather than upper bounds.
    """
    tol = tol or Tolerance()
    grid, S = figure1_sets(h)
    space = grid.space
    A, B = S["A"], S["B"]
    M = midpoint_set(A, B, 0.5, conservative=False)
    plan = solve_w2(uniform_on(A), uniform_on(B))
    mu_half = displacement_interpolate(plan, 0.5)
    D = support_set(mu_half)
    mM, mD = M.measure(), D.measure()
    tv = tol.value(mM, h)
    sbm = check_sbm(space, A, B, 0.0, 2.0, (0.5,), (2.0,), tol, plan=plan)
    bm = check_bm(space, A, B, 0.0, 2.0, (0.5,), (2.0,), tol)
    res = Figure1Result(h, mM, mD, mM - mD, tv, (mM - mD) > 10 * tv, sbm_pass=sbm.verdict, bm_pass=bm.verdict)
    res.sets = {"A": A, "B": B, "M_half": M, "D_half": D}

    rasters = {}
    for name, (Ai, Bi) in {"1": (S["A1"], S["B1"]), "2": (S["A2"], S["B2"])}.items():
        p = solve_w2(uniform_on(Ai), uniform_on(Bi))
        for t in SPLIT_TIMES:
            Mt = midpoint_set(Ai, Bi, t, conservative=False)
            Dt = support_set(displacement_interpolate(p, t))
            diff = abs(Mt.measure() - Dt.measure())
            ptol = tol.value(Mt.measure(), h)
            res.pairs.append({"pair": name, "t": t, "m_midpoint": Mt.measure(), "m_support": Dt.measure(), "diff": diff, "tol": ptol, "same_cells": Mt == Dt, "ok": diff <= ptol})
            rasters[f"pair{name}_t{t:g}_M"] = Mt
            rasters[f"pair{name}_t{t:g}_D"] = Dt

    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, cs in {**res.sets, **rasters}.items():
            write_raster(out / f"{name}.txt", cs.centers(), 1.0)
        write_raster(out / "mu_half_density.txt", grid.centers[mu_half.cells], mu_half.density)
        write_json(out / "figure1.json", res.to_dict())
    return res
