"""Checks of the curvature-dimension, Brunn-Minkowski and measure contraction inequalities.

Every check returns a :class:`CheckReport` holding one :class:`CheckPoint` per
evaluated ``(t, N')`` (and annulus piece for MCP).  ``margin`` is the slack
of the inequality in its own direction, so a point passes iff
``margin >= -tol``:

* CD:  ``margin = rhs - lhs`` (entropy must lie below the distorted average),
* BM, SBM, MCP: ``margin = lhs - rhs`` (the measure must be large enough).

A coefficient that diverges to infinity with positive mass makes the point
fail with ``diverged=True`` instead of a numeric comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import tau, theta_bound
from .errors import DomainError, EmptySetError
from .interpolation import displacement_interpolate, midpoint_set, support_set
from .measures import DiscreteMeasure, renyi_entropy, uniform_on
from .spaces import CellSet, ModelSpace
from .transport import TransportPlan, solve_w2

__all__ = [
    "Tolerance",
    "CheckPoint",
    "CheckReport",
    "t_functional",
    "check_cd",
    "check_bm",
    "check_sbm",
    "check_mcp",
    "annulus_partition",
    "DEFAULT_T_GRID",
    "nprime_grid",
]

DEFAULT_T_GRID = (0.25, 0.5, 0.75)


def nprime_grid(N: float) -> tuple[float, ...]:
    """Default sample of exponents ``N' >= N``."""
    return (N, 1.5 * N, 3.0 * N, 10.0 * N)


@dataclass(frozen=True)
class Tolerance:
    """``tol = abs + rel * |rhs| + c_disc * h``."""

    abs: float = 1e-9
    rel: float = 1e-3
    c_disc: float = 0.0

    def value(self, rhs: float, h: float) -> float:
        scale = abs(rhs) if math.isfinite(rhs) else 0.0
        return self.abs + self.rel * scale + self.c_disc * h

    def to_dict(self):
        return {"abs": self.abs, "rel": self.rel, "c_disc": self.c_disc}


@dataclass(frozen=True)
class CheckPoint:
    t: float
    Nprime: float
    lhs: float
    rhs: float
    margin: float
    tol: float
    passed: bool
    diverged: bool = False
    label: str = ""

    def to_dict(self):
        def num(x):
            return float(x) if math.isfinite(x) else None

        return {
            "t": num(self.t),
            "Nprime": num(self.Nprime),
            "lhs": num(self.lhs),
            "rhs": num(self.rhs),
            "margin": num(self.margin),
            "tol": self.tol,
            "pass": self.passed,
            "diverged": self.diverged,
            "label": self.label,
        }


@dataclass
class CheckReport:
    condition: str
    K: float
    N: float
    points: list[CheckPoint]
    tolerance: Tolerance
    h: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(p.passed for p in self.points)

    @property
    def diverged(self) -> bool:
        return any(p.diverged for p in self.points)

    @property
    def worst_margin(self) -> float:
        return min((p.margin for p in self.points), default=math.inf)

    def margins(self) -> np.ndarray:
        return np.array([p.margin for p in self.points])

    def to_dict(self):
        return {
            "condition": self.condition,
            "K": self.K,
            "N": self.N,
            "h": self.h,
            "tolerance": self.tolerance.to_dict(),
            "verdict": self.verdict,
            "diverged": self.diverged,
            "points": [p.to_dict() for p in self.points],
            "diagnostics": self.diagnostics,
        }


def _point(t, Np, lhs, rhs, margin, tol: Tolerance, h, label="") -> CheckPoint:
    diverged = not (math.isfinite(lhs) and math.isfinite(rhs))
    tv = tol.value(rhs, h)
    passed = (not diverged) and margin >= -tv
    return CheckPoint(float(t), float(Np), float(lhs), float(rhs), float(margin), tv, bool(passed), diverged, label)


def _grids(N, t_grid, Nprime_grid):
    t_grid = tuple(DEFAULT_T_GRID if t_grid is None else t_grid)
    Nprime_grid = tuple(nprime_grid(N) if Nprime_grid is None else Nprime_grid)
    if any(Np < N for Np in Nprime_grid):
        raise DomainError("every N' must be >= N")
    return t_grid, Nprime_grid


def _same_space(space: ModelSpace, *objs):
    for o in objs:
        if o.grid.space != space:
            raise DomainError("object lives on a different space")


def t_functional(plan: TransportPlan, K: float, Nprime: float, t: float, shift: float = 0.0) -> float:
    """Distorted average of inverse densities integrated against ``plan``.

    Computes ``-sum mass * [tau(1-t, d) rho0**(-1/N') + tau(t, d) rho1**(-1/N')]``.
    With ``shift`` the distance argument becomes ``d - shift`` (floored at 0)
    when ``K >= 0`` and ``d + shift`` when ``K < 0``, the direction in which
    the coefficients can only get smaller.  Returns ``-inf`` when a
    coefficient diverges on a pair carrying mass.
    """
    rho0 = plan.mu0.density[plan.src]
    rho1 = plan.mu1.density[plan.tgt]
    d = plan.distances
    if shift:
        d = np.maximum(d - shift, 0.0) if K >= 0 else d + shift
    a = np.asarray(tau(K, Nprime, np.full_like(d, 1.0 - t), d))
    b = np.asarray(tau(K, Nprime, np.full_like(d, t), d))
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        return -math.inf
    p = -1.0 / Nprime
    return float(-np.sum(plan.mass * (a * rho0**p + b * rho1**p)))


def check_cd(space, mu0: DiscreteMeasure, mu1: DiscreteMeasure, K: float, N: float, t_grid=None, Nprime_grid=None, tol: Tolerance | None = None, plan: TransportPlan | None = None) -> CheckReport:
    """Entropy convexity along the solver's optimal plan.

    ``lhs = E_{N'}(mu_t)`` of the rasterized interpolant, ``rhs`` the
    distorted average from :func:`t_functional`.
    """
    _same_space(space, mu0, mu1)
    tol = tol or Tolerance()
    t_grid, Nprime_grid = _grids(N, t_grid, Nprime_grid)
    plan = plan or solve_w2(mu0, mu1)
    h = mu0.grid.resolution
    pts = []
    for t in t_grid:
        mu_t = displacement_interpolate(plan, t)
        for Np in Nprime_grid:
            lhs = renyi_entropy(mu_t, Np)
            rhs = t_functional(plan, K, Np, t)
            pts.append(_point(t, Np, lhs, rhs, rhs - lhs, tol, h))
    diag = {"atoms": [len(mu0), len(mu1)], "pairs": len(plan), "w2": plan.w2}
    return CheckReport("CD", K, N, pts, tol, h, diag)


def _bm_rhs(K, Np, t, theta, mA, mB):
    a = tau(K, Np, 1.0 - t, theta)
    b = tau(K, Np, t, theta)
    if not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    return a * mA ** (1.0 / Np) + b * mB ** (1.0 / Np)


def _bm_like(condition, space, A, B, K, N, t_grid, Nprime_grid, tol, set_at_t, extra):
    if len(A) == 0 or len(B) == 0:
        raise EmptySetError(f"{condition} needs nonempty sets")
    _same_space(space, A, B)
    tol = tol or Tolerance()
    t_grid, Nprime_grid = _grids(N, t_grid, Nprime_grid)
    theta = theta_bound(A, B, K, space)
    mA, mB = A.measure(), B.measure()
    h = A.grid.resolution
    pts, sizes = [], {}
    for t in t_grid:
        S = set_at_t(t)
        mS = S.measure()
        sizes[repr(float(t))] = mS
        for Np in Nprime_grid:
            lhs = mS ** (1.0 / Np)
            rhs = _bm_rhs(K, Np, t, theta, mA, mB)
            pts.append(_point(t, Np, lhs, rhs, lhs - rhs, tol, h))
    diag = {"theta": theta, "mA": mA, "mB": mB, "set_measure": sizes, **extra}
    return CheckReport(condition, K, N, pts, tol, h, diag)


def check_bm(space, A: CellSet, B: CellSet, K: float, N: float, t_grid=None, Nprime_grid=None, tol: Tolerance | None = None, conservative: bool = True) -> CheckReport:
    """Brunn-Minkowski inequality with the rasterized midpoint set on the left."""
    return _bm_like(
        "BM", space, A, B, K, N, t_grid, Nprime_grid, tol,
        lambda t: midpoint_set(A, B, t, conservative=conservative),
        {"conservative": conservative},
    )


def check_sbm(space, A: CellSet, B: CellSet, K: float, N: float, t_grid=None, Nprime_grid=None, tol: Tolerance | None = None, plan: TransportPlan | None = None) -> CheckReport:
    """Strong Brunn-Minkowski inequality: the interpolant's support replaces the midpoint set."""
    if len(A) and len(B):
        plan = plan or solve_w2(uniform_on(A), uniform_on(B))
    return _bm_like(
        "SBM", space, A, B, K, N, t_grid, Nprime_grid, tol,
        lambda t: support_set(displacement_interpolate(plan, t)),
        {"pairs": len(plan) if plan is not None else 0},
    )


def annulus_partition(space, x, A: CellSet, eps: float) -> list[CellSet]:
    """Split ``A`` into shells ``n*eps < d(x, c) <= (n+1)*eps`` by cell-centre distance.

    Empty shells are dropped; pieces are ordered by distance from ``x``.
    """
    if not eps > 0:
        raise DomainError("eps must be > 0")
    if len(A) == 0:
        return []
    d = np.asarray(space.pairwise_distance(np.asarray(x, dtype=float).reshape(1, -1), A.points())).ravel()
    shell = np.maximum(np.ceil(d / eps - 1e-12) - 1, 0).astype(np.int64)
    return [CellSet(A.grid, A.indices[shell == n]) for n in np.unique(shell)]


def check_mcp(space, x, A: CellSet, K: float, N: float, t_grid=None, eps: float = 0.25, tol: Tolerance | None = None, conservative: bool = True) -> CheckReport:
    """Measure contraction along the geodesics from ``x`` to each point of ``A``.

    For every annulus piece ``A'`` and time ``t``: ``lhs`` is the measure of the
    rasterized contracted piece, ``rhs = sum tau(K, N, t, d(x, c))**N m(c)``.
    """
    if len(A) == 0:
        raise EmptySetError("MCP needs a nonempty set")
    _same_space(space, A)
    x = space.validate(np.asarray(x, dtype=float))
    tol = tol or Tolerance()
    t_grid = tuple(DEFAULT_T_GRID if t_grid is None else t_grid)
    h = A.grid.resolution
    pieces = annulus_partition(space, x, A, eps)
    pts = []
    for i, P in enumerate(pieces):
        d = np.asarray(space.pairwise_distance(x.reshape(1, -1), P.points())).ravel()
        w = A.grid.cell_measures[P.indices]
        for t in t_grid:
            lhs = midpoint_set(x, P, t, target_grid=A.grid, conservative=conservative).measure()
            c = np.asarray(tau(K, N, np.full_like(d, t), d))
            rhs = float(np.sum(c**N * w)) if np.all(np.isfinite(c)) else math.inf
            pts.append(_point(t, N, lhs, rhs, lhs - rhs, tol, h, label=f"piece{i}"))
    diag = {"pieces": len(pieces), "eps": eps, "conservative": conservative, "mA": A.measure()}
    return CheckReport("MCP", K, N, pts, tol, h, diag)


def implication_violations(reports: Sequence[CheckReport]) -> list[str]:
    """Pairs of verdicts contradicting SBM => BM or CD => SBM within one scenario."""
    by = {}
    for r in reports:
        by.setdefault((r.condition, r.K, r.N), r)
    out = []
    for (cond, K, N), r in by.items():
        if cond == "SBM" and r.verdict:
            bm = by.get(("BM", K, N))
            if bm is not None and not bm.verdict:
                out.append(f"SBM passes but BM fails at K={K}, N={N}")
        if cond == "CD" and r.verdict:
            sbm = by.get(("SBM", K, N))
            if sbm is not None and not sbm.verdict:
                out.append(f"CD passes but SBM fails at K={K}, N={N}")
    return out
