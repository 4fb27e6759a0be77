"""Exact optimal transport for the squared-distance cost.

The general case goes to the network simplex of the POT library; measures on
a one-dimensional affine space use the monotone (north-west corner) coupling
of the sorted atoms, which is optimal for every convex cost.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import MeasureError, PlanError, ResourceError
from .measures import DiscreteMeasure

# POT probes every array backend it knows on import; none are needed here.
for _name in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")
import ot  # noqa: E402

__all__ = ["TransportPlan", "solve_w2", "is_cyclically_monotone", "DEFAULT_ATOM_CAP"]

DEFAULT_ATOM_CAP = 5000
_MASS_EPS = 1e-15


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling between two discrete measures, stored as weighted atom pairs.

    ``src[k]`` and ``tgt[k]`` index atoms of ``mu0`` and ``mu1``; pairs are
    sorted by ``(src, tgt)``.
    """

    mu0: DiscreteMeasure
    mu1: DiscreteMeasure
    src: np.ndarray
    tgt: np.ndarray
    mass: np.ndarray

    @property
    def space(self):
        return self.mu0.grid.space

    @property
    def sources(self) -> np.ndarray:
        return self.mu0.points[self.src]

    @property
    def targets(self) -> np.ndarray:
        return self.mu1.points[self.tgt]

    @property
    def distances(self) -> np.ndarray:
        return np.asarray(self.space.distance(self.sources, self.targets), dtype=float).reshape(-1)

    @property
    def cost(self) -> float:
        d = self.distances
        return float(np.sum(self.mass * d * d))

    @property
    def w2(self) -> float:
        return math.sqrt(max(self.cost, 0.0))

    def __len__(self):
        return int(self.mass.size)

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.bincount(self.src, weights=self.mass, minlength=len(self.mu0))
        b = np.bincount(self.tgt, weights=self.mass, minlength=len(self.mu1))
        return a, b

    def is_map(self) -> bool:
        """True when every source atom is sent to a single target atom."""
        return len(self) == len(self.mu0) and np.unique(self.src).size == len(self.src)

    def target_of(self) -> np.ndarray:
        """Target atom of each source atom; raises ``PlanError`` if the plan splits mass."""
        if not self.is_map():
            raise PlanError("plan splits mass of some source atom; it is not induced by a map")
        out = np.empty(len(self.mu0), dtype=np.int64)
        out[self.src] = self.tgt
        return out


def _check_pair(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cap: int):
    if mu0.grid.space != mu1.grid.space:
        raise MeasureError("marginals live on different spaces")
    for mu in (mu0, mu1):
        if len(mu) > cap:
            raise ResourceError(f"{len(mu)} atoms exceed the solver cap of {cap}")


def _monotone_plan(mu0: DiscreteMeasure, mu1: DiscreteMeasure):
    x = mu0.points[:, 0]
    y = mu1.points[:, 0]
    ox = np.lexsort((np.arange(len(x)), x))
    oy = np.lexsort((np.arange(len(y)), y))
    ca = np.cumsum(mu0.masses[ox])
    cb = np.cumsum(mu1.masses[oy])
    cb *= ca[-1] / cb[-1]
    cb[-1] = ca[-1]
    cuts = np.union1d(ca, cb)
    lo = np.concatenate([[0.0], cuts[:-1]])
    keep = cuts - lo > _MASS_EPS
    lo, hi = lo[keep], cuts[keep]
    mid = 0.5 * (lo + hi)
    i = np.minimum(np.searchsorted(ca, mid), len(ca) - 1)
    j = np.minimum(np.searchsorted(cb, mid), len(cb) - 1)
    return ox[i].astype(np.int64), oy[j].astype(np.int64), hi - lo


def _simplex_plan(mu0: DiscreteMeasure, mu1: DiscreteMeasure, max_iter: int):
    space = mu0.grid.space
    M = space.pairwise_distance(mu0.points, mu1.points) ** 2
    a = mu0.masses
    b = mu1.masses * (a.sum() / mu1.masses.sum())
    G, log = ot.emd(a, b, M, numItermax=max_iter, log=True)
    if log.get("warning"):
        raise ResourceError(f"network simplex did not converge: {log['warning']}")
    G = np.asarray(G)
    src, tgt = np.nonzero(G > _MASS_EPS)
    return src.astype(np.int64), tgt.astype(np.int64), G[src, tgt]


def solve_w2(mu0: DiscreteMeasure, mu1: DiscreteMeasure, atom_cap: int = DEFAULT_ATOM_CAP, max_iter: int = 10**7) -> TransportPlan:
    """Optimal coupling of ``mu0`` and ``mu1`` for the cost ``d(x, y)**2``.

    Parameters
    ----------
    mu0, mu1 : DiscreteMeasure
        Probability measures on the same space (free or cell-aligned atoms).
    atom_cap : int
        Largest atom count accepted per marginal.

    Returns
    -------
    TransportPlan
        Pairs sorted by ``(source, target)``.  Repeated calls return the same
        plan.
    """
    _check_pair(mu0, mu1, atom_cap)
    space = mu0.grid.space
    if space.affine and space.dim == 1:
        src, tgt, mass = _monotone_plan(mu0, mu1)
    else:
        src, tgt, mass = _simplex_plan(mu0, mu1, max_iter)
    order = np.lexsort((tgt, src))
    return TransportPlan(mu0, mu1, src[order], tgt[order], mass[order])


def is_cyclically_monotone(plan: TransportPlan, k: int = 2, trials: int = 1000, tol: float = 1e-9, seed: int = 0) -> bool:
    """Check that no reassignment of targets within ``k`` support pairs lowers the cost.

    All ``k``-subsets are tried when there are at most ``trials`` of them,
    otherwise ``trials`` random subsets.  ``tol`` is relative to the subset's
    cost (plus an absolute floor of the same size).
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    n = len(plan)
    if n < 2:
        return True
    k = min(k, n)
    X, Y = plan.sources, plan.targets
    space = plan.space
    D = None
    if n <= 2000:
        D = space.pairwise_distance(X, Y) ** 2
    perms = np.array([p for p in itertools.permutations(range(k)) if p != tuple(range(k))], dtype=np.int64)

    def bad(idx):
        idx = np.asarray(idx)
        C = D[np.ix_(idx, idx)] if D is not None else space.pairwise_distance(X[idx], Y[idx]) ** 2
        base = float(np.trace(C))
        alt = C[np.arange(k)[None, :], perms].sum(axis=1)
        return float(alt.min()) < base - tol * max(1.0, base)

    if math.comb(n, k) <= trials:
        return not any(bad(c) for c in itertools.combinations(range(n), k))
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        if bad(rng.choice(n, size=k, replace=False)):
            return False
    return True
