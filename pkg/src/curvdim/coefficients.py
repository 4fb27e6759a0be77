"""Distortion coefficients and the extremal distance between two cell sets.

``sigma`` and ``tau`` accept scalar or array ``theta`` and broadcast against
``t``.  Divergent coefficients are returned as ``numpy.inf``; callers decide
how to report them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptySetError

__all__ = ["DistortionParams", "sigma", "tau", "theta_bound"]

_X_TINY = 1e-8


@dataclass(frozen=True)
class DistortionParams:
    """Validated argument bundle for :func:`sigma` and :func:`tau`."""

    K: float
    N: float
    t: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise DomainError(f"t must lie in [0, 1], got {self.t}")
        if not self.theta >= 0.0:
            raise DomainError(f"theta must be >= 0, got {self.theta}")
        if not self.N > 0.0:
            raise DomainError(f"N must be > 0, got {self.N}")

    def sigma(self) -> float:
        return float(sigma(self.K, self.N, self.t, self.theta))

    def tau(self) -> float:
        return float(tau(self.K, self.N, self.t, self.theta))


def _check_common(t, theta):
    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)) or np.any(np.isnan(t)):
        raise DomainError("t must lie in [0, 1]")
    if np.any(~(theta >= 0.0)):
        raise DomainError("theta must be >= 0")
    return t, theta


def _scalar_or_array(value, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(value)
    return value


def sigma(K: float, N: float, t, theta):
    """Distortion coefficient sigma_{K,N}^{(t)}(theta).

    Parameters
    ----------
    K : float
        Curvature parameter.
    N : float
        Dimension parameter, ``N > 0``; ``math.inf`` selects the linear branch.
    t : float or array_like
        Interpolation time in [0, 1].
    theta : float or array_like
        Distance argument, ``>= 0``.

    Returns
    -------
    float or ndarray
        ``inf`` where ``N * pi**2 <= K * theta**2``.  At ``theta == 0`` the
        value is the continuity limit ``t``.
    """
    if not N > 0:
        raise DomainError(f"sigma needs N > 0, got {N}")
    t_arr, th = _check_common(t, theta)
    t_b, th_b = np.broadcast_arrays(t_arr, th)
    out = np.array(t_b, dtype=float, copy=True)
    if K == 0 or math.isinf(N):
        return _scalar_or_array(out, t, theta)

    # below this the ratio equals t to double precision (error ~ x**2 / 6)
    x_all = th_b * math.sqrt(abs(K) / N)
    if K > 0:
        diverge = N * math.pi**2 <= K * th_b**2
        live = (~diverge) & (x_all > _X_TINY)
        x = x_all[live]
        out[live] = np.sin(t_b[live] * x) / np.sin(x)
        out[diverge] = np.inf
    else:
        live = x_all > _X_TINY
        x = x_all[live]
        tl = t_b[live]
        # sinh(tx)/sinh(x) written to stay finite for large x
        out[live] = np.exp((tl - 1.0) * x) * (-np.expm1(-2.0 * tl * x)) / (-np.expm1(-2.0 * x))
    return _scalar_or_array(out, t, theta)


def tau(K: float, N: float, t, theta):
    """Distortion coefficient tau_{K,N}^{(t)}(theta) = t^(1/N) sigma_{K,N-1}^{(t)}(theta)^(1-1/N).

    ``N == 1`` is accepted as the limit ``N -> 1``: the value is ``t`` when
    ``K <= 0`` or ``theta == 0`` and ``inf`` otherwise.
    """
    if not N >= 1:
        raise DomainError(f"tau needs N >= 1, got {N}")
    t_arr, th = _check_common(t, theta)
    t_b, th_b = np.broadcast_arrays(t_arr, th)
    if N == 1:
        out = np.array(t_b, dtype=float, copy=True)
        if K > 0:
            out[th_b > 0] = np.inf
        return _scalar_or_array(out, t, theta)
    s = np.asarray(sigma(K, N - 1, t_b, th_b), dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.power(t_b, 1.0 / N) * np.power(s, 1.0 - 1.0 / N)
    out = np.where(np.isinf(s), np.inf, out)
    return _scalar_or_array(out, t, theta)


def theta_bound(A, B, K: float, space=None) -> float:
    """Conservative stand-in for the extremal distance between two cell sets.

    For ``K >= 0`` this is a lower bound on the infimum of distances (closest
    cell centres minus both cell radii, floored at 0); for ``K < 0`` an upper
    bound on the supremum (farthest centres plus both radii).  Either way the
    coefficient evaluated at the bound never exceeds the one at the true value.
    """
    if len(A) == 0 or len(B) == 0:
        raise EmptySetError("theta_bound needs nonempty sets")
    if space is None:
        space = A.grid.space
    pa, pb = A.points(), B.points()
    ra, rb = A.grid.cell_radii[A.indices], B.grid.cell_radii[B.indices]
    best = math.inf if K >= 0 else -math.inf
    step = max(1, 2_000_000 // max(len(pb), 1))
    for s in range(0, len(pa), step):
        d = space.pairwise_distance(pa[s : s + step], pb)
        if K >= 0:
            best = min(best, float(np.min(d - ra[s : s + step, None] - rb[None, :])))
        else:
            best = max(best, float(np.max(d + ra[s : s + step, None] + rb[None, :])))
    return max(best, 0.0)
