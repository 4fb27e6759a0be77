"""Model geodesic metric measure spaces and their uniform chart grids.

Every space exposes a chart (coordinates the grid is laid out in) and an
embedding (coordinates points are stored in).  For the Euclidean space and the
weighted interval the two coincide and geodesics are straight segments in the
chart; those spaces are flagged ``affine``.  The sphere uses hyperspherical
angles and the hyperbolic space geodesic polar coordinates on the hyperboloid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, GeodesicError, ResourceError

__all__ = [
    "ModelSpace",
    "Euclidean",
    "WeightedInterval",
    "Weight",
    "Sphere",
    "Hyperbolic",
    "Grid",
    "CellSet",
    "build_grid",
    "distance",
    "geodesic_point",
    "cell_measure",
    "space_from_dict",
]

DEFAULT_MAX_CELLS = 10**7
_ANTIPODAL_GAP = 1e-9


def _as_points(p, ambient_dim: int) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != ambient_dim:
        raise DomainError(f"expected points with {ambient_dim} coordinates, got shape {arr.shape}")
    return arr


def _unwrap(value, inputs_ndim: int):
    return float(value) if inputs_ndim <= 1 and np.ndim(value) == 0 else value


# -- hyperspherical coordinates ---------------------------------------------


def _sphere_embed(angles: np.ndarray) -> np.ndarray:
    """Unit vectors in R^(k+1) from k angles (theta_1..theta_{k-1}, phi)."""
    k = angles.shape[-1]
    out = np.empty(angles.shape[:-1] + (k + 1,))
    s = np.ones(angles.shape[:-1])
    for i in range(k - 1):
        out[..., i] = s * np.cos(angles[..., i])
        s = s * np.sin(angles[..., i])
    out[..., k - 1] = s * np.cos(angles[..., k - 1])
    out[..., k] = s * np.sin(angles[..., k - 1])
    return out


def _sphere_angles(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_sphere_embed` (input need not be normalised)."""
    k = x.shape[-1] - 1
    out = np.empty(x.shape[:-1] + (k,))
    for i in range(k - 1):
        tail = np.linalg.norm(x[..., i + 1 :], axis=-1)
        out[..., i] = np.arctan2(tail, x[..., i])
    out[..., k - 1] = np.mod(np.arctan2(x[..., k], x[..., k - 1]), 2 * math.pi)
    return out


def _sphere_jacobian(angles: np.ndarray) -> np.ndarray:
    k = angles.shape[-1]
    jac = np.ones(angles.shape[:-1])
    for i in range(k - 1):
        jac = jac * np.abs(np.sin(angles[..., i])) ** (k - 1 - i)
    return jac


class ModelSpace:
    """Base class: a geodesic metric measure space with closed-form geometry."""

    kind: str = "abstract"
    dim: int
    ambient_dim: int
    affine: bool = False
    K_ref: float | None = None
    N_ref: float | None = None

    # chart <-> embedding
    def to_chart(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float)

    def from_chart(self, chart) -> np.ndarray:
        return np.asarray(chart, dtype=float)

    def volume_density(self, chart: np.ndarray) -> np.ndarray:
        """Reference density times the chart volume element."""
        return np.ones(np.asarray(chart).shape[:-1])

    def periodic(self) -> tuple[float | None, ...]:
        """Period of each chart axis, ``None`` when the axis is not periodic."""
        return (None,) * self.dim

    def default_box(self):
        raise DomainError(f"{self.kind} has no default bounding box; pass one explicitly")

    def validate(self, points) -> np.ndarray:
        return _as_points(points, self.ambient_dim)

    def distance(self, p, q):
        raise NotImplementedError

    def pairwise_distance(self, P, Q) -> np.ndarray:
        P = self.validate(P).reshape(-1, self.ambient_dim)
        Q = self.validate(Q).reshape(-1, self.ambient_dim)
        return self.distance(P[:, None, :], Q[None, :, :])

    def geodesic_point(self, p, q, t):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"

    # spaces with the same description are interchangeable
    def __eq__(self, other):
        return isinstance(other, ModelSpace) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self))


class Euclidean(ModelSpace):
    kind = "euclidean"
    affine = True

    def __init__(self, dim: int):
        if dim < 1:
            raise DomainError("Euclidean dimension must be >= 1")
        self.dim = self.ambient_dim = int(dim)
        self.K_ref, self.N_ref = 0.0, float(dim)

    def distance(self, p, q):
        p, q = self.validate(p), self.validate(q)
        return _unwrap(np.linalg.norm(p - q, axis=-1), max(p.ndim, q.ndim))

    def pairwise_distance(self, P, Q):
        P = self.validate(P).reshape(-1, self.dim)
        Q = self.validate(Q).reshape(-1, self.dim)
        return cdist(P, Q)

    def geodesic_point(self, p, q, t):
        p, q = self.validate(p), self.validate(q)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            if t == 0:
                return np.array(p, copy=True)
            if t == 1:
                return np.array(q, copy=True)
        else:
            t = t[..., None]
        return (1.0 - t) * p + t * q

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


@dataclass(frozen=True)
class Weight:
    """Reference density on an interval.

    ``kind`` is one of ``"constant"``, ``"sin_power"`` (``sin(scale*x)**power``)
    and ``"gaussian"`` (``exp(-scale*x**2/2)``).
    """

    kind: str = "constant"
    power: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "sin_power", "gaussian"):
            raise DomainError(f"unknown weight kind {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.ones_like(x)
        if self.kind == "sin_power":
            return np.abs(np.sin(self.scale * x)) ** self.power
        return np.exp(-0.5 * self.scale * x**2)

    def to_dict(self):
        return {"kind": self.kind, "power": self.power, "scale": self.scale}


class WeightedInterval(ModelSpace):
    """Interval [a, b] with the usual distance and measure ``weight(x) dx``."""

    kind = "weighted_interval"
    affine = True
    dim = ambient_dim = 1

    def __init__(self, a: float, b: float, weight: Weight | None = None, K_ref=None, N_ref=None):
        if not a < b:
            raise DomainError("WeightedInterval needs a < b")
        self.a, self.b = float(a), float(b)
        self.weight = weight or Weight()
        self.K_ref, self.N_ref = K_ref, N_ref

    def validate(self, points):
        arr = _as_points(points, 1)
        span = self.b - self.a
        if np.any(arr < self.a - 1e-12 * span) or np.any(arr > self.b + 1e-12 * span):
            raise DomainError("point outside the interval")
        return arr

    def volume_density(self, chart):
        return self.weight(np.asarray(chart)[..., 0])

    def default_box(self):
        return [(self.a, self.b)]

    def distance(self, p, q):
        p, q = self.validate(p), self.validate(q)
        return _unwrap(np.abs(p - q)[..., 0], max(p.ndim, q.ndim))

    def pairwise_distance(self, P, Q):
        P = self.validate(P).reshape(-1)
        Q = self.validate(Q).reshape(-1)
        return np.abs(P[:, None] - Q[None, :])

    geodesic_point = Euclidean.geodesic_point

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b, "weight": self.weight.to_dict()}


class Sphere(ModelSpace):
    """Round sphere S^d of radius ``radius`` embedded in R^(d+1).

    Chart: polar angles theta_1..theta_{d-1} in [0, pi] and azimuth phi in
    [0, 2 pi).  The default box leaves out a cap of angular radius ``cap``
    around the antipode of the chart pole.
    """

    kind = "sphere"

    def __init__(self, dim: int, radius: float = 1.0, cap: float = 0.1):
        if dim < 1 or radius <= 0:
            raise DomainError("Sphere needs dim >= 1 and radius > 0")
        self.dim = int(dim)
        self.ambient_dim = self.dim + 1
        self.radius = float(radius)
        self.cap = float(cap)
        self.K_ref = (self.dim - 1) / self.radius**2
        self.N_ref = float(self.dim)

    def validate(self, points):
        arr = _as_points(points, self.ambient_dim)
        norms = np.linalg.norm(arr, axis=-1)
        if np.any(np.abs(norms - self.radius) > 1e-10 * self.radius):
            raise DomainError("point is not on the sphere")
        return arr

    def to_chart(self, points):
        return _sphere_angles(np.asarray(points, dtype=float))

    def from_chart(self, chart):
        return self.radius * _sphere_embed(np.asarray(chart, dtype=float))

    def volume_density(self, chart):
        return self.radius**self.dim * _sphere_jacobian(np.asarray(chart, dtype=float))

    def periodic(self):
        return (None,) * (self.dim - 1) + (2 * math.pi,)

    def default_box(self):
        if self.dim == 1:
            return [(0.0, 2 * math.pi)]
        box = [(0.0, math.pi - self.cap)] + [(0.0, math.pi)] * (self.dim - 2)
        return box + [(0.0, 2 * math.pi)]

    def _angle(self, p, q):
        u, v = p / self.radius, q / self.radius
        return 2.0 * np.arctan2(np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1))

    def distance(self, p, q):
        p, q = self.validate(p), self.validate(q)
        return _unwrap(self.radius * self._angle(p, q), max(p.ndim, q.ndim))

    def geodesic_point(self, p, q, t):
        p, q = self.validate(p), self.validate(q)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0 and t == 0:
            return np.array(np.broadcast_to(p, np.broadcast_shapes(p.shape, q.shape)), copy=True)
        if t.ndim == 0 and t == 1:
            return np.array(np.broadcast_to(q, np.broadcast_shapes(p.shape, q.shape)), copy=True)
        w = np.asarray(self._angle(p, q))
        if np.any(w > math.pi - _ANTIPODAL_GAP):
            raise GeodesicError("antipodal points: the geodesic is not unique")
        w = w[..., None]
        tt = t[..., None] if t.ndim else t
        small = w < 1e-12
        sw = np.where(small, 1.0, np.sin(w))
        a = np.where(small, 1.0 - tt, np.sin((1.0 - tt) * w) / sw)
        b = np.where(small, tt, np.sin(tt * w) / sw)
        out = a * p + b * q
        # re-project to remove round-off drift off the sphere
        return self.radius * out / np.linalg.norm(out, axis=-1, keepdims=True)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "radius": self.radius, "cap": self.cap}


def _minkowski(x, y):
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


class Hyperbolic(ModelSpace):
    """Hyperbolic space H^d (curvature -1) in the hyperboloid model.

    Chart: geodesic polar coordinates (r, angles of S^(d-1)) around the apex
    (1, 0, ..., 0); for ``d == 1`` a single signed coordinate.
    """

    kind = "hyperbolic"

    def __init__(self, dim: int):
        if dim < 1:
            raise DomainError("Hyperbolic dimension must be >= 1")
        self.dim = int(dim)
        self.ambient_dim = self.dim + 1
        self.K_ref, self.N_ref = -(self.dim - 1.0), float(self.dim)

    def validate(self, points):
        arr = _as_points(points, self.ambient_dim)
        if np.any(np.abs(_minkowski(arr, arr) + 1.0) > 1e-10 * np.maximum(1.0, arr[..., 0] ** 2)):
            raise DomainError("point is not on the hyperboloid")
        if np.any(arr[..., 0] <= 0):
            raise DomainError("point is on the lower sheet")
        return arr

    def to_chart(self, points):
        x = np.asarray(points, dtype=float)
        if self.dim == 1:
            return np.arcsinh(x[..., 1:2])
        r = np.arcsinh(np.linalg.norm(x[..., 1:], axis=-1))
        return np.concatenate([r[..., None], _sphere_angles(x[..., 1:])], axis=-1)

    def from_chart(self, chart):
        c = np.asarray(chart, dtype=float)
        r = c[..., 0]
        if self.dim == 1:
            return np.stack([np.cosh(r), np.sinh(r)], axis=-1)
        tail = np.sinh(r)[..., None] * _sphere_embed(c[..., 1:])
        return np.concatenate([np.cosh(r)[..., None], tail], axis=-1)

    def volume_density(self, chart):
        c = np.asarray(chart, dtype=float)
        if self.dim == 1:
            return np.ones(c.shape[:-1])
        return np.sinh(np.abs(c[..., 0])) ** (self.dim - 1) * _sphere_jacobian(c[..., 1:])

    def periodic(self):
        if self.dim == 1:
            return (None,)
        return (None,) * (self.dim - 1) + (2 * math.pi,)

    def distance(self, p, q):
        p, q = self.validate(p), self.validate(q)
        diff = p - q
        chord2 = np.maximum(_minkowski(diff, diff), 0.0)
        return _unwrap(2.0 * np.arcsinh(0.5 * np.sqrt(chord2)), max(p.ndim, q.ndim))

    def geodesic_point(self, p, q, t):
        p, q = self.validate(p), self.validate(q)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(p.shape, q.shape)
        if t.ndim == 0 and t == 0:
            return np.array(np.broadcast_to(p, shape), copy=True)
        if t.ndim == 0 and t == 1:
            return np.array(np.broadcast_to(q, shape), copy=True)
        d = np.asarray(self.distance(p, q))[..., None]
        tt = t[..., None] if t.ndim else t
        small = d < 1e-12
        sd = np.where(small, 1.0, np.sinh(d))
        a = np.where(small, 1.0 - tt, np.sinh((1.0 - tt) * d) / sd)
        b = np.where(small, tt, np.sinh(tt * d) / sd)
        out = a * p + b * q
        norm = np.sqrt(np.maximum(-_minkowski(out, out), 1e-300))
        return out / norm[..., None]

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


def space_from_dict(spec: dict) -> ModelSpace:
    """Build a space from its serialised description."""
    kind = spec.get("kind")
    if kind == "euclidean":
        return Euclidean(int(spec["dim"]))
    if kind == "weighted_interval":
        w = spec.get("weight") or {}
        weight = Weight(w.get("kind", "constant"), float(w.get("power", 1.0)), float(w.get("scale", 1.0)))
        return WeightedInterval(float(spec["a"]), float(spec["b"]), weight, spec.get("K_ref"), spec.get("N_ref"))
    if kind == "sphere":
        return Sphere(int(spec["dim"]), float(spec.get("radius", 1.0)), float(spec.get("cap", 0.1)))
    if kind == "hyperbolic":
        return Hyperbolic(int(spec["dim"]))
    raise DomainError(f"unknown space kind {kind!r}")


# -- grids -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice of axis-aligned chart boxes tiling ``[lo, hi]``."""

    space: ModelSpace
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]
    h: float = field(default=0.0)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / np.asarray(self.shape)

    @property
    def resolution(self) -> float:
        """Largest chart spacing; the ``h`` entering tolerances."""
        return float(np.max(self.spacing))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def wraps(self) -> tuple[bool, ...]:
        """Axes that are periodic and covered over a full period."""
        out = []
        for period, lo, hi in zip(self.space.periodic(), self.lo, self.hi):
            out.append(period is not None and abs((hi - lo) - period) < 1e-9 * period)
        return tuple(out)

    def unravel(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)

    def ravel(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi[..., k] for k in range(self.dim)), self.shape)

    @cached_property
    def centers(self) -> np.ndarray:
        """Chart coordinates of every cell centre, shape (n_cells, dim)."""
        axes = [self.lo[k] + (np.arange(self.shape[k]) + 0.5) * self.spacing[k] for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def points(self) -> np.ndarray:
        """Embedded cell centres."""
        return self.space.from_chart(self.centers)

    @cached_property
    def cell_measures(self) -> np.ndarray:
        """Midpoint-rule approximation of the reference measure of every cell."""
        return self.space.volume_density(self.centers) * float(np.prod(self.spacing))

    @cached_property
    def cell_radii(self) -> np.ndarray:
        """Largest distance from each cell centre to the corners of its chart box."""
        if isinstance(self.space, Euclidean) or isinstance(self.space, WeightedInterval):
            return np.full(self.n_cells, 0.5 * float(np.linalg.norm(self.spacing)))
        radii = np.zeros(self.n_cells)
        for signs in product((-0.5, 0.5), repeat=self.dim):
            corner = self.space.from_chart(self.centers + np.asarray(signs) * self.spacing)
            radii = np.maximum(radii, np.asarray(self.space.distance(self.points, corner)))
        return radii

    def cell_measure(self, cell: int) -> float:
        return float(self.cell_measures[cell])

    def locate(self, chart, strict: bool = True) -> np.ndarray:
        """Flat index of the cell containing each chart point (-1 when outside)."""
        c = np.atleast_2d(np.asarray(chart, dtype=float))
        rel = (c - np.asarray(self.lo)) / self.spacing
        idx = np.floor(rel + 1e-9).astype(np.int64)
        outside = np.zeros(len(c), dtype=bool)
        for k in range(self.dim):
            if self.wraps[k]:
                idx[:, k] %= self.shape[k]
                continue
            # points on the upper face belong to the last cell
            top = (idx[:, k] == self.shape[k]) & (rel[:, k] <= self.shape[k] + 1e-9)
            idx[top, k] = self.shape[k] - 1
            outside |= (idx[:, k] < 0) | (idx[:, k] >= self.shape[k])
        flat = np.full(len(c), -1, dtype=np.int64)
        ok = ~outside
        if np.any(ok):
            flat[ok] = self.ravel(idx[ok])
        if strict and np.any(outside):
            raise DomainError(f"{int(outside.sum())} point(s) fall outside the grid box")
        return flat

    def corners(self, idx) -> np.ndarray:
        """Embedded corners of the given cells, shape (len(idx) * 2**dim, ambient)."""
        idx = np.asarray(idx)
        c = self.centers[idx]
        out = [self.space.from_chart(c + np.asarray(s) * self.spacing) for s in product((-0.5, 0.5), repeat=self.dim)]
        return np.concatenate(out, axis=0)

    def describe(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "lo": list(self.lo),
            "hi": list(self.hi),
            "shape": list(self.shape),
            "h": self.h,
            "n_cells": self.n_cells,
        }


def build_grid(space: ModelSpace, box: Sequence[Sequence[float]] | None, h: float, max_cells: int = DEFAULT_MAX_CELLS) -> Grid:
    """Tile ``box`` (chart coordinates, one ``(lo, hi)`` per axis) with cells of side about ``h``.

    Each axis gets ``ceil(length / h)`` cells (at least one) of equal width, so
    boxes whose sides are multiples of ``h`` are tiled exactly.
    """
    if not h > 0:
        raise DomainError("h must be > 0")
    if box is None:
        box = space.default_box()
    box = [tuple(map(float, b)) for b in box]
    if len(box) != space.dim:
        raise DomainError(f"box has {len(box)} axes, space chart has {space.dim}")
    shape = []
    for lo, hi in box:
        if not hi > lo:
            raise DomainError(f"empty box axis ({lo}, {hi})")
        shape.append(max(1, math.ceil((hi - lo) / h - 1e-9)))
    count = math.prod(shape)
    if count > max_cells:
        raise ResourceError(f"grid would have {count} cells, cap is {max_cells}")
    return Grid(space, tuple(b[0] for b in box), tuple(b[1] for b in box), tuple(shape), float(h))


def distance(space: ModelSpace, p, q):
    return space.distance(p, q)


def geodesic_point(space: ModelSpace, p, q, t):
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > 1):
        raise DomainError("t must lie in [0, 1]")
    return space.geodesic_point(p, q, t)


def cell_measure(space: ModelSpace, grid: Grid, cell: int) -> float:
    if grid.space != space:
        raise DomainError("grid belongs to a different space")
    return grid.cell_measure(cell)


# -- cell sets ---------------------------------------------------------------


class CellSet:
    """A union of grid cells, stored as sorted unique flat indices."""

    __slots__ = ("grid", "indices")

    def __init__(self, grid: Grid, indices):
        idx = np.unique(np.asarray(indices, dtype=np.int64).ravel())
        if idx.size and (idx[0] < 0 or idx[-1] >= grid.n_cells):
            raise DomainError("cell index out of range")
        self.grid = grid
        self.indices = idx

    @classmethod
    def from_box(cls, grid: Grid, lo, hi) -> "CellSet":
        """Cells whose chart centre lies in the closed box ``[lo, hi]``."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        tol = 1e-9 * grid.spacing
        c = grid.centers
        inside = np.all((c >= lo - tol) & (c <= hi + tol), axis=1)
        return cls(grid, np.nonzero(inside)[0])

    @classmethod
    def from_boxes(cls, grid: Grid, boxes) -> "CellSet":
        parts = [cls.from_box(grid, [b[0] for b in box], [b[1] for b in box]) for box in boxes]
        out = cls(grid, [])
        for p in parts:
            out = out | p
        return out

    @classmethod
    def from_mask(cls, grid: Grid, mask) -> "CellSet":
        return cls(grid, np.flatnonzero(np.asarray(mask).ravel()))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.n_cells, dtype=bool)
        m[self.indices] = True
        return m.reshape(self.grid.shape)

    def measure(self) -> float:
        return float(np.sum(self.grid.cell_measures[self.indices]))

    def points(self) -> np.ndarray:
        return self.grid.points[self.indices]

    def centers(self) -> np.ndarray:
        return self.grid.centers[self.indices]

    def corner_points(self) -> np.ndarray:
        return self.grid.corners(self.indices)

    def _same_grid(self, other: "CellSet"):
        if other.grid is not self.grid:
            raise DomainError("cell sets live on different grids")

    def __or__(self, other):
        self._same_grid(other)
        return CellSet(self.grid, np.union1d(self.indices, other.indices))

    def __and__(self, other):
        self._same_grid(other)
        return CellSet(self.grid, np.intersect1d(self.indices, other.indices))

    def __sub__(self, other):
        self._same_grid(other)
        return CellSet(self.grid, np.setdiff1d(self.indices, other.indices))

    def isdisjoint(self, other) -> bool:
        return len(self & other) == 0

    def issubset(self, other) -> bool:
        return len(self - other) == 0

    def __len__(self):
        return int(self.indices.size)

    def __eq__(self, other):
        return isinstance(other, CellSet) and other.grid is self.grid and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((id(self.grid), self.indices.tobytes()))

    def __repr__(self):
        return f"CellSet({len(self)} cells, measure={self.measure():.6g})"
