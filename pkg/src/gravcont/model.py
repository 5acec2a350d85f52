"""Domain types: point sources, observation sets, continuation grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, InvalidDepthError, InvalidGeometryError, ShapeError

#: Gravitational constant in the nondimensional convention.
DEFAULT_G = 1.0


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle ``[x1_min, x1_max] x [x2_min, x2_max]``."""

    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float

    def __post_init__(self):
        vals = (self.x1_min, self.x1_max, self.x2_min, self.x2_max)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"non-finite extent {vals}")
        if not (self.x1_max > self.x1_min and self.x2_max > self.x2_min):
            raise InvalidGeometryError(f"degenerate extent {vals}")

    @classmethod
    def from_bounds(cls, bounds) -> Rectangle:
        """Build from a sequence ``(x1_min, x1_max, x2_min, x2_max)``."""
        if len(bounds) != 4:
            raise InvalidGeometryError(f"extent needs 4 values, got {len(bounds)}")
        return cls(*(float(b) for b in bounds))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x1_min, self.x1_max, self.x2_min, self.x2_max)

    @property
    def area(self) -> float:
        return (self.x1_max - self.x1_min) * (self.x2_max - self.x2_min)


@dataclass(frozen=True)
class PointSource:
    """Point mass in nondimensional units; ``position[2] < 0`` below ground."""

    mass: float
    position: tuple[float, float, float]

    def __post_init__(self):
        pos = tuple(float(p) for p in self.position)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise DataError(f"position must be a finite 3-vector, got {self.position!r}")
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise DataError(f"source mass must be positive, got {self.mass!r}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "mass", float(self.mass))


@dataclass(frozen=True)
class ObservationSet:
    """Observation points ``x^(i)`` and measured vertical field values.

    ``values`` may be ``None`` for a bare point layout produced by
    :func:`make_regular_observation_grid`; attach data with
    :meth:`with_values`.
    """

    points: np.ndarray
    values: np.ndarray | None = None
    shape: tuple[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ShapeError(f"points must have shape (n, 3) with n >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("observation points contain non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.values is not None:
            vals = np.asarray(self.values, dtype=float)
            if vals.shape != (pts.shape[0],):
                raise ShapeError(
                    f"values must have shape ({pts.shape[0]},), got {vals.shape}"
                )
            if not np.all(np.isfinite(vals)):
                raise DataError("observation values contain non-finite entries")
            object.__setattr__(self, "values", _frozen(vals))

    def __len__(self):
        return self.points.shape[0]

    def with_values(self, values) -> ObservationSet:
        return ObservationSet(self.points, values, self.shape)


@dataclass(frozen=True)
class ContinuationGrid:
    """Regular node lattice on the plane ``x3 = -depth``.

    Nodes are corner-inclusive, ``(M1 + 1) * (M2 + 1)`` of them, row-major
    with ``x1`` varying fastest.  Every node carries the same cell area so
    that the weights add up to the extent area.
    """

    extent: Rectangle
    m1: int
    m2: int
    depth: float
    nodes: np.ndarray
    cell_areas: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def spacing(self) -> tuple[float, float]:
        e = self.extent
        return ((e.x1_max - e.x1_min) / self.m1, (e.x2_max - e.x2_min) / self.m2)


@dataclass(frozen=True)
class LayerDensity:
    """Non-negative surface density ``phi`` on a continuation grid."""

    grid: ContinuationGrid
    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape != (self.grid.n_nodes,):
            raise ShapeError(
                f"phi must have shape ({self.grid.n_nodes},), got {phi.shape}"
            )
        if not np.all(np.isfinite(phi)):
            raise DataError("density contains non-finite entries")
        if np.any(phi < 0):
            raise DataError("layer density must be non-negative")
        object.__setattr__(self, "phi", _frozen(phi))

    @property
    def masses(self) -> np.ndarray:
        """Per-node mass ``phi_j * dS_j``."""
        return self.phi * self.grid.cell_areas

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))


@dataclass(frozen=True)
class NoiseSpec:
    """Relative noise level and seed for :func:`gravcont.continuation.add_noise`."""

    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise DataError(f"noise level must be >= 0, got {self.delta!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise DataError(f"seed must fit in 64 unsigned bits, got {self.seed!r}")


def _lattice(extent: Rectangle, n1: int, n2: int) -> tuple[np.ndarray, np.ndarray]:
    # linspace pins both endpoints exactly; x1 fastest in the raveled order
    t1 = np.linspace(extent.x1_min, extent.x1_max, n1 + 1)
    t2 = np.linspace(extent.x2_min, extent.x2_max, n2 + 1)
    x1, x2 = np.meshgrid(t1, t2, indexing="xy")
    return x1.ravel(), x2.ravel()


def _check_subdivisions(n1, n2, names):
    for value, name in zip((n1, n2), names):
        if isinstance(value, bool) or int(value) != value or value < 1:
            raise InvalidGeometryError(f"{name} must be a positive integer, got {value!r}")


def make_regular_observation_grid(extent, n1: int, n2: int, elevation: float = 0.0):
    """Regular ``(n1 + 1) x (n2 + 1)`` lattice of observation points.

    Parameters
    ----------
    extent : Rectangle or sequence of 4 floats
        Horizontal footprint; the lattice includes the corners.
    n1, n2 : int
        Number of intervals along ``x1`` and ``x2``.
    elevation : float
        Height ``x3`` shared by every point.

    Returns
    -------
    ObservationSet
        Points only, ``values`` is ``None``.
    """
    if not isinstance(extent, Rectangle):
        extent = Rectangle.from_bounds(extent)
    _check_subdivisions(n1, n2, ("N1", "N2"))
    if not np.isfinite(elevation):
        raise InvalidGeometryError(f"elevation must be finite, got {elevation!r}")
    x1, x2 = _lattice(extent, int(n1), int(n2))
    pts = np.column_stack([x1, x2, np.full(x1.size, float(elevation))])
    return ObservationSet(pts, None, (int(n1), int(n2)))


def make_continuation_grid(extent, m1: int, m2: int, depth: float) -> ContinuationGrid:
    """Continuation plane at ``x3 = -depth`` with equal-area nodes.

    >>> g = make_continuation_grid((-1, 1, -1, 1), 1, 1, 0.5)
    >>> g.nodes.shape, float(g.cell_areas[0])
    ((4, 3), 1.0)
    """
    if not isinstance(extent, Rectangle):
        extent = Rectangle.from_bounds(extent)
    _check_subdivisions(m1, m2, ("M1", "M2"))
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidDepthError(f"continuation depth must be > 0, got {depth!r}")
    m1, m2 = int(m1), int(m2)
    x1, x2 = _lattice(extent, m1, m2)
    nodes = np.column_stack([x1, x2, np.full(x1.size, -float(depth))])
    n = nodes.shape[0]
    areas = np.full(n, extent.area / n)
    return ContinuationGrid(extent, m1, m2, float(depth), _frozen(nodes), _frozen(areas))
