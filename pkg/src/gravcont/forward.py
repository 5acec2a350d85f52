"""Point-mass kernels, forward synthesis and the discretized system matrix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidGeometryError, ShapeError, SingularKernelError
from .model import DEFAULT_G, ContinuationGrid, LayerDensity, ObservationSet

#: Minimum admissible point-to-source distance and plane separation.
EPS_GEOM = 1e-9


def _as_vec3(v, name):
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ShapeError(f"{name} must be a 3-vector, got shape {a.shape}")
    return a


def kernel_newton(x, y, G: float = DEFAULT_G) -> float:
    """Newtonian kernel ``G / |x - y|``."""
    x, y = _as_vec3(x, "x"), _as_vec3(y, "y")
    r = float(np.linalg.norm(x - y))
    if r < EPS_GEOM:
        raise SingularKernelError(f"|x - y| = {r:g} below {EPS_GEOM:g}")
    return G / r


def kernel_vertical(x, y, G: float = DEFAULT_G) -> float:
    """Vertical-derivative kernel ``G (x3 - y3) / |x - y|^3``.

    Positive when ``x`` lies above ``y``, so that positive masses give
    positive anomalies.
    """
    x, y = _as_vec3(x, "x"), _as_vec3(y, "y")
    d = x - y
    r = float(np.linalg.norm(d))
    if r < EPS_GEOM:
        raise SingularKernelError(f"|x - y| = {r:g} below {EPS_GEOM:g}")
    return G * d[2] / r**3


def _vertical_kernel_matrix(points, nodes, G):
    # shape (n_points, n_nodes); each entry computed independently
    d = points[:, None, :] - nodes[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    return G * d[..., 2] / (r2 * np.sqrt(r2))


def synth_field(sources, points, G: float = DEFAULT_G) -> np.ndarray:
    """Vertical gravity of a set of point masses at the given points.

    Parameters
    ----------
    sources : sequence of PointSource
    points : array_like, shape (n, 3)
    G : float

    Returns
    -------
    ndarray, shape (n,)
        Superposition ``sum_s m_s * kernel_vertical(x, position_s)``,
        accumulated in source order.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must have shape (n, 3), got {pts.shape}")
    g = np.zeros(pts.shape[0])
    for s, src in enumerate(sources):
        pos = np.asarray(src.position, dtype=float)
        d = pts - pos
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        bad = np.flatnonzero(r < EPS_GEOM)
        if bad.size:
            i = int(bad[0])
            raise SingularKernelError(
                f"observation point {i} {tuple(pts[i])} coincides with source {s} "
                f"{src.position} (distance {r[i]:g})"
            )
        g += src.mass * (G * d[:, 2] / r**3)
    return g


@dataclass(frozen=True)
class KernelMatrix:
    """Dense system matrix; rows follow observation points, columns grid nodes."""

    entries: np.ndarray
    row_points: np.ndarray
    col_nodes: np.ndarray

    @property
    def shape(self):
        return self.entries.shape


def assemble_matrix(obs, grid: ContinuationGrid, G: float = DEFAULT_G) -> KernelMatrix:
    """Rectangle-rule discretization of the single-layer vertical-field operator.

    ``A[i, j] = kernel_vertical(x_i, y_j, G) * dS_j``.  ``obs`` may be an
    :class:`ObservationSet` or a bare ``(n, 3)`` array of points.
    """
    points = obs.points if isinstance(obs, ObservationSet) else np.asarray(obs, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"points must have shape (n, 3), got {points.shape}")
    gap = float(points[:, 2].min() - grid.nodes[:, 2].max())
    if gap < EPS_GEOM:
        raise InvalidGeometryError(
            f"continuation plane must lie strictly below every observation point "
            f"(minimum vertical gap {gap:g})"
        )
    A = _vertical_kernel_matrix(points, grid.nodes, G) * grid.cell_areas[None, :]
    A.setflags(write=False)
    return KernelMatrix(A, points, grid.nodes)


def apply_forward(A, density) -> np.ndarray:
    """Predicted observations ``A @ phi``."""
    mat = A.entries if isinstance(A, KernelMatrix) else np.asarray(A, dtype=float)
    phi = density.phi if isinstance(density, LayerDensity) else np.asarray(density, dtype=float)
    if mat.ndim != 2 or phi.shape != (mat.shape[1],):
        raise ShapeError(f"cannot apply matrix {mat.shape} to vector {phi.shape}")
    return mat @ phi
