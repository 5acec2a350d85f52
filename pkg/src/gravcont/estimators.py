"""scikit-learn style estimators wrapping the continuation routines.

Coordinates ``X`` are ``(n, 3)`` arrays of observation points and ``y`` the
vertical field measured there.  ``predict`` evaluates the fitted equivalent
layer (or estimated point sources) at new points above the layer.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_coordinates, check_coordinates_values, resolve_extent
from .continuation import (
    depth_grid,
    depth_scan,
    peel_depth_index,
    peel_sources,
    select_depth,
)
from .forward import assemble_matrix, synth_field
from .model import DEFAULT_G, LayerDensity, ObservationSet, PointSource, make_continuation_grid
from .nnls import NnlsOptions, nnls_solve


class _LayerMixin:
    def _options(self):
        return NnlsOptions(
            kkt_tolerance=self.kkt_tolerance,
            max_outer_iterations=self.max_iter,
            ls_solver=self.ls_solver,
            warm_start=self.warm_start,
        )

    def predict(self, X):
        """Vertical field of the fitted layer at the points ``X``."""
        check_is_fitted(self, "density_")
        X = check_coordinates(X)
        A = assemble_matrix(X, self.density_.grid, self.gravitational_constant)
        return A.entries @ self.density_.phi


class EquivalentLayer(_LayerMixin, RegressorMixin, BaseEstimator):
    """Non-negative single layer at a fixed depth.

    Parameters
    ----------
    depth : float
        Continuation depth; the layer sits at ``x3 = -depth``.
    extent : sequence of 4 floats, optional
        Layer footprint.  Defaults to the bounding box of the training points.
    shape : (int, int)
        Interval counts ``(M1, M2)`` of the layer lattice.
    gravitational_constant : float
    kkt_tolerance, max_iter, ls_solver, warm_start
        Passed to :class:`~gravcont.nnls.NnlsOptions`.

    Attributes
    ----------
    grid_ : ContinuationGrid
    density_ : LayerDensity
    residual_norm_ : float
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        depth=0.3,
        extent=None,
        shape=(40, 40),
        gravitational_constant=DEFAULT_G,
        kkt_tolerance=None,
        max_iter=None,
        ls_solver="qr",
        warm_start=True,
    ):
        self.depth = depth
        self.extent = extent
        self.shape = shape
        self.gravitational_constant = gravitational_constant
        self.kkt_tolerance = kkt_tolerance
        self.max_iter = max_iter
        self.ls_solver = ls_solver
        self.warm_start = warm_start

    def fit(self, X, y):
        X, y = check_coordinates_values(X, y)
        extent = resolve_extent(self.extent, X)
        m1, m2 = self.shape
        self.grid_ = make_continuation_grid(extent, m1, m2, self.depth)
        A = assemble_matrix(X, self.grid_, self.gravitational_constant)
        res = nnls_solve(A.entries, y, self._options())
        self.density_ = LayerDensity(self.grid_, res.phi)
        self.residual_norm_ = res.residual_norm
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        return self


class DownwardContinuation(_LayerMixin, RegressorMixin, BaseEstimator):
    """Equivalent layer with the depth chosen from a scan.

    With ``delta > 0`` the deepest depth whose residual stays within
    ``delta * sqrt(n) * max|y|`` is used.  With ``delta == 0`` the elbow of
    the residual curve is used, as in noise-free peeling.

    Attributes
    ----------
    scan_ : DepthScanResult
    depth_ : float or None
        None when no scanned depth qualified; ``predict`` then raises.
    threshold_ : float or None
    density_ : LayerDensity
    """

    def __init__(
        self,
        depths=None,
        delta=0.0,
        extent=None,
        shape=(40, 40),
        gravitational_constant=DEFAULT_G,
        kkt_tolerance=None,
        max_iter=None,
        ls_solver="qr",
        warm_start=True,
        n_jobs=None,
    ):
        self.depths = depths
        self.delta = delta
        self.extent = extent
        self.shape = shape
        self.gravitational_constant = gravitational_constant
        self.kkt_tolerance = kkt_tolerance
        self.max_iter = max_iter
        self.ls_solver = ls_solver
        self.warm_start = warm_start
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_coordinates_values(X, y)
        extent = resolve_extent(self.extent, X)
        depths = depth_grid(0.05, 0.8, 0.005) if self.depths is None else self.depths
        m1, m2 = self.shape
        obs = ObservationSet(X, y)
        self.scan_ = depth_scan(
            obs, extent, m1, m2, depths, self.gravitational_constant, self._options(), self.n_jobs
        )
        if self.delta > 0:
            sel = select_depth(self.scan_, self.delta, y)
            i, self.threshold_ = sel.index, sel.threshold
        else:
            i = peel_depth_index(self.scan_)
            self.threshold_ = None
        if i is None:
            self.depth_ = None
            return self
        self.depth_ = float(self.scan_.depths[i])
        self.density_ = self.scan_.solutions[i]
        self.residual_norm_ = float(self.scan_.residuals[i])
        return self


class SourcePeeler(BaseEstimator):
    """Point-source estimates by repeated continuation and subtraction.

    Attributes
    ----------
    sources_ : list of EstimatedSource
    """

    def __init__(
        self,
        extent=None,
        shape=(40, 40),
        depth_start=0.05,
        depth_stop=0.8,
        depth_step=0.005,
        max_rounds=5,
        stop_fraction=0.05,
        delta=0.0,
        gravitational_constant=DEFAULT_G,
        ls_solver="qr",
        n_jobs=None,
    ):
        self.extent = extent
        self.shape = shape
        self.depth_start = depth_start
        self.depth_stop = depth_stop
        self.depth_step = depth_step
        self.max_rounds = max_rounds
        self.stop_fraction = stop_fraction
        self.delta = delta
        self.gravitational_constant = gravitational_constant
        self.ls_solver = ls_solver
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_coordinates_values(X, y)
        extent = resolve_extent(self.extent, X)
        m1, m2 = self.shape
        self.sources_ = peel_sources(
            ObservationSet(X, y),
            extent,
            m1,
            m2,
            depth_step=self.depth_step,
            max_rounds=self.max_rounds,
            stop_fraction=self.stop_fraction,
            G=self.gravitational_constant,
            options=NnlsOptions(ls_solver=self.ls_solver, warm_start=True),
            depth_start=self.depth_start,
            depth_stop=self.depth_stop,
            delta=self.delta,
            n_jobs=self.n_jobs,
        )
        return self

    def predict(self, X):
        """Field of the recovered point sources at ``X``."""
        check_is_fitted(self, "sources_")
        X = check_coordinates(X)
        point_sources = [PointSource(s.mass, s.position) for s in self.sources_ if s.mass > 0]
        return synth_field(point_sources, X, self.gravitational_constant)
