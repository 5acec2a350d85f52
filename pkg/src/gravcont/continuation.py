"""Downward continuation driver: noise, depth scans, depth selection, peeling."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed, effective_n_jobs
from scipy import ndimage

from .exceptions import DataError, GravcontError, ShapeError, UsageError
from .forward import apply_forward, assemble_matrix, synth_field
from .model import (
    DEFAULT_G,
    LayerDensity,
    NoiseSpec,
    ObservationSet,
    PointSource,
    Rectangle,
    make_continuation_grid,
)
from .nnls import NnlsOptions, nnls_solve

logger = logging.getLogger(__name__)

#: Noise-free peeling stops a scan once ``chi`` stays above this fraction of
#: the data peak; by then the residual curve is past its elbow.
ELBOW_STOP_RTOL = 0.1
#: Nodes below this fraction of the peak density are ignored by clustering.
CLUSTER_FRACTION = 0.1


def add_noise(f, spec: NoiseSpec) -> np.ndarray:
    """Perturb data with Gaussian noise scaled by the data peak.

    ``f_i + delta * max|f| * sigma_i`` with ``sigma_i`` standard normal.
    The normals come from ``numpy.random.Generator(PCG64(seed))`` using
    ``standard_normal``, so a given seed gives the same stream on every
    platform.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ShapeError(f"data must be a non-empty vector, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise DataError("data contain non-finite entries")
    if spec.delta == 0:
        return f.copy()
    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    sigma = rng.standard_normal(f.size)
    return f + spec.delta * np.max(np.abs(f)) * sigma


def residual(A, density, f) -> float:
    """Euclidean misfit ``||A phi - f||``."""
    f = np.asarray(f, dtype=float)
    pred = apply_forward(A, density)
    if pred.shape != f.shape:
        raise ShapeError(f"prediction {pred.shape} does not match data {f.shape}")
    return float(np.linalg.norm(pred - f))


def discrepancy_threshold(delta: float, f_tilde) -> float:
    """Residual level ``delta * sqrt(n) * max|f_tilde|`` for ``n`` data points."""
    f_tilde = np.asarray(f_tilde, dtype=float)
    return float(delta * np.sqrt(f_tilde.size) * np.max(np.abs(f_tilde)))


@dataclass(frozen=True)
class DepthScanResult:
    """Per-depth solves, sorted by depth.

    Depths whose solve raised are left out of the parallel lists and
    recorded in ``failures`` as ``(depth, message)`` pairs.
    """

    depths: np.ndarray
    residuals: np.ndarray
    solutions: tuple[LayerDensity, ...]
    converged_flags: np.ndarray
    iterations: np.ndarray
    failures: tuple[tuple[float, str], ...] = ()

    def __len__(self):
        return len(self.depths)

    def slope(self) -> np.ndarray:
        """Finite-difference ``d chi / d h`` on the scanned depths."""
        if len(self) < 2:
            return np.zeros(len(self))
        return np.gradient(self.residuals, self.depths)


@dataclass(frozen=True)
class DepthSelection:
    """Outcome of the discrepancy rule; ``depth`` is None if nothing qualified."""

    depth: float | None
    threshold: float
    residual: float | None = None
    index: int | None = None

    @property
    def admissible(self) -> bool:
        return self.depth is not None


@dataclass(frozen=True)
class EstimatedSource:
    mass: float
    position: tuple[float, float, float]
    provenance: int
    residual_after: float = float("nan")

    def __post_init__(self):
        if not self.mass >= 0:
            raise DataError(f"estimated mass must be >= 0, got {self.mass!r}")


def depth_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive depth ladder ``start, start + step, ... <= stop``.

    Values are rounded to 12 decimals so that e.g. 0.32 comes out as the
    literal 0.32 rather than an accumulation of ``step``.
    """
    if not (start > 0 and step > 0 and stop >= start):
        raise UsageError(f"bad depth range start={start}, stop={stop}, step={step}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def _solve_chain(obs, extent, m1, m2, depths, G, opts, chain, stop_above=None, patience=3):
    out = []
    support = None
    above = 0
    for h in depths:
        if above >= patience:
            break
        try:
            grid = make_continuation_grid(extent, m1, m2, float(h))
            A = assemble_matrix(obs, grid, G)
            res = nnls_solve(A.entries, obs.values, opts, initial_support=support)
        except GravcontError as exc:
            out.append(exc)
            support = None
            continue
        out.append((LayerDensity(grid, res.phi), res.residual_norm, res.converged, res.iterations))
        if stop_above is not None:
            above = above + 1 if res.residual_norm > stop_above else 0
        if chain:
            support = np.flatnonzero(res.phi > 0)
    return out


def depth_scan(
    obs: ObservationSet,
    extent,
    m1: int,
    m2: int,
    depths,
    G: float = DEFAULT_G,
    options: NnlsOptions | None = None,
    n_jobs=None,
    chain: bool = True,
    stop_above: float | None = None,
) -> DepthScanResult:
    """Solve the continuation problem at each depth.

    Parameters
    ----------
    obs : ObservationSet
        Must carry values; the fit is against ``obs.values``.
    extent : Rectangle or 4-sequence
        Horizontal footprint of the continuation plane.
    m1, m2 : int
        Interval counts of the continuation lattice.
    depths : sequence of float
        Positive, distinct depths in any order; the result is sorted.
    G : float
    options : NnlsOptions, optional
        Defaults to ``NnlsOptions(warm_start=True)``.
    n_jobs : int, optional
        Worker count for :class:`joblib.Parallel`.  The sorted depths are
        split into ``n_jobs`` contiguous blocks.  None runs serially.
    chain : bool
        Start each solve from the support found at the next shallower depth
        of the same block.  The minimizer does not depend on the starting
        support when the system matrix has full column rank, so this changes
        the answer only at roundoff level while saving most active-set
        iterations.
    stop_above : float, optional
        Skip the rest of a block once three consecutive depths have a
        residual above this level.  Meant for callers that only look at
        depths below a residual cap and expect ``chi`` to keep growing
        once it has crossed it.  Skipped depths are simply absent from the
        result.

    Returns
    -------
    DepthScanResult
        Depths whose setup or solve raised are reported in ``failures``.
    """
    if obs.values is None:
        raise UsageError("observation set has no values to fit")
    depths = np.asarray(depths, dtype=float).ravel()
    if depths.size == 0:
        raise UsageError("depth list is empty")
    if not np.all(depths > 0):
        raise UsageError("depths must be positive")
    depths = np.sort(depths, kind="stable")
    if np.any(np.diff(depths) <= 0):
        raise UsageError("depths must be distinct")
    if not isinstance(extent, Rectangle):
        extent = Rectangle.from_bounds(extent)
    opts = options or NnlsOptions(warm_start=True)

    if n_jobs is None or n_jobs == 1:
        outcomes = _solve_chain(obs, extent, m1, m2, depths, G, opts, chain, stop_above)
    else:
        n_blocks = min(effective_n_jobs(n_jobs), depths.size)
        blocks = np.array_split(depths, n_blocks)
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_solve_chain)(obs, extent, m1, m2, b, G, opts, chain, stop_above)
            for b in blocks
            if b.size
        )
        outcomes = [o for part in parts for o in part]

    kept_h, res, sols, conv, its, failures = [], [], [], [], [], []
    for h, out in zip(depths, outcomes):
        if isinstance(out, Exception):
            logger.warning("depth %g failed: %s", h, out)
            failures.append((float(h), str(out)))
            continue
        density, rnorm, ok, n_it = out
        kept_h.append(float(h))
        res.append(rnorm)
        sols.append(density)
        conv.append(ok)
        its.append(n_it)
    return DepthScanResult(
        depths=np.array(kept_h),
        residuals=np.array(res),
        solutions=tuple(sols),
        converged_flags=np.array(conv, dtype=bool),
        iterations=np.array(its, dtype=int),
        failures=tuple(failures),
    )


def select_depth(scan: DepthScanResult, delta: float, f_tilde) -> DepthSelection:
    """Deepest scanned depth whose residual is within the noise level.

    The admissible set is ``chi(h) <= delta * sqrt(n) * max|f_tilde|``;
    the largest admissible ``h`` is returned.
    """
    if len(scan) == 0:
        raise UsageError("cannot select a depth from an empty scan")
    if not delta >= 0:
        raise UsageError(f"noise level must be >= 0, got {delta!r}")
    tau = discrepancy_threshold(delta, f_tilde)
    ok = np.flatnonzero(scan.residuals <= tau)
    if ok.size == 0:
        return DepthSelection(None, tau)
    i = int(ok[np.argmax(scan.depths[ok])])
    return DepthSelection(float(scan.depths[i]), tau, float(scan.residuals[i]), i)


def dominant_cluster(density: LayerDensity, fraction: float = CLUSTER_FRACTION):
    """Heaviest 8-connected group of nodes with ``phi >= fraction * max phi``.

    Returns ``(mass, (x1, x2))`` with the mass-weighted centroid, or
    ``(0.0, None)`` for an all-zero density.
    """
    clusters = mass_clusters(density, fraction)
    if not clusters:
        return 0.0, None
    return clusters[0]


def mass_clusters(density: LayerDensity, fraction: float = CLUSTER_FRACTION):
    """All clusters as ``(mass, (x1, x2))`` pairs, heaviest first."""
    grid = density.grid
    phi = density.phi
    peak = float(phi.max()) if phi.size else 0.0
    if peak <= 0:
        return []
    shape = (grid.m2 + 1, grid.m1 + 1)  # rows follow x2, x1 fastest
    mask = (phi >= fraction * peak).reshape(shape)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    labels = labels.ravel()
    masses = density.masses
    out = []
    for lab in range(1, count + 1):
        sel = labels == lab
        m = float(masses[sel].sum())
        if m <= 0:
            continue
        c = masses[sel] @ grid.nodes[sel, :2] / m
        out.append((m, (float(c[0]), float(c[1]))))
    out.sort(key=lambda t: -t[0])
    return out


def peel_depth_index(scan: DepthScanResult, threshold=None):
    """Index of the scan depth used for one peeling round, or None.

    With a noise threshold this is the discrepancy rule: the deepest depth
    with ``chi(h) <= threshold``.  Without one it is the elbow of the
    residual curve, the depth at which the finite-difference slope of
    ``chi`` increases the most.  The residual stays small and flat while
    the layer lies above every remaining source and climbs steeply once it
    passes the shallowest one; residue from imperfect earlier subtractions
    only tilts the flat part.
    """
    if len(scan) == 0:
        return None
    chi, h = scan.residuals, scan.depths
    if threshold is not None:
        ok = np.flatnonzero(chi <= threshold)
        return int(ok[np.argmax(h[ok])]) if ok.size else None
    if len(scan) < 3:
        return None
    slope = np.diff(chi) / np.diff(h)
    turn = np.diff(slope)
    k = int(np.argmax(turn))
    return k + 1 if turn[k] > 0 else None


def peel_sources(
    obs: ObservationSet,
    extent,
    m1: int,
    m2: int,
    depth_step: float = 0.005,
    max_rounds: int = 5,
    stop_fraction: float = 0.05,
    G: float = DEFAULT_G,
    options: NnlsOptions | None = None,
    depth_start: float | None = None,
    depth_stop: float = 0.8,
    delta: float = 0.0,
    n_jobs=None,
    early_stop: bool = True,
) -> list[EstimatedSource]:
    """Estimate point sources one at a time by continuation and subtraction.

    Each round scans depths on the current working data, picks a depth,
    takes the heaviest cluster of the layer density there as a point
    source, and removes its field from the working data.  Rounds stop once
    the working data norm drops below ``stop_fraction`` of the original, a
    round yields no mass, no depth qualifies, or ``max_rounds`` is reached.

    The depth of each round comes from :func:`peel_depth_index`: the
    discrepancy rule when ``delta > 0``, else the elbow of ``chi(h)``.
    With ``early_stop`` each scan ends once the residual has stayed above
    the noise threshold (noisy data) or ``ELBOW_STOP_RTOL * max|data|``
    (noise-free data) for three consecutive depths; see :func:`depth_scan`.
    """
    if obs.values is None:
        raise UsageError("observation set has no values to peel")
    if max_rounds < 1:
        raise UsageError(f"max_rounds must be >= 1, got {max_rounds!r}")
    if not 0 < stop_fraction < 1:
        raise UsageError(f"stop_fraction must be in (0, 1), got {stop_fraction!r}")
    if depth_start is None:
        depth_start = depth_step
    depths = depth_grid(depth_start, depth_stop, depth_step)
    original = np.asarray(obs.values, dtype=float)
    norm0 = float(np.linalg.norm(original))
    if norm0 == 0:
        return []
    # the noise level is a property of the original data, not of what is left
    threshold = discrepancy_threshold(delta, original) if delta > 0 else None
    work = original.copy()
    found = []
    for rnd in range(1, max_rounds + 1):
        if np.linalg.norm(work) < stop_fraction * norm0:
            break
        cap = threshold if threshold is not None else ELBOW_STOP_RTOL * float(np.max(np.abs(work)))
        scan = depth_scan(
            obs.with_values(work), extent, m1, m2, depths, G, options, n_jobs,
            stop_above=cap if early_stop else None,
        )
        i = peel_depth_index(scan, threshold)
        if i is None:
            logger.info("round %d: no admissible depth", rnd)
            break
        h = float(scan.depths[i])
        mass, xy = dominant_cluster(scan.solutions[i])
        if mass <= 0:
            break
        src = PointSource(mass, (xy[0], xy[1], -h))
        work = work - synth_field([src], obs.points, G)
        rest = float(np.linalg.norm(work))
        logger.info("round %d: mass %.6g at %s, remaining norm %.3g", rnd, mass, src.position, rest)
        found.append(EstimatedSource(mass, src.position, rnd, rest))
    return found
