"""Downward continuation of gravity anomalies with a non-negative equivalent layer."""

__version__ = "0.1.0"

from .continuation import (
    DepthScanResult,
    DepthSelection,
    EstimatedSource,
    add_noise,
    depth_grid,
    depth_scan,
    peel_sources,
    residual,
    select_depth,
)
from .forward import (
    KernelMatrix,
    apply_forward,
    assemble_matrix,
    kernel_newton,
    kernel_vertical,
    synth_field,
)
from .model import (
    ContinuationGrid,
    LayerDensity,
    NoiseSpec,
    ObservationSet,
    PointSource,
    Rectangle,
    make_continuation_grid,
    make_regular_observation_grid,
)
from .nnls import NnlsOptions, NnlsResult, brute_force_nnls, kkt_check, nnls_solve
