"""Change-point detection on causal structure estimated from multivariate event streams.

Event streams are cut into windows. For each window, the integrated cumulants
give a nonparametric estimate of the Hawkes kernel-integral matrix. Its signed
Laplacian is compared across windows with a Fréchet-variance scan in the
Log-Euclidean geometry of SPD matrices.
"""

from .changepoint import CpConfig, CpReport, detect_multiple, detect_single, tn_profile
from .cumulants import CumulantSet, estimate_C, estimate_cumulants, estimate_Kc, select_W
from .events import (
    EventFormatError,
    EventStream,
    PriceSeries,
    WindowSpec,
    load_events,
    load_prices,
    prices_to_events,
    save_events,
    slice_windows,
)
from .geometry import CausalSnapshot, build_snapshot, frechet_mean, frechet_variance, nearest_spd
from .nphc import FitError, KernelMatrix, NphcConfig, fit_R
from .pipeline import PipelineConfig, PipelineError, PipelineResult, run_pipeline
from .simulation import HawkesParams, Scenario, simulate, simulate_scenario

__all__ = [
    "CausalSnapshot",
    "CpConfig",
    "CpReport",
    "CumulantSet",
    "EventFormatError",
    "EventStream",
    "FitError",
    "HawkesParams",
    "KernelMatrix",
    "NphcConfig",
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "PriceSeries",
    "Scenario",
    "WindowSpec",
    "build_snapshot",
    "detect_multiple",
    "detect_single",
    "estimate_C",
    "estimate_Kc",
    "estimate_cumulants",
    "fit_R",
    "frechet_mean",
    "frechet_variance",
    "load_events",
    "load_prices",
    "nearest_spd",
    "prices_to_events",
    "run_pipeline",
    "save_events",
    "select_W",
    "simulate",
    "simulate_scenario",
    "slice_windows",
    "tn_profile",
]

__version__ = "0.1.0"
