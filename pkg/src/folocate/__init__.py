"""Locate forced-oscillation sources in grids with synchronous generators
and grid-following inverters by sparse regression on a trigonometric
library."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .desk import desk_model
from .model import (
    CouplingMatrix,
    IbrDevice,
    ModelError,
    SynchronousGenerator,
    SystemModel,
    build_coupling,
    load_model,
    state_layout,
)
from .pipeline import PipelineConfig, PipelineError, export_report, ingest_csv, run_pipeline
from .simulator import FoInjection, Scenario, load_scenario, simulate
from .sindy import adaptive_threshold, build_library, extract_zeta, locate_source, stls
from .window import MeasurementWindow

__all__ = [
    "__version__",
    "BACKEND",
    "desk_model",
    "CouplingMatrix",
    "IbrDevice",
    "ModelError",
    "SynchronousGenerator",
    "SystemModel",
    "build_coupling",
    "load_model",
    "state_layout",
    "PipelineConfig",
    "PipelineError",
    "export_report",
    "ingest_csv",
    "run_pipeline",
    "FoInjection",
    "Scenario",
    "load_scenario",
    "simulate",
    "adaptive_threshold",
    "build_library",
    "extract_zeta",
    "locate_source",
    "stls",
    "MeasurementWindow",
]
