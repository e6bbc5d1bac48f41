"""Desk-scale simulation of force-feedback teleoperation with imperfect force estimates.

Main entry points::

    from teleopsim import SimConfig, run, build_closed_loop, preset, TissueParams
    log = run(SimConfig(popc_enabled=True), build_closed_loop("z"), preset("vs"), TissueParams())
"""

from .analysis import (MetricsReport, StiffnessCurve, closed_loop_metrics, detect_holds,
                       detrend_spectrum, rms_effort, rmse, stiffness_curve)
from .engine import SimConfig, TickPlan, make_schedule, replay_plant, run
from .environment import PsmState, TissueParams, initialize_grasp, make_materials, tissue_force
from .estimation import (Behavioral, ConfigError, DynamicSurrogate, GroundTruth, LowPass2,
                         Neural, preset)
from .neural import Dataset, Mlp, TrainConfig, generate_dataset, refit, train
from .passivity import PassivityModule, PassivityWindow, PoPcConfig
from .plant import DivergenceError, HumanSsmParams, PlantState
from .runlog import COLUMNS, RunLog
from .trajectory import (MinJerkSegment, TrajectoryProtocol, build_brief_protocol,
                         build_closed_loop, build_demo_protocol, build_open_loop, sample)

__version__ = "0.1.0"

__all__ = [
    "Behavioral", "COLUMNS", "ConfigError", "Dataset", "DivergenceError", "DynamicSurrogate",
    "GroundTruth", "HumanSsmParams", "LowPass2", "MetricsReport", "MinJerkSegment", "Mlp",
    "Neural", "PassivityModule", "PassivityWindow", "PlantState", "PoPcConfig", "PsmState",
    "RunLog", "SimConfig", "StiffnessCurve", "TickPlan", "TissueParams", "TrainConfig",
    "TrajectoryProtocol", "build_brief_protocol", "build_closed_loop", "build_demo_protocol",
    "build_open_loop", "closed_loop_metrics", "detect_holds", "detrend_spectrum",
    "generate_dataset", "initialize_grasp", "make_materials", "make_schedule", "preset",
    "refit", "replay_plant", "rms_effort", "rmse", "run", "sample", "stiffness_curve",
    "tissue_force", "train",
]
