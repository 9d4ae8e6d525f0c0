"""Photovoltaic MPPT simulation: single-diode panel, buck converter, P&O
controllers with an optional neural feedforward, and a scenario engine."""

from .buck import BuckParams, BuckState
from .controllers import ControllerKind, ControllerState, Measurement
from .errors import PvMpptError
from .neural import MlpNetwork, estimate_mpp, lm_train
from .pv_model import STC, EnvConditions, OperatingPoint, PanelParams, default_panel, mpp_oracle
from .sim import ScenarioProfile, SimConfig, compute_metrics, run_comparison, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BuckParams",
    "BuckState",
    "ControllerKind",
    "ControllerState",
    "EnvConditions",
    "Measurement",
    "MlpNetwork",
    "OperatingPoint",
    "PanelParams",
    "PvMpptError",
    "STC",
    "ScenarioProfile",
    "SimConfig",
    "compute_metrics",
    "default_panel",
    "estimate_mpp",
    "lm_train",
    "mpp_oracle",
    "run_comparison",
    "run_scenario",
]
