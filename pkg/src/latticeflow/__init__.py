"""Hybrid quantum-classical normalizing flows for lattice phi^4 theory."""

__version__ = "0.1.0"

from .lattice import ActionParams, Ensemble, FieldConfig, action, action_gradient, moments, two_point
from .flow import FlowModel
from .mcmc import McmcConfig, autocorrelation_time, run_chain
from .training import TrainConfig, fit_flow, sample, train
from .estimator import FlowSampler

__all__ = [
    "ActionParams",
    "Ensemble",
    "FieldConfig",
    "FlowModel",
    "FlowSampler",
    "McmcConfig",
    "TrainConfig",
    "action",
    "action_gradient",
    "autocorrelation_time",
    "fit_flow",
    "moments",
    "run_chain",
    "sample",
    "train",
    "two_point",
]
