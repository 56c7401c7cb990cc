"""Spiking-network and classical demappers for a simulated PAM4 IM/DD link."""
from .classical import ClassicalDemapper, fit_classical
from .config import RunConfig, SweepSchedule
from .signal_chain import LinkParams, make_dataset, simulate_link
from .snn import SnnModel, SnnParams

__all__ = [
    "ClassicalDemapper",
    "LinkParams",
    "RunConfig",
    "SnnModel",
    "SnnParams",
    "SweepSchedule",
    "fit_classical",
    "make_dataset",
    "simulate_link",
]
