"""Packet-level simulation of BBR-family and Cubic congestion control."""

from .cca import CCA_NAMES, CongestionControl, Cubic, make_cca
from .netsim import FlowConfig, RunResult, SimConfig, simulate

__all__ = [
    "CCA_NAMES",
    "CongestionControl",
    "Cubic",
    "FlowConfig",
    "RunResult",
    "SimConfig",
    "make_cca",
    "simulate",
]
__version__ = "0.1.0"
