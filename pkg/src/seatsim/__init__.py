"""Seated-occupant vibration simulator with exchangeable backrest contact models."""

__version__ = "0.1.0"

from .body import BodyModel, JointSpec, Marker, SegmentSpec, build_default_body
from .dynamics import SeatMotion, Trajectory, forward_dynamics, simulate, step
from .kinematics import ArticulatedSystem, SystemState, build_system

__all__ = [
    "ArticulatedSystem",
    "BodyModel",
    "JointSpec",
    "Marker",
    "SeatMotion",
    "SegmentSpec",
    "SystemState",
    "Trajectory",
    "build_default_body",
    "build_system",
    "forward_dynamics",
    "simulate",
    "step",
    "__version__",
]
