"""Simulator and controller for a parallel wire-driven monopod hopper."""

from .geometry import GeometryModel, check_workspace, muscle_jacobian, wire_lengths, wire_velocities
from .params import JointState, RobotParams, SimState, WireVector, default_params, validate_params
from .tension import TensionSolution, kkt_residual, solve_tensions

__version__ = "0.1.0"

__all__ = [
    "GeometryModel", "JointState", "RobotParams", "SimState", "TensionSolution", "WireVector",
    "check_workspace", "default_params", "kkt_residual", "muscle_jacobian", "solve_tensions",
    "validate_params", "wire_lengths", "wire_velocities",
]
