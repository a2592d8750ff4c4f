"""Cartesian impedance control for torque-controlled serial manipulators.

The package parses URDF-style robot descriptions into kinematic chains,
computes kinematics and rigid-body dynamics, implements the impedance control
law with filtering, saturation and a torque rate limit, and simulates the
closed loop from JSON scenario files.
"""

from .controller import (
    CartesianImpedanceController,
    ControllerTargets,
    ImpedanceGains,
    JointTrajectory,
    SafetyLimits,
)
from .dynamics import JointState, forward_step, gravity_torques, inverse_dynamics, mass_matrix
from .errors import CartImpError
from .kinematics import CartesianPose, forward_kinematics, geometric_jacobian, pose_error
from .model import KinematicChain, RobotModel, extract_chain, load_robot_description, parse_robot_description
from .sim import load_scenario, run_scenario, steady_state_report

__version__ = "0.1.0"

__all__ = [
    "CartImpError",
    "CartesianImpedanceController",
    "CartesianPose",
    "ControllerTargets",
    "ImpedanceGains",
    "JointState",
    "JointTrajectory",
    "KinematicChain",
    "RobotModel",
    "SafetyLimits",
    "extract_chain",
    "forward_kinematics",
    "forward_step",
    "geometric_jacobian",
    "gravity_torques",
    "inverse_dynamics",
    "load_robot_description",
    "load_scenario",
    "mass_matrix",
    "parse_robot_description",
    "pose_error",
    "run_scenario",
    "steady_state_report",
]
