"""Redundancy resolution for a 7-DOF arm along a prescribed end-effector path.

q7 is the redundancy parameter: a dynamic program over a (sample x q7) grid
picks the minimum-motion joint path, charging a fixed penalty M for every
point where the arm must stop and re-orient.
"""
from .dp_planner import InfeasiblePathError, LossParams, Plan, solve
from .kinematics import RobotModel, default_model, forward_kinematics, ik_param, load_robot_model
from .path_model import PathSpec, build_param_grid, sample_path

__all__ = [
    "InfeasiblePathError", "LossParams", "Plan", "solve", "RobotModel", "default_model",
    "forward_kinematics", "ik_param", "load_robot_model", "PathSpec", "build_param_grid",
    "sample_path",
]
