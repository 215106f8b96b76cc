"""Fairness-constrained partition and placement of a UAV fleet."""

from .grid import DemandGrid, DeployError, build_demand_grid, grid_from_records
from .partition import Partition, PartitionError, evaluate_assignment, partition_solve
from .placement import PlacementResult, closed_form_location, joint_location_optimize
from .planner import DeployConfig, DeploymentPlan, plan_deployment
from .power import UavState, transmit_power_integral

__all__ = [
    "DemandGrid", "DeployError", "build_demand_grid", "grid_from_records",
    "Partition", "PartitionError", "evaluate_assignment", "partition_solve",
    "PlacementResult", "closed_form_location", "joint_location_optimize",
    "DeployConfig", "DeploymentPlan", "plan_deployment",
    "UavState", "transmit_power_integral",
]
