"""Two-step deployment: fair partition, then per-UAV placement."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..channel import ChannelParams, UavPose
from .grid import DemandGrid, DeployError, build_demand_grid
from .partition import Partition, PartitionError, evaluate_assignment, partition_solve
from .placement import MODES, joint_location_optimize
from .power import UavState, poses_array


@dataclass(frozen=True)
class DeployConfig:
    mode: str = "high_alt"
    alternation_rounds: int = 1
    alternation_tol: float = 1e-6
    partition_tol: float = 0.01
    max_partition_rounds: int = 300
    h_min: float = 50.0
    h_max: float = 500.0
    horizon_s: float | None = None  # None adds watts and joules as they are
    resolution: int = 32
    strict_partition: bool = False  # raise instead of using the best unbalanced partition

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown placement mode {self.mode!r}")
        if self.alternation_rounds < 1:
            raise ValueError("alternation_rounds must be at least 1")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("altitude bounds must satisfy 0 < h_min <= h_max")
        if self.horizon_s is not None and self.horizon_s <= 0:
            raise ValueError("horizon_s must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "DeployConfig":
        return cls(**doc)


@dataclass(eq=False)
class DeploymentPlan:
    partition: Partition
    placements: tuple  # UavPose per UAV, same order as partition.uav_ids
    transmit_power_w: float  # P_c at the new poses
    mobility_energy_j: float  # P_t
    per_uav_power_w: np.ndarray
    distances_m: np.ndarray
    horizon_s: float | None = None
    objective_trace: list = field(default_factory=list)

    @property
    def transmit_term(self) -> float:
        """P_c as it enters the objective (energy over ``horizon_s`` when set)."""
        return self.transmit_power_w * (1.0 if self.horizon_s is None else self.horizon_s)

    @property
    def objective(self) -> float:
        return self.transmit_term + self.mobility_energy_j

    @property
    def converged(self) -> bool:
        return self.partition.converged

    def fleet_after(self, uavs: Sequence[UavState]) -> list[UavState]:
        return [u.moved_to(p) for u, p in zip(uavs, self.placements)]

    def to_json(self) -> dict:
        return {
            "partition": self.partition.to_json(),
            "placements": [[p.x_m, p.y_m, p.h_m] for p in self.placements],
            "transmit_power_w": self.transmit_power_w, "mobility_energy_j": self.mobility_energy_j,
            "horizon_s": self.horizon_s, "objective": self.objective,
            "per_uav_power_w": self.per_uav_power_w.tolist(), "distances_m": self.distances_m.tolist(),
            "objective_trace": list(self.objective_trace),
        }


def _solve_partition(uavs, grid, channel, config: DeployConfig) -> Partition:
    try:
        return partition_solve(uavs, grid, channel, tol=config.partition_tol, max_rounds=config.max_partition_rounds)
    except PartitionError as exc:
        if config.strict_partition:
            raise
        return exc.best


def _idle_plan(uavs, grid, channel, config) -> DeploymentPlan:
    nearest = np.argmin(np.linalg.norm(grid.centers[:, None, :] - poses_array(uavs)[None, :, :2], axis=2), axis=1)
    part = evaluate_assignment(uavs, nearest, grid, channel, tol=config.partition_tol)
    n = len(uavs)
    return DeploymentPlan(part, tuple(u.pose for u in uavs), 0.0, 0.0, np.zeros(n), np.zeros(n), config.horizon_s, [0.0])


def plan_deployment(uavs: Sequence[UavState], demand, channel: ChannelParams,
                    config: DeployConfig = DeployConfig()) -> DeploymentPlan:
    """Partition the region at the current poses, then place every UAV over its cell.

    ``demand`` is a :class:`DemandGrid` or a forecast (discretised at
    ``config.resolution``). Extra alternation rounds re-partition at the new
    poses; the best plan seen is kept, so the objective never increases.
    Mobility is always measured from the poses passed in.
    """
    uavs = list(uavs)
    if not uavs:
        raise DeployError("fleet is empty")
    if isinstance(demand, DemandGrid):
        grid = demand
    else:
        if demand.no_demand:
            grid = DemandGrid(demand.region, config.resolution, config.resolution,
                              np.zeros(config.resolution ** 2), np.zeros(config.resolution ** 2))
        else:
            grid = build_demand_grid(demand, demand.region, config.resolution)
    if not grid.has_demand:
        return _idle_plan(uavs, grid, channel, config)

    origin = poses_array(uavs)
    h_bounds = (config.h_min, config.h_max)
    best: DeploymentPlan | None = None
    trace: list = []
    poses = origin
    for _ in range(config.alternation_rounds):
        movers = [u.moved_to(UavPose(*p)) for u, p in zip(uavs, poses)]
        part = _solve_partition(movers, grid, channel, config)
        new_poses = []
        for i, u in enumerate(uavs):
            cells = part.cells_of(i)
            res = joint_location_optimize(u, cells, grid, channel, mode=config.mode, n_users=part.n_users[i],
                                          h_bounds=h_bounds, horizon_s=config.horizon_s)
            new_poses.append(res.pose)
        placed = np.array([p.as_array() for p in new_poses])
        scored = evaluate_assignment(uavs, part.assignment, grid, channel, poses=placed)
        dist = np.linalg.norm(placed - origin, axis=1)
        gammas = np.array([u.mobility_rate_j_per_m for u in uavs])
        plan = DeploymentPlan(part, tuple(new_poses), scored.total_power, float(gammas @ dist),
                              scored.transmit_power, dist, config.horizon_s)
        improvement = np.inf if best is None else best.objective - plan.objective
        if best is None or plan.objective < best.objective:
            best = plan
        trace.append(best.objective)
        if improvement <= config.alternation_tol * max(abs(best.objective), 1e-300):
            break
        poses = placed
    best.objective_trace = trace
    return best
