"""Per-cell minimum transmit power of UAVs over a demand grid."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..channel import LN2, ChannelParams, GroundPoint, UavPose, mean_path_loss_linear
from .grid import DemandGrid


@dataclass(frozen=True)
class UavState:
    id: int
    pose: UavPose
    available_energy_j: float = 1.0
    bandwidth_hz: float = 10e6
    mobility_rate_j_per_m: float = 0.1

    def __post_init__(self):
        if self.available_energy_j <= 0 or self.bandwidth_hz <= 0 or self.mobility_rate_j_per_m < 0:
            raise ValueError(f"UAV {self.id}: energy and bandwidth must be positive, mobility rate non-negative")

    def moved_to(self, pose: UavPose) -> "UavState":
        return replace(self, pose=pose)

    def to_json(self) -> dict:
        return {"id": self.id, "pose": [self.pose.x_m, self.pose.y_m, self.pose.h_m],
                "available_energy_j": self.available_energy_j, "bandwidth_hz": self.bandwidth_hz,
                "mobility_rate_j_per_m": self.mobility_rate_j_per_m}

    @classmethod
    def from_json(cls, doc: dict) -> "UavState":
        return cls(int(doc["id"]), UavPose(*map(float, doc["pose"])), float(doc["available_energy_j"]),
                   float(doc["bandwidth_hz"]), float(doc["mobility_rate_j_per_m"]))


def poses_array(uavs: Sequence[UavState]) -> np.ndarray:
    return np.array([u.pose.as_array() for u in uavs], dtype=float).reshape(-1, 3)


def path_loss_matrix(channel: ChannelParams, poses: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n_cells, n_uavs) mean path loss (linear) from each UAV to each cell centre."""
    g = GroundPoint(centers[:, 0:1], centers[:, 1:2])
    pose = UavPose(poses[:, 0][None, :], poses[:, 1][None, :], poses[:, 2][None, :])
    return mean_path_loss_linear(channel, pose, g)


def power_prefactor(channel: ChannelParams, bandwidth_hz, n_users):
    """B n0 / (G N): multiplies path loss and (2^{beta N / B} - 1)."""
    return np.asarray(bandwidth_hz) * channel.noise_density_w_hz / (channel.antenna_gain_linear * np.asarray(n_users))


def rate_factor(rate_density, n_users, bandwidth_hz):
    """Z = 2^{beta N / B} - 1."""
    with np.errstate(over="ignore"):
        return np.expm1(np.asarray(rate_density) * np.asarray(n_users) / np.asarray(bandwidth_hz) * LN2)


def effective_users(users_assigned, rate_assigned):
    """Users served by a UAV; at least one whenever it carries demand."""
    return np.where(np.asarray(rate_assigned) > 0, np.maximum(users_assigned, 1.0), 1.0)


def cell_power_weights(channel: ChannelParams, grid: DemandGrid, cells, bandwidth_hz, n_users) -> np.ndarray:
    """Per-cell factor K_c such that the UAV's transmit power is sum_c K_c L(c)."""
    beta = grid.rate_density[cells]
    return power_prefactor(channel, bandwidth_hz, n_users) * rate_factor(beta, n_users, bandwidth_hz) * grid.cell_area


def transmit_power_integral(uav: UavState, cells, grid: DemandGrid, channel: ChannelParams, n_users=None) -> float:
    """Sum over ``cells`` of P_min * cell area for ``uav`` at its current pose.

    ``n_users`` defaults to the users found in ``cells`` (at least one).
    """
    cells = np.asarray(cells, dtype=int)
    if len(cells) == 0:
        return 0.0
    if n_users is None:
        n_users = float(effective_users(grid.users[cells].sum(), grid.cell_rate_bps[cells].sum()))
    if n_users < 1:
        raise ValueError("n_users must be at least 1")
    k = cell_power_weights(channel, grid, cells, uav.bandwidth_hz, n_users)
    c = grid.centers[cells]
    loss = mean_path_loss_linear(channel, uav.pose, GroundPoint(c[:, 0], c[:, 1]))
    return float(np.sum(k * loss))
