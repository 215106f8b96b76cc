"""Air-to-ground channel: path loss, LOS probability, capacity and minimum power.

Every function is pure and broadcasts over numpy arrays, so a pose or a ground
point may carry array-valued coordinates (e.g. all cell centres of a grid).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .units import db_to_linear, dbm_to_watt

SPEED_OF_LIGHT = 299_792_458.0
LN2 = np.log(2.0)


@dataclass(frozen=True)
class ChannelParams:
    carrier_frequency_hz: float = 5e9
    light_speed_m_s: float = SPEED_OF_LIGHT
    env_a: float = 9.61
    env_b: float = 0.16
    excess_loss_los_db_mean: float = 1.0
    excess_loss_los_db_std: float = 0.0
    excess_loss_nlos_db_mean: float = 20.0
    excess_loss_nlos_db_std: float = 0.0
    noise_density_dbm_hz: float = -174.0
    antenna_gain_db: float = 10.0

    def __post_init__(self):
        if self.carrier_frequency_hz <= 0 or self.light_speed_m_s <= 0:
            raise ValueError("carrier frequency and light speed must be positive")
        if self.env_a <= 0 or self.env_b <= 0:
            raise ValueError("environment constants a, b must be positive")
        if self.excess_loss_los_db_std < 0 or self.excess_loss_nlos_db_std < 0:
            raise ValueError("excess-loss standard deviations must be non-negative")
        if self.excess_loss_nlos_db_mean < self.excess_loss_los_db_mean:
            raise ValueError("NLOS mean excess loss must not be below the LOS one")

    @property
    def noise_density_w_hz(self) -> float:
        return float(dbm_to_watt(self.noise_density_dbm_hz))

    @property
    def antenna_gain_linear(self) -> float:
        return float(db_to_linear(self.antenna_gain_db))

    @property
    def free_space_coefficient(self) -> float:
        """(4 pi f_c / c)^2, so that the free-space loss is this times d^2."""
        return (4.0 * np.pi * self.carrier_frequency_hz / self.light_speed_m_s) ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelParams":
        return cls(**data)


PRESETS = {
    "urban": ChannelParams(),
    "suburban": ChannelParams(env_a=4.88, env_b=0.43,
                              excess_loss_los_db_mean=0.1, excess_loss_nlos_db_mean=21.0),
    "dense_urban": ChannelParams(env_a=12.08, env_b=0.11,
                                 excess_loss_los_db_mean=1.6, excess_loss_nlos_db_mean=23.0),
}


def preset(name: str, **overrides) -> ChannelParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown channel preset {name!r}; known: {sorted(PRESETS)}") from None
    return ChannelParams(**{**base.to_dict(), **overrides})


@dataclass(frozen=True)
class UavPose:
    x_m: float
    y_m: float
    h_m: float

    def __post_init__(self):
        if not np.all(np.asarray(self.h_m) > 0):
            raise ValueError("UAV altitude must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m, self.h_m], dtype=float)


@dataclass(frozen=True)
class GroundPoint:
    x_m: float
    y_m: float


@dataclass(frozen=True)
class LinkBudget:
    distance_m: float
    elevation_rad: float
    p_los: float
    mean_path_loss_linear: float

    @property
    def p_nlos(self) -> float:
        return 1.0 - self.p_los


def slant_distance(uav: UavPose, g: GroundPoint):
    dx = np.asarray(g.x_m, dtype=float) - uav.x_m
    dy = np.asarray(g.y_m, dtype=float) - uav.y_m
    return np.sqrt(dx * dx + dy * dy + np.asarray(uav.h_m, dtype=float) ** 2)


def elevation_rad(uav: UavPose, g: GroundPoint):
    d = slant_distance(uav, g)
    return np.arcsin(np.clip(uav.h_m / d, -1.0, 1.0))


def free_space_loss_db(params: ChannelParams, distance_m):
    return 20.0 * np.log10(4.0 * np.pi * params.carrier_frequency_hz
                           * np.asarray(distance_m, dtype=float) / params.light_speed_m_s)


def path_loss_db(params: ChannelParams, uav: UavPose, g: GroundPoint, excess_db=0.0):
    return free_space_loss_db(params, slant_distance(uav, g)) + excess_db


def los_probability_from_elevation(params: ChannelParams, theta_rad):
    theta_deg = np.degrees(theta_rad)
    return 1.0 / (1.0 + params.env_a * np.exp(-params.env_b * (theta_deg - params.env_a)))


def los_probability(params: ChannelParams, uav: UavPose, g: GroundPoint):
    return los_probability_from_elevation(params, elevation_rad(uav, g))


def mean_path_loss_linear(params: ChannelParams, uav: UavPose, g: GroundPoint, p_los=None):
    """Average of the LOS and NLOS losses (linear scale) weighted by their probabilities.

    The random excess losses are replaced by their means. Pass ``p_los`` to
    override the elevation-based LOS probability.
    """
    d = slant_distance(uav, g)
    if p_los is None:
        p_los = los_probability_from_elevation(params, np.arcsin(np.clip(uav.h_m / d, -1, 1)))
    fs = params.free_space_coefficient * d * d
    l_los = fs * db_to_linear(params.excess_loss_los_db_mean)
    l_nlos = fs * db_to_linear(params.excess_loss_nlos_db_mean)
    return p_los * l_los + (1.0 - p_los) * l_nlos


def sample_path_loss_linear(params: ChannelParams, uav: UavPose, g: GroundPoint, rng):
    """One Monte-Carlo draw of the path loss: LOS/NLOS state plus Gaussian excess loss."""
    d = slant_distance(uav, g)
    p_los = los_probability_from_elevation(params, np.arcsin(np.clip(uav.h_m / d, -1, 1)))
    shape = np.shape(d)
    is_los = rng.random(shape) < p_los
    excess = np.where(
        is_los,
        rng.normal(params.excess_loss_los_db_mean, params.excess_loss_los_db_std, shape),
        rng.normal(params.excess_loss_nlos_db_mean, params.excess_loss_nlos_db_std, shape),
    )
    return params.free_space_coefficient * d * d * db_to_linear(excess)


def link_budget(params: ChannelParams, uav: UavPose, g: GroundPoint) -> LinkBudget:
    d = slant_distance(uav, g)
    theta = np.arcsin(np.clip(uav.h_m / d, -1, 1))
    p = los_probability_from_elevation(params, theta)
    return LinkBudget(distance_m=d, elevation_rad=theta, p_los=p,
                      mean_path_loss_linear=mean_path_loss_linear(params, uav, g, p_los=p))


def downlink_capacity(params: ChannelParams, bandwidth_hz, tx_power_w, mean_pl_linear):
    """Shannon rate (bit/s) of one FDMA channel of width ``bandwidth_hz``."""
    bandwidth_hz = np.asarray(bandwidth_hz, dtype=float)
    if np.any(bandwidth_hz <= 0):
        raise ValueError("bandwidth must be positive")
    snr = (np.asarray(tx_power_w, dtype=float) * params.antenna_gain_linear
           / (np.asarray(mean_pl_linear, dtype=float) * bandwidth_hz * params.noise_density_w_hz))
    return bandwidth_hz * np.log1p(snr) / LN2


def min_transmit_power(params: ChannelParams, total_bw_hz, n_users, rate_demand_bps, mean_pl_linear):
    """Smallest power meeting ``rate_demand_bps`` on a channel of width B/N.

    Inverse of :func:`downlink_capacity` with ``bandwidth_hz = total_bw_hz / n_users``.
    """
    total_bw_hz = np.asarray(total_bw_hz, dtype=float)
    n_users = np.asarray(n_users, dtype=float)
    if np.any(n_users < 1):
        raise ValueError("n_users must be at least 1")
    if np.any(total_bw_hz <= 0):
        raise ValueError("total bandwidth must be positive")
    exponent = np.asarray(rate_demand_bps, dtype=float) * n_users / total_bw_hz
    prefactor = (total_bw_hz * params.noise_density_w_hz * np.asarray(mean_pl_linear, dtype=float)
                 / (params.antenna_gain_linear * n_users))
    with np.errstate(over="ignore"):
        return prefactor * np.expm1(exponent * LN2)
