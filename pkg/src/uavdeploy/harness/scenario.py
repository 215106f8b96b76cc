"""Scenario configuration and the reference synthetic scenario."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..channel import PRESETS, ChannelParams, UavPose, preset
from ..deploy import DeployConfig, UavState
from ..predictor import PredictorSettings
from ..traffic import HourSpec, MixtureComponent, Region, SyntheticSpec

SCHEMA_VERSION = 1
AXES = ("uav_count", "bandwidth", "both")
BASELINES = ("reactive",)


@dataclass(frozen=True)
class FleetSpec:
    count: int = 9
    altitude_m: float = 100.0
    bandwidth_hz: float = 10e6
    available_energy_j: float = 1.0
    mobility_rate_j_per_m: float = 0.1
    initial_poses: Optional[tuple] = None  # ((x, y, h), ...); default is a lattice

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("fleet needs at least one UAV")
        if self.initial_poses is not None and len(self.initial_poses) != self.count:
            raise ValueError("initial_poses must list one pose per UAV")


def lattice_poses(region: Region, count: int, altitude_m: float) -> list[UavPose]:
    """Centres of a near-square lattice of ``count`` tiles, filled row by row."""
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    poses = []
    for k in range(count):
        r, c = divmod(k, cols)
        in_row = min(cols, count - r * cols)
        x = region.x_min + (c + 0.5) * region.width / in_row
        y = region.y_min + (r + 0.5) * region.height / rows
        poses.append(UavPose(x, y, altitude_m))
    return poses


@dataclass(frozen=True)
class ScenarioConfig:
    region: Region = Region(0.0, 0.0, 10_000.0, 10_000.0)
    channel_preset: str = "urban"
    channel_overrides: dict = field(default_factory=dict)
    fleet: FleetSpec = FleetSpec()
    predictor: PredictorSettings = PredictorSettings()
    threshold: float = 0.6
    deploy: DeployConfig = DeployConfig()
    seed: int = 0
    train_fraction: float = 7 / 8
    synthetic: Optional[SyntheticSpec] = None
    data_csv: Optional[str] = None
    capacity_users: float = 0.0  # N_m, applied to data_csv
    capacity_bytes: float = 0.0  # D_m
    test_days: Optional[int] = None  # evaluate only the first n test days
    coverage_m: float = 0.0  # footprint of a station when gridding observed demand
    sweep_axis: str = "both"
    uav_counts: tuple = (9, 16, 25, 36)
    bandwidths_hz: tuple = (1e6, 2e6, 5e6, 10e6, 20e6)
    baseline: str = "reactive"

    def __post_init__(self):
        if self.channel_preset not in PRESETS:
            raise ValueError(f"unknown channel preset {self.channel_preset!r}")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.sweep_axis not in AXES:
            raise ValueError(f"sweep_axis must be one of {AXES}")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        for name in ("uav_counts", "bandwidths_hz"):
            vals = list(getattr(self, name))
            if not vals or vals != sorted(vals) or len(set(vals)) != len(vals):
                raise ValueError(f"{name} must be non-empty and strictly ascending")
        if (self.synthetic is None) == (self.data_csv is None):
            raise ValueError("exactly one of synthetic and data_csv must be given")

    @property
    def channel(self) -> ChannelParams:
        return preset(self.channel_preset, **self.channel_overrides)

    def fleet_states(self, count: Optional[int] = None, bandwidth_hz: Optional[float] = None) -> list[UavState]:
        f = self.fleet
        count = f.count if count is None else count
        if f.initial_poses is not None and count == f.count:
            poses = [UavPose(*map(float, p)) for p in f.initial_poses]
        else:
            poses = lattice_poses(self.region, count, f.altitude_m)
        bw = f.bandwidth_hz if bandwidth_hz is None else bandwidth_hz
        return [UavState(i, p, f.available_energy_j, bw, f.mobility_rate_j_per_m) for i, p in enumerate(poses)]

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "region": self.region.to_list(),
            "channel_preset": self.channel_preset,
            "channel_overrides": dict(self.channel_overrides),
            "fleet": {**asdict(self.fleet),
                      "initial_poses": None if self.fleet.initial_poses is None
                      else [list(p) for p in self.fleet.initial_poses]},
            "predictor": self.predictor.to_json(),
            "threshold": self.threshold,
            "deploy": self.deploy.to_json(),
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "synthetic": None if self.synthetic is None else self.synthetic.to_json(),
            "data_csv": self.data_csv,
            "capacity_users": self.capacity_users,
            "capacity_bytes": self.capacity_bytes,
            "test_days": self.test_days,
            "coverage_m": self.coverage_m,
            "sweep_axis": self.sweep_axis,
            "uav_counts": list(self.uav_counts),
            "bandwidths_hz": list(self.bandwidths_hz),
            "baseline": self.baseline,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioConfig":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
        fleet = dict(doc.get("fleet", {}))
        if fleet.get("initial_poses") is not None:
            fleet["initial_poses"] = tuple(tuple(map(float, p)) for p in fleet["initial_poses"])
        kw = dict(
            region=Region.from_list(doc["region"]),
            channel_preset=doc.get("channel_preset", "urban"),
            channel_overrides=dict(doc.get("channel_overrides", {})),
            fleet=FleetSpec(**fleet),
            predictor=PredictorSettings(**doc.get("predictor", {})),
            deploy=DeployConfig.from_json(doc.get("deploy", {})),
            synthetic=None if doc.get("synthetic") is None else SyntheticSpec.from_json(doc["synthetic"]),
            uav_counts=tuple(int(v) for v in doc.get("uav_counts", (9, 16, 25, 36))),
            bandwidths_hz=tuple(float(v) for v in doc.get("bandwidths_hz", (1e6, 2e6, 5e6, 10e6, 20e6))),
        )
        for key in ("threshold", "seed", "train_fraction", "data_csv", "capacity_users", "capacity_bytes",
                    "test_days", "coverage_m", "sweep_axis", "baseline"):
            if key in doc:
                kw[key] = doc[key]
        return cls(**kw)

    def digest(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> ScenarioConfig:
    return ScenarioConfig.from_json(json.loads(Path(path).read_text()))


def rotating_hotspots(region: Region, days: int = 16, n_hotspots: int = 3, radius_frac: float = 0.35,
                      spread_frac: float = 0.09, turns_per_day: float = 0.25, bytes_per_hour: float = 7.2e15,
                      users_per_hour: float = 9.0, rel_std: float = 0.05, weight_concentration: float = 2.0,
                      sites_per_hour: int = 120) -> SyntheticSpec:
    """Hotspots on a circle that turns slowly over the day; hourly weights jitter by a Dirichlet draw."""
    cx, cy = region.center
    radius = radius_frac * min(region.width, region.height)
    sd = spread_frac * min(region.width, region.height)
    cov = ((sd * sd, 0.0), (0.0, sd * sd))
    hours = []
    for h in range(24):
        phase = 2 * np.pi * turns_per_day * h / 24
        diurnal = 0.75 + 0.25 * np.sin(2 * np.pi * (h - 8) / 24)
        comps = tuple(
            MixtureComponent(1.0 / n_hotspots,
                             (cx + radius * np.cos(phase + 2 * np.pi * k / n_hotspots),
                              cy + radius * np.sin(phase + 2 * np.pi * k / n_hotspots)), cov)
            for k in range(n_hotspots)
        )
        b = bytes_per_hour * diurnal
        u = users_per_hour * diurnal
        hours.append(HourSpec(comps, b, rel_std * b, u, rel_std * u))
    return SyntheticSpec(region, days, tuple(hours), sites_per_hour, weight_concentration)


def reference_scenario(**overrides) -> ScenarioConfig:
    """10 km square, 9 UAVs at 100 m, 10 MHz each, three rotating hotspots over 16 days.

    One held-out day is evaluated; observed stations cover 300 m.
    """
    region = Region(0.0, 0.0, 10_000.0, 10_000.0)
    cfg = ScenarioConfig(region=region, synthetic=rotating_hotspots(region), deploy=DeployConfig(mode="low_alt"),
                         test_days=1, coverage_m=300.0)
    return replace(cfg, **overrides)
