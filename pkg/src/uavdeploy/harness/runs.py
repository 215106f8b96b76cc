"""Predictive and reactive hourly runs over the test days of a scenario."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..deploy import DemandGrid, DeployConfig, evaluate_assignment, grid_from_records, plan_deployment
from ..predictor import DemandModel, fit_dataset, predict
from ..traffic import TrafficDataset, ingest_csv, synthesize, train_test_split
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

MODES = ("predictive", "reactive")


@dataclass(frozen=True)
class EpochResult:
    day: int
    hour: int
    mode: str
    transmit_power_w: float
    mobility_energy_j: float
    objective: float
    efficiency: float
    shares: tuple = ()
    distances_m: tuple = ()
    converged: bool = True

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")


@dataclass(eq=False)
class Experiment:
    """Dataset, split and fitted model shared by every run of a scenario."""

    config: ScenarioConfig
    dataset: TrafficDataset
    train: TrafficDataset
    test: TrafficDataset
    model: DemandModel
    _grids: dict = field(default_factory=dict)
    _forecasts: dict = field(default_factory=dict)

    @property
    def test_days(self) -> list[int]:
        first = self.test.day_offset
        n = self.test.days if self.config.test_days is None else min(self.config.test_days, self.test.days)
        return list(range(first, first + n))

    def actual_grid(self, day: int, hour: int) -> DemandGrid:
        key = (day, hour)
        if key not in self._grids:
            t = self.test
            sel = t.hour_index == day * t.slots_per_day + hour
            self._grids[key] = grid_from_records(t.bs_xy[sel], t.bytes[sel], t.users[sel], self.config.region,
                                                 self.config.deploy.resolution, t.period_hours,
                                                 self.config.coverage_m)
        return self._grids[key]

    def forecast(self, hour: int):
        key = (hour, self.config.threshold)
        if key not in self._forecasts:
            self._forecasts[key] = predict(self.model.hours[hour], self.config.threshold, self.config.region,
                                           self.model.period_hours)
        return self._forecasts[key]


def load_dataset(config: ScenarioConfig) -> TrafficDataset:
    if config.synthetic is not None:
        return synthesize(config.synthetic, config.seed)
    return ingest_csv(config.data_csv, config.capacity_users, config.capacity_bytes, config.region)


def prepare(config: ScenarioConfig, dataset: Optional[TrafficDataset] = None) -> Experiment:
    data = load_dataset(config) if dataset is None else dataset
    train, test = train_test_split(data, config.train_fraction)
    model = fit_dataset(train, config.predictor, config.seed + 1)
    return Experiment(config, data, train, test, model)


def _epoch(day, hour, mode, p_c, p_t, deploy: DeployConfig, shares, dist, converged) -> EpochResult:
    p_term = p_c * (1.0 if deploy.horizon_s is None else deploy.horizon_s)
    total = p_term + p_t
    eff = p_term / total if total > 0 else 0.0
    return EpochResult(day, hour, mode, float(p_c), float(p_t), float(total), float(min(max(eff, 0.0), 1.0)),
                       tuple(float(s) for s in shares), tuple(float(d) for d in dist), bool(converged))


def _step(exp: Experiment, mode: str, fleet, day: int, hour: int):
    """Plan one hour from ``fleet``; returns the scored epoch and the fleet after moving."""
    cfg = exp.config
    channel = cfg.channel
    actual = exp.actual_grid(day, hour)
    demand = exp.forecast(hour) if mode == "predictive" else actual
    plan = plan_deployment(fleet, demand, channel, cfg.deploy)
    moved = plan.fleet_after(fleet)
    if mode == "predictive":
        if actual.has_demand:
            scored = evaluate_assignment(moved, plan.partition.assignment, actual, channel)
            p_c, shares = scored.total_power, scored.shares
        else:
            p_c, shares = 0.0, np.zeros(len(fleet))
    else:
        p_c, shares = plan.transmit_power_w, plan.partition.shares
    epoch = _epoch(day, hour, mode, p_c, plan.mobility_energy_j, cfg.deploy, shares, plan.distances_m,
                   plan.converged)
    return epoch, moved


def _run(exp: Experiment, mode: str, fleet, probes=()) -> dict:
    """Hourly runs along the trajectory of ``fleet``.

    Each bandwidth in ``probes`` is planned every hour from the same poses as
    the trajectory, which itself always advances with the fleet's own
    bandwidth. Results are keyed by bandwidth; ``None`` is the trajectory.
    """
    out = {None: []}
    out.update({float(b): [] for b in probes})
    for day in exp.test_days:
        for hour in range(exp.test.slots_per_day):
            epoch, moved = _step(exp, mode, fleet, day, hour)
            out[None].append(epoch)
            for b in probes:
                if all(u.bandwidth_hz == b for u in fleet):
                    out[float(b)].append(epoch)
                else:
                    probe = [replace(u, bandwidth_hz=float(b)) for u in fleet]
                    out[float(b)].append(_step(exp, mode, probe, day, hour)[0])
            fleet = moved
        log.info("%s day %d done", mode, day)
    return out


def run_predictive(config: ScenarioConfig, experiment: Optional[Experiment] = None, fleet=None) -> list[EpochResult]:
    """Deploy once per hour on the forecast; P_c is charged against the test day's actual demand."""
    exp = prepare(config) if experiment is None else experiment
    return _run(exp, "predictive", config.fleet_states() if fleet is None else fleet)[None]


def run_reactive(config: ScenarioConfig, experiment: Optional[Experiment] = None, fleet=None) -> list[EpochResult]:
    """Redeploy every hour on the demand actually observed, starting from the previous poses."""
    exp = prepare(config) if experiment is None else experiment
    return _run(exp, "reactive", config.fleet_states() if fleet is None else fleet)[None]


RUNNERS = {"predictive": run_predictive, "reactive": run_reactive}


def run_bandwidths(config: ScenarioConfig, mode: str, bandwidths, experiment: Optional[Experiment] = None,
                   fleet=None) -> dict:
    """Epochs per bandwidth, each hour re-planned from the poses the nominal fleet holds at that hour.

    Sharing the pose history keeps the comparison about bandwidth rather than
    about how far separate 24-hour trajectories have drifted apart.
    """
    if mode not in RUNNERS:
        raise ValueError(f"unknown mode {mode!r}")
    exp = prepare(config) if experiment is None else experiment
    res = _run(exp, mode, config.fleet_states() if fleet is None else fleet, tuple(bandwidths))
    return {b: res[float(b)] for b in bandwidths}


def with_config(exp: Experiment, config: ScenarioConfig) -> Experiment:
    """Same data and model under a different fleet or deployment config (grids rebuilt if resolution changes)."""
    keep = config.deploy.resolution == exp.config.deploy.resolution
    return replace(exp, config=config, _grids=exp._grids if keep else {}, _forecasts=exp._forecasts)
