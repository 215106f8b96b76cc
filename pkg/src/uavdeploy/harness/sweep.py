"""Parameter sweeps over fleet size and bandwidth, and their CSV/JSON output."""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .runs import MODES, EpochResult, Experiment, RUNNERS, prepare, run_bandwidths, with_config
from .scenario import ScenarioConfig

FIGURES = {
    "fig1_power.csv": ("uav_count", ("uav_count", "mode", "total_pc_w", "avg_pc_per_uav_w", "mobility_j",
                                     "objective", "hours", "converged_fraction")),
    "fig2_efficiency.csv": ("uav_count", ("uav_count", "mode", "efficiency", "total_pc_w", "mobility_j")),
    "fig3_bandwidth.csv": ("bandwidth", ("bandwidth_hz", "uav_count", "mode", "total_pc_w", "avg_pc_per_uav_w",
                                         "mobility_j", "objective", "efficiency")),
}

COLUMNS = {
    "uav_count": "number of UAVs in the fleet",
    "bandwidth_hz": "bandwidth of every UAV (Hz)",
    "mode": "predictive (forecast-driven) or reactive (observed demand, hourly redeployment)",
    "total_pc_w": "fleet transmit power P_c, mean over evaluated hours (W)",
    "avg_pc_per_uav_w": "total_pc_w divided by the fleet size (W)",
    "mobility_j": "fleet mobility energy P_t, mean over evaluated hours (J)",
    "objective": "P_c + P_t, mean over evaluated hours",
    "efficiency": "P_c / (P_c + P_t), mean over hours with non-zero expenditure",
    "hours": "number of evaluated hours",
    "converged_fraction": "fraction of hours whose partition met the balance tolerance",
}


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    uav_count: int
    bandwidth_hz: float
    mode: str
    total_pc_w: float
    avg_pc_per_uav_w: float
    mobility_j: float
    objective: float
    efficiency: float
    hours: int
    converged_fraction: float


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)
    timings_s: dict = field(default_factory=dict)

    def select(self, axis: str, mode: Optional[str] = None) -> list[SweepRow]:
        return [r for r in self.rows if r.axis == axis and (mode is None or r.mode == mode)]

    def series(self, axis: str, mode: str, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.select(axis, mode)])

    def reductions(self, axis: str = "uav_count") -> dict:
        """Relative objective reduction of predictive over reactive, per sweep value."""
        pred = {r.value: r.objective for r in self.select(axis, "predictive")}
        react = {r.value: r.objective for r in self.select(axis, "reactive")}
        return {v: (1.0 - pred[v] / react[v]) if react[v] > 0 else 0.0 for v in pred if v in react}


def summarize(axis: str, value, count: int, bandwidth_hz: float, mode: str,
              epochs: Sequence[EpochResult]) -> SweepRow:
    pc = np.array([e.transmit_power_w for e in epochs])
    pt = np.array([e.mobility_energy_j for e in epochs])
    obj = np.array([e.objective for e in epochs])
    active = obj > 0
    eff = float(np.mean([e.efficiency for e, a in zip(epochs, active) if a])) if active.any() else 0.0
    n = max(len(epochs), 1)
    return SweepRow(axis, float(value), int(count), float(bandwidth_hz), mode, float(pc.sum() / n),
                    float(pc.sum() / n / count), float(pt.sum() / n), float(obj.sum() / n), eff, len(epochs),
                    float(np.mean([e.converged for e in epochs])) if epochs else 1.0)


def axis_values(config: ScenarioConfig, axis: str) -> tuple:
    return tuple(config.uav_counts) if axis == "uav_count" else tuple(config.bandwidths_hz)


def sweep(config: ScenarioConfig, axis: Optional[str] = None, values: Optional[Sequence] = None,
          modes: Sequence[str] = MODES, experiment: Optional[Experiment] = None) -> SweepTable:
    """One row per axis value per mode; every point reuses the same data, model and initial fleet layout.

    ``axis`` defaults to the config's sweep axis; ``"both"`` sweeps fleet size
    and bandwidth in turn.
    """
    axis = config.sweep_axis if axis is None else axis
    axes = ("uav_count", "bandwidth") if axis == "both" else (axis,)
    for a in axes:
        if a not in ("uav_count", "bandwidth"):
            raise SweepError(f"unknown sweep axis {a!r}")
    for m in modes:
        if m not in MODES:
            raise SweepError(f"unknown mode {m!r}")
    if not modes:
        raise SweepError("no modes to sweep")
    table = SweepTable()
    t0 = time.perf_counter()
    exp = prepare(config) if experiment is None else experiment
    table.timings_s["prepare"] = time.perf_counter() - t0
    for a in axes:
        vals = axis_values(config, a) if values is None else tuple(values)
        if not vals:
            raise SweepError(f"no values to sweep on {a}")
        t_axis = time.perf_counter()
        if a == "bandwidth":
            # one shared pose trajectory at the nominal bandwidth, re-planned at every probe
            res = {m: run_bandwidths(config, m, vals, exp) for m in modes}
            for v in vals:
                for m in modes:
                    table.rows.append(summarize(a, v, config.fleet.count, float(v), m, res[m][v]))
        else:
            for v in vals:
                cfg = replace(config, fleet=replace(config.fleet, count=int(v),
                                                    initial_poses=config.fleet.initial_poses
                                                    if int(v) == config.fleet.count else None))
                point = with_config(exp, cfg)
                for m in modes:
                    table.rows.append(summarize(a, v, int(v), config.fleet.bandwidth_hz, m,
                                                RUNNERS[m](cfg, point, cfg.fleet_states())))
        table.timings_s[a] = time.perf_counter() - t_axis
    table.timings_s["total"] = time.perf_counter() - t0
    return table


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _key(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def emit(table: SweepTable, out_dir, config: ScenarioConfig, extra: Optional[dict] = None) -> dict:
    """Write the figure CSVs present in ``table``, the column schema and a run manifest.

    CSV content depends only on the results, so a rerun with the same seed is
    byte-identical; timings go to the manifest only.
    """
    if not table.rows:
        raise SweepError("sweep produced no results")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SweepError(f"cannot create output directory {out}: {exc}") from exc
    written = {}
    for name, (axis, cols) in FIGURES.items():
        rows = table.select(axis)
        if not rows:
            continue
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(getattr(r, c)) for c in cols])
        written[name] = len(rows)
    schema = {name: {c: COLUMNS[c] for c in cols} for name, (_, cols) in FIGURES.items() if name in written}
    (out / "schema.json").write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_sha256": config.digest(),
        "seed": config.seed,
        "files": written,
        "timings_s": {k: round(v, 3) for k, v in table.timings_s.items()},
        "predictive_reduction": {
            a: {_key(k): v for k, v in table.reductions(a).items()} for a in ("uav_count", "bandwidth")
            if table.select(a)
        },
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def rows_to_json(table: SweepTable) -> list:
    return [asdict(r) for r in table.rows]
