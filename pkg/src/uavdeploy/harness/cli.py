"""Command line entry point: synth, fit, plan, run and sweep.

Failures print one JSON line ``{"error": <kind>, "message": <text>}`` on
stderr and exit non-zero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from ..deploy import DeployError, plan_deployment
from ..deploy.power import UavState
from ..predictor import DemandModel, FitError, fit_dataset, predict
from ..traffic import TrafficDataError, train_test_split
from .runs import MODES, RUNNERS, load_dataset, prepare
from .scenario import ScenarioConfig, load_config, reference_scenario
from .sweep import SweepError, emit, sweep

log = logging.getLogger("uavdeploy")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, mode: bool = False) -> None:
    p.add_argument("--config", help="scenario JSON (default: built-in reference scenario)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--resolution", type=int, help="demand grid cells per side")
    p.add_argument("--threshold", type=float, help="CDF level of the forecast total, in (0, 1)")
    if mode:
        p.add_argument("--mode", choices=MODES + ("both",), default="both")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uavdeploy", description="Predictive UAV base-station deployment experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    _common(sub.add_parser("synth", help="write the scenario's synthetic dataset as CSV"))
    _common(sub.add_parser("fit", help="fit the hourly demand models on the training days"))
    p = sub.add_parser("plan", help="deployment plan for one hour of the forecast")
    _common(p)
    p.add_argument("--model", help="model JSON from `fit` (default: fit now)")
    p.add_argument("--hour", type=int, default=0)
    p.add_argument("--fleet", help="JSON list of UAV states (default: the config's fleet)")
    _common(sub.add_parser("run", help="hourly runs over the test days"), mode=True)
    p = sub.add_parser("sweep", help="fleet-size and bandwidth sweeps with figure CSVs")
    _common(p, mode=True)
    p.add_argument("--axis", choices=("uav_count", "bandwidth", "both"))
    return parser


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else reference_scenario()
    if args.resolution is not None:
        if args.resolution < 8:
            raise UsageError("--resolution must be at least 8")
        cfg = replace(cfg, deploy=replace(cfg.deploy, resolution=args.resolution))
    return cfg.with_overrides(seed=args.seed, threshold=args.threshold)


def _modes(args) -> tuple:
    return MODES if args.mode == "both" else (args.mode,)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> dict:
    cfg = _config(args)
    if cfg.synthetic is None:
        raise UsageError("config has no synthetic dataset spec")
    path = _out(args) / "traffic.csv"
    data = load_dataset(cfg)
    data.to_csv(path)
    return {"records": len(data), "path": str(path)}


def cmd_fit(args) -> dict:
    cfg = _config(args)
    exp = prepare(cfg)
    path = _out(args) / "model.json"
    path.write_text(json.dumps(exp.model.to_json(), indent=1, sort_keys=True) + "\n")
    return {"hours": len(exp.model.hours), "train_days": exp.train.days, "path": str(path)}


def cmd_plan(args) -> dict:
    cfg = _config(args)
    if args.model:
        model = DemandModel.from_json(json.loads(Path(args.model).read_text()))
    else:
        data = load_dataset(cfg)
        model = fit_dataset(train_test_split(data, cfg.train_fraction)[0], cfg.predictor, cfg.seed + 1)
    if not 0 <= args.hour < len(model.hours):
        raise UsageError(f"--hour must lie in [0, {len(model.hours)})")
    if args.fleet:
        fleet = [UavState.from_json(d) for d in json.loads(Path(args.fleet).read_text())]
    else:
        fleet = cfg.fleet_states()
    forecast = predict(model.hours[args.hour], cfg.threshold, cfg.region, model.period_hours)
    plan = plan_deployment(fleet, forecast, cfg.channel, cfg.deploy)
    path = _out(args) / "plan.json"
    path.write_text(json.dumps(plan.to_json(), indent=1, sort_keys=True) + "\n")
    return {"objective": plan.objective, "converged": plan.converged, "path": str(path)}


EPOCH_COLUMNS = ("day", "hour", "mode", "transmit_power_w", "mobility_energy_j", "objective", "efficiency",
                 "converged")


def cmd_run(args) -> dict:
    cfg = _config(args)
    t0 = time.perf_counter()
    exp = prepare(cfg)
    out = _out(args)
    timings = {"prepare": time.perf_counter() - t0}
    path = out / "epochs.csv"
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS)
        for mode in _modes(args):
            t = time.perf_counter()
            for e in RUNNERS[mode](cfg, exp):
                w.writerow([e.day, e.hour, e.mode, repr(e.transmit_power_w), repr(e.mobility_energy_j),
                            repr(e.objective), repr(e.efficiency), int(e.converged)])
                n += 1
            timings[mode] = time.perf_counter() - t
    manifest = {"config_sha256": cfg.digest(), "seed": cfg.seed, "rows": n,
                "timings_s": {k: round(v, 3) for k, v in timings.items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"rows": n, "path": str(path)}


def cmd_sweep(args) -> dict:
    cfg = _config(args)
    table = sweep(cfg, axis=args.axis, modes=_modes(args))
    manifest = emit(table, args.out, cfg)
    return {"files": manifest["files"], "predictive_reduction": manifest["predictive_reduction"]}


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "plan": cmd_plan, "run": cmd_run, "sweep": cmd_sweep}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail("io", str(exc), 1)
    except (TrafficDataError, FitError, DeployError, SweepError, ValueError, KeyError, TypeError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps(result, sort_keys=True))
    return 0
