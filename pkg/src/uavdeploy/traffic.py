"""Hourly per-BS traffic records, aerial overflow, hourly slicing and synthesis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1
CSV_COLUMNS = ("day", "hour", "bs_x_m", "bs_y_m", "users", "bytes")


class TrafficDataError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate region {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Region":
        return cls(*map(float, values))


@dataclass(frozen=True)
class TrafficRecord:
    hour_index: int
    bs_x_m: float
    bs_y_m: float
    users: int
    bytes: float


@dataclass(frozen=True, eq=False)
class TrafficDataset:
    """Columnar store of hourly records covering ``days`` consecutive days.

    ``hour_index`` counts periods since the start of day 0 of the original
    recording; a split keeps the original indices and records the first day
    it holds in ``day_offset``.
    """

    hour_index: np.ndarray
    bs_xy: np.ndarray
    users: np.ndarray
    bytes: np.ndarray
    days: int
    region: Region
    period_hours: float = 1.0
    day_offset: int = 0
    ground_truth: Optional["SyntheticSpec"] = field(default=None, compare=False)

    def __post_init__(self):
        n = len(self.hour_index)
        if self.bs_xy.shape != (n, 2) or len(self.users) != n or len(self.bytes) != n:
            raise TrafficDataError("column lengths differ")
        if self.days < 1:
            raise TrafficDataError("dataset must span at least one day")
        if n and (np.any(self.users < 0) or np.any(self.bytes < 0)):
            raise TrafficDataError("users and bytes must be non-negative")
        first = self.day_offset * self.slots_per_day
        if n and (self.hour_index.min() < first or self.hour_index.max() >= first + self.days * self.slots_per_day):
            raise TrafficDataError("hour index outside the dataset's day span")
        if n and not np.all(self.region.contains(self.bs_xy[:, 0], self.bs_xy[:, 1])):
            raise TrafficDataError("base station outside the service region")
        for arr in (self.hour_index, self.bs_xy, self.users, self.bytes):
            arr.setflags(write=False)

    @property
    def slots_per_day(self) -> int:
        return int(round(24.0 / self.period_hours))

    @property
    def day(self) -> np.ndarray:
        return self.hour_index // self.slots_per_day

    @property
    def slot(self) -> np.ndarray:
        return self.hour_index % self.slots_per_day

    def __len__(self) -> int:
        return len(self.hour_index)

    @property
    def records(self) -> list[TrafficRecord]:
        return [TrafficRecord(int(t), float(x), float(y), int(u), float(b))
                for t, (x, y), u, b in zip(self.hour_index, self.bs_xy, self.users, self.bytes)]

    def select_days(self, first: int, count: int) -> "TrafficDataset":
        mask = (self.day >= first) & (self.day < first + count)
        return type(self)(self.hour_index[mask].copy(), self.bs_xy[mask].copy(), self.users[mask].copy(),
                          self.bytes[mask].copy(), count, self.region, self.period_hours, first,
                          self.ground_truth)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": type(self).__name__,
            "days": self.days,
            "day_offset": self.day_offset,
            "period_hours": self.period_hours,
            "region": self.region.to_list(),
            "hour_index": self.hour_index.tolist(),
            "bs_x_m": self.bs_xy[:, 0].tolist(),
            "bs_y_m": self.bs_xy[:, 1].tolist(),
            "users": self.users.tolist(),
            "bytes": self.bytes.tolist(),
            "ground_truth": None if self.ground_truth is None else self.ground_truth.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrafficDataset":
        _check_schema(doc)
        kind = AerialDataset if doc.get("kind") == "AerialDataset" else TrafficDataset
        gt = doc.get("ground_truth")
        return kind(
            np.asarray(doc["hour_index"], dtype=np.int64),
            np.column_stack([np.asarray(doc["bs_x_m"], float), np.asarray(doc["bs_y_m"], float)]).reshape(-1, 2),
            np.asarray(doc["users"], dtype=np.int64),
            np.asarray(doc["bytes"], dtype=float),
            int(doc["days"]),
            Region.from_list(doc["region"]),
            float(doc["period_hours"]),
            int(doc.get("day_offset", 0)),
            None if gt is None else SyntheticSpec.from_json(gt),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            spd = self.slots_per_day
            for t, (x, y), u, b in zip(self.hour_index, self.bs_xy, self.users, self.bytes):
                w.writerow([int(t) // spd, int(t) % spd, repr(float(x)), repr(float(y)), int(u), repr(float(b))])


class AerialDataset(TrafficDataset):
    """Traffic that ground stations cannot carry: ``max(0, N - N_m)``, ``max(0, D - D_m)``."""


def _check_schema(doc: dict) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise TrafficDataError(f"unsupported schema_version {version!r}")


def aerial_overflow(data: TrafficDataset, capacity_users: float, capacity_bytes: float) -> AerialDataset:
    if capacity_users < 0 or capacity_bytes < 0:
        raise ValueError("capacities must be non-negative")
    return AerialDataset(
        data.hour_index.copy(), data.bs_xy.copy(),
        np.maximum(0, data.users - capacity_users).astype(np.int64),
        np.maximum(0.0, data.bytes - capacity_bytes),
        data.days, data.region, data.period_hours, data.day_offset, data.ground_truth,
    )


def read_csv(path, region: Optional[Region] = None, period_hours: float = 1.0) -> TrafficDataset:
    """Parse ``day,hour,bs_x_m,bs_y_m,users,bytes`` rows (header required).

    Day numbers are re-based so that the earliest day becomes day 0. Without an
    explicit ``region`` the bounding box of the stations is used.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrafficDataError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise TrafficDataError(f"{path}:1: expected header {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise TrafficDataError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                day, hour = int(row[0]), int(row[1])
                x, y = float(row[2]), float(row[3])
                users, nbytes = int(row[4]), float(row[5])
            except ValueError as exc:
                raise TrafficDataError(f"{path}:{lineno}: {exc}") from None
            spd = int(round(24.0 / period_hours))
            if not 0 <= hour < spd:
                raise TrafficDataError(f"{path}:{lineno}: hour {hour} outside [0, {spd})")
            if users < 0 or nbytes < 0 or not (math.isfinite(x) and math.isfinite(y) and math.isfinite(nbytes)):
                raise TrafficDataError(f"{path}:{lineno}: negative or non-finite value")
            rows.append((day, hour, x, y, users, nbytes))
    if not rows:
        raise TrafficDataError(f"{path}: no records")
    arr_day = np.array([r[0] for r in rows], dtype=np.int64)
    first = arr_day.min()
    spd = int(round(24.0 / period_hours))
    hour_index = (arr_day - first) * spd + np.array([r[1] for r in rows], dtype=np.int64)
    xy = np.array([(r[2], r[3]) for r in rows], dtype=float)
    if region is None:
        region = Region(xy[:, 0].min(), xy[:, 1].min(), xy[:, 0].max(), xy[:, 1].max()) \
            if np.ptp(xy[:, 0]) > 0 and np.ptp(xy[:, 1]) > 0 else \
            Region(xy[:, 0].min() - 0.5, xy[:, 1].min() - 0.5, xy[:, 0].max() + 0.5, xy[:, 1].max() + 0.5)
    return TrafficDataset(hour_index, xy, np.array([r[4] for r in rows], dtype=np.int64),
                          np.array([r[5] for r in rows], dtype=float),
                          int(arr_day.max() - first + 1), region, period_hours)


def ingest_csv(path, capacity_users: float, capacity_bytes: float, region: Optional[Region] = None,
               period_hours: float = 1.0) -> AerialDataset:
    return aerial_overflow(read_csv(path, region, period_hours), capacity_users, capacity_bytes)


@dataclass(frozen=True, eq=False)
class HourlySlice:
    """All samples of one hour-of-day, pooled over days."""

    hour_of_day: int
    points: np.ndarray
    weights: np.ndarray
    day: np.ndarray
    day_totals: np.ndarray

    @property
    def no_demand(self) -> bool:
        return not np.any(self.weights > 0)

    @property
    def days(self) -> int:
        return len(self.day_totals)


def hourly_slices(data: TrafficDataset, field: str = "bytes") -> list[HourlySlice]:
    """Split ``data`` by hour of day. ``field`` selects ``"bytes"`` or ``"users"`` as weight."""
    if len(data) == 0:
        raise TrafficDataError("dataset is empty")
    values = np.asarray(getattr(data, field), dtype=float)
    slots = data.slot
    days = data.day - data.day_offset
    out = []
    for h in range(data.slots_per_day):
        m = slots == h
        totals = np.bincount(days[m], weights=values[m], minlength=data.days)[: data.days]
        out.append(HourlySlice(h, data.bs_xy[m], values[m], days[m], totals))
    return out


def spatial_density(s: HourlySlice, day: int) -> tuple[np.ndarray, np.ndarray]:
    """Locations and normalised weights (summing to one) of one day in a slice."""
    m = s.day == day
    w = s.weights[m]
    total = w.sum()
    if not total > 0:
        raise TrafficDataError(f"no aerial demand at hour {s.hour_of_day} on day {day}")
    return s.points[m], w / total


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class HourSpec:
    components: tuple[MixtureComponent, ...]
    bytes_mean: float
    bytes_std: float
    users_mean: float
    users_std: float

    def __post_init__(self):
        if not self.components:
            raise ValueError("hour needs at least one component")
        w = np.array([c.weight for c in self.components])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"component weights must be non-negative and sum to 1, got {w.sum()!r}")
        if self.bytes_mean < 0 or self.bytes_std < 0 or self.users_mean < 0 or self.users_std < 0:
            raise ValueError("demand moments must be non-negative")


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground truth for a synthetic aerial dataset.

    ``weight_concentration`` makes the mixture weights of each (day, hour)
    a Dirichlet draw centred on the nominal weights; ``None`` keeps them fixed.
    """

    region: Region
    days: int
    hours: tuple[HourSpec, ...]
    sites_per_hour: int = 150
    weight_concentration: Optional[float] = None
    period_hours: float = 1.0

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be positive")
        if len(self.hours) != int(round(24.0 / self.period_hours)):
            raise ValueError("one HourSpec per slot of the day is required")
        if self.sites_per_hour < 1:
            raise ValueError("sites_per_hour must be positive")
        if self.weight_concentration is not None and self.weight_concentration <= 0:
            raise ValueError("weight_concentration must be positive")

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "region": self.region.to_list(),
            "days": self.days,
            "sites_per_hour": self.sites_per_hour,
            "weight_concentration": self.weight_concentration,
            "period_hours": self.period_hours,
            "hours": [
                {
                    "bytes_mean": h.bytes_mean, "bytes_std": h.bytes_std,
                    "users_mean": h.users_mean, "users_std": h.users_std,
                    "components": [{"weight": c.weight, "mean": list(c.mean), "cov": [list(r) for r in c.cov]}
                                   for c in h.components],
                }
                for h in self.hours
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticSpec":
        _check_schema(doc)
        hours = tuple(
            HourSpec(
                tuple(MixtureComponent(float(c["weight"]), tuple(map(float, c["mean"])),
                                       tuple(tuple(map(float, r)) for r in c["cov"]))
                      for c in h["components"]),
                float(h["bytes_mean"]), float(h["bytes_std"]), float(h["users_mean"]), float(h["users_std"]),
            )
            for h in doc["hours"]
        )
        return cls(Region.from_list(doc["region"]), int(doc["days"]), hours, int(doc.get("sites_per_hour", 150)),
                   doc.get("weight_concentration"), float(doc.get("period_hours", 1.0)))


def synthesize(spec: SyntheticSpec, seed: int) -> AerialDataset:
    """Draw ``spec.days`` days of aerial records; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    region = spec.region
    n = spec.sites_per_hour
    spd = len(spec.hours)
    hour_index, xy, users, nbytes = [], [], [], []
    for d in range(spec.days):
        for h, hs in enumerate(spec.hours):
            weights = np.array([c.weight for c in hs.components])
            if spec.weight_concentration is not None and len(weights) > 1:
                alpha = np.maximum(spec.weight_concentration * weights, 1e-12)
                weights = rng.dirichlet(alpha)
            total_bytes = max(0.0, rng.normal(hs.bytes_mean, hs.bytes_std))
            total_users = max(0, int(round(rng.normal(hs.users_mean, hs.users_std))))
            comp = rng.choice(len(weights), size=n, p=weights / weights.sum())
            pts = np.empty((n, 2))
            for k, c in enumerate(hs.components):
                sel = comp == k
                if sel.any():
                    pts[sel] = rng.multivariate_normal(c.mean, c.cov, size=int(sel.sum()), method="eigh")
            pts[:, 0] = np.clip(pts[:, 0], region.x_min, region.x_max)
            pts[:, 1] = np.clip(pts[:, 1], region.y_min, region.y_max)
            hour_index.append(np.full(n, d * spd + h, dtype=np.int64))
            xy.append(pts)
            users.append(rng.multinomial(total_users, np.full(n, 1.0 / n)))
            nbytes.append(np.full(n, total_bytes / n))
    return AerialDataset(np.concatenate(hour_index), np.concatenate(xy), np.concatenate(users).astype(np.int64),
                         np.concatenate(nbytes), spec.days, region, spec.period_hours, 0, spec)


def train_test_split(data: TrafficDataset, train_fraction: float) -> tuple[TrafficDataset, TrafficDataset]:
    """Chronological split by whole days; the training part gets ceil(fraction * M) days."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    if data.days < 2:
        raise TrafficDataError("need at least two days to split")
    n_train = min(data.days - 1, math.ceil(train_fraction * data.days - 1e-12))
    first = data.day_offset
    return data.select_days(first, n_train), data.select_days(first + n_train, data.days - n_train)


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj.to_json(), indent=1, sort_keys=True))
