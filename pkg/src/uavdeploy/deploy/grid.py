"""Discretised demand over the service region."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from ..traffic import Region
from ..units import bytes_per_period_to_bps


class DeployError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DemandGrid:
    """Regular nx-by-ny grid; cell arrays are flattened with index ``ix * ny + iy``.

    ``rate_density`` is the minimum rate requirement per unit area (bit/s/m^2)
    averaged over each cell, ``users`` the expected number of aerial users in it.
    """

    region: Region
    nx: int
    ny: int
    rate_density: np.ndarray
    users: np.ndarray

    def __post_init__(self):
        n = self.nx * self.ny
        if self.rate_density.shape != (n,) or self.users.shape != (n,):
            raise ValueError("cell arrays must have nx * ny entries")
        if np.any(self.rate_density < 0) or np.any(self.users < 0):
            raise ValueError("demand must be non-negative")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.region.area / self.n_cells

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(self.region.x_min, self.region.x_max, self.nx + 1)

    @property
    def y_edges(self) -> np.ndarray:
        return np.linspace(self.region.y_min, self.region.y_max, self.ny + 1)

    @cached_property
    def centers(self) -> np.ndarray:
        xe, ye = self.x_edges, self.y_edges
        cx, cy = np.meshgrid(0.5 * (xe[1:] + xe[:-1]), 0.5 * (ye[1:] + ye[:-1]), indexing="ij")
        return np.column_stack([cx.ravel(), cy.ravel()])

    @property
    def cell_rate_bps(self) -> np.ndarray:
        return self.rate_density * self.cell_area

    @property
    def total_rate_bps(self) -> float:
        return float(self.cell_rate_bps.sum())

    @property
    def total_users(self) -> float:
        return float(self.users.sum())

    @property
    def has_demand(self) -> bool:
        return bool(np.any(self.rate_density > 0))

    def cell_of(self, x, y) -> np.ndarray:
        r = self.region
        ix = np.clip(((np.asarray(x) - r.x_min) / r.width * self.nx).astype(int), 0, self.nx - 1)
        iy = np.clip(((np.asarray(y) - r.y_min) / r.height * self.ny).astype(int), 0, self.ny - 1)
        return ix * self.ny + iy

    def to_json(self) -> dict:
        return {"region": self.region.to_list(), "nx": self.nx, "ny": self.ny,
                "rate_density": self.rate_density.tolist(), "users": self.users.tolist()}


def _shape(resolution) -> tuple[int, int]:
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 8 or ny < 8:
        raise ValueError("grid resolution must be at least 8 x 8")
    return int(nx), int(ny)


def build_demand_grid(forecast, region: Region, resolution=32) -> DemandGrid:
    """Cell-averaged rate density D g / T and user counts N f |cell| of a forecast.

    Cell masses are exact rectangle probabilities of the mixture, renormalised
    to the region, so grid totals equal the forecast totals.
    """
    nx, ny = _shape(resolution)
    if forecast.no_demand:
        raise DeployError("forecast has no demand anywhere in the region")
    xe = np.linspace(region.x_min, region.x_max, nx + 1)
    ye = np.linspace(region.y_min, region.y_max, ny + 1)
    g_mass = forecast.cell_masses(xe, ye).ravel()
    if not g_mass.sum() > 0:
        raise DeployError("forecast density vanishes over the region")
    f_mass = forecast.cell_masses(xe, ye, users=True).ravel()
    area = region.area / (nx * ny)
    rate = bytes_per_period_to_bps(forecast.total_bytes, forecast.period_hours)
    return DemandGrid(region, nx, ny, rate * g_mass / area, forecast.total_users * f_mass)


def _axis_masses(centres, sd, edges):
    """(n_points, n_cells) probability of N(centre, sd^2) per interval, renormalised to [edges[0], edges[-1]]."""
    cdf = ndtr((edges[None, :] - centres[:, None]) / sd)
    m = np.diff(cdf, axis=1)
    return m / m.sum(axis=1, keepdims=True)


def grid_from_records(points, n_bytes, users, region: Region, resolution=32, period_hours: float = 1.0,
                      coverage_m: float = 0.0) -> DemandGrid:
    """Bin observed per-station demand of one period into grid cells.

    With ``coverage_m > 0`` each station's demand is spread over an isotropic
    Gaussian footprint of that standard deviation (truncated to the region),
    otherwise it all falls in the station's cell.
    """
    nx, ny = _shape(resolution)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    rate = bytes_per_period_to_bps(np.asarray(n_bytes, dtype=float), period_hours)
    users = np.asarray(users, dtype=float)
    area = region.area / (nx * ny)
    tmp = DemandGrid(region, nx, ny, np.zeros(nx * ny), np.zeros(nx * ny))
    if coverage_m > 0 and len(points):
        mx = _axis_masses(points[:, 0], coverage_m, tmp.x_edges)
        my = _axis_masses(points[:, 1], coverage_m, tmp.y_edges)
        r = (mx.T * rate) @ my
        u = (mx.T * users) @ my
        return DemandGrid(region, nx, ny, r.ravel() / area, u.ravel())
    idx = tmp.cell_of(points[:, 0], points[:, 1])
    r = np.bincount(idx, weights=rate, minlength=nx * ny)
    u = np.bincount(idx, weights=users, minlength=nx * ny)
    return DemandGrid(region, nx, ny, r / area, u)
