"""Per-UAV placement over its aerial cell.

The objective for one UAV is ``scale * P_c(x, y, h) + gamma * |p - p0|``:
transmit power to its cells plus the straight-line mobility energy from its
current pose. ``scale`` is 1 for the raw power + energy sum, or a horizon in
seconds to turn power into energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..channel import ChannelParams, UavPose, db_to_linear
from ..traffic import Region
from .grid import DemandGrid, DeployError
from .power import UavState, cell_power_weights, effective_users, rate_factor

MODES = ("high_alt", "low_alt", "exact")
_DEG = 180.0 / np.pi


def closed_form_location(cells, grid: DemandGrid, bandwidth_hz: float, n_users: float) -> tuple[float, float]:
    """Z-weighted centroid of the cells, Z = 2^{beta N / B} - 1 (LOS-dominant optimum without mobility cost)."""
    cells = np.asarray(cells, dtype=int)
    if len(cells) == 0:
        raise ValueError("aerial cell is empty")
    c = grid.centers[cells]
    z = rate_factor(grid.rate_density[cells], n_users, bandwidth_hz)
    total = z.sum()
    if not total > 0:
        x, y = c.mean(axis=0)
    else:
        x, y = (z[:, None] * c).sum(axis=0) / total
    return float(x), float(y)


def loss_and_gradient(channel: ChannelParams, pos, centers, mode: str = "exact"):
    """Mean path loss from ``pos`` = (x, y, h) to each centre, and its gradient (m, 3).

    ``high_alt`` takes the LOS probability as one, ``low_alt`` and ``exact``
    use the elevation-dependent mixture.
    """
    dx = pos[0] - centers[:, 0]
    dy = pos[1] - centers[:, 1]
    h = pos[2]
    r2 = dx * dx + dy * dy
    d2 = r2 + h * h
    coef = channel.free_space_coefficient
    eta_los = db_to_linear(channel.excess_loss_los_db_mean)
    eta_nlos = db_to_linear(channel.excess_loss_nlos_db_mean)
    grad = np.empty((len(centers), 3))
    if mode == "high_alt":
        loss = coef * eta_los * d2
        grad[:, 0] = 2 * coef * eta_los * dx
        grad[:, 1] = 2 * coef * eta_los * dy
        grad[:, 2] = 2 * coef * eta_los * h
        return loss, grad
    r = np.sqrt(r2)
    theta = _DEG * np.arctan2(h, r)
    a, b = channel.env_a, channel.env_b
    p = 1.0 / (1.0 + a * np.exp(-b * (theta - a)))
    dp = b * p * (1 - p) * _DEG  # d p / d theta (radians)
    eta = eta_nlos - p * (eta_nlos - eta_los)
    loss = coef * d2 * eta
    # dL/dtheta = -C d^2 (eta_nlos - eta_los) dp; dtheta/dx = -h dx / (r d^2), dtheta/dh = r / d^2
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r > 0, dx / r, 0.0)
        uy = np.where(r > 0, dy / r, 0.0)
    tilt = coef * (eta_nlos - eta_los) * dp
    grad[:, 0] = 2 * coef * dx * eta + tilt * h * ux
    grad[:, 1] = 2 * coef * dy * eta + tilt * h * uy
    grad[:, 2] = 2 * coef * h * eta - tilt * r
    return loss, grad


@dataclass
class PlacementResult:
    pose: UavPose
    objective: float
    transmit_power_w: float  # under the mode's loss model
    mobility_energy_j: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _project(x, region: Region, h_bounds, free_h):
    x = x.copy()
    x[0] = min(max(x[0], region.x_min), region.x_max)
    x[1] = min(max(x[1], region.y_min), region.y_max)
    if free_h:
        x[2] = min(max(x[2], h_bounds[0]), h_bounds[1])
    return x


def _descend(fun, x0, project, length, max_iter, tol, trace):
    """Projected gradient descent, Barzilai-Borwein steps with Armijo backtracking."""
    x = project(x0)
    f, g = fun(x)
    gn = np.linalg.norm(g)
    t = length / gn if gn > 0 else 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        while True:
            xn = project(x - t * g)
            fn, gnew = fun(xn)
            if not np.isfinite(fn) or not np.all(np.isfinite(gnew)):
                raise DeployError(f"placement diverged at iteration {it}; objective trace {trace[-5:]}")
            if fn <= f - 1e-4 * float(g @ (x - xn)) or np.linalg.norm(xn - x) < 1e-9 * length:
                break
            t *= 0.5
        s = xn - x
        step = np.linalg.norm(s)
        x_prev_f = f
        x, f, g_old, g = xn, fn, g, gnew
        trace.append(f)
        if step < 1e-9 * length or abs(x_prev_f - f) <= tol * max(abs(f), 1e-300):
            converged = True
            break
        y = g - g_old
        sy = float(s @ y)
        t = float(s @ s) / sy if sy > 0 else 2 * t
    return x, f, it, converged


def joint_location_optimize(uav: UavState, cells, grid: DemandGrid, channel: ChannelParams, mode: str = "high_alt",
                            n_users: float | None = None, h_bounds: tuple[float, float] | None = None,
                            horizon_s: float | None = None, max_iter: int = 500, tol: float = 1e-12) -> PlacementResult:
    """Minimise transmit power plus mobility energy over the UAV's position.

    Altitude is held at the current value in ``high_alt`` and ``low_alt``
    modes and descended on, within ``h_bounds``, in ``exact`` mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown placement mode {mode!r}; expected one of {MODES}")
    cells = np.asarray(cells, dtype=int)
    p0 = uav.pose.as_array()
    free_h = mode == "exact"
    if h_bounds is None:
        h_bounds = (p0[2], p0[2])
    if free_h and not 0 < h_bounds[0] <= h_bounds[1]:
        raise ValueError("altitude bounds must satisfy 0 < h_min <= h_max")
    region = grid.region
    if len(cells) == 0 or not np.any(grid.rate_density[cells] > 0):
        return PlacementResult(uav.pose, 0.0, 0.0, 0.0, 0, True, [])
    if n_users is None:
        n_users = float(effective_users(grid.users[cells].sum(), grid.cell_rate_bps[cells].sum()))
    scale = 1.0 if horizon_s is None else float(horizon_s)
    gamma = uav.mobility_rate_j_per_m
    weights = cell_power_weights(channel, grid, cells, uav.bandwidth_hz, n_users)
    keep = weights > 0
    weights, centers = weights[keep], grid.centers[cells[keep]]
    mask = np.array([1.0, 1.0, 1.0 if free_h else 0.0])

    def power(x):
        loss, grad = loss_and_gradient(channel, x, centers, mode)
        return float(weights @ loss), (weights @ grad) * mask

    def objective(x):
        pw, gp = power(x)
        diff = x - p0
        dist = float(np.linalg.norm(diff))
        g = scale * gp
        if dist > 0:
            g = g + gamma * diff / dist * mask
        return scale * pw + gamma * dist, g

    project = lambda x: _project(x, region, h_bounds, free_h)
    length = region.diagonal
    trace: list = []
    inside = project(p0)
    f0, _ = objective(inside)
    best_x, best_f, iters, converged = inside, f0, 0, True
    _, g_p0 = power(p0)
    # p0 is stationary for the non-smooth objective when the smooth gradient
    # fits inside the gamma-ball of the distance term
    stuck = np.array_equal(inside, p0) and scale * np.linalg.norm(g_p0) <= gamma
    if not stuck:
        cx, cy = closed_form_location(cells, grid, uav.bandwidth_hz, n_users)
        starts = [np.array([cx, cy, p0[2]])]
        if gamma > 0 and np.linalg.norm(g_p0) > 0:
            starts.append(p0 - g_p0 / np.linalg.norm(g_p0) * 1e-3 * length)
        for x0 in starts:
            x, f, it, conv = _descend(objective, x0, project, 0.01 * length, max_iter, tol, trace)
            iters += it
            if f < best_f:
                best_x, best_f, converged = x, f, conv
    pw, _ = power(best_x)
    dist = float(np.linalg.norm(best_x - p0))
    pose = UavPose(float(best_x[0]), float(best_x[1]), float(best_x[2]))
    return PlacementResult(pose, best_f, pw, gamma * dist, iters, converged, trace)
