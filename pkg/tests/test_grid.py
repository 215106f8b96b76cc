import numpy as np
import pytest

from uavdeploy.channel import ChannelParams, GroundPoint, UavPose, mean_path_loss_linear, min_transmit_power
from uavdeploy.deploy import DemandGrid, DeployError, UavState, build_demand_grid, grid_from_records
from uavdeploy.deploy import transmit_power_integral
from uavdeploy.predictor import DemandForecast, GmmModel
from uavdeploy.traffic import Region

REGION = Region(0.0, 0.0, 1000.0, 1000.0)
CH = ChannelParams()


class UniformForecast:
    no_demand = False
    total_bytes = 3.6e9
    total_users = 64.0
    period_hours = 1.0

    def cell_masses(self, xe, ye, users=False):
        m = np.outer(np.diff(xe), np.diff(ye))
        return m / m.sum()


def gmm_forecast(means, covs, weights, total_bytes=1e10, users=20.0):
    g = GmmModel(np.asarray(weights, float), np.asarray(means, float), np.asarray(covs, float))
    return DemandForecast(0, total_bytes, users, g, g, REGION)


def test_uniform_forecast_gives_equal_beta():
    grid = build_demand_grid(UniformForecast(), REGION, 16)
    assert np.allclose(grid.rate_density, grid.rate_density[0])
    # D g / T: 3.6e9 bytes over an hour spread over 1e6 m^2
    assert grid.rate_density[0] == pytest.approx(3.6e9 * 8 / 3600 / 1e6)
    assert grid.total_users == pytest.approx(64.0)


def test_totals_match_forecast_and_refinement():
    f = gmm_forecast([[300.0, 400.0], [700.0, 600.0]], [np.eye(2) * 150.0 ** 2, np.eye(2) * 90.0 ** 2], [0.3, 0.7])
    coarse = build_demand_grid(f, REGION, 16)
    fine = build_demand_grid(f, REGION, 32)
    rate = f.total_bytes * 8 / 3600
    assert coarse.total_rate_bps == pytest.approx(rate, rel=5e-3)
    assert abs(fine.total_rate_bps / coarse.total_rate_bps - 1) < 5e-3
    assert fine.total_users == pytest.approx(20.0, rel=5e-3)


def test_point_mass_lands_in_one_cell():
    f = gmm_forecast([[612.0, 388.0]], [np.eye(2) * 1e-6], [1.0])
    grid = build_demand_grid(f, REGION, 10)
    hot = np.flatnonzero(grid.rate_density > 0)
    assert hot.tolist() == [int(grid.cell_of(612.0, 388.0))]
    rec = grid_from_records([[612.0, 388.0]], [5e9], [3], REGION, 10)
    assert np.flatnonzero(rec.rate_density).tolist() == hot.tolist()
    assert rec.users.sum() == 3


def test_records_with_footprint_conserve_mass():
    pts = np.array([[100.0, 100.0], [500.0, 900.0], [999.0, 1.0]])
    nb = np.array([1e9, 2e9, 5e8])
    g = grid_from_records(pts, nb, [1, 2, 3], REGION, 20, coverage_m=80.0)
    assert g.total_rate_bps == pytest.approx(nb.sum() * 8 / 3600, rel=1e-12)
    assert g.total_users == pytest.approx(6.0)
    assert np.count_nonzero(g.rate_density > 1e-12 * g.rate_density.max()) > 3


def test_grid_errors():
    with pytest.raises(ValueError):
        build_demand_grid(UniformForecast(), REGION, 4)
    empty = DemandForecast(0, 0.0, 0.0, None, None, REGION)
    with pytest.raises(DeployError):
        build_demand_grid(empty, REGION, 16)
    with pytest.raises(ValueError):
        DemandGrid(REGION, 2, 2, np.array([1.0, -1.0, 0, 0]), np.zeros(4))


def one_cell_grid(res=8, cell=(3, 4), beta=50.0, users=2.0):
    rate = np.zeros(res * res)
    u = np.zeros(res * res)
    rate[cell[0] * res + cell[1]] = beta
    u[cell[0] * res + cell[1]] = users
    return DemandGrid(REGION, res, res, rate, u)


def test_power_integral_composes_channel_functions():
    grid = one_cell_grid()
    c = int(np.flatnonzero(grid.rate_density)[0])
    cx, cy = grid.centers[c]
    uav = UavState(0, UavPose(cx, cy, 300.0), 1.0, 5e6, 0.1)
    loss = mean_path_loss_linear(CH, uav.pose, GroundPoint(cx, cy))
    expect = float(min_transmit_power(CH, 5e6, 2, 50.0, loss)) * grid.cell_area
    assert transmit_power_integral(uav, np.arange(grid.n_cells), grid, CH) == pytest.approx(expect, rel=1e-12)
    assert transmit_power_integral(uav, [0, 1, 2], grid, CH) == 0.0


def test_power_grows_moving_away():
    grid = one_cell_grid()
    c = int(np.flatnonzero(grid.rate_density)[0])
    cx, cy = grid.centers[c]
    powers = [transmit_power_integral(UavState(0, UavPose(cx + dx, cy, 100.0)), [c], grid, CH)
              for dx in (0.0, 50.0, 200.0, 600.0)]
    assert np.all(np.diff(powers) > 0)
