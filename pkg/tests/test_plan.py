import json

import numpy as np
import pytest

from uavdeploy.channel import ChannelParams, UavPose
from uavdeploy.deploy import DemandGrid, DeployConfig, DeployError, UavState, plan_deployment
from uavdeploy.predictor import DemandForecast, GmmModel
from uavdeploy.traffic import Region

CH = ChannelParams()
REGION = Region(0.0, 0.0, 2000.0, 2000.0)


def blob_grid(centres, res=16, radius=220.0, rate=150.0):
    probe = DemandGrid(REGION, res, res, np.zeros(res * res), np.zeros(res * res))
    beta = np.zeros(res * res)
    for c in centres:
        beta[np.hypot(*(probe.centers - c).T) < radius] = rate
    return DemandGrid(REGION, res, res, beta, np.zeros(res * res))


def quadrant_fleet(offset=0.0, h=100.0, gamma=0.1):
    return [UavState(i, UavPose(x + offset, y + offset, h), mobility_rate_j_per_m=gamma)
            for i, (x, y) in enumerate([(500, 500), (500, 1500), (1500, 500), (1500, 1500)])]


def test_zero_demand_is_idle():
    fleet = quadrant_fleet()
    empty = DemandForecast(3, 0.0, 0.0, None, None, REGION)
    plan = plan_deployment(fleet, empty, CH, DeployConfig(resolution=8))
    assert plan.transmit_power_w == 0.0 and plan.mobility_energy_j == 0.0
    assert plan.placements == tuple(u.pose for u in fleet)
    assert plan.converged


def test_four_blobs_one_per_quadrant():
    grid = blob_grid([(600, 600), (600, 1400), (1400, 600), (1400, 1400)])
    fleet = quadrant_fleet(gamma=1e-7)
    plan = plan_deployment(fleet, grid, CH, DeployConfig(mode="high_alt"))
    part = plan.partition
    assert part.converged
    assert part.shares == pytest.approx([part.kappa] * 4, rel=0.01)
    hot = grid.rate_density > 0
    for i, u in enumerate(fleet):
        mine = (np.abs(grid.centers[:, 0] - u.pose.x_m) < 500) & (np.abs(grid.centers[:, 1] - u.pose.y_m) < 500)
        assert np.all(part.assignment[hot & mine] == i)
    # every UAV heads towards its blob by the same amount
    assert np.allclose(plan.distances_m, plan.distances_m[0], rtol=1e-6)
    assert np.all(plan.distances_m > 0)
    xy = np.array([[p.x_m, p.y_m] for p in plan.placements])
    assert np.allclose(xy[0] + xy[3], [2000.0, 2000.0], atol=1e-3)


def test_alternation_never_worsens():
    grid = blob_grid([(300, 900), (1700, 1200), (900, 1700)], rate=200.0)
    fleet = quadrant_fleet(offset=-150.0, gamma=1e-6)
    plan = plan_deployment(fleet, grid, CH, DeployConfig(mode="low_alt", alternation_rounds=6))
    trace = plan.objective_trace
    assert 1 <= len(trace) <= 6
    assert np.all(np.diff(trace) <= 0)
    single = plan_deployment(fleet, grid, CH, DeployConfig(mode="low_alt"))
    assert plan.objective <= single.objective * (1 + 1e-12)


def test_objective_accounting():
    grid = blob_grid([(700, 700), (1300, 1500)])
    fleet = quadrant_fleet()
    plan = plan_deployment(fleet, grid, CH)
    assert plan.objective == pytest.approx(plan.transmit_power_w + plan.mobility_energy_j, rel=1e-12)
    assert plan.per_uav_power_w.sum() == pytest.approx(plan.transmit_power_w, rel=1e-12)
    gammas = np.array([u.mobility_rate_j_per_m for u in fleet])
    assert plan.mobility_energy_j == pytest.approx(gammas @ plan.distances_m, rel=1e-12)
    timed = plan_deployment(fleet, grid, CH, DeployConfig(horizon_s=60.0))
    assert timed.objective == pytest.approx(60.0 * timed.transmit_power_w + timed.mobility_energy_j, rel=1e-12)


def test_mobility_paid_only_when_moving():
    grid = blob_grid([(700, 700), (1300, 1500)])
    stay = plan_deployment(quadrant_fleet(gamma=1e9), grid, CH)
    assert stay.mobility_energy_j == 0.0
    assert np.all(stay.distances_m == 0.0)
    go = plan_deployment(quadrant_fleet(gamma=1e-7), grid, CH)
    assert go.mobility_energy_j > 0.0
    assert np.count_nonzero(go.distances_m) > 0


def test_forecast_input_and_json():
    g = GmmModel(np.array([0.6, 0.4]), np.array([[600.0, 700.0], [1500.0, 1300.0]]),
                 np.array([np.eye(2) * 200.0 ** 2, np.eye(2) * 150.0 ** 2]))
    forecast = DemandForecast(9, 2e10, 0.5, g, g, REGION)
    plan = plan_deployment(quadrant_fleet(), forecast, CH, DeployConfig(resolution=12))
    assert plan.partition.assignment.shape == (144,)
    doc = json.loads(json.dumps(plan.to_json()))
    assert doc["objective"] == pytest.approx(plan.objective)
    assert len(doc["placements"]) == 4


def test_config_validation():
    with pytest.raises(ValueError):
        DeployConfig(mode="hover")
    with pytest.raises(ValueError):
        DeployConfig(alternation_rounds=0)
    with pytest.raises(ValueError):
        DeployConfig(h_min=300.0, h_max=100.0)
    with pytest.raises(ValueError):
        DeployConfig(horizon_s=0.0)
    assert DeployConfig.from_json(DeployConfig(mode="exact").to_json()) == DeployConfig(mode="exact")
    with pytest.raises(DeployError):
        plan_deployment([], blob_grid([(700, 700)]), CH)
