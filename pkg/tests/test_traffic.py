import json

import numpy as np
import pytest

from uavdeploy.traffic import (
    AerialDataset,
    HourSpec,
    MixtureComponent,
    Region,
    SyntheticSpec,
    TrafficDataError,
    TrafficDataset,
    aerial_overflow,
    hourly_slices,
    ingest_csv,
    read_csv,
    spatial_density,
    synthesize,
    train_test_split,
)

REGION = Region(0.0, 0.0, 1000.0, 1000.0)


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def dataset(rows, days, region=REGION):
    """rows: (day, hour, x, y, users, bytes)"""
    a = np.array(rows, dtype=float).reshape(-1, 6)
    return TrafficDataset((a[:, 0] * 24 + a[:, 1]).astype(np.int64), a[:, 2:4].copy(), a[:, 4].astype(np.int64),
                          a[:, 5].copy(), days, region)


def test_ingest_three_rows(tmp_path):
    p = write(tmp_path, "day,hour,bs_x_m,bs_y_m,users,bytes\n"
                        "0,9,10,20,120,5e6\n"
                        "0,9,30,40,80,1e6\n"
                        "1,3,50,60,150,3.5e6\n")
    data = ingest_csv(p, capacity_users=100, capacity_bytes=2e6, region=REGION)
    assert isinstance(data, AerialDataset)
    assert len(data) == 3
    assert data.users.tolist() == [20, 0, 50]
    assert data.bytes.tolist() == [3e6, 0.0, 1.5e6]
    assert data.bytes.sum() == pytest.approx(4.5e6)
    assert data.days == 2
    assert data.hour_index.tolist() == [9, 9, 27]


def test_read_csv_rebases_days_and_infers_region(tmp_path):
    p = write(tmp_path, "day,hour,bs_x_m,bs_y_m,users,bytes\n5,0,1,2,3,4\n6,23,11,12,3,4\n")
    data = read_csv(p)
    assert data.days == 2
    assert data.hour_index.tolist() == [0, 47]
    assert (data.region.x_min, data.region.x_max) == (1.0, 11.0)


@pytest.mark.parametrize("text, where", [
    ("", "empty"),
    ("day,hour,bs_x_m,bs_y_m,users,bytes\n", "no records"),
    ("day,hour,x,y,users,bytes\n0,0,1,1,1,1\n", ":1:"),
    ("day,hour,bs_x_m,bs_y_m,users,bytes\n0,0,1,1,1,1\n0,0,1,x,1,1\n", ":3:"),
    ("day,hour,bs_x_m,bs_y_m,users,bytes\n0,24,1,1,1,1\n", ":2:"),
    ("day,hour,bs_x_m,bs_y_m,users,bytes\n0,1,1,1,-1,1\n", ":2:"),
    ("day,hour,bs_x_m,bs_y_m,users,bytes\n0,1,1,1\n", ":2:"),
])
def test_malformed_csv(tmp_path, text, where):
    with pytest.raises(TrafficDataError, match=where):
        read_csv(write(tmp_path, text))


def test_overflow_clamps_at_zero():
    data = dataset([(0, 0, 1, 1, 120, 10.0), (0, 0, 2, 2, 80, 3.0)], 1)
    out = aerial_overflow(data, 100, 5.0)
    assert out.users.tolist() == [20, 0]
    assert out.bytes.tolist() == [5.0, 0.0]
    with pytest.raises(ValueError):
        aerial_overflow(data, -1, 0)


def test_dataset_validation():
    with pytest.raises(TrafficDataError):
        dataset([(0, 0, 2000, 1, 1, 1)], 1)
    with pytest.raises(TrafficDataError):
        dataset([(3, 0, 1, 1, 1, 1)], 2)


def test_slices_day_totals():
    data = dataset([(0, 9, 1, 1, 1, 5.0), (1, 9, 1, 1, 1, 7.0)], 2)
    slices = hourly_slices(data)
    assert len(slices) == 24
    assert slices[9].day_totals.tolist() == [5.0, 7.0]
    assert slices[3].no_demand
    assert len(slices[3].points) == 0


def test_slice_weights_are_per_bs_bytes():
    rows = [(0, 4, 10, 10, 1, 2.0), (0, 4, 20, 20, 1, 3.0), (1, 4, 10, 10, 1, 4.0), (1, 4, 20, 20, 1, 1.0)]
    s = hourly_slices(dataset(rows, 2))[4]
    assert s.weights.tolist() == [2.0, 3.0, 4.0, 1.0]
    assert s.day_totals.tolist() == [5.0, 5.0]


def test_mass_is_conserved():
    spec = _spec(days=3)
    data = synthesize(spec, 1)
    slices = hourly_slices(data)
    assert sum(s.day_totals.sum() for s in slices) == pytest.approx(data.bytes.sum(), rel=1e-12)


def test_spatial_density():
    rows = [(0, 1, 1, 1, 1, 1.0), (0, 1, 2, 2, 1, 3.0)]
    s = hourly_slices(dataset(rows, 1))[1]
    _, w = spatial_density(s, 0)
    assert w.tolist() == [0.25, 0.75]
    one = hourly_slices(dataset([(0, 2, 5, 5, 1, 9.0)], 1))[2]
    assert spatial_density(one, 0)[1].tolist() == [1.0]
    five = [(0, 0, i + 1, 1, 1, b) for i, b in enumerate([1.0, 2.0, 3.0, 4.0, 10.0])]
    assert np.allclose(spatial_density(hourly_slices(dataset(five, 1))[0], 0)[1], [0.05, 0.1, 0.15, 0.2, 0.5])
    with pytest.raises(TrafficDataError, match="no aerial demand"):
        spatial_density(hourly_slices(dataset([(0, 2, 5, 5, 1, 0.0)], 1))[2], 0)


def _spec(days=4, comps=None, bytes_mean=1e9, bytes_std=1e8, concentration=None):
    comps = comps or (MixtureComponent(0.5, (300.0, 300.0), ((900.0, 0.0), (0.0, 900.0))),
                      MixtureComponent(0.3, (700.0, 600.0), ((400.0, 0.0), (0.0, 400.0))),
                      MixtureComponent(0.2, (500.0, 200.0), ((100.0, 0.0), (0.0, 100.0))))
    hours = tuple(HourSpec(comps, bytes_mean, bytes_std, 50.0, 5.0) for _ in range(24))
    return SyntheticSpec(REGION, days, hours, 40, concentration)


def test_synthesize_is_deterministic():
    a, b = synthesize(_spec(), 3), synthesize(_spec(), 3)
    assert np.array_equal(a.bs_xy, b.bs_xy) and np.array_equal(a.bytes, b.bytes)
    c = synthesize(_spec(), 4)
    assert not np.array_equal(a.bs_xy, c.bs_xy)


def test_synthesize_zero_covariance():
    comp = (MixtureComponent(1.0, (250.0, 750.0), ((0.0, 0.0), (0.0, 0.0))),)
    data = synthesize(_spec(days=1, comps=comp), 0)
    assert np.all(data.bs_xy == [250.0, 750.0])


def test_synthesize_totals_match_spec():
    spec = _spec(days=64)
    data = synthesize(spec, 11)
    for s in hourly_slices(data)[::6]:
        se = 1e8 / np.sqrt(64)
        assert abs(s.day_totals.mean() - 1e9) < 3 * se


def test_spec_rejects_bad_weights():
    with pytest.raises(ValueError):
        HourSpec((MixtureComponent(0.6, (0, 0), ((1, 0), (0, 1))),), 1.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        SyntheticSpec(REGION, 1, (), 10)


def test_spec_json_round_trip():
    spec = _spec(concentration=2.0)
    doc = json.loads(json.dumps(spec.to_json()))
    assert SyntheticSpec.from_json(doc) == spec


def test_train_test_split():
    data = synthesize(_spec(days=8), 0)
    train, test = train_test_split(data, 7 / 8)
    assert (train.days, test.days) == (7, 1)
    assert test.day_offset == 7
    assert len(train) + len(test) == len(data)
    a, b = train_test_split(synthesize(_spec(days=2), 0), 0.5)
    assert (a.days, b.days) == (1, 1)
    with pytest.raises(TrafficDataError):
        train_test_split(synthesize(_spec(days=1), 0), 0.5)


def test_dataset_json_and_csv_round_trip(tmp_path):
    data = synthesize(_spec(days=2), 5)
    back = TrafficDataset.from_json(json.loads(json.dumps(data.to_json())))
    assert isinstance(back, AerialDataset)
    assert np.array_equal(back.bytes, data.bytes) and np.array_equal(back.hour_index, data.hour_index)
    p = tmp_path / "d.csv"
    data.to_csv(p)
    again = read_csv(p, REGION)
    assert np.array_equal(again.bytes, data.bytes)
    assert np.array_equal(again.bs_xy, data.bs_xy)
    assert np.array_equal(again.users, data.users)
