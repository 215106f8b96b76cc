import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from oracles import textbook_em

from uavdeploy.predictor import (
    DemandModel,
    FitError,
    GmmModel,
    PredictorSettings,
    cdf_invert,
    fit_dataset,
    fit_hour,
    fit_mixture,
    gmm_pdf,
    predict,
    scan_k,
    select_k,
    weighted_em_fit,
    weighted_kmeans,
    weighted_log_likelihood,
)
from uavdeploy.traffic import HourSpec, MixtureComponent, Region, SyntheticSpec, hourly_slices, synthesize

REGION = Region(0.0, 0.0, 1000.0, 1000.0)


def two_blobs(n=5000, seed=0):
    rng = np.random.default_rng(seed)
    comp = rng.random(n) < 0.3
    x = np.where(comp[:, None], rng.normal([0.0, 0.0], 1.0, (n, 2)), rng.normal([8.0, 0.0], 1.0, (n, 2)))
    return x


def test_unit_weight_em_matches_textbook():
    x = two_blobs(800, 3)
    init = np.array([[1.0, 1.0], [6.0, -1.0]])
    model, report = weighted_em_fit(x, np.ones(len(x)), init, max_iter=25, tol=-np.inf)
    assert report.iterations == 25
    pi, mu, cov = textbook_em(x, init, 25)
    assert np.allclose(model.weights, pi, rtol=0, atol=1e-9)
    assert np.allclose(model.means, mu, rtol=0, atol=1e-9)
    assert np.allclose(model.covs, cov, rtol=0, atol=1e-9)


def test_log_likelihood_trace_non_decreasing_on_random_fixtures():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        k_true = rng.integers(1, 5)
        d = rng.integers(1, 3)
        n = rng.integers(30, 300)
        centres = rng.normal(0, 5, (k_true, d))
        x = centres[rng.integers(0, k_true, n)] + rng.normal(0, rng.uniform(0.3, 2), (n, d))
        w = rng.exponential(1.0, n)
        k = int(rng.integers(1, 5))
        init = x[rng.choice(n, k, replace=False)]
        _, report = weighted_em_fit(x, w, init, max_iter=60, tol=1e-12, covariance_floor=1e-6)
        tr = np.array(report.log_likelihood_trace)
        assert np.all(np.diff(tr) >= -1e-8), tr


def test_two_component_recovery():
    x = two_blobs(5000, 1)
    model, report = fit_mixture(x, np.ones(len(x)), k_min=1, k_max=5, seed=0)
    assert model.n_components == 2
    order = np.argsort(model.means[:, 0])
    assert np.allclose(model.means[order], [[0, 0], [8, 0]], atol=0.2)
    assert np.allclose(model.weights[order], [0.3, 0.7], atol=0.05)
    assert report.chosen_k == 2


def test_k1_equal_weights_is_sample_moments():
    rng = np.random.default_rng(5)
    x = rng.normal([3.0, -1.0], [2.0, 0.5], (400, 2))
    model, _ = weighted_em_fit(x, np.ones(400), x[:1], max_iter=1, tol=-np.inf)
    assert np.allclose(model.means[0], x.mean(axis=0), atol=1e-12)
    assert np.allclose(model.covs[0], np.cov(x.T, bias=True), atol=1e-10)


def test_degenerate_single_point():
    x = np.tile([[2.0, 5.0]], (10, 1))
    model, _ = weighted_em_fit(x, np.ones(10), x[:1], covariance_floor=1e-4)
    assert np.allclose(model.means[0], [2.0, 5.0])
    assert np.allclose(model.covs[0], 1e-4 * np.eye(2))


def test_em_errors():
    with pytest.raises(FitError, match="zero"):
        weighted_em_fit(np.zeros((3, 2)), np.zeros(3), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        weighted_em_fit(np.zeros((3, 2)), [1.0, -1.0, 1.0], np.zeros((1, 2)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.integers(1, 4)), min_size=4, max_size=12, unique_by=lambda t: t[0]))
def test_integer_weights_equal_replication(samples):
    pts = np.array([s[0] for s in samples])
    w = np.array([s[1] for s in samples], dtype=float)
    rep = np.repeat(pts, w.astype(int))
    init = np.array([pts.min(), pts.max()])
    a, _ = weighted_em_fit(pts, w, init, max_iter=10, tol=-np.inf, covariance_floor=1e-6)
    b, _ = weighted_em_fit(rep, np.ones(len(rep)), init, max_iter=10, tol=-np.inf, covariance_floor=1e-6)
    assert np.allclose(a.means, b.means, atol=1e-8)
    assert np.allclose(a.weights, b.weights, atol=1e-8)


def test_weighted_log_likelihood_is_weighted_mean():
    m = GmmModel(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1, 1)))
    x = np.array([0.0, 1.0])
    ref = (1 * stats.norm.logpdf(0) + 3 * stats.norm.logpdf(1)) / 4
    assert weighted_log_likelihood(m, x, [1.0, 3.0]) == pytest.approx(ref, rel=1e-12)


def test_kmeans_examples():
    res = weighted_kmeans([[0.0, 0.0], [4.0, 0.0]], [1.0, 3.0], 1)
    assert np.allclose(res.means, [[3.0, 0.0]])
    with pytest.raises(FitError):
        weighted_kmeans([[0.0, 0.0], [0.0, 0.0]], [1.0, 1.0], 2)
    rng = np.random.default_rng(1)
    a = rng.normal(0, 1, (50, 2))
    b = rng.normal(40, 1, (30, 2))
    wa, wb = rng.uniform(1, 2, 50), rng.uniform(1, 2, 30)
    res = weighted_kmeans(np.vstack([a, b]), np.concatenate([wa, wb]), 2, seed=3)
    got = res.means[np.argsort(res.means[:, 0])]
    assert np.allclose(got[0], (wa[:, None] * a).sum(0) / wa.sum())
    assert np.allclose(got[1], (wb[:, None] * b).sum(0) / wb.sum())


def plain_lloyd(x, means, n_iter):
    means = means.copy()
    for _ in range(n_iter):
        lab = np.argmin(((x[:, None] - means[None]) ** 2).sum(-1), axis=1)
        means = np.array([x[lab == j].mean(0) for j in range(len(means))])
    return means


def test_kmeans_unit_weights_match_plain_lloyd():
    rng = np.random.default_rng(9)
    x = rng.normal(0, 1, (300, 2)) + rng.integers(0, 3, (300, 1)) * 6
    init = x[:3].copy()
    res = weighted_kmeans(x, np.ones(300), 3, init=init, max_iter=50, tol=0)
    assert np.allclose(res.means, plain_lloyd(x, init, res.iterations), atol=1e-12)


def test_select_k():
    rng = np.random.default_rng(0)
    centres = np.array([[0.0, 0.0], [100.0, 0.0], [50.0, 90.0]])
    x = np.vstack([c + rng.normal(0, 1.0, (80, 2)) for c in centres])
    assert select_k(x, np.ones(len(x)), 1, 6, seed=1) == 3
    tight = rng.normal(0, 1.0, (100, 2))
    assert select_k(tight, np.ones(100), 1, 6) == 1
    assert select_k(tight, np.ones(100), 2, 6) >= 2
    scan = scan_k(x, np.ones(len(x)), 1, 6, seed=1)
    assert [k for k, _ in scan.ratios][0] == 1


def test_gmm_pdf_and_cdf_invert():
    std = GmmModel(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1, 1)))
    assert float(gmm_pdf(std, [0.0])[0]) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-12)
    g = GmmModel(np.array([1.0]), np.array([[10.0]]), np.array([[[4.0]]]))
    assert cdf_invert(g, 0.5) == pytest.approx(10.0, abs=1e-9)
    assert cdf_invert(g, 0.6) == pytest.approx(stats.norm.ppf(0.6, 10, 2), abs=1e-9)
    assert cdf_invert(g, 0.6) == pytest.approx(10.5067, abs=1e-4)
    sym = GmmModel(np.array([0.5, 0.5]), np.array([[-3.0], [3.0]]), np.array([[[1.0]], [[1.0]]]))
    assert cdf_invert(sym, 0.5) == pytest.approx(0.0, abs=1e-9)
    for t in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            cdf_invert(g, t)


def test_rect_masses_against_quadrature():
    m = GmmModel(np.array([0.4, 0.6]), np.array([[1.0, 2.0], [-1.0, 0.0]]),
                 np.array([[[1.0, 0.6], [0.6, 2.0]], [[0.5, -0.2], [-0.2, 0.3]]]))
    masses = m.rect_masses([-2.0, 0.5, 3.0], [-1.0, 1.0, 4.0])
    f = lambda y, x: float(m.pdf([x, y])[0])
    for i, (x0, x1) in enumerate([(-2.0, 0.5), (0.5, 3.0)]):
        for j, (y0, y1) in enumerate([(-1.0, 1.0), (1.0, 4.0)]):
            ref, _ = integrate.dblquad(f, x0, x1, y0, y1, epsabs=1e-10)
            assert masses[i, j] == pytest.approx(ref, abs=1e-7)


def _spec(days, n_sites=60, rel=0.1):
    comps = (MixtureComponent(0.4, (250.0, 250.0), ((400.0, 0.0), (0.0, 400.0))),
             MixtureComponent(0.6, (750.0, 700.0), ((900.0, 0.0), (0.0, 900.0))))
    return SyntheticSpec(REGION, days, tuple(HourSpec(comps, 1e9, rel * 1e9, 40.0, 4.0) for _ in range(24)), n_sites)


def test_fit_hour_single_station():
    from uavdeploy.traffic import TrafficDataset

    data = TrafficDataset(np.array([3, 27]), np.array([[400.0, 600.0], [400.0, 600.0]]), np.array([5, 5]),
                          np.array([10.0, 12.0]), 2, REGION)
    q = fit_hour(hourly_slices(data)[3], REGION)
    assert q.spatial.n_components == 1
    assert np.allclose(q.spatial.means[0], [400.0, 600.0])
    assert fit_hour(hourly_slices(data)[4], REGION).no_demand


def test_fit_hour_constant_totals():
    data = synthesize(_spec(6, rel=0.0), 2)
    q = fit_hour(hourly_slices(data)[5], REGION)
    assert cdf_invert(q.temporal, 0.6) == pytest.approx(1e9, rel=1e-3)


def test_fit_hour_recovers_synthetic_components():
    data = synthesize(_spec(20), 4)
    q = fit_hour(hourly_slices(data)[0], REGION, seed=1)
    assert q.spatial.n_components == 2
    order = np.argsort(q.spatial.means[:, 0])
    assert np.allclose(q.spatial.weights[order], [0.4, 0.6], atol=0.05)
    # means within 5% of the component spread scale
    assert np.allclose(q.spatial.means[order], [[250, 250], [750, 700]], atol=5.0)


def test_predict_and_model_round_trip():
    data = synthesize(_spec(6), 8)
    model = fit_dataset(data, PredictorSettings(k_max=4), seed=3)
    assert len(model.hours) == 24
    lo = predict(model.hours[2], 0.5, REGION)
    hi = predict(model.hours[2], 0.9, REGION)
    assert hi.total_bytes > lo.total_bytes
    assert lo.total_bytes == pytest.approx(cdf_invert(model.hours[2].bytes.temporal, 0.5))
    cells = lo.cell_masses(np.linspace(0, 1000, 9), np.linspace(0, 1000, 9))
    assert cells.sum() == pytest.approx(1.0)
    back = DemandModel.from_json(json.loads(json.dumps(model.to_json())))
    again = predict(back.hours[2], 0.5, REGION)
    assert again.total_bytes == lo.total_bytes
    assert np.array_equal(again.density.means, lo.density.means)


def test_fit_is_deterministic():
    data = synthesize(_spec(4), 1)
    a = fit_dataset(data, PredictorSettings(k_max=3), seed=5)
    b = fit_dataset(data, PredictorSettings(k_max=3), seed=5)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
