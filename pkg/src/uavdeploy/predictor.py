"""Weighted Gaussian mixture models of hourly aerial demand.

Each hour of the day gets two independent models per quantity: a 2-D spatial
mixture fitted with weighted K-means initialisation plus weighted EM, and a
1-D mixture over the per-day totals whose CDF is inverted at a threshold to
forecast the total.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr
from scipy.stats import multivariate_normal

from .traffic import HourlySlice, Region, TrafficDataset, hourly_slices

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class FitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)

    def __post_init__(self):
        k = len(self.weights)
        if k < 1:
            raise ValueError("a mixture needs at least one component")
        if self.means.shape[0] != k or self.covs.shape != (k, self.dim, self.dim):
            raise ValueError("inconsistent mixture shapes")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be non-negative and sum to 1")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_logpdf(self, x) -> np.ndarray:
        """(n, K) matrix of log N(x_n | mu_k, Sigma_k)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return _component_logpdf(x, self.means, self.covs)

    def logpdf(self, x) -> np.ndarray:
        lp = self.component_logpdf(x)
        with np.errstate(divide="ignore"):
            return logsumexp(lp + np.log(self.weights), axis=1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf(self, d) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("cdf is only defined for 1-D mixtures")
        d = np.asarray(d, dtype=float)
        sd = np.sqrt(self.covs[:, 0, 0])
        z = (d[..., None] - self.means[:, 0]) / sd
        return ndtr(z) @ self.weights

    def rect_masses(self, x_edges, y_edges) -> np.ndarray:
        """Probability of every rectangle of the tensor grid ``x_edges`` x ``y_edges``.

        Returns an array of shape ``(len(x_edges) - 1, len(y_edges) - 1)``.
        """
        if self.dim != 2:
            raise ValueError("rect_masses needs a 2-D mixture")
        xe = np.asarray(x_edges, dtype=float)
        ye = np.asarray(y_edges, dtype=float)
        gx, gy = np.meshgrid(xe, ye, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        total = np.zeros((len(xe), len(ye)))
        for w, mu, cov in zip(self.weights, self.means, self.covs):
            if w == 0:
                continue
            total += w * _bvn_cdf(pts, mu, cov).reshape(total.shape)
        masses = total[1:, 1:] - total[:-1, 1:] - total[1:, :-1] + total[:-1, :-1]
        return np.clip(masses, 0.0, None)

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "covs": self.covs.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "GmmModel":
        return cls(np.asarray(doc["weights"], float), np.asarray(doc["means"], float),
                   np.asarray(doc["covs"], float))


def _bvn_cdf(pts, mu, cov):
    sd = np.sqrt(np.diag(cov))
    z = np.clip((pts - mu) / sd, -40.0, 40.0)
    rho = float(np.clip(cov[0, 1] / (sd[0] * sd[1]), -1.0, 1.0))
    if abs(rho) > 1 - 1e-12:
        if rho > 0:
            return ndtr(np.minimum(z[:, 0], z[:, 1]))
        return np.clip(ndtr(z[:, 0]) + ndtr(z[:, 1]) - 1.0, 0.0, 1.0)
    return np.atleast_1d(multivariate_normal.cdf(z, [0.0, 0.0], [[1.0, rho], [rho, 1.0]],
                                                 abseps=1e-12, releps=1e-12))


def _component_logpdf(x, means, covs):
    n, d = x.shape
    out = np.empty((n, len(means)))
    for k, (mu, cov) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(cov)
        diff = np.linalg.solve(chol, (x - mu).T)
        maha = np.sum(diff * diff, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))
    return out


def gmm_pdf(model: GmmModel, x) -> np.ndarray:
    return model.pdf(x)


def cdf_invert(model: GmmModel, threshold: float, tol: float = 1e-12) -> float:
    """Demand level ``d`` with mixture CDF ``C(d) = threshold`` (bisection)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if model.dim != 1:
        raise ValueError("cdf_invert needs a 1-D mixture")
    mu = model.means[:, 0]
    sd = np.sqrt(model.covs[:, 0, 0])
    lo = float(np.min(mu - 40.0 * sd))
    hi = float(np.max(mu + 40.0 * sd))
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        c = float(model.cdf(mid))
        if abs(c - threshold) <= tol:
            return mid
        if c < threshold:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1e-300):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- K-means


@dataclass(frozen=True, eq=False)
class KMeansResult:
    means: np.ndarray
    labels: np.ndarray
    cost: float
    iterations: int


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return p.reshape(-1, 1) if p.ndim == 1 else p


def _lloyd(x, w, means, max_iter, tol):
    means = means.copy()
    for it in range(1, max_iter + 1):
        d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        # weighted distance D*|x - mu| has the same argmin as |x - mu| for D > 0
        labels = np.argmin(d2, axis=1)
        new = means.copy()
        for k in range(len(means)):
            sel = labels == k
            wk = w[sel].sum()
            if wk > 0:
                new[k] = (w[sel, None] * x[sel]).sum(axis=0) / wk
            elif sel.any():
                new[k] = x[sel].mean(axis=0)
            else:
                # empty cluster: move it onto the point that is currently worst served
                new[k] = x[np.argmax(w * d2[np.arange(len(x)), labels])]
        shift = np.max(np.abs(new - means))
        means = new
        if shift <= tol:
            break
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    cost = float(np.sum(w * d2[np.arange(len(x)), labels]))
    return KMeansResult(means, labels, cost, it)


def weighted_kmeans(points, weights, k: int, seed: int = 0, restarts: int = 5, max_iter: int = 300,
                    tol: float = 1e-9, init: Optional[np.ndarray] = None) -> KMeansResult:
    """Lloyd iterations with demand-weighted centroids; best of ``restarts`` random starts.

    Initial means are distinct sample locations drawn uniformly at random.
    Passing ``init`` runs a single start from the given means instead.
    """
    x = _as_points(points)
    w = np.asarray(weights, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    pos = w > 0
    distinct = np.unique(x[pos], axis=0)
    if k > len(distinct):
        raise FitError(f"k={k} exceeds the {len(distinct)} distinct weighted points")
    if init is not None:
        return _lloyd(x, w, np.asarray(init, dtype=float).reshape(k, -1), max_iter, tol)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        start = distinct[rng.choice(len(distinct), size=k, replace=False)]
        res = _lloyd(x, w, start, max_iter, tol)
        if best is None or res.cost < best.cost - 1e-12 * abs(best.cost):
            best = res
    return best


def cluster_ratio(points, weights, result: KMeansResult) -> float:
    """Weighted mean squared intra-cluster distance over the smallest squared centroid gap."""
    x = _as_points(points)
    w = np.asarray(weights, dtype=float)
    k = len(result.means)
    if k < 2:
        return float("nan")
    intra = np.sum(w * ((x - result.means[result.labels]) ** 2).sum(axis=1)) / w.sum()
    diff = result.means[:, None, :] - result.means[None, :, :]
    gaps = (diff ** 2).sum(axis=2)[np.triu_indices(k, 1)]
    return float(intra / gaps.min()) if gaps.min() > 0 else float("inf")


@dataclass(frozen=True)
class KScan:
    k: int
    ratios: tuple[tuple[int, float], ...]
    results: dict = field(default_factory=dict, compare=False, repr=False)


def scan_k(points, weights, k_min: int = 1, k_max: int = 8, seed: int = 0, restarts: int = 5,
           single_cluster_ratio: float = 0.05) -> KScan:
    """Run weighted K-means for every K in range and pick the smallest ratio.

    K = 1 has no inter-cluster distance; it is scored with the constant
    ``single_cluster_ratio`` so that one cluster wins unless splitting yields
    clearly separated groups. A K is admissible only when every cluster
    holds at least two distinct points. Ties go to the smaller K.
    """
    if k_min > k_max or k_min < 1:
        raise ValueError("need 1 <= k_min <= k_max")
    x = _as_points(points)
    w = np.asarray(weights, dtype=float)
    pos = w > 0
    n_distinct = len(np.unique(x[pos], axis=0))
    if n_distinct < 1:
        raise FitError("no positively weighted samples")
    ratios, results = [], {}
    for k in range(k_min, min(k_max, n_distinct) + 1):
        res = weighted_kmeans(x, w, k, seed=seed + 7919 * k, restarts=restarts)
        if k == 1:
            ratio = single_cluster_ratio
        else:
            sizes = [len(np.unique(x[pos & (res.labels == j)], axis=0)) for j in range(k)]
            if min(sizes) < 2:
                continue
            ratio = cluster_ratio(x[pos], w[pos], KMeansResult(res.means, res.labels[pos], res.cost, 0))
        ratios.append((k, ratio))
        results[k] = res
    if not ratios:
        res = weighted_kmeans(x, w, k_min, seed=seed + 7919 * k_min, restarts=restarts)
        return KScan(k_min, ((k_min, float("nan")),), {k_min: res})
    best_k = min(ratios, key=lambda kr: (kr[1], kr[0]))[0]
    return KScan(best_k, tuple(ratios), results)


def select_k(points, weights, k_min: int = 1, k_max: int = 8, seed: int = 0, **kw) -> int:
    return scan_k(points, weights, k_min, k_max, seed, **kw).k


# ---------------------------------------------------------------- weighted EM


@dataclass
class FitReport:
    iterations: int
    log_likelihood_trace: list
    converged: bool
    chosen_k: int
    kmeans_ratio_trace: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"iterations": self.iterations, "log_likelihood_trace": list(self.log_likelihood_trace),
                "converged": self.converged, "chosen_k": self.chosen_k,
                "kmeans_ratio_trace": [list(kr) for kr in self.kmeans_ratio_trace]}

    @classmethod
    def from_json(cls, doc: dict) -> "FitReport":
        return cls(doc["iterations"], doc["log_likelihood_trace"], doc["converged"], doc["chosen_k"],
                   [tuple(kr) for kr in doc.get("kmeans_ratio_trace", [])])


def _clamp_cov(cov, floor):
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def weighted_log_likelihood(model: GmmModel, points, weights) -> float:
    """Demand-weighted average log-density, sum_n w_n ln p(x_n) / sum_n w_n."""
    x = _as_points(points)
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * model.logpdf(x)) / w.sum())


def weighted_em_fit(points, weights, init_means, max_iter: int = 200, tol: float = 1e-7,
                    covariance_floor: float = 1e-9, callback=None) -> tuple[GmmModel, FitReport]:
    """Weighted EM from K initial means (identity covariances, uniform weights).

    Sufficient statistics are scaled by the per-sample weights; covariance
    eigenvalues are clamped at ``covariance_floor``. Stops when the weighted
    log-likelihood improves by less than ``tol`` relative, or at ``max_iter``.
    ``callback(iteration, model, responsibilities)`` is invoked after every E-step.
    """
    x = _as_points(points)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(x):
        raise ValueError("points and weights differ in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not w.sum() > 0:
        raise FitError("all sample weights are zero")
    keep = w > 0
    x, w = x[keep], w[keep] / w[keep].sum()
    means = np.asarray(init_means, dtype=float).reshape(-1, x.shape[1]).copy()
    k, d = means.shape
    covs = np.stack([_clamp_cov(np.eye(d), covariance_floor) for _ in range(k)])
    pis = np.full(k, 1.0 / k)

    model = GmmModel(pis, means, covs)
    trace = [weighted_log_likelihood(model, x, w)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # E step
        logp = _component_logpdf(x, means, covs)
        with np.errstate(divide="ignore"):
            joint = logp + np.log(pis)
        resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        if not np.all(np.isfinite(resp)):
            raise FitError(f"non-finite responsibilities at iteration {it}")
        if callback is not None:
            callback(it, model, resp)
        # M step
        wr = resp * w[:, None]
        nk = wr.sum(axis=0)
        new_means = means.copy()
        new_covs = covs.copy()
        for j in range(k):
            if nk[j] <= 0:
                continue
            new_means[j] = wr[:, j] @ x / nk[j]
            diff = x - new_means[j]
            new_covs[j] = _clamp_cov((wr[:, j, None] * diff).T @ diff / nk[j], covariance_floor)
        means, covs = new_means, new_covs
        pis = nk / nk.sum()
        model = GmmModel(pis, means, covs)
        ll = weighted_log_likelihood(model, x, w)
        if not np.isfinite(ll):
            raise FitError(f"log-likelihood became {ll} at iteration {it}")
        trace.append(ll)
        if trace[-1] - trace[-2] < tol * max(1.0, abs(trace[-2])):
            converged = True
            break
    return model, FitReport(it, trace, converged, k)


def fit_mixture(points, weights, k_min: int = 1, k_max: int = 8, seed: int = 0, covariance_floor: float = 1e-9,
                max_iter: int = 200, tol: float = 1e-7, restarts: int = 5,
                single_cluster_ratio: float = 0.05) -> tuple[GmmModel, FitReport]:
    """Pick K, initialise with weighted K-means, then run weighted EM."""
    scan = scan_k(points, weights, k_min, k_max, seed, restarts=restarts, single_cluster_ratio=single_cluster_ratio)
    model, report = weighted_em_fit(points, weights, scan.results[scan.k].means, max_iter=max_iter, tol=tol,
                                    covariance_floor=covariance_floor)
    report.kmeans_ratio_trace = list(scan.ratios)
    return model, report


# ---------------------------------------------------------------- hourly models


@dataclass(frozen=True)
class PredictorSettings:
    k_min: int = 1
    k_max: int = 8
    restarts: int = 5
    max_iter: int = 200
    tol: float = 1e-7
    floor_fraction: float = 1e-6
    single_cluster_ratio: float = 0.05

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class QuantityModel:
    """Spatial and temporal mixtures for one quantity (bytes or users) of one hour."""

    spatial: Optional[GmmModel]
    temporal: Optional[GmmModel]
    spatial_report: Optional[FitReport] = None
    temporal_report: Optional[FitReport] = None

    @property
    def no_demand(self) -> bool:
        return self.spatial is None

    def to_json(self) -> dict:
        return {
            "spatial": None if self.spatial is None else self.spatial.to_json(),
            "temporal": None if self.temporal is None else self.temporal.to_json(),
            "spatial_report": None if self.spatial_report is None else self.spatial_report.to_json(),
            "temporal_report": None if self.temporal_report is None else self.temporal_report.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "QuantityModel":
        def opt(key, loader):
            return None if doc.get(key) is None else loader(doc[key])
        return cls(opt("spatial", GmmModel.from_json), opt("temporal", GmmModel.from_json),
                   opt("spatial_report", FitReport.from_json), opt("temporal_report", FitReport.from_json))


def fit_hour(s: HourlySlice, region: Region, settings: PredictorSettings = PredictorSettings(),
             seed: int = 0) -> QuantityModel:
    """Fit the spatial and temporal mixtures of one hourly slice.

    Spatial samples are the per-day normalised densities pooled over days;
    the temporal model sees the daily totals with unit weights.
    """
    totals = s.day_totals
    if not np.any(totals > 0):
        return QuantityModel(None, None)
    try:
        day_tot = totals[s.day]
        keep = (s.weights > 0) & (day_tot > 0)
        w = s.weights[keep] / day_tot[keep]
        floor = settings.floor_fraction * region.diagonal ** 2
        spatial, sp_report = fit_mixture(
            s.points[keep], w, settings.k_min, settings.k_max, seed, floor, settings.max_iter, settings.tol,
            settings.restarts, settings.single_cluster_ratio)
        scale = float(np.max(np.abs(totals)))
        temporal, t_report = fit_mixture(
            totals.reshape(-1, 1), np.ones(len(totals)), settings.k_min, settings.k_max, seed + 1,
            settings.floor_fraction * scale ** 2, settings.max_iter, settings.tol, settings.restarts,
            settings.single_cluster_ratio)
    except FitError as exc:
        raise FitError(f"hour {s.hour_of_day}: {exc}") from exc
    return QuantityModel(spatial, temporal, sp_report, t_report)


@dataclass(eq=False)
class HourModel:
    hour: int
    bytes: QuantityModel
    users: QuantityModel

    def to_json(self) -> dict:
        return {"hour": self.hour, "bytes": self.bytes.to_json(), "users": self.users.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "HourModel":
        return cls(int(doc["hour"]), QuantityModel.from_json(doc["bytes"]), QuantityModel.from_json(doc["users"]))


@dataclass(eq=False)
class DemandModel:
    """The fitted hourly models of a training dataset."""

    hours: list
    region: Region
    period_hours: float
    seed: int
    settings: PredictorSettings

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "region": self.region.to_list(),
                "period_hours": self.period_hours, "seed": self.seed, "settings": self.settings.to_json(),
                "hours": [h.to_json() for h in self.hours]}

    @classmethod
    def from_json(cls, doc: dict) -> "DemandModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
        return cls([HourModel.from_json(h) for h in doc["hours"]], Region.from_list(doc["region"]),
                   float(doc["period_hours"]), int(doc["seed"]), PredictorSettings(**doc["settings"]))


def fit_dataset(data: TrafficDataset, settings: PredictorSettings = PredictorSettings(),
                seed: int = 0) -> DemandModel:
    """Fit the independent per-hour models of bytes and users."""
    byte_slices = hourly_slices(data, "bytes")
    user_slices = hourly_slices(data, "users")
    hours = []
    for bs, us in zip(byte_slices, user_slices):
        h = bs.hour_of_day
        hours.append(HourModel(h, fit_hour(bs, data.region, settings, seed + 1009 * h),
                               fit_hour(us, data.region, settings, seed + 1009 * h + 500)))
        log.debug("fitted hour %d", h)
    return DemandModel(hours, data.region, data.period_hours, seed, settings)


@dataclass(eq=False)
class DemandForecast:
    """Predicted totals and spatial densities (restricted to the region) of one hour."""

    hour: int
    total_bytes: float
    total_users: float
    density: Optional[GmmModel]
    user_density: Optional[GmmModel]
    region: Region
    period_hours: float = 1.0

    @property
    def no_demand(self) -> bool:
        return self.density is None or not self.total_bytes > 0

    def _mass(self, model):
        r = self.region
        return float(model.rect_masses([r.x_min, r.x_max], [r.y_min, r.y_max])[0, 0])

    def density_at(self, x, y, users: bool = False) -> np.ndarray:
        """Region-renormalised density g (or f with ``users=True``) at points."""
        model = self.user_density if users else self.density
        if model is None:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        inside = self.region.contains(pts[:, 0], pts[:, 1])
        vals = np.where(inside, model.pdf(pts) / self._mass(model), 0.0)
        return vals.reshape(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def rate_density_bps(self, x, y) -> np.ndarray:
        """Minimum rate requirement per unit area, D g(x, y) / T in bit/s/m^2."""
        return self.total_bytes * 8.0 / (self.period_hours * 3600.0) * self.density_at(x, y)

    def cell_masses(self, x_edges, y_edges, users: bool = False) -> np.ndarray:
        model = self.user_density if users else self.density
        if model is None:
            return np.zeros((len(x_edges) - 1, len(y_edges) - 1))
        m = model.rect_masses(x_edges, y_edges)
        total = m.sum()
        return m / total if total > 0 else m


def predict(model: HourModel, threshold: float, region: Region, period_hours: float = 1.0) -> DemandForecast:
    """Forecast of one hour: totals from the CDF threshold, densities from the spatial mixtures."""
    if model.bytes.no_demand:
        return DemandForecast(model.hour, 0.0, 0.0, None, None, region, period_hours)
    total_bytes = max(0.0, cdf_invert(model.bytes.temporal, threshold))
    if model.users.no_demand:
        total_users, user_density = 0.0, model.bytes.spatial
    else:
        total_users = max(0.0, cdf_invert(model.users.temporal, threshold))
        user_density = model.users.spatial
    return DemandForecast(model.hour, total_bytes, total_users, model.bytes.spatial, user_density, region,
                          period_hours)
