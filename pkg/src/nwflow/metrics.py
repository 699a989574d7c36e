"""Two-sample metrics, the bandwidth heuristic, n_eff profiles, and rate fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateScale, LogDomainError, SizeError
from .kernels import SupportSet, softmax_weights
from .schedule import PathSchedule

__all__ = [
    "Mmd2Result",
    "RateFit",
    "NeffProfile",
    "mmd2_unbiased",
    "median_heuristic",
    "c2st_1nn",
    "neff_profile",
    "fit_power_law",
]


@dataclass(frozen=True)
class Mmd2Result:
    """Unbiased squared MMD; may be negative by construction."""

    value: float
    kernel_bandwidth: float
    n_x: int
    n_y: int


def mmd2_unbiased(X: np.ndarray, Y: np.ndarray, bandwidth: float) -> Mmd2Result:
    """Unbiased Gaussian-kernel U-statistic.

    The cross term is accumulated symmetrically (matrix plus its transpose,
    halved) so that swapping the arguments returns the bitwise-identical
    value.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n, np_ = X.shape[0], Y.shape[0]
    if n < 2 or np_ < 2:
        raise SizeError("unbiased MMD^2 needs at least two points per sample")
    if not bandwidth > 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth!r}")
    inv = -0.5 / (bandwidth * bandwidth)
    kxx = np.exp(inv * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(inv * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(inv * cdist(X, Y, "sqeuclidean"))
    a = (float(kxx.sum()) - float(np.trace(kxx))) / (n * (n - 1))
    b = (float(kyy.sum()) - float(np.trace(kyy))) / (np_ * (np_ - 1))
    cross = float(kxy.sum()) + float(kxy.T.sum())
    value = a + b - cross / (n * np_)
    return Mmd2Result(value=value, kernel_bandwidth=float(bandwidth), n_x=n, n_y=np_)


def median_heuristic(X: np.ndarray, Y: np.ndarray, cap: int = 2000) -> float:
    """Median pairwise distance of the pooled sample divided by sqrt(2).

    Pools above `cap` points are thinned on a deterministic stride so the
    O(n^2) distance pass stays bounded.
    """
    pooled = np.vstack([np.atleast_2d(X), np.atleast_2d(Y)])
    if pooled.shape[0] < 2:
        raise SizeError("median heuristic needs at least two pooled points")
    if pooled.shape[0] > cap:
        idx = np.unique(np.linspace(0, pooled.shape[0] - 1, cap).round().astype(int))
        pooled = pooled[idx]
    med = float(np.median(pdist(pooled)))
    if med == 0.0:
        raise DegenerateScale("all pooled points identical; no pairwise scale")
    return med / np.sqrt(2.0)


def c2st_1nn(X: np.ndarray, Y: np.ndarray, chunk: int = 1024) -> float:
    """Leave-one-out 1-nearest-neighbor accuracy on the pooled labeled sample.

    Distance ties (exact duplicates) are scored fractionally by the label
    balance of the tied set, so identical samples come out near 0.5 instead
    of flapping on index order.  Near 0.5 under the null, 1.0 when separable.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n = X.shape[0]
    if Y.shape[0] != n:
        raise SizeError("the two samples must have equal size")
    if n < 10:
        raise SizeError("need at least 10 points per sample")
    pooled = np.vstack([X, Y])
    labels = np.repeat([0, 1], n)
    total = 0.0
    for lo in range(0, 2 * n, chunk):
        hi = min(lo + chunk, 2 * n)
        dist = cdist(pooled[lo:hi], pooled, "sqeuclidean")
        dist[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        dmin = dist.min(axis=1)
        ties = dist == dmin[:, None]
        same = ties & (labels[None, :] == labels[lo:hi, None])
        total += float(np.sum(same.sum(axis=1) / ties.sum(axis=1)))
    return total / (2 * n)


@dataclass(frozen=True)
class NeffProfile:
    """Per-time effective sample size summary over sampled query points."""

    t: np.ndarray
    h: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {
                "t": float(self.t[i]),
                "h_t": float(self.h[i]),
                "median_neff": float(self.median[i]),
                "q25": float(self.q25[i]),
                "q75": float(self.q75[i]),
            }
            for i in range(len(self.t))
        ]


def neff_profile(
    support: SupportSet,
    sched: PathSchedule,
    t_grid: Sequence[float],
    n_queries: int = 256,
    seed: int = 0,
    query_law: Optional[Callable[[np.random.Generator, float, int], np.ndarray]] = None,
) -> NeffProfile:
    """Median (and quartile) n_eff of the kernel weights along the flow clock.

    Queries default to the model's own path marginal at each time: a support
    row scaled by t plus sigma_t noise.  Weights are evaluated in the
    de-scaled frame at bandwidth h(t), which is where the smoothing happens.
    """
    t_arr = np.asarray(list(t_grid), dtype=np.float64)
    if np.any(t_arr <= 0.0) or np.any(t_arr > 1.0):
        raise ValueError("t grid must lie in (0, 1]")
    med = np.empty_like(t_arr)
    q25 = np.empty_like(t_arr)
    q75 = np.empty_like(t_arr)
    hs = np.empty_like(t_arr)
    rng = np.random.default_rng(np.random.SeedSequence([11, seed]))
    for i, t in enumerate(t_arr):
        sig = sched.sigma(t)
        h = sched.bandwidth(t)
        hs[i] = h
        if query_law is None:
            idx = rng.integers(support.m, size=n_queries)
            x = t * support.points[idx] + sig * rng.standard_normal((n_queries, support.d))
        else:
            x = np.atleast_2d(query_law(rng, float(t), n_queries))
        x_tilde = x / t
        lg = -cdist(x_tilde, support.points, "sqeuclidean") / (2.0 * h * h)
        w = softmax_weights(lg)
        neff = 1.0 / np.sum(w * w, axis=1)
        med[i], q25[i], q75[i] = (
            float(np.median(neff)),
            float(np.percentile(neff, 25)),
            float(np.percentile(neff, 75)),
        )
    return NeffProfile(t=t_arr, h=hs, median=med, q25=q25, q75=q75)


@dataclass(frozen=True)
class RateFit:
    """Power-law fit value ~ m^(-alpha) from OLS on the log-log points."""

    alpha: float
    r_squared: float
    points: tuple[tuple[float, float], ...]
    intercept: float


def fit_power_law(points: Sequence[tuple[float, float]]) -> RateFit:
    """OLS on (log m, log value); alpha is the negated slope.

    A zero-variance response is fit as alpha = 0 with R^2 = 0 by convention.
    """
    pts = [(float(m), float(v)) for m, v in points]
    if len(pts) < 3:
        raise SizeError(f"need at least 3 points for a rate fit, got {len(pts)}")
    if any(v <= 0.0 for _, v in pts):
        raise LogDomainError("power-law fit requires strictly positive values")
    log_m = np.log([m for m, _ in pts])
    log_v = np.log([v for _, v in pts])
    if np.max(log_v) == np.min(log_v):
        return RateFit(alpha=0.0, r_squared=0.0, points=tuple(pts), intercept=float(log_v[0]))
    slope, intercept = np.polyfit(log_m, log_v, 1)
    resid = log_v - (slope * log_m + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((log_v - log_v.mean()) ** 2))
    return RateFit(
        alpha=float(-slope),
        r_squared=1.0 - ss_res / ss_tot,
        points=tuple(pts),
        intercept=float(intercept),
    )
