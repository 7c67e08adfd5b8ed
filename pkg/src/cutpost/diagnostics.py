"""Accuracy metrics and study harnesses.

Kolmogorov-Smirnov distances (one-sample against a CDF, and two-sample),
the empirical CDF and a Gaussian KDE for plot grids, and the
misspecification coverage/MSE simulation on the diamond-in-a-box problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import diamond


@dataclass(frozen=True)
class KsResult:
    distance: float
    n: int
    location: float

    def __float__(self):
        return self.distance


def ks_to_cdf(samples, cdf) -> KsResult:
    """Exact sup distance between the sample ECDF and a reference CDF,
    evaluated at both sides of every jump."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    try:
        f = np.asarray(cdf(x), dtype=float)
        if f.shape != x.shape:
            raise TypeError
    except Exception:  # scalar-only reference CDF
        f = np.array([float(cdf(v)) for v in x])
    hi = np.arange(1, n + 1) / n - f
    lo = f - np.arange(0, n) / n
    d_hi = float(np.max(hi))
    d_lo = float(np.max(lo))
    if d_hi >= d_lo:
        loc = float(x[int(np.argmax(hi))])
        dist = d_hi
    else:
        loc = float(x[int(np.argmax(lo))])
        dist = d_lo
    return KsResult(distance=dist, n=n, location=loc)


def ks_two_sample(a, b) -> KsResult:
    """Sup distance between two sample ECDFs over the merged order statistics."""
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValueError("both samples must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.shape[0]
    fb = np.searchsorted(b, grid, side="right") / b.shape[0]
    diffs = np.abs(fa - fb)
    k = int(np.argmax(diffs))
    return KsResult(distance=float(diffs[k]), n=a.shape[0] + b.shape[0], location=float(grid[k]))


def ecdf(samples):
    """Right-continuous empirical CDF as a vectorized callable."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")

    def f(v):
        v = np.asarray(v, dtype=float)
        out = np.searchsorted(x, v, side="right") / n
        return float(out) if v.ndim == 0 else out

    f.samples = x
    return f


def kde_1d(samples, bandwidth: float | None = None):
    """Gaussian kernel density estimate with the Silverman default bandwidth
    ``0.9 min(sd, IQR/1.34) n^(-1/5)``.  The bandwidth used is recorded on
    the returned callable."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples for a KDE")
    if bandwidth is None:
        sd = x.std(ddof=1)
        iqr = float(np.subtract(*np.percentile(x, [75, 25])))
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        if spread <= 0:
            raise ValueError("zero spread; KDE undefined")
        bandwidth = 0.9 * spread * n ** (-0.2)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    h = float(bandwidth)
    norm = 1.0 / (n * h * math.sqrt(2 * math.pi))

    def f(v):
        v = np.asarray(v, dtype=float)
        grid = np.atleast_1d(v)
        out = np.empty(grid.shape[0])
        step = max(1, int(2e6 // n))
        for s in range(0, grid.shape[0], step):
            z = (grid[s : s + step, None] - x[None, :]) / h
            out[s : s + step] = norm * np.exp(-0.5 * z**2).sum(axis=1)
        return float(out[0]) if v.ndim == 0 else out

    f.bandwidth = h
    f.n = n
    return f


# ---------------------------------------------------------------------------
# misspecification coverage / MSE study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageRow:
    setting: float
    method: str
    coverage: float
    mse: float
    reps: int
    level: float


def coverage_study(
    cfg: diamond.DbConfig,
    sweep: str,
    grid,
    reps: int,
    rng: np.random.Generator,
    methods=("full", "cut"),
    level: float = 0.95,
) -> list[CoverageRow]:
    """Repeatedly generate data under a possibly misspecified truth and score
    the analytic full-Bayes and cut posteriors.

    ``sweep`` is ``"sigma_star"`` (suspect measurement module: generator
    noise differs from the assumed ``sigma``) or ``"sigma_gamma_star"``
    (suspect prior module: the case weight is drawn with a different sd).
    Each rep draws a fresh case weight, generates data, and records whether
    the equal-tailed ``level`` interval covers the true diamond weight and
    the squared error of the posterior mean.
    """
    if reps < 100:
        raise ValueError("need at least 100 reps")
    if sweep not in ("sigma_star", "sigma_gamma_star"):
        raise ValueError("sweep must be 'sigma_star' or 'sigma_gamma_star'")
    from scipy.special import ndtri

    z = float(ndtri(0.5 + level / 2.0))
    rows = []
    for setting in grid:
        setting = float(setting)
        gamma_sd = setting if sweep == "sigma_gamma_star" else cfg.sigma_gamma
        r = rng.spawn(1)[0]
        hits = {m: 0 for m in methods}
        sq = {m: 0.0 for m in methods}
        for _ in range(reps):
            gamma_true = cfg.mu_gamma + gamma_sd * r.standard_normal()
            gen = cfg.with_truth(
                true_gamma=gamma_true,
                sigma_star=setting if sweep == "sigma_star" else cfg.sigma_star,
            )
            y = diamond.db_generate(gen, r)
            ybar1, ybar2 = diamond.db_suffstats(y, cfg)
            for m in methods:
                if m == "full":
                    post = diamond.db_marginal_posterior(cfg, ybar1, ybar2)
                elif m == "cut":
                    post = diamond.db_cut_analytic(cfg, ybar1, ybar2)
                else:
                    raise ValueError(f"unknown method {m!r}")
                mean, sd = post.values
                if abs(mean - cfg.true_alpha) <= z * sd:
                    hits[m] += 1
                sq[m] += (mean - cfg.true_alpha) ** 2
        for m in methods:
            rows.append(
                CoverageRow(
                    setting=setting,
                    method=m,
                    coverage=hits[m] / reps,
                    mse=sq[m] / reps,
                    reps=reps,
                    level=level,
                )
            )
    return rows
