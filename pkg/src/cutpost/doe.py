"""Design-of-experiments samplers for the cut-parameter distribution.

Four ways to produce an ``L x q`` design representing a target distribution:
plain i.i.d. draws, Latin hypercube sampling through per-margin quantile
functions, support points (energy-distance minimization against a sample
pool or an analytic distribution), and minimum-energy designs driven only by
an unnormalized log-density.  Variance inflation (linear, or the bounded
"power" variant based on flattening a per-margin KDE) widens a training
design so downstream emulators avoid extrapolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

_EPS_DIST = 1e-12


class MappingError(ValueError):
    """A quantile function returned a non-finite value for some margin."""


class BoundsViolationError(ValueError):
    """Linear inflation pushed points outside finite bounds."""


@dataclass
class DesignMatrix:
    """An ``L x q`` set of cut-parameter locations with provenance."""

    points: np.ndarray
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise ValueError("a design needs at least one point")
        self.points = pts

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        meta = {k: v for k, v in self.meta.items() if _json_safe(v)}
        header = "# provenance=%s meta=%s\n" % (self.provenance, json.dumps(meta))
        cols = ",".join(f"g{j + 1}" for j in range(self.dim))
        with open(path, "w") as fh:
            fh.write(header)
            fh.write(cols + "\n")
            for row in self.points:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _json_safe(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _check_bounds(points, bounds):
    if bounds is None:
        return
    lo, hi = _bounds_arrays(bounds, points.shape[1])
    if np.any(points < lo) or np.any(points > hi):
        raise AssertionError("design violates declared bounds")


def _bounds_arrays(bounds, q):
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (q,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (q,))
    return lo, hi


# ---------------------------------------------------------------------------
# i.i.d. and Latin hypercube designs
# ---------------------------------------------------------------------------


def iid_design(sampler, size: int, rng: np.random.Generator) -> DesignMatrix:
    """``size`` independent draws from ``sampler(n, rng)``."""
    if size < 1:
        raise ValueError("design size must be >= 1")
    pts = np.asarray(sampler(size, rng), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return DesignMatrix(pts, "iid", {"L": size})


def lhs_design(quantile_fns, size: int, rng: np.random.Generator, swaps: int = 50) -> DesignMatrix:
    """Latin hypercube design mapped through per-margin quantile functions.

    Each margin gets exactly one point per probability stratum
    ``[i/L, (i+1)/L)``; the unit-cube sample is then improved by ``swaps``
    random column-pair swaps kept only when they increase the minimum
    pairwise distance (maximin), and finally mapped through the quantiles.
    """
    if size < 1:
        raise ValueError("design size must be >= 1")
    q = len(quantile_fns)
    u = np.empty((size, q))
    for j in range(q):
        u[:, j] = (rng.permutation(size) + rng.random(size)) / size

    if q > 1 and size > 1:
        d2 = _pairwise_sq(u)
        best = _min_offdiag(d2)
        for _ in range(swaps):
            col = int(rng.integers(q))
            i, j = rng.choice(size, size=2, replace=False)
            u[[i, j], col] = u[[j, i], col]
            d2_new = _pairwise_sq(u)
            cand = _min_offdiag(d2_new)
            if cand > best:
                best = cand
            else:
                u[[i, j], col] = u[[j, i], col]

    pts = np.empty_like(u)
    for j, qf in enumerate(quantile_fns):
        pts[:, j] = [qf(v) for v in u[:, j]]
        if not np.all(np.isfinite(pts[:, j])):
            raise MappingError(f"quantile function for margin {j} returned non-finite values")
    return DesignMatrix(pts, "lhs", {"L": size, "swaps": swaps})


def _pairwise_sq(x):
    d = cdist(x, x, "sqeuclidean")
    np.fill_diagonal(d, np.inf)
    return d


def _min_offdiag(d):
    return float(np.min(d))


# ---------------------------------------------------------------------------
# support points
# ---------------------------------------------------------------------------


def energy_distance(points, pool) -> float:
    """Sample energy criterion ``2/(NL) sum||d-x|| - 1/L^2 sum||d-d'||``."""
    points = np.atleast_2d(points)
    pool = np.atleast_2d(pool)
    n, size = pool.shape[0], points.shape[0]
    attract = cdist(points, pool).sum() * 2.0 / (n * size)
    repel = cdist(points, points).sum() / size**2
    return float(attract - repel)


def support_points(
    pool,
    size: int,
    rng: np.random.Generator,
    bounds=None,
    max_iter: int = 500,
    tol: float = 1e-8,
    sample_pool_size: int = 10_000,
    max_work_pool: int = 8000,
) -> DesignMatrix:
    """Energy-distance-minimizing representative points of a distribution.

    ``pool`` may be an ``N x q`` sample array, in which case the result is a
    subsample: the continuous majorization-minimization optimum is projected
    onto distinct pool members.  Alternatively ``pool`` may be a sampler
    (an object with ``.sample(n, rng)`` or a callable ``(n, rng)``), in which
    case an internal pool of ``sample_pool_size`` draws is used and the
    continuous optimum is returned (clipped to ``bounds`` when given).

    Pools larger than ``max_work_pool`` are thinned (uniformly at random)
    for the optimization itself; the final projection still uses the full
    pool.  The energy criterion is non-increasing across iterations by
    construction; a violation raises, since it indicates a broken update.
    """
    if size < 1:
        raise ValueError("design size must be >= 1")
    subsample = isinstance(pool, np.ndarray) or (
        not callable(pool) and not hasattr(pool, "sample")
    )
    if subsample:
        pool_arr = np.atleast_2d(np.asarray(pool, dtype=float))
        if pool_arr.shape[0] == 1 and pool_arr.shape[1] > 1 and np.asarray(pool).ndim == 1:
            pool_arr = pool_arr.T
        if pool_arr.shape[0] < size:
            raise ValueError("pool must contain at least L points")
    else:
        draw = pool.sample if hasattr(pool, "sample") else pool
        pool_arr = np.atleast_2d(np.asarray(draw(max(sample_pool_size, size), rng), dtype=float))
        if pool_arr.ndim == 1 or pool_arr.shape[0] == 1:
            pool_arr = pool_arr.reshape(-1, 1)

    n = pool_arr.shape[0]
    work = pool_arr
    if n > max_work_pool:
        work = pool_arr[rng.choice(n, size=max_work_pool, replace=False)]

    idx0 = rng.choice(work.shape[0], size=size, replace=False)
    design = work[idx0].copy()
    # nudge off the pool points: the MM update degenerates (infinite
    # self-attraction) when a design point coincides with a pool member
    spread = work.std(axis=0)
    spread[spread == 0.0] = 1.0
    design += 0.05 * spread * rng.standard_normal(design.shape)
    clip_lo = clip_hi = None
    if bounds is not None:
        clip_lo, clip_hi = _bounds_arrays(bounds, design.shape[1])
        design = np.clip(design, clip_lo, clip_hi)

    design, history = _sp_minimize(design, work, max_iter, tol, clip_lo, clip_hi)

    if subsample:
        design = _project_to_pool(design, pool_arr)
        history.append(energy_distance(design, pool_arr))

    dm = DesignMatrix(
        design,
        "support",
        {"L": size, "energy": history[-1], "energy_history": history, "subsample": subsample},
    )
    _check_bounds(dm.points, bounds)
    return dm


def _sp_minimize(design, pool, max_iter, tol, clip_lo, clip_hi):
    """Buffer-reusing majorization-minimization descent of the energy."""
    size, q = design.shape
    n = pool.shape[0]
    pool_sq = np.einsum("ij,ij->i", pool, pool)
    dp = np.empty((size, n))
    ds = np.empty((size, size))
    history = []
    prev = None
    for _ in range(max_iter):
        des_sq = np.einsum("ij,ij->i", design, design)
        np.dot(design, pool.T, out=dp)
        dp *= -2.0
        dp += des_sq[:, None]
        dp += pool_sq[None, :]
        np.clip(dp, 0.0, None, out=dp)
        np.sqrt(dp, out=dp)
        np.dot(design, design.T, out=ds)
        ds *= -2.0
        ds += des_sq[:, None]
        ds += des_sq[None, :]
        np.clip(ds, 0.0, None, out=ds)
        np.sqrt(ds, out=ds)

        energy = 2.0 / (n * size) * float(dp.sum()) - float(ds.sum()) / size**2
        history.append(energy)
        if prev is not None:
            if energy > prev + 1e-9 * max(1.0, abs(prev)):
                raise RuntimeError("support-point update increased the energy criterion")
            if abs(prev - energy) <= tol * max(1.0, abs(prev)):
                break
        prev = energy

        np.maximum(dp, _EPS_DIST, out=dp)
        np.divide(1.0, dp, out=dp)  # dp now holds inverse distances
        denom = dp.sum(axis=1)
        attract = dp @ pool
        if size > 1:
            np.maximum(ds, _EPS_DIST, out=ds)
            np.divide(1.0, ds, out=ds)
            np.fill_diagonal(ds, 0.0)
            repel = (n / size) * (ds.sum(axis=1)[:, None] * design - ds @ design)
        else:
            repel = 0.0
        design = (attract + repel) / denom[:, None]
        if clip_lo is not None:
            design = np.clip(design, clip_lo, clip_hi)
    else:
        history.append(energy_distance(design, pool))
    return design, history


def _project_to_pool(design, pool):
    """Greedy assignment of design points to distinct nearest pool members."""
    d = cdist(design, pool)
    size = design.shape[0]
    out = np.empty_like(design)
    taken_rows = np.zeros(size, dtype=bool)
    for _ in range(size):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        out[i] = pool[j]
        taken_rows[i] = True
        d[i, :] = np.inf
        d[:, j] = np.inf
    assert taken_rows.all()
    return out


# ---------------------------------------------------------------------------
# minimum-energy designs
# ---------------------------------------------------------------------------


def mined_design(
    log_density,
    size: int,
    init: DesignMatrix | np.ndarray,
    bounds,
    rng: np.random.Generator,
    proposals_per_point: int = 2000,
    cooling: float = 0.99,
) -> DesignMatrix:
    """Minimum-energy design from an unnormalized log-density.

    Charges are ``q(x) = exp(-log_density(x) / (2 q_dim))`` and the total
    Coulomb energy ``sum_{i<j} q_i q_j / ||x_i - x_j||`` is minimized by
    coordinate-wise simulated annealing from ``init`` (clipped to bounds),
    with geometric cooling per sweep.  With a single point the criterion
    reduces to seeking a density mode.
    """
    pts = init.points.copy() if isinstance(init, DesignMatrix) else np.atleast_2d(
        np.asarray(init, dtype=float)
    ).copy()
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] != size:
        raise ValueError("init must provide exactly L points")
    q_dim = pts.shape[1]
    lo, hi = _bounds_arrays(bounds, q_dim)
    pts = np.clip(pts, lo, hi)

    logp = np.array([float(log_density(p)) for p in pts])
    if not np.any(np.isfinite(logp)):
        raise InitializationErrorDoe("log-density is -inf on every initial point")
    # charges in log space, shifted so exponentials stay representable
    shift = np.max(logp[np.isfinite(logp)])
    log_charge = (shift - logp) / (2.0 * q_dim)

    span = hi - lo
    span[~np.isfinite(span)] = 4.0 * max(np.std(pts, axis=0).max(), 1.0)
    step = 0.1 * span

    def pair_energy(i, p_i, lq_i):
        if size == 1:
            return lq_i  # single point: minimize charge = seek the mode
        d = np.maximum(np.linalg.norm(pts - p_i, axis=1), _EPS_DIST)
        d[i] = np.inf
        return float(np.sum(np.exp(lq_i + log_charge) / d))

    energies = np.array([pair_energy(i, pts[i], log_charge[i]) for i in range(size)])
    t0 = float(np.median(np.abs(energies))) + 1e-12
    temp = t0

    n_sweeps = proposals_per_point
    for _ in range(n_sweeps):
        order = rng.permutation(size)
        coords = rng.integers(0, q_dim, size=size)
        zs = rng.standard_normal(size)
        log_us = np.log(rng.random(size))
        for k in range(size):
            i = order[k]
            c = coords[k]
            prop = pts[i].copy()
            prop[c] = min(max(prop[c] + step[c] * zs[k], lo[c]), hi[c])
            lp_new = float(log_density(prop))
            if not math.isfinite(lp_new):
                continue
            lq_new = (shift - lp_new) / (2.0 * q_dim)
            e_old = pair_energy(i, pts[i], log_charge[i])
            e_new = pair_energy(i, prop, lq_new)
            if e_new - e_old < -temp * log_us[k]:
                pts[i] = prop
                log_charge[i] = lq_new
        temp *= cooling

    dm = DesignMatrix(pts, "mined", {"L": size, "proposals_per_point": proposals_per_point, "cooling": cooling})
    _check_bounds(dm.points, (lo, hi))
    return dm


class InitializationErrorDoe(ValueError):
    """MinED cannot start: density vanishes on the whole initial design."""


# ---------------------------------------------------------------------------
# variance inflation
# ---------------------------------------------------------------------------


def inflate_variance(
    design: DesignMatrix | np.ndarray,
    omega: float,
    bounds,
    mode: str,
    rng: np.random.Generator | None = None,
    n_out: int | None = None,
) -> DesignMatrix:
    """Widen a design's per-margin spread for emulator training.

    ``mode="linear"`` applies the exact affine rule
    ``x* = m + (1 + omega) (x - m)`` per margin and refuses to leave finite
    bounds (use the power mode there).  ``mode="power"`` fits a Gaussian KDE
    per margin, raises its density to ``omega in (0, 1]``, renormalizes on a
    512-point grid spanning the bounds, and resamples by inverse CDF with
    stratified uniforms.
    """
    pts = design.points if isinstance(design, DesignMatrix) else np.atleast_2d(
        np.asarray(design, dtype=float)
    )
    if pts.ndim == 1:
        pts = pts[:, None]
    base = design.provenance if isinstance(design, DesignMatrix) else "array"
    q = pts.shape[1]
    sd_in = pts.std(axis=0, ddof=1) if pts.shape[0] > 1 else np.zeros(q)

    if mode == "linear":
        if omega <= 0:
            raise ValueError("linear inflation needs omega > 0")
        m = pts.mean(axis=0)
        out = m + (1.0 + omega) * (pts - m)
        if bounds is not None:
            lo, hi = _bounds_arrays(bounds, q)
            if np.any(out < lo) or np.any(out > hi):
                raise BoundsViolationError(
                    "linear inflation leaves the support; use mode='power' "
                    "for bounded spaces"
                )
        meta = {"mode": "linear", "omega": omega, "sd_in": sd_in.tolist(), "sd_out": out.std(axis=0, ddof=1).tolist()}
        return DesignMatrix(out, f"inflated({base})", meta)

    if mode != "power":
        raise ValueError("mode must be 'linear' or 'power'")
    if not 0.0 < omega <= 1.0:
        raise ValueError("power inflation needs omega in (0, 1]")
    if bounds is None:
        raise ValueError("power inflation needs finite bounds")
    lo, hi = _bounds_arrays(bounds, q)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("power inflation needs finite bounds")
    if rng is None:
        raise ValueError("power inflation needs an rng")
    n_out = pts.shape[0] if n_out is None else int(n_out)

    out = np.empty((n_out, q))
    bandwidths = []
    for j in range(q):
        xj = pts[:, j]
        bw = _silverman(xj)
        bandwidths.append(bw)
        grid = np.linspace(lo[j], hi[j], 512)
        dens = np.exp(-0.5 * ((grid[:, None] - xj[None, :]) / bw) ** 2).sum(axis=1)
        dens = np.maximum(dens, 1e-300) ** omega
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        u = (rng.permutation(n_out) + rng.random(n_out)) / n_out
        out[:, j] = np.interp(u, cdf, grid)

    meta = {
        "mode": "power",
        "omega": omega,
        "bandwidths": [float(b) for b in bandwidths],
        "grid_size": 512,
        "sd_in": sd_in.tolist(),
        "sd_out": out.std(axis=0, ddof=1).tolist(),
    }
    return DesignMatrix(out, f"inflated({base})", meta)


def _silverman(x) -> float:
    n = x.shape[0]
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        raise ValueError("zero spread; KDE bandwidth undefined")
    return 0.9 * spread * n ** (-0.2)
