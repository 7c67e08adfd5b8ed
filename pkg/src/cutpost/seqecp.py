"""Sequential extension of the conditional-posterior emulation engine.

After a build phase of ``L0`` locations, the remaining budget is spent one
location at a time: candidate locations drawn from the cut-parameter prior
are scored by an acquisition function - the emulator-induced variance of a
chosen quantile of the conditional posterior - and the argmax is evaluated
next.  Closed-form (delta-method) acquisitions exist for the Normal,
Weibull, and multivariate-Normal families; Monte Carlo over the GP
predictive normals covers everything else.

Convention for the Weibull acquisitions: the second parameter ``kappa`` is
the exponent of the quantile map ``zeta_u = scale * u_star ** kappa`` with
``u_star = -log(1 - u)``, i.e. the *reciprocal* of the shape parameter used
by `cutpost.families`.  :func:`sequential_ecp` converts emulator moments
accordingly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import ndtri

from . import doe, families
from .cutcore import (
    ConfigError,
    EcpConfig,
    _fit_bank,
    _phase1,
    _phase2,
    _prediction_points,
    build_design,
)

DEFAULT_QUANTILE = 0.9
DEFAULT_CANDIDATES = 500


def _check_u(u):
    if not 0.0 < u < 1.0:
        raise ValueError("quantile level must lie strictly inside (0, 1)")


def acquisition_normal(mu_hat, mu_var, sigma_hat, sigma_var, u) -> float:
    """Variance of the normal u-quantile induced by emulator uncertainty:
    ``Var(mu) + ndtri(u)^2 Var(sigma)``."""
    _check_u(u)
    if mu_var < 0 or sigma_var < 0:
        raise ValueError("predictive variances must be >= 0")
    z = float(ndtri(u))
    return float(mu_var + z * z * sigma_var)


def acquisition_weibull(scale_hat, scale_var, kappa_hat, kappa_var, u) -> float:
    """Second-order delta-method variance of ``scale * u_star ** kappa``."""
    _check_u(u)
    if scale_hat <= 0 or kappa_hat <= 0:
        raise ValueError("scale and kappa must be > 0")
    if scale_var < 0 or kappa_var < 0:
        raise ValueError("predictive variances must be >= 0")
    ustar = -math.log1p(-u)
    w2 = math.log(ustar) ** 2
    u2k = ustar ** (2.0 * kappa_hat)
    return float(
        u2k
        * (
            scale_var * (1.0 + 2.0 * kappa_var * w2)
            + scale_hat**2 * kappa_var * w2 * (1.0 - 0.25 * kappa_var * w2)
        )
    )


def linear_combination_quantile(params: families.FamilyParams, t, u) -> float:
    """Exact u-quantile of ``sum_i t_i alpha_i`` for a normal/MVN member."""
    _check_u(u)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.all(t == 0):
        raise ValueError("combination coefficients must not all be zero")
    mean = params.mean_vector()
    cov = params.covariance()
    if t.shape[0] != mean.shape[0]:
        raise ValueError("coefficient vector length must match the dimension")
    var = float(t @ cov @ t)
    if var < -1e-12 * max(1.0, float(np.abs(cov).max())):
        raise RuntimeError("combined variance negative; repair the covariance first")
    return float(t @ mean + ndtri(u) * math.sqrt(max(var, 0.0)))


def acquisition_mvn(mu_hat, mu_var, var_hat, var_var, cov_hat, cov_var, t, u) -> float:
    """Delta-method variance of the linear-combination quantile for an MVN
    conditional family.

    ``var_hat``/``var_var`` are the predictive mean and variance of the
    per-coordinate *variance* surfaces; ``cov_hat``/``cov_var`` cover the
    covariance surfaces in row-major upper-triangle order.
    """
    _check_u(u)
    mu_hat = np.atleast_1d(np.asarray(mu_hat, dtype=float))
    mu_var = np.atleast_1d(np.asarray(mu_var, dtype=float))
    var_hat = np.atleast_1d(np.asarray(var_hat, dtype=float))
    var_var = np.atleast_1d(np.asarray(var_var, dtype=float))
    cov_hat = np.asarray(cov_hat, dtype=float).reshape(-1)
    cov_var = np.asarray(cov_var, dtype=float).reshape(-1)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = t.shape[0]
    iu = np.triu_indices(p, k=1)
    tt = (t[iu[0]] * t[iu[1]]) if p > 1 else np.zeros(0)

    z = float(ndtri(u))
    e_d1 = float(t @ mu_hat)
    e_d1_sq = e_d1**2 + float((t**2) @ mu_var)
    e_d2 = float((t**2) @ var_hat + 2.0 * (tt @ cov_hat if p > 1 else 0.0))
    if e_d2 <= 0:
        raise ValueError("combined variance E(delta_2) must be > 0")
    spread = float((t**4) @ var_var + 2.0 * (tt @ cov_var if p > 1 else 0.0))
    e_sqrt_d2 = math.sqrt(e_d2) - 0.5 * (1.0 / (16.0 * e_d2)) ** 1.5 * spread
    first = e_d1_sq + z * z * e_d2 + 2.0 * z * e_d1 * e_sqrt_d2
    second = (e_d1 + z * e_sqrt_d2) ** 2
    return float(first - second)


@dataclass
class McAcquisition:
    value: float
    n_rejected: int


def acquisition_mc(
    tag: families.FamilyTag,
    psi_hat,
    psi_var,
    u,
    n_mc: int,
    rng: np.random.Generator,
    t=None,
) -> McAcquisition:
    """Monte Carlo acquisition: sample the parameters from their independent
    GP predictive normals and take the sample variance of the quantile.

    For the MVN family ``psi_hat``/``psi_var`` follow the
    ``(mu_i, variance_i, cov_ij)`` layout of :func:`acquisition_mvn`; draws
    with a nonpositive combined variance (or nonpositive scale/kappa for the
    Weibull) are rejected and resampled, with the rejection count reported.
    """
    _check_u(u)
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    psi_hat = np.atleast_1d(np.asarray(psi_hat, dtype=float))
    psi_var = np.atleast_1d(np.asarray(psi_var, dtype=float))
    sds = np.sqrt(psi_var)
    z = float(ndtri(u))
    kind = tag.kind
    p = tag.p
    if kind == "mvn":
        t = np.ones(p) if t is None else np.atleast_1d(np.asarray(t, dtype=float))
        iu = np.triu_indices(p, k=1)
        tt = t[iu[0]] * t[iu[1]] if p > 1 else np.zeros(0)

    vals = np.empty(0)
    n_rejected = 0
    guard = 0
    while vals.shape[0] < n_mc:
        need = n_mc - vals.shape[0]
        draw = psi_hat[None, :] + sds[None, :] * rng.standard_normal((need, psi_hat.shape[0]))
        if kind == "normal":
            ok = draw[:, 1] > 0
            q = draw[ok, 0] + z * draw[ok, 1]
        elif kind == "weibull":
            ok = (draw[:, 0] > 0) & (draw[:, 1] > 0)
            ustar = -math.log1p(-u)
            q = draw[ok, 0] * ustar ** draw[ok, 1]
        else:
            d2 = (t**2) @ draw[:, p : 2 * p].T
            if p > 1:
                d2 = d2 + 2.0 * (tt @ draw[:, 2 * p :].T)
            ok = d2 > 0
            q = draw[ok, : p] @ t + z * np.sqrt(d2[ok])
        n_rejected += int(need - ok.sum())
        vals = np.concatenate([vals, q])
        guard += 1
        if guard > 1000:
            raise RuntimeError("acquisition_mc cannot find valid parameter draws")
    if n_rejected > n_mc:
        warnings.warn(
            "acquisition_mc rejected more draws than it kept; the predictive "
            "normals put most mass on invalid parameters",
            RuntimeWarning,
        )
    return McAcquisition(float(np.var(vals, ddof=1)), n_rejected)


# ---------------------------------------------------------------------------
# emulator moments -> acquisition inputs
# ---------------------------------------------------------------------------


def _lognormal_moments(mean_log, var_log, factor=1.0):
    """Mean/variance of exp(factor * X) for X ~ N(mean_log, var_log)."""
    m = factor * mean_log
    s2 = factor**2 * var_log
    mean = np.exp(m + 0.5 * s2)
    var = np.expm1(s2) * np.exp(2.0 * m + s2)
    return mean, var


def _score_candidates(bank, candidates, u, t, rng, n_mc=4000):
    """Acquisition value per candidate, family-matched with MC fallback."""
    preds = bank.surface_moments(candidates)
    means = np.column_stack([p.mean for p in preds])
    varis = np.column_stack([p.sd**2 for p in preds])
    kind = bank.tag.kind
    n = candidates.shape[0]
    scores = np.empty(n)
    rejected = 0
    if kind == "normal":
        s_hat, s_var = _lognormal_moments(means[:, 1], varis[:, 1])
        for i in range(n):
            scores[i] = acquisition_normal(means[i, 0], varis[i, 0], s_hat[i], s_var[i], u)
    elif kind == "weibull":
        l_hat, l_var = _lognormal_moments(means[:, 0], varis[:, 0])
        k_hat, k_var = _lognormal_moments(means[:, 1], varis[:, 1], factor=-1.0)
        for i in range(n):
            scores[i] = acquisition_weibull(l_hat[i], l_var[i], k_hat[i], k_var[i], u)
    elif kind == "mvn":
        p = bank.tag.p
        v_hat, v_var = _lognormal_moments(means[:, p : 2 * p], varis[:, p : 2 * p], factor=2.0)
        for i in range(n):
            try:
                scores[i] = acquisition_mvn(
                    means[i, :p], varis[i, :p],
                    v_hat[i], v_var[i],
                    means[i, 2 * p :], varis[i, 2 * p :],
                    t, u,
                )
            except ValueError:
                mc = acquisition_mc(
                    bank.tag,
                    np.concatenate([means[i, :p], v_hat[i], means[i, 2 * p :]]),
                    np.concatenate([varis[i, :p], v_var[i], varis[i, 2 * p :]]),
                    u, 1000, rng, t=t,
                )
                scores[i] = mc.value
                rejected += mc.n_rejected
    else:  # pragma: no cover - no such family today
        for i in range(n):
            mc = acquisition_mc(bank.tag, means[i], varis[i], u, n_mc, rng, t=t)
            scores[i] = mc.value
            rejected += mc.n_rejected
    return scores, rejected


def _support_fallback(design_points, candidates):
    """Pick the candidate whose addition minimizes the energy criterion of
    the augmented design against the candidate cloud."""
    size = design_points.shape[0]
    n = candidates.shape[0]
    d_cp = cdist(candidates, candidates)
    d_cd = cdist(candidates, design_points)
    s_d = cdist(design_points, candidates).sum()
    t_d = cdist(design_points, design_points).sum()
    attract = 2.0 / (n * (size + 1)) * (s_d + d_cp.sum(axis=1))
    repel = (t_d + 2.0 * d_cd.sum(axis=1)) / (size + 1) ** 2
    return int(np.argmin(attract - repel))


def sequential_ecp(
    problem,
    cfg: EcpConfig,
    build_size: int,
    rng: np.random.Generator,
    u: float = DEFAULT_QUANTILE,
    t=None,
    n_candidates: int = DEFAULT_CANDIDATES,
):
    """Run ECP with a build phase of ``build_size`` locations followed by
    acquisition-driven selection of the remaining budget.

    Returns ``(mixture, bank, trace)`` where ``trace`` has one entry per
    sequential round (chosen location, score, MC rejection count, fallback
    flag).  With ``build_size`` equal to the full budget this reduces
    exactly to :func:`~cutpost.cutcore.ecp_sample` under the same stream.
    """
    cfg.validate()
    _check_u(u)
    if cfg.bootstrap_b is not None:
        raise ConfigError("bootstrapping is not supported in the sequential driver")
    total = cfg.budget(problem.q)
    if not 3 <= build_size <= total:
        raise ConfigError("need 3 <= build_size <= L")
    if n_candidates < 10:
        raise ConfigError("need at least 10 candidates per round")
    if t is None and cfg.family.kind == "mvn":
        t = np.ones(cfg.family.p)

    r_design, r_p1, r_seq, r_p2 = rng.spawn(4)
    design = build_design(problem, build_size, cfg.design_method, r_design, inflate=cfg.inflate)

    p1_streams = r_p1.spawn(total)
    build_cfg = _clone_cfg(cfg, build_size)
    psi, per_location, warn = _phase1(problem, design, build_cfg, _FixedStreams(p1_streams[:build_size]))
    points = design.points
    noise = "estimate" if cfg.phase1 == "mcmc" else "fixed"
    bank = _fit_bank(_as_design(points, design), psi, cfg.family, noise=noise)

    trace = []
    round_streams = r_seq.spawn(max(total - build_size, 1))
    for rnd in range(total - build_size):
        r_round = round_streams[rnd]
        r_cand, r_mc, r_chain = r_round.spawn(3)
        candidates = np.asarray(problem.prior.sample(n_candidates, r_cand), dtype=float)
        if candidates.ndim == 1:
            candidates = candidates[:, None]
        scores, rejected = _score_candidates(bank, candidates, u, t, r_mc)
        fallback = bool(np.all(scores <= 0.0))
        pick = _support_fallback(points, candidates) if fallback else int(np.argmax(scores))

        gamma = candidates[pick]
        new_psi, _, w = _phase1(
            problem,
            _as_design(gamma[None, :], design),
            _clone_cfg(cfg, 1),
            _FixedStreams([p1_streams[build_size + rnd]]),
        )
        warn.extend(w)
        points = np.vstack([points, gamma[None, :]])
        psi = np.vstack([psi, new_psi])
        bank = _fit_bank(_as_design(points, design), psi, cfg.family, noise=noise)
        trace.append(
            {
                "round": rnd + 1,
                "gamma": gamma.copy(),
                "score": float(scores[pick]),
                "n_rejected": int(rejected),
                "fallback": fallback,
            }
        )

    pred = _prediction_points(problem, cfg, r_p2)
    mixture = _phase2(bank, pred)
    if warn:
        mixture.meta["phase1_warnings"] = tuple(warn)
    mixture.meta["engine"] = "seq-ecp"
    return mixture, bank, trace


def _clone_cfg(cfg: EcpConfig, size) -> EcpConfig:
    return EcpConfig(
        family=cfg.family,
        L=size,
        m=cfg.m,
        M=cfg.M,
        design_method=cfg.design_method,
        prediction_method=cfg.prediction_method,
        inflate=None,
        bootstrap_b=None,
        phase1=cfg.phase1,
        burn_in=cfg.burn_in,
        adapt_start=cfg.adapt_start,
    )


def _as_design(points, template) -> doe.DesignMatrix:
    return doe.DesignMatrix(points, template.provenance, dict(template.meta))


class _FixedStreams:
    """Hands out pre-derived child streams, mimicking Generator.spawn."""

    def __init__(self, streams):
        self._streams = list(streams)

    def spawn(self, n):
        if n != len(self._streams):
            raise RuntimeError("stream count mismatch")
        return self._streams
