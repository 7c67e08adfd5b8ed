"""Adaptive-Metropolis MCMC for black-box log-densities, plus a Laplace fit.

The sampler is Haario-style: an isotropic random walk until ``adapt_start``
iterations have accumulated, then a proposal covariance equal to
``2.38^2/d`` times the running empirical covariance of the whole history,
regularized by a small diagonal jitter.  The Laplace fit is the MCMC-free
route to Normal/MVN conditional-posterior parameters: quasi-Newton ascent
with jittered restarts and a central-finite-difference Hessian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize

from . import families, gp

_BLOCK = 256
_STUCK_WINDOW = 50


class InitializationError(ValueError):
    """The chain (or design) starts where the log-density is not finite."""


class LaplaceConvergenceError(RuntimeError):
    """No optimizer restart reached a usable mode."""


class SingularHessianError(RuntimeError):
    """The negated Hessian at the mode is singular even after PSD repair."""


@dataclass
class McmcConfig:
    """Adaptive-Metropolis settings.

    ``n_samples`` counts total iterations; the first ``burn_in`` states are
    discarded (default: 25% of the run).  ``adapt_start`` defaults to
    ``max(100, 10 d)`` and must be at least ``2 d`` so the empirical
    covariance is meaningful.
    """

    n_samples: int
    burn_in: int | None = None
    adapt_start: int | None = None
    initial_step_scale: float = 1.0
    jitter: float = 1e-8
    initial_proposal_chol: np.ndarray | None = None  # overrides the isotropic start

    def resolve(self, d: int) -> tuple[int, int]:
        burn = self.n_samples // 4 if self.burn_in is None else self.burn_in
        adapt = max(100, 10 * d) if self.adapt_start is None else self.adapt_start
        if not 0 <= burn < self.n_samples:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_samples")
        if adapt < 2 * d:
            raise ValueError("adapt_start must be at least 2 * d")
        if self.jitter <= 0:
            raise ValueError("jitter must be > 0")
        if self.initial_step_scale <= 0:
            raise ValueError("initial_step_scale must be > 0")
        return burn, adapt


@dataclass
class Chain:
    """Post burn-in states plus acceptance and mixing diagnostics."""

    states: np.ndarray  # n_kept x d
    acceptance_rate: float
    warnings: tuple = field(default_factory=tuple)

    @cached_property
    def ess(self) -> np.ndarray:
        """Per-dimension effective sample size (initial-positive-sequence)."""
        return np.array([_ess_1d(self.states[:, j]) for j in range(self.states.shape[1])])


def _ess_1d(x: np.ndarray) -> float:
    n = x.shape[0]
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if var == 0.0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    s = 0.0
    for k in range(1, n):
        if rho[k] <= 0.0:
            break
        s += rho[k]
    return float(n / (1.0 + 2.0 * s))


def adaptive_metropolis(log_density, init, cfg: McmcConfig, rng: np.random.Generator) -> Chain:
    """Run one adaptive-Metropolis chain targeting ``log_density``.

    Deterministic given ``(log_density, init, cfg, rng stream)``.  A
    stuck-chain warning is attached when no proposal is accepted for
    ``10 d`` consecutive 50-iteration windows after adaptation starts.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = x.shape[0]
    burn, adapt_start = cfg.resolve(d)
    lp = float(log_density(x))
    if not math.isfinite(lp):
        raise InitializationError("log-density not finite at the initial state")

    sd = 2.38**2 / d
    jitter_eye = cfg.jitter * np.eye(d)
    if cfg.initial_proposal_chol is not None:
        prop_chol = np.atleast_2d(np.asarray(cfg.initial_proposal_chol, dtype=float))
        if prop_chol.shape != (d, d):
            raise ValueError("initial_proposal_chol must be d x d")
    else:
        prop_chol = cfg.initial_step_scale * np.eye(d)

    # running first/second moments of the full history (Haario adaptation)
    mean = x.copy()
    m2 = np.zeros((d, d))
    count = 1

    n_keep = cfg.n_samples - burn
    kept = np.empty((n_keep, d))
    n_accept = 0
    warnings: list[str] = []
    window_rejects = 0
    stuck_windows = 0

    i = 0
    while i < cfg.n_samples:
        block = min(_BLOCK, cfg.n_samples - i)
        zs = rng.standard_normal((block, d))
        log_us = np.log(rng.random(block))
        for b in range(block):
            prop = x + prop_chol @ zs[b]
            lp_prop = float(log_density(prop))
            accepted = lp_prop - lp > log_us[b]
            if accepted:
                x = prop
                lp = lp_prop
                n_accept += 1
            t = i + b
            if t >= burn:
                kept[t - burn] = x
            # history moments
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += np.outer(delta, x - mean)
            if count > adapt_start:
                cov = sd * (m2 / (count - 1)) + jitter_eye
                prop_chol = np.linalg.cholesky(cov)
                window_rejects = 0 if accepted else window_rejects + 1
                if window_rejects and window_rejects % _STUCK_WINDOW == 0:
                    stuck_windows += 1
                    if stuck_windows >= 10 * d and not warnings:
                        warnings.append(
                            "stuck chain: no acceptance for "
                            f"{10 * d} consecutive {_STUCK_WINDOW}-iteration windows"
                        )
                elif accepted:
                    stuck_windows = 0
        i += block

    return Chain(
        states=kept,
        acceptance_rate=n_accept / cfg.n_samples,
        warnings=tuple(warnings),
    )


@dataclass
class LaplaceResult:
    params: families.FamilyParams
    mode: np.ndarray
    log_density_at_mode: float
    hessian_repaired: bool


def laplace_fit(log_density, init, n_restarts: int = 10, rng=None) -> LaplaceResult:
    """Gaussian approximation at the mode of ``log_density``.

    Quasi-Newton ascent from ``init`` plus jittered restarts; the covariance
    is the inverse negated Hessian computed by central finite differences
    with per-coordinate step ``cbrt(eps) * max(1, |mode|)``.  A non-PD
    Hessian is projected to the PSD cone first (flag recorded); if it is
    still singular a :class:`SingularHessianError` is raised.
    """
    x0 = np.atleast_1d(np.asarray(init, dtype=float))
    d = x0.shape[0]
    if rng is None:
        rng = np.random.default_rng(0)

    def neg(v):
        val = log_density(v)
        return -float(val) if math.isfinite(val) else 1e25

    scale = np.maximum(1.0, np.abs(x0))
    best = None
    for r in range(max(1, n_restarts)):
        start = x0 if r == 0 else x0 + 0.3 * scale * rng.standard_normal(d)
        res = minimize(neg, start, method="L-BFGS-B")
        if not math.isfinite(res.fun) or res.fun >= 1e24:
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise LaplaceConvergenceError("no restart found a finite mode")

    mode = np.asarray(best.x, dtype=float)
    h = _fd_hessian(log_density, mode)
    neg_h = -h
    repaired = False
    try:
        cov = np.linalg.inv(neg_h)
        if np.any(np.diag(cov) <= 0.0) or not np.all(np.isfinite(cov)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        neg_h = gp.nearest_psd(0.5 * (neg_h + neg_h.T))
        repaired = True
        w = np.linalg.eigvalsh(neg_h)
        if w[0] <= 1e-12 * max(1.0, w[-1]):
            raise SingularHessianError("negated Hessian singular after repair")
        cov = np.linalg.inv(neg_h)

    cov = 0.5 * (cov + cov.T)
    tag = families.NORMAL if d == 1 else families.mvn(d)
    params = families.params_from_moments(tag, mode, cov)
    return LaplaceResult(
        params=params,
        mode=mode,
        log_density_at_mode=-best.fun,
        hessian_repaired=repaired,
    )


def _fd_hessian(f, x) -> np.ndarray:
    d = x.shape[0]
    eps = np.finfo(float).eps
    h = np.cbrt(eps) * np.maximum(1.0, np.abs(x))
    out = np.empty((d, d))
    f0 = float(f(x))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        out[i, i] = (float(f(x + ei)) - 2.0 * f0 + float(f(x - ei))) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            out[i, j] = out[j, i] = (
                float(f(x + ei + ej))
                - float(f(x + ei - ej))
                - float(f(x - ei + ej))
                + float(f(x - ei - ej))
            ) / (4.0 * h[i] * h[j])
    return out
