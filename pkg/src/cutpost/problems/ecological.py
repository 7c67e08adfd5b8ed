"""Modified ecological HPV/cervical-cancer study with a nonlinear link.

Thirteen populations each contribute a cancer-case count ``Y_j`` over
``T_j`` woman-years and, from a separate sample of ``N_j`` women, an HPV
infection count ``Z_j``.  Prevalence in population ``j`` is
``phi_j = g(gamma_1^{-C_j^1}, ..., gamma_5^{-C_j^5})`` for shared predictors
``gamma in (0,1)^5`` with Beta(2,2) priors and known population constants
``C_j``; log incidence is linear in prevalence with coefficients
``alpha = (alpha_1, alpha_2)``.  The cut protects the prevalence module:
``gamma`` is informed by the ``Z`` data only.

Neither the cut-parameter posterior nor the cut-distribution has a closed
form here; ground truth comes from large direct-sampling runs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .. import cutcore
from ..sampler import McmcConfig, adaptive_metropolis

DATA_SHA256 = "b308f38b7bf4ef97c164c039d8597a06b4c82ad7b11d895678046c596bcfa8f5"
PRIOR_SD = 100.0  # N(0, 100^2) priors on both log-incidence coefficients
_G_SCALE = 19.0 / 700.0
_BRACKET_FLOOR = 1e-12
_EXP_GUARD = 700.0


@dataclass(frozen=True)
class EcoData:
    """The embedded 13-population data set (columns Y, Z, N, T, C1..C5)."""

    y: np.ndarray
    z: np.ndarray
    n: np.ndarray
    t: np.ndarray
    c: np.ndarray  # 13 x 5

    def __post_init__(self):
        if self.y.shape != (13,) or self.c.shape != (13, 5):
            raise ValueError("expected 13 populations with 5 predictor constants")


def load_eco_data() -> EcoData:
    """Load the embedded data set, verifying its content hash."""
    raw = resources.files("cutpost.problems").joinpath("data/hpv.csv").read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != DATA_SHA256:
        raise RuntimeError(
            f"embedded data set corrupted: sha256 {digest} != {DATA_SHA256}"
        )
    rows = [line.split(",") for line in raw.decode().strip().splitlines()[1:]]
    mat = np.array([[float(v) for v in row] for row in rows])
    return EcoData(
        y=mat[:, 0].astype(int),
        z=mat[:, 1].astype(int),
        n=mat[:, 2].astype(int),
        t=mat[:, 3].astype(int),
        c=mat[:, 4:9].copy(),
    )


# ---------------------------------------------------------------------------
# link function and prevalence
# ---------------------------------------------------------------------------


def eco_g_flagged(x) -> tuple[float, bool]:
    """The nonlinear link, plus a flag marking a clamped bracket.

    The bracket can go nonpositive once inputs leave the unit cube (the
    prevalence map feeds it powered predictors >= 1); it is clamped at a
    tiny floor so the cube root stays real, and the clamp is reported.
    """
    x1, x2, x3, x4, x5 = (float(v) for v in np.asarray(x, dtype=float).reshape(5))
    bracket = (
        1.35
        + math.exp(x1) * math.sin(13.0 * (x1 - 0.6) ** 2) * math.exp(x2) * math.sin(7.0 * x2)
        + (x3 * math.sqrt(x4) * math.sin(2.0 * math.pi * x5) ** 2) / 38.0
    )
    clamped = bracket <= 0.0
    if clamped:
        bracket = _BRACKET_FLOOR
    return _G_SCALE * bracket ** (1.0 / 3.0), clamped


def eco_g(x) -> float:
    """Prevalence link on the unit cube; see :func:`eco_g_flagged`."""
    return eco_g_flagged(x)[0]


def eco_phi(gamma, c_j) -> float:
    """Prevalence of one population: the link applied to powered predictors."""
    gamma = np.asarray(gamma, dtype=float).reshape(5)
    c_j = np.asarray(c_j, dtype=float).reshape(5)
    if np.any(gamma < 0.0) or np.any(gamma > 1.0) or np.any((gamma == 0.0) & (c_j > 0.0)):
        raise ValueError("predictors must lie in (0, 1] (0 allowed only with a zero exponent)")
    with np.errstate(divide="ignore", invalid="ignore"):
        powered = np.where(c_j == 0.0, 1.0, np.exp(-c_j * np.log(gamma)))
    return eco_g(powered)


def _phi_all(gamma, data: EcoData) -> np.ndarray:
    powered = np.exp(-data.c * np.log(np.asarray(gamma, dtype=float))[None, :])
    return np.array([eco_g(row) for row in powered])


# ---------------------------------------------------------------------------
# log posteriors
# ---------------------------------------------------------------------------


class EcoConditional:
    """Log conditional posterior of the incidence coefficients at fixed
    predictors.  Precomputes everything that does not depend on alpha;
    counts overflow guards on the instance."""

    def __init__(self, gamma, data: EcoData):
        self.phi = _phi_all(np.asarray(gamma, dtype=float).reshape(5), data)
        self.t = data.t.astype(float)
        self.sum_y = float(data.y.sum())
        self.sum_y_phi = float(data.y @ self.phi)
        self.const = float(xlogy(data.y, data.t).sum() - gammaln(data.y + 1).sum())
        self.log_t = np.log(np.maximum(self.t, 1e-300))
        self.overflows = 0

    def __call__(self, alpha) -> float:
        a1, a2 = (float(v) for v in np.asarray(alpha, dtype=float).reshape(2))
        s = a1 + a2 * self.phi
        if np.max(s + self.log_t) > _EXP_GUARD:
            self.overflows += 1
            return -math.inf
        rate_total = float(self.t @ np.exp(s))
        prior = -(a1 * a1 + a2 * a2) / (2.0 * PRIOR_SD**2) - 2.0 * (
            math.log(PRIOR_SD) + 0.5 * math.log(2 * math.pi)
        )
        return a1 * self.sum_y + a2 * self.sum_y_phi + self.const - rate_total + prior


def eco_log_conditional_alpha(alpha, gamma, data: EcoData) -> float:
    """Unnormalized log posterior of the incidence coefficients given the
    predictors and the cancer-count module."""
    return EcoConditional(gamma, data)(alpha)


class EcoGammaPosterior:
    """Log posterior of the predictors given the infection module only (the
    distribution the cut protects).  Counts prevalence-validity violations."""

    def __init__(self, data: EcoData):
        self.data = data
        self.binom_const = float(
            (gammaln(data.n + 1) - gammaln(data.z + 1) - gammaln(data.n - data.z + 1)).sum()
        )
        self.phi_violations = 0

    def __call__(self, gamma) -> float:
        g = np.asarray(gamma, dtype=float).reshape(5)
        if np.any(g <= 0.0) or np.any(g >= 1.0):
            return -math.inf
        phi = _phi_all(g, self.data)
        if np.any(phi <= 0.0) or np.any(phi >= 1.0):
            self.phi_violations += 1
            return -math.inf
        data = self.data
        loglik = float(xlogy(data.z, phi).sum() + xlog1py(data.n - data.z, -phi).sum())
        # Beta(2, 2) density is 6 x (1 - x)
        logprior = float(np.log(6.0 * g * (1.0 - g)).sum())
        return loglik + self.binom_const + logprior


def eco_log_posterior_gamma(gamma, data: EcoData) -> float:
    return EcoGammaPosterior(data)(gamma)


# ---------------------------------------------------------------------------
# engine-facing problem objects
# ---------------------------------------------------------------------------


class PoolPrior:
    """Cut-parameter distribution represented by a pool of posterior draws."""

    def __init__(self, pool: np.ndarray, log_density):
        self.pool = np.atleast_2d(np.asarray(pool, dtype=float))
        self._log_density = log_density

    def sample(self, n, rng):
        replace = n > self.pool.shape[0]
        idx = rng.choice(self.pool.shape[0], size=n, replace=replace)
        return self.pool[idx]

    def log_density(self, x):
        return self._log_density(x)


class _EcoConditionalFactory:
    def __init__(self, data: EcoData):
        self.data = data

    def __call__(self, gamma):
        return EcoConditional(gamma, self.data)


class _EcoInit:
    """Starts chains at the constant-incidence fit (alpha_2 = 0)."""

    def __init__(self, data: EcoData):
        self.a1 = math.log(float(data.y.sum()) / float(data.t.sum()))

    def __call__(self, gamma):
        return np.array([self.a1, 0.0])


class _EcoStep:
    def __call__(self, gamma):
        return 0.05


class _EcoPilot:
    """Per-location chain start: Laplace mode and pre-scaled proposal.

    The conditional posterior's location, scale, and correlation all move
    strongly with the predictors, so a shared starting point mixes poorly;
    a cheap quasi-Newton pilot fixes that.  Falls back to the constant
    incidence fit with an isotropic proposal when the optimizer fails.
    """

    def __init__(self, data: EcoData):
        self.data = data
        self.fallback = _EcoInit(data)

    def __call__(self, gamma):
        from ..sampler import laplace_fit

        target = EcoConditional(gamma, self.data)
        try:
            fit = laplace_fit(target, self.fallback(gamma), n_restarts=2)
            cov = fit.params.covariance()
            chol = np.linalg.cholesky((2.38**2 / 2.0) * cov)
            return fit.mode, chol
        except Exception:
            return self.fallback(gamma), None


def build_gamma_pool(
    data: EcoData,
    n_keep: int,
    rng: np.random.Generator,
    burn_in: int = 4000,
    thin: int = 8,
) -> tuple[np.ndarray, dict]:
    """Adaptive-Metropolis draws from the predictor posterior given the
    infection module.  The chain is thinned by ``thin`` to cut
    autocorrelation in the pool; returns the pool and run diagnostics."""
    target = EcoGammaPosterior(data)
    cfg = McmcConfig(
        n_samples=burn_in + thin * n_keep,
        burn_in=burn_in,
        initial_step_scale=0.05,
    )
    chain = adaptive_metropolis(target, 0.5 * np.ones(5), cfg, rng)
    info = {
        "acceptance_rate": chain.acceptance_rate,
        "phi_violations": target.phi_violations,
        "warnings": chain.warnings,
        "thin": thin,
    }
    return chain.states[::thin].copy(), info


def eco_problem(data: EcoData, pool: np.ndarray) -> cutcore.ProblemSpec:
    """Bundle the study into the generic engine-facing problem object.

    ``pool`` is a set of predictor-posterior draws (see
    :func:`build_gamma_pool`); it backs prior sampling, support-point
    compression, and prediction designs.
    """
    return cutcore.ProblemSpec(
        name="ecological-hpv",
        q=5,
        p=2,
        prior=PoolPrior(pool, EcoGammaPosterior(data)),
        conditional_factory=_EcoConditionalFactory(data),
        conditional_init=_EcoInit(data),
        conditional_step=_EcoStep(),
        conditional_pilot=_EcoPilot(data),
        alpha_bounds=None,
        gamma_bounds=((0.0,) * 5, (1.0,) * 5),
        mcmc_burn_in=200,
    )
