"""Diamond-in-a-box: a two-module weighing problem with closed forms.

A diamond of weight ``alpha`` is measured ``n1`` times alone and ``n2``
times together with its display case of weight ``gamma``; the scale adds
``N(0, sigma^2)`` noise.  Externally calibrated case weights give
``gamma | z ~ N(mu_gamma, sigma_gamma^2)`` and the diamond has prior
``N(mu_alpha, sigma_alpha^2)``.  The marginal posterior, conditional
posterior, and cut-distribution of ``alpha`` are all normal with explicit
parameters, which makes this the calibration target for every engine.

An infinite ``sigma_alpha`` (flat prior on the diamond weight) is supported
throughout by working with the precision ``1 / sigma_alpha^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .. import cutcore, families


@dataclass(frozen=True)
class DbConfig:
    """Problem constants; defaults are the benchmark setting (all in grams):
    a 1 g diamond weighed 10 times, a 10 g case, 100 joint weighings,
    scale variance 0.01."""

    n1: int = 10
    n2: int = 100
    sigma: float = 0.1
    mu_alpha: float = 1.0
    sigma_alpha: float = 0.1
    mu_gamma: float = 10.0
    sigma_gamma: float = 0.1
    true_alpha: float = 1.0
    true_gamma: float = 10.0
    sigma_star: float | None = None        # generator noise sd, if misspecified
    sigma_gamma_star: float | None = None  # generator case-weight sd, if misspecified

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 0:
            raise ValueError("need n1 >= 1 and n2 >= 0")
        for name in ("sigma", "sigma_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not self.sigma_alpha > 0:  # also rejects nan
            raise ValueError("sigma_alpha must be > 0 (math.inf allowed)")

    @property
    def alpha_precision(self) -> float:
        return 0.0 if math.isinf(self.sigma_alpha) else self.sigma_alpha**-2

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def with_truth(self, **kw) -> "DbConfig":
        return replace(self, **kw)


def db_generate(cfg: DbConfig, rng: np.random.Generator) -> np.ndarray:
    """One synthetic data set: ``n1`` solo weighings then ``n2`` joint ones.

    The generator uses ``sigma_star`` when set (suspect-scale studies),
    while all inference formulas keep using the assumed ``sigma``.
    """
    sd = cfg.sigma if cfg.sigma_star is None else cfg.sigma_star
    eps = sd * rng.standard_normal(cfg.n)
    y = np.full(cfg.n, cfg.true_alpha)
    y[cfg.n1 :] += cfg.true_gamma
    return y + eps


def db_suffstats(y, cfg: DbConfig) -> tuple[float, float]:
    y = np.asarray(y, dtype=float)
    if y.shape[0] != cfg.n:
        raise ValueError(f"expected {cfg.n} observations")
    ybar1 = float(y[: cfg.n1].mean())
    ybar2 = float(y[cfg.n1 :].mean()) if cfg.n2 else 0.0
    return ybar1, ybar2


def db_constants(cfg: DbConfig, y_sum: float) -> tuple[float, float, float]:
    """Conditional-posterior constants: ``alpha | gamma, y ~ N(B + C gamma, A)``."""
    s2 = cfg.sigma**2
    a = 1.0 / (cfg.n / s2 + cfg.alpha_precision)
    b = a * (y_sum / s2 + cfg.mu_alpha * cfg.alpha_precision)
    c = -a * cfg.n2 / s2
    return a, b, c


def db_conditional(cfg: DbConfig, y_sum: float, gamma: float) -> families.FamilyParams:
    """Conditional posterior of the diamond weight at a fixed case weight."""
    a, b, c = db_constants(cfg, y_sum)
    return families.FamilyParams(families.NORMAL, (b + c * gamma, math.sqrt(a)))


def db_marginal_posterior(cfg: DbConfig, ybar1: float, ybar2: float) -> families.FamilyParams:
    """Full-Bayes marginal posterior of the diamond weight (normal)."""
    s2 = cfg.sigma**2
    sg2 = cfg.sigma_gamma**2
    w = cfg.n2 * sg2 + s2
    denom = (cfg.n1 + s2 * cfg.alpha_precision) * w + cfg.n2 * s2
    shift = (cfg.n1 * w * (ybar1 - cfg.mu_alpha) + cfg.n2 * s2 * (ybar2 - cfg.mu_alpha - cfg.mu_gamma)) / denom
    var = s2 * w / denom
    return families.FamilyParams(families.NORMAL, (cfg.mu_alpha + shift, math.sqrt(var)))


def db_cut_analytic(cfg: DbConfig, ybar1: float, ybar2: float) -> families.FamilyParams:
    """The cut-distribution of the diamond weight (normal, closed form)."""
    s2 = cfg.sigma**2
    denom = cfg.n + s2 * cfg.alpha_precision
    mean = (cfg.n1 * ybar1 + cfg.n2 * (ybar2 - cfg.mu_gamma) + s2 * cfg.mu_alpha * cfg.alpha_precision) / denom
    var = (s2 + cfg.n2**2 * cfg.sigma_gamma**2 / denom) / denom
    return families.FamilyParams(families.NORMAL, (mean, math.sqrt(var)))


# ---------------------------------------------------------------------------
# engine-facing problem objects
# ---------------------------------------------------------------------------


class _GaussianPrior:
    """Case-weight distribution ``gamma | z``: sampler, log-density, quantiles."""

    def __init__(self, mu, sd):
        self.mu = float(mu)
        self.sd = float(sd)
        self.quantile_fns = (lambda u: self.mu + self.sd * float(ndtri(u)),)

    def sample(self, n, rng):
        return self.mu + self.sd * rng.standard_normal(n)

    def log_density(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)[0] if np.ndim(x) else float(x)
        z = (x - self.mu) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2 * math.pi)


class _DbConditional:
    """Black-box log-density of ``alpha | gamma, y`` (engines never see A/B/C)."""

    def __init__(self, a, b, c, gamma):
        self.mean = b + c * float(gamma)
        self.var = a

    def __call__(self, alpha):
        alpha = float(np.asarray(alpha).reshape(-1)[0])
        diff = alpha - self.mean
        return -0.5 * diff * diff / self.var - 0.5 * math.log(2 * math.pi * self.var)


class _DbConditionalFactory:
    def __init__(self, cfg, y_sum):
        self.consts = db_constants(cfg, y_sum)

    def __call__(self, gamma):
        a, b, c = self.consts
        return _DbConditional(a, b, c, np.asarray(gamma).reshape(-1)[0])


class _DbInit:
    def __init__(self, cfg, y_sum):
        self.consts = db_constants(cfg, y_sum)

    def __call__(self, gamma):
        a, b, c = self.consts
        return np.array([b + c * float(np.asarray(gamma).reshape(-1)[0])])


class _DbStep:
    def __init__(self, cfg, y_sum):
        self.step = 2.4 * math.sqrt(db_constants(cfg, y_sum)[0])

    def __call__(self, gamma):
        return self.step


class _DbPilot:
    def __init__(self, cfg, y_sum):
        a, b, c = db_constants(cfg, y_sum)
        self.b, self.c = b, c
        self.chol = np.array([[2.38 * math.sqrt(a)]])

    def __call__(self, gamma):
        g = float(np.asarray(gamma).reshape(-1)[0])
        return np.array([self.b + self.c * g]), self.chol


def db_problem(cfg: DbConfig, y) -> cutcore.ProblemSpec:
    """Bundle a data set into the generic engine-facing problem object."""
    y = np.asarray(y, dtype=float)
    y_sum = float(y.sum())
    return cutcore.ProblemSpec(
        name="diamond-in-a-box",
        q=1,
        p=1,
        prior=_GaussianPrior(cfg.mu_gamma, cfg.sigma_gamma),
        conditional_factory=_DbConditionalFactory(cfg, y_sum),
        conditional_init=_DbInit(cfg, y_sum),
        conditional_step=_DbStep(cfg, y_sum),
        conditional_pilot=_DbPilot(cfg, y_sum),
        alpha_bounds=None,
        gamma_bounds=None,
        mcmc_burn_in=150,
    )
