"""Parametric families for conditional posteriors, plus auxiliary distributions.

A *family* here is one of Normal, MultivariateNormal(p), or Weibull: the
distributional form assumed for the conditional posterior of the parameter of
interest.  Each family supports density evaluation, sampling, quantiles
(univariate only), and consistent parameter estimation from i.i.d. samples.
The Beta/Binomial/Poisson helpers are the pieces the reference problems need.

Parameter vector layout (``FamilyParams.values``):

* Normal: ``(mu, sigma)`` with ``sigma`` the standard deviation.
* MultivariateNormal(p): ``(mu_1..mu_p, sd_1..sd_p, c_12, c_13, ..., c_{p-1,p})``
  where ``c_ij`` are covariances in row-major upper-triangle order.  The
  covariance matrix is assembled on demand and is *not* repaired here; PSD
  repair is an explicit call (`cutpost.gp.nearest_psd`).
* Weibull: ``(scale, shape)`` for the density
  ``shape/scale * (x/scale)**(shape-1) * exp(-(x/scale)**shape)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, log_ndtr, ndtri, xlog1py, xlogy

_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateSampleError(ValueError):
    """Raised when samples have zero spread and no parameters can be estimated."""


class WeibullFitError(RuntimeError):
    """Weibull maximum likelihood did not converge.

    Attributes
    ----------
    last_params : tuple(scale, shape)
        The final iterate, for post-mortem inspection.
    """

    def __init__(self, message, last_params):
        super().__init__(message)
        self.last_params = last_params


class NonPsdCovarianceError(ValueError):
    """An assembled MVN covariance is not positive semi-definite."""


class UnsupportedFamilyError(ValueError):
    """Operation not defined for this family tag."""


@dataclass(frozen=True)
class FamilyTag:
    """Identifies a parametric family. ``p`` is the dimension of the variate."""

    kind: str  # "normal" | "mvn" | "weibull"
    p: int = 1

    def __post_init__(self):
        if self.kind not in ("normal", "mvn", "weibull"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.p < 1:
            raise ValueError("dimension p must be >= 1")
        if self.kind in ("normal", "weibull") and self.p != 1:
            raise ValueError(f"{self.kind} family is univariate")

    @property
    def n_params(self) -> int:
        """Number of scalar parameters (the number of emulated surfaces)."""
        if self.kind == "mvn":
            p = self.p
            return 2 * p + (p * (p - 1)) // 2
        return 2


NORMAL = FamilyTag("normal")
WEIBULL = FamilyTag("weibull")


def mvn(p: int) -> FamilyTag:
    return FamilyTag("mvn", p)


@dataclass(frozen=True)
class FamilyParams:
    """An immutable member of a parametric family."""

    tag: FamilyTag
    values: tuple = field()

    def __post_init__(self):
        vals = tuple(float(v) for v in np.asarray(self.values, dtype=float).ravel())
        object.__setattr__(self, "values", vals)
        if len(vals) != self.tag.n_params:
            raise ValueError(
                f"expected {self.tag.n_params} parameters for {self.tag.kind}, "
                f"got {len(vals)}"
            )
        if self.tag.kind == "normal":
            if vals[1] < 0:
                raise ValueError("normal sd must be >= 0")
        elif self.tag.kind == "weibull":
            if vals[0] <= 0 or vals[1] <= 0:
                raise ValueError("weibull scale and shape must be > 0")
        else:
            p = self.tag.p
            if any(s < 0 for s in vals[p : 2 * p]):
                raise ValueError("mvn standard deviations must be >= 0")

    # -- normal / weibull accessors -------------------------------------
    @property
    def mu(self) -> float:
        if self.tag.kind != "normal":
            raise UnsupportedFamilyError("mu is defined for the normal family")
        return self.values[0]

    @property
    def sigma(self) -> float:
        if self.tag.kind != "normal":
            raise UnsupportedFamilyError("sigma is defined for the normal family")
        return self.values[1]

    @property
    def scale(self) -> float:
        if self.tag.kind != "weibull":
            raise UnsupportedFamilyError("scale is defined for the weibull family")
        return self.values[0]

    @property
    def shape(self) -> float:
        if self.tag.kind != "weibull":
            raise UnsupportedFamilyError("shape is defined for the weibull family")
        return self.values[1]

    # -- mvn accessors ---------------------------------------------------
    def mean_vector(self) -> np.ndarray:
        if self.tag.kind == "mvn":
            return np.asarray(self.values[: self.tag.p])
        return np.asarray(self.values[:1])

    def sd_vector(self) -> np.ndarray:
        if self.tag.kind == "mvn":
            p = self.tag.p
            return np.asarray(self.values[p : 2 * p])
        return np.asarray(self.values[1:2])

    def covariance(self) -> np.ndarray:
        """Assemble the covariance matrix from (sd_i, c_ij). No PSD repair."""
        if self.tag.kind == "weibull":
            raise UnsupportedFamilyError("weibull has no covariance matrix")
        p = self.tag.p
        sds = self.sd_vector()
        cov = np.diag(sds**2)
        if p > 1:
            iu = np.triu_indices(p, k=1)
            off = np.asarray(self.values[2 * p :])
            cov[iu] = off
            cov[(iu[1], iu[0])] = off
        return cov


def params_from_moments(tag: FamilyTag, mean, cov) -> FamilyParams:
    """Build Normal/MVN params from a mean vector and covariance matrix."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if tag.kind == "normal":
        return FamilyParams(tag, (mean[0], math.sqrt(max(cov[0, 0], 0.0))))
    if tag.kind != "mvn":
        raise UnsupportedFamilyError("moment construction needs a normal/mvn tag")
    p = tag.p
    sds = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    iu = np.triu_indices(p, k=1)
    return FamilyParams(tag, tuple(mean) + tuple(sds) + tuple(cov[iu]))


# ---------------------------------------------------------------------------
# auxiliary distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Beta parameters must be > 0")


@dataclass(frozen=True)
class Binomial:
    n: int
    phi: float

    def __post_init__(self):
        if self.n < 0 or int(self.n) != self.n:
            raise ValueError("Binomial n must be a nonnegative integer")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("Binomial probability must lie in [0, 1]")


@dataclass(frozen=True)
class Poisson:
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("Poisson rate must be > 0")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def estimate_params(samples, tag: FamilyTag) -> FamilyParams:
    """Estimate family parameters from i.i.d. (or stationary-chain) samples.

    Normal/MVN use the sample mean and unbiased (co)variance; Weibull uses
    maximum likelihood with Newton iteration on the profile likelihood of the
    shape.  Requires at least 3 samples; raises
    :class:`DegenerateSampleError` when the samples have zero spread.
    """
    x = np.asarray(samples, dtype=float)
    if tag.kind == "mvn" and tag.p > 1:
        if x.ndim != 2 or x.shape[1] != tag.p:
            raise ValueError(f"expected n x {tag.p} samples for mvn({tag.p})")
    else:
        x = x.reshape(-1)
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples to estimate parameters")

    if tag.kind == "weibull":
        if np.any(x <= 0):
            raise ValueError("weibull samples must be strictly positive")
        if np.ptp(x) == 0.0:
            raise DegenerateSampleError("all samples identical; weibull fit undefined")
        return _weibull_mle(x)

    if tag.kind == "normal":
        mu = float(np.mean(x))
        var = float(np.var(x, ddof=1))
        if var <= 0.0:
            raise DegenerateSampleError("zero sample variance")
        return FamilyParams(tag, (mu, math.sqrt(var)))

    mean = np.mean(x if x.ndim == 2 else x[:, None], axis=0)
    cov = np.cov(x.T if x.ndim == 2 else x[None, :], ddof=1)
    cov = np.atleast_2d(cov)
    if np.any(np.diag(cov) <= 0.0):
        raise DegenerateSampleError("zero sample variance in at least one coordinate")
    return params_from_moments(tag, mean, cov)


def _weibull_mle(x, max_iter=200, rtol=1e-10) -> FamilyParams:
    """Newton iteration on the profile likelihood of the Weibull shape."""
    logx = np.log(x)
    mean_logx = logx.mean()
    # moment start: Var(log X) = pi^2 / (6 shape^2)
    sd_logx = logx.std()
    k = math.pi / (math.sqrt(6.0) * sd_logx)

    # work with shifted logs for overflow safety: x^k = exp(k (logx - c)) * e^{kc}
    c = logx.max()
    z = logx - c
    for _ in range(max_iter):
        w = np.exp(k * z)
        s0 = w.sum()
        s1 = (w * z).sum()
        s2 = (w * z * z).sum()
        g = s1 / s0 + c - 1.0 / k - mean_logx
        gp = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k)
        step = g / gp
        k_new = k - step
        while k_new <= 0.0:
            step *= 0.5
            k_new = k - step
        if abs(k_new - k) <= rtol * abs(k_new):
            k = k_new
            w = np.exp(k * z)
            lam = math.exp(c) * (w.mean()) ** (1.0 / k)
            return FamilyParams(WEIBULL, (lam, k))
        k = k_new
    lam = math.exp(c) * (np.exp(k * z).mean()) ** (1.0 / k)
    raise WeibullFitError(
        f"weibull MLE did not converge in {max_iter} iterations", (lam, k)
    )


def sample_family(params: FamilyParams, n: int, rng: np.random.Generator):
    """Draw ``n`` i.i.d. variates. Univariate tags return shape ``(n,)``,
    MVN returns ``(n, p)``.

    MVN covariances must already be positive semi-definite; a
    :class:`NonPsdCovarianceError` is raised otherwise (repair is the
    caller's job, see `cutpost.gp.nearest_psd`).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    kind = params.tag.kind
    if kind == "normal":
        mu, sd = params.values
        return mu + sd * rng.standard_normal(n)
    if kind == "weibull":
        lam, k = params.values
        return lam * rng.weibull(k, size=n)
    cov = params.covariance()
    root = _psd_root(cov)
    z = rng.standard_normal((n, params.tag.p))
    return params.mean_vector()[None, :] + z @ root.T


def _psd_root(cov: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix via eigendecomposition; errors if not PSD."""
    w, u = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.min(w) < -1e-10 * scale:
        raise NonPsdCovarianceError(
            f"covariance has negative eigenvalue {np.min(w):.3e}"
        )
    return u * np.sqrt(np.clip(w, 0.0, None))


def quantile(params: FamilyParams, u: float) -> float:
    """Exact inverse CDF for univariate families."""
    if not 0.0 < u < 1.0:
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    kind = params.tag.kind
    if kind == "normal":
        mu, sd = params.values
        return mu + sd * float(ndtri(u))
    if kind == "weibull":
        lam, k = params.values
        ustar = -math.log1p(-u)
        return lam * ustar ** (1.0 / k)
    raise UnsupportedFamilyError(
        "quantiles of a multivariate normal are defined only for a linear "
        "combination of coordinates; see cutpost.seqecp.linear_combination_quantile"
    )


def cdf(params: FamilyParams, x: float) -> float:
    """CDF of a univariate family member."""
    kind = params.tag.kind
    if kind == "normal":
        mu, sd = params.values
        if sd == 0.0:
            return float(x >= mu)
        return float(np.exp(log_ndtr((x - mu) / sd)))
    if kind == "weibull":
        lam, k = params.values
        if x <= 0.0:
            return 0.0
        return -math.expm1(-((x / lam) ** k))
    raise UnsupportedFamilyError("cdf is defined for univariate families")


def log_density(params, x) -> float:
    """Natural-log density/mass at ``x``; ``-inf`` outside the support."""
    if isinstance(params, FamilyParams):
        return _family_log_density(params, x)
    if isinstance(params, Beta):
        return _beta_logpdf(params.a, params.b, x)
    if isinstance(params, Binomial):
        return _binomial_logpmf(params.n, params.phi, x)
    if isinstance(params, Poisson):
        return _poisson_logpmf(params.rate, x)
    raise TypeError(f"unsupported distribution object {type(params).__name__}")


def _family_log_density(params: FamilyParams, x) -> float:
    kind = params.tag.kind
    if kind == "normal":
        mu, sd = params.values
        x = float(x)
        if sd == 0.0:
            return math.inf if x == mu else -math.inf
        z = (x - mu) / sd
        return -0.5 * z * z - math.log(sd) - 0.5 * _LOG_2PI
    if kind == "weibull":
        lam, k = params.values
        x = float(x)
        if x <= 0.0:
            return -math.inf
        t = x / lam
        return math.log(k / lam) + (k - 1.0) * math.log(t) - t**k
    x = np.asarray(x, dtype=float).reshape(-1)
    p = params.tag.p
    if x.shape[0] != p:
        raise ValueError(f"point must have dimension {p}")
    cov = params.covariance()
    diff = x - params.mean_vector()
    # tiny escalating ridge keeps repaired-but-singular covariances evaluable
    jitter = 0.0
    base = max(float(np.trace(cov)) / p, 1e-300)
    for _ in range(12):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(p))
            break
        except np.linalg.LinAlgError:
            jitter = base * 1e-12 if jitter == 0.0 else jitter * 10.0
    else:
        raise NonPsdCovarianceError("covariance not factorizable for density")
    sol = np.linalg.solve(chol, diff)
    return float(
        -0.5 * sol @ sol - np.log(np.diag(chol)).sum() - 0.5 * p * _LOG_2PI
    )


def _beta_logpdf(a, b, x) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        return -math.inf
    return float(xlogy(a - 1.0, x) + xlog1py(b - 1.0, -x) - betaln(a, b))


def _binomial_logpmf(n, phi, z) -> float:
    z = float(z)
    if z < 0 or z > n or z != int(z):
        return -math.inf
    comb = gammaln(n + 1) - gammaln(z + 1) - gammaln(n - z + 1)
    return float(comb + xlogy(z, phi) + xlog1py(n - z, -phi))


def _poisson_logpmf(rate, y) -> float:
    y = float(y)
    if y < 0 or y != int(y):
        return -math.inf
    return float(xlogy(y, rate) - rate - gammaln(y + 1))
