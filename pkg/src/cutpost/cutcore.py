"""Cut-distribution approximation engines.

Three routes to an approximation of
``pi_cut(alpha | y) = integral pi(alpha | gamma, y) pi(gamma | z) d gamma``:

* :func:`direct_sample` — the two-stage gold standard: draw ``L`` locations
  of the cut parameter, run a conditional MCMC chain at each, pool the
  ``L * m`` draws.  ``L = 1`` with a fixed location realizes the plug-in
  distribution.
* :func:`little_aggregate` — fit one normal (or MVN) to a pooled direct
  sample and use it as the approximation.
* :func:`ecp_sample` — estimate the conditional family's parameters at each
  of the ``L`` locations, emulate each parameter surface with a GP, predict
  at ``M`` fresh locations and return the resulting ``M``-component mixture.

Every engine consumes an explicit RNG and derives keyed child streams for
internal work units, so results are independent of scheduling and worker
count.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from . import doe, families, gp
from .families import FamilyParams, FamilyTag
from .sampler import McmcConfig, adaptive_metropolis, laplace_fit

REPAIR_WARN_FRACTION = 0.20


class ConfigError(ValueError):
    """Invalid engine configuration."""


@dataclass
class ProblemSpec:
    """Everything an engine needs to know about a cut-inference problem.

    ``prior`` exposes ``sample(n, rng)`` and ``log_density(x)`` and may also
    carry ``quantile_fns`` (enables LHS designs) and ``pool`` (a large array
    of draws, enabling support-point subsampling and pool-based prediction
    designs).  ``conditional_factory(gamma)`` returns the black-box log
    density of the parameter of interest given that cut-parameter location.
    """

    name: str
    q: int
    p: int
    prior: object
    conditional_factory: object
    conditional_init: object = None  # gamma -> starting point for the chain
    conditional_step: object = None  # gamma -> isotropic proposal scale
    conditional_pilot: object = None  # gamma -> (init, proposal chol | None)
    alpha_bounds: tuple | None = None
    gamma_bounds: tuple | None = None
    mcmc_burn_in: int = 200

    def init_for(self, gamma) -> np.ndarray:
        if self.conditional_init is not None:
            return np.atleast_1d(np.asarray(self.conditional_init(gamma), dtype=float))
        return np.zeros(self.p)

    def step_for(self, gamma) -> float:
        if self.conditional_step is not None:
            return float(self.conditional_step(gamma))
        return 1.0

    def pilot_for(self, gamma) -> tuple[np.ndarray, np.ndarray | None]:
        """Chain start and (optionally) a pre-scaled proposal Cholesky."""
        if self.conditional_pilot is not None:
            init, chol = self.conditional_pilot(gamma)
            return np.atleast_1d(np.asarray(init, dtype=float)), chol
        return self.init_for(gamma), None


# ---------------------------------------------------------------------------
# approximation containers
# ---------------------------------------------------------------------------


@dataclass
class RawSamples:
    """A plain set of draws treated as the approximation itself."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.n, size=n)
        return self.samples[idx]

    def marginal(self, i: int) -> "RawSamples":
        if self.samples.ndim == 1:
            if i != 0:
                raise IndexError("univariate sample set has a single marginal")
            return self
        return RawSamples(self.samples[:, i], dict(self.meta))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# cut approximation: raw samples\n")
            cols = ["a%d" % (j + 1) for j in range(self.p)]
            fh.write(",".join(cols) + "\n")
            mat = self.samples.reshape(self.n, self.p)
            for row in mat:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class Mixture:
    """Equal-weight finite mixture of members of one parametric family."""

    tag: FamilyTag
    params_matrix: np.ndarray  # M x r, rows in FamilyParams layout
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pm = np.atleast_2d(np.asarray(self.params_matrix, dtype=float))
        if pm.shape[1] != self.tag.n_params:
            raise ValueError(
                f"parameter rows must have length {self.tag.n_params} for {self.tag.kind}"
            )
        self.params_matrix = pm

    @property
    def n_components(self) -> int:
        return self.params_matrix.shape[0]

    @property
    def p(self) -> int:
        return self.tag.p

    @property
    def components(self) -> list:
        return [FamilyParams(self.tag, row) for row in self.params_matrix]

    def component(self, i: int) -> FamilyParams:
        return FamilyParams(self.tag, self.params_matrix[i])

    # -- sampling ---------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` draws; components receive ``n // M`` draws each plus a
        randomly chosen remainder, so stated component counts are exact."""
        m = self.n_components
        counts = np.full(m, n // m, dtype=int)
        rem = n - counts.sum()
        if rem:
            counts[rng.choice(m, size=rem, replace=False)] += 1
        comp = np.repeat(np.arange(m), counts)
        kind = self.tag.kind
        if kind == "normal":
            mu = self.params_matrix[comp, 0]
            sd = self.params_matrix[comp, 1]
            return mu + sd * rng.standard_normal(n)
        if kind == "weibull":
            lam = self.params_matrix[comp, 0]
            k = self.params_matrix[comp, 1]
            u = rng.random(n)
            return lam * (-np.log1p(-u)) ** (1.0 / k)
        roots = self._psd_roots()[comp]
        z = rng.standard_normal((n, self.p))
        mean = self.params_matrix[comp, : self.p]
        return mean + np.einsum("nij,nj->ni", roots, z)

    def _psd_roots(self) -> np.ndarray:
        if "_roots" not in self.meta:
            covs = self._covariances()
            w, u = np.linalg.eigh(covs)
            w = np.clip(w, 0.0, None)
            self.meta["_roots"] = u * np.sqrt(w)[:, None, :]
        return self.meta["_roots"]

    def _covariances(self) -> np.ndarray:
        p = self.p
        m = self.n_components
        sds = self.params_matrix[:, p : 2 * p]
        covs = np.zeros((m, p, p))
        ii = np.arange(p)
        covs[:, ii, ii] = sds**2
        if p > 1:
            iu = np.triu_indices(p, k=1)
            off = self.params_matrix[:, 2 * p :]
            covs[:, iu[0], iu[1]] = off
            covs[:, iu[1], iu[0]] = off
        return covs

    # -- density / cdf ------------------------------------------------------
    def log_density(self, x):
        """Log of the equal-weight mixture density at ``x``.

        For univariate families ``x`` may be a scalar or 1-D array; for MVN
        it is a single point or an ``n x p`` array.
        """
        kind = self.tag.kind
        if kind in ("normal", "weibull"):
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            out = np.empty(xs.shape[0])
            step = max(1, int(2e6 // max(self.n_components, 1)))
            for s in range(0, xs.shape[0], step):
                out[s : s + step] = self._logpdf_univariate(xs[s : s + step])
            return out[0] if np.isscalar(x) or np.asarray(x).ndim == 0 else out
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        vals = np.array([self._logpdf_mvn_point(pt) for pt in pts])
        return vals[0] if np.asarray(x).ndim == 1 else vals

    def _logpdf_univariate(self, xs):
        m = self.n_components
        if self.tag.kind == "normal":
            mu = self.params_matrix[:, 0][None, :]
            sd = np.maximum(self.params_matrix[:, 1][None, :], 1e-300)
            z = (xs[:, None] - mu) / sd
            lp = -0.5 * z**2 - np.log(sd) - 0.5 * math.log(2 * math.pi)
        else:
            lam = self.params_matrix[:, 0][None, :]
            k = self.params_matrix[:, 1][None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = xs[:, None] / lam
                lp = np.where(
                    xs[:, None] > 0,
                    np.log(k / lam) + (k - 1.0) * np.log(t) - t**k,
                    -np.inf,
                )
        return logsumexp(lp, axis=1) - math.log(m)

    def _logpdf_mvn_point(self, pt):
        covs = self._covariances()
        jitter = 1e-12 * np.maximum(np.trace(covs, axis1=1, axis2=2) / self.p, 1e-300)
        covs = covs + jitter[:, None, None] * np.eye(self.p)
        chol = np.linalg.cholesky(covs)
        diff = pt[None, :] - self.params_matrix[:, : self.p]
        sol = np.linalg.solve(chol, diff[:, :, None])[:, :, 0]
        logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        lp = -0.5 * (sol**2).sum(axis=1) - logdet - 0.5 * self.p * math.log(2 * math.pi)
        return float(logsumexp(lp) - math.log(self.n_components))

    def cdf(self, x):
        """Mixture CDF (univariate families only)."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if self.tag.kind == "normal":
            mu = self.params_matrix[:, 0][None, :]
            sd = self.params_matrix[:, 1][None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(sd > 0, (xs[:, None] - mu) / np.maximum(sd, 1e-300), np.where(xs[:, None] >= mu, np.inf, -np.inf))
            vals = ndtr(z).mean(axis=1)
        elif self.tag.kind == "weibull":
            lam = self.params_matrix[:, 0][None, :]
            k = self.params_matrix[:, 1][None, :]
            t = np.clip(xs[:, None], 0.0, None) / lam
            vals = (-np.expm1(-(t**k))).mean(axis=1)
        else:
            raise families.UnsupportedFamilyError("cdf is univariate-only")
        return float(vals[0]) if np.asarray(x).ndim == 0 else vals

    def marginal(self, i: int) -> "Mixture":
        """Coordinate marginal; for MVN mixtures this is a normal mixture."""
        if self.tag.kind != "mvn":
            if i != 0:
                raise IndexError("univariate mixture has a single marginal")
            return self
        p = self.p
        cols = np.column_stack(
            [self.params_matrix[:, i], self.params_matrix[:, p + i]]
        )
        return Mixture(families.NORMAL, cols, {"marginal_of": self.meta.get("name", ""), "index": i})

    def to_json(self, path) -> None:
        payload = {
            "family": {"kind": self.tag.kind, "p": self.tag.p},
            "n_components": self.n_components,
            "weights": "equal",
            "parameters": [[float(v) for v in row] for row in self.params_matrix],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


CutApproximation = RawSamples | Mixture


def mixture_density(approx: Mixture, x):
    """Equal-weight average of component densities at ``x``."""
    if not isinstance(approx, Mixture):
        raise TypeError("mixture_density needs a Mixture approximation")
    return np.exp(approx.log_density(x))


# ---------------------------------------------------------------------------
# emulator bank
# ---------------------------------------------------------------------------


def surface_transforms(tag: FamilyTag) -> tuple[str, ...]:
    """Per-parameter emulation scale: positive-valued surfaces are emulated
    on the log scale so predictions stay valid, covariances on the raw scale."""
    if tag.kind == "normal":
        return ("raw", "log")
    if tag.kind == "weibull":
        return ("log", "log")
    p = tag.p
    return ("raw",) * p + ("log",) * p + ("raw",) * ((p * (p - 1)) // 2)


@dataclass
class EmulatorBank:
    """Immutable fitted GP surrogates, one per conditional-family parameter."""

    tag: FamilyTag
    models: tuple
    transforms: tuple
    design: doe.DesignMatrix
    psi_hat: np.ndarray  # L x r training targets on the raw parameter scale

    def surface_moments(self, points) -> list[gp.GpPrediction]:
        """GP predictive moments per surface, on the emulated scale."""
        return [m.predict(points) for m in self.models]

    def predict_params(self, points) -> tuple[np.ndarray, int]:
        """Predict raw-scale parameter rows at ``points``; repair MVN
        covariances that come out non-PSD.  Returns (rows, n_repaired)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        r = self.tag.n_params
        rows = np.empty((n, r))
        for j, (model, tr) in enumerate(zip(self.models, self.transforms)):
            mean = model.predict(points).mean
            rows[:, j] = np.exp(mean) if tr == "log" else mean
        n_repaired = 0
        if self.tag.kind == "mvn" and self.tag.p > 1:
            rows, n_repaired = _repair_mvn_rows(rows, self.tag.p)
        return rows, n_repaired

    def summary(self) -> dict:
        return {
            "family": {"kind": self.tag.kind, "p": self.tag.p},
            "transforms": list(self.transforms),
            "design_provenance": self.design.provenance,
            "n_train": int(self.design.size),
            "surfaces": [m.summary() for m in self.models],
        }


def _repair_mvn_rows(rows, p):
    m = rows.shape[0]
    sds = rows[:, p : 2 * p]
    covs = np.zeros((m, p, p))
    ii = np.arange(p)
    covs[:, ii, ii] = sds**2
    iu = np.triu_indices(p, k=1)
    covs[:, iu[0], iu[1]] = rows[:, 2 * p :]
    covs[:, iu[1], iu[0]] = rows[:, 2 * p :]
    eigs = np.linalg.eigvalsh(covs)
    scale = np.maximum(1.0, np.abs(eigs).max(axis=1))
    bad = eigs[:, 0] < -1e-12 * scale
    for i in np.flatnonzero(bad):
        fixed = gp.nearest_psd(covs[i])
        rows[i, p : 2 * p] = np.sqrt(np.clip(np.diag(fixed), 0.0, None))
        rows[i, 2 * p :] = fixed[iu]
    return rows, int(bad.sum())


# ---------------------------------------------------------------------------
# engine configuration
# ---------------------------------------------------------------------------


def default_budget(q: int) -> int:
    """Default number of conditional-posterior locations: ``2**q + 4q + 1``."""
    return 2**q + 4 * q + 1


@dataclass
class EcpConfig:
    """Settings for :func:`ecp_sample` / :func:`sequential_ecp`.

    ``m`` is the number of kept conditional MCMC draws per location (phase
    1); ``M`` is the number of prediction locations, i.e. mixture
    components.  ``design_method`` picks the training design
    (``iid | lhs | support | mined`` or an explicit
    :class:`~cutpost.doe.DesignMatrix`); ``prediction_method`` picks the
    phase-2 locations (``prior`` draws by default, ``support`` for a
    compressed pool, or an explicit design).  ``inflate=(omega, mode)``
    widens the training design only.
    """

    family: FamilyTag
    L: int | None = None
    m: int = 500
    M: int = 10_000
    design_method: object = "iid"
    prediction_method: object = "prior"
    inflate: tuple | None = None
    bootstrap_b: int | None = None
    phase1: str = "mcmc"
    burn_in: int | None = None
    adapt_start: int | None = None

    def budget(self, q: int) -> int:
        size = default_budget(q) if self.L is None else int(self.L)
        if size < 3:
            raise ConfigError("ECP budget L must be at least 3")
        return size

    def validate(self):
        if self.phase1 not in ("mcmc", "laplace"):
            raise ConfigError("phase1 must be 'mcmc' or 'laplace'")
        if self.phase1 == "mcmc" and self.m < 3:
            raise ConfigError("need m >= 3 conditional draws per location")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.phase1 == "laplace" and self.family.kind not in ("normal", "mvn"):
            raise ConfigError("the Laplace phase 1 yields normal/MVN parameters only")
        if self.bootstrap_b is not None:
            if self.bootstrap_b < 1:
                raise ConfigError("bootstrap_b must be >= 1")
            if self.phase1 != "mcmc":
                raise ConfigError("bootstrapping needs per-location samples (mcmc phase 1)")
            if self.m < 10:
                raise ConfigError("bootstrapping needs m >= 10 draws per location")


# ---------------------------------------------------------------------------
# designs and conditional chains
# ---------------------------------------------------------------------------


def build_design(problem: ProblemSpec, size, method, rng, inflate=None) -> doe.DesignMatrix:
    """Materialize a training design for ``problem`` via the named sampler."""
    prior = problem.prior
    pool = getattr(prior, "pool", None)

    if isinstance(method, doe.DesignMatrix):
        design = method
        if design.size != size:
            raise ConfigError("explicit design size does not match the budget")
    elif method == "iid":
        design = doe.iid_design(prior.sample, size, rng)
    elif method == "lhs":
        qfns = getattr(prior, "quantile_fns", None)
        if qfns is None:
            raise ConfigError("lhs designs need per-margin quantile functions")
        design = doe.lhs_design(qfns, size, rng)
    elif method == "support":
        if inflate is not None and pool is not None:
            omega, mode = inflate
            inflated = doe.inflate_variance(
                pool, omega, problem.gamma_bounds, mode, rng=rng, n_out=pool.shape[0]
            )
            design = doe.support_points(inflated.points, size, rng, bounds=problem.gamma_bounds)
            design.provenance = "support(inflated)"
            return design
        target = pool if pool is not None else prior
        design = doe.support_points(target, size, rng, bounds=problem.gamma_bounds)
    elif method == "mined":
        qfns = getattr(prior, "quantile_fns", None)
        if qfns is not None:
            init = doe.lhs_design(qfns, size, rng)
        else:
            init = doe.iid_design(prior.sample, size, rng)
        bounds = problem.gamma_bounds or ((-np.inf,) * problem.q, (np.inf,) * problem.q)
        design = doe.mined_design(prior.log_density, size, init, bounds, rng)
    else:
        raise ConfigError(f"unknown design method {method!r}")

    if inflate is not None:
        omega, mode = inflate
        design = doe.inflate_variance(
            design, omega, problem.gamma_bounds, mode, rng=rng
        )
    return design


def _run_conditional_chain(problem, gamma, m, rng, burn_in=None, adapt_start=None):
    target = problem.conditional_factory(gamma)
    burn = problem.mcmc_burn_in if burn_in is None else burn_in
    init, prop_chol = problem.pilot_for(gamma)
    cfg = McmcConfig(
        n_samples=burn + m,
        burn_in=burn,
        adapt_start=adapt_start,
        initial_step_scale=problem.step_for(gamma),
        initial_proposal_chol=prop_chol,
    )
    chain = adaptive_metropolis(target, init, cfg, rng)
    return chain


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


def direct_sample(
    problem: ProblemSpec,
    L: int,
    m: int,
    rng: np.random.Generator,
    design_method="iid",
    burn_in: int | None = None,
    inflate=None,
) -> RawSamples:
    """Direct sampling: pooled draws from ``L`` conditional chains of length
    ``m`` at locations drawn from the cut-parameter distribution."""
    if L < 1 or m < 1:
        raise ConfigError("need L >= 1 and m >= 1")
    r_design, r_chains = rng.spawn(2)
    design = build_design(problem, L, design_method, r_design, inflate=inflate)
    streams = r_chains.spawn(L)

    blocks = []
    acc = np.empty(L)
    warn: list[str] = []
    for idx in range(L):
        gamma = design.points[idx]
        try:
            chain = _run_conditional_chain(problem, gamma, m, streams[idx], burn_in=burn_in)
        except Exception as exc:
            raise RuntimeError(f"conditional chain failed at location {idx}") from exc
        blocks.append(chain.states)
        acc[idx] = chain.acceptance_rate
        warn.extend(f"location {idx}: {w}" for w in chain.warnings)

    pooled = np.vstack(blocks)
    if problem.p == 1:
        pooled = pooled.ravel()
    return RawSamples(
        pooled,
        {
            "engine": "ds",
            "L": L,
            "m": m,
            "design": design,
            "acceptance": acc,
            "warnings": tuple(warn),
        },
    )


def little_aggregate(raw: RawSamples) -> Mixture:
    """Single-normal (or MVN) aggregation of a pooled direct sample."""
    x = raw.samples
    p = raw.p
    if raw.n < p + 2:
        raise ConfigError("need at least p + 2 samples to aggregate")
    tag = families.NORMAL if p == 1 else families.mvn(p)
    params = families.estimate_params(x, tag)
    return Mixture(tag, np.asarray(params.values)[None, :], {"engine": "ds-normal", "n_fit": raw.n})


def ecp_bootstrap_augment(design_points, per_location_samples, tag, b, rng):
    """Bootstrap-replicated training rows: for each location, re-estimate the
    family parameters on ``b`` resamples of its conditional draws.  Returns
    ``(inputs, targets)`` with ``L * b`` rows (inputs repeat per location)."""
    if b < 1:
        raise ValueError("bootstrap count must be >= 1")
    pts = np.atleast_2d(np.asarray(design_points, dtype=float))
    streams = rng.spawn(len(per_location_samples))
    xs, ys = [], []
    for idx, draws in enumerate(per_location_samples):
        draws = np.asarray(draws)
        n = draws.shape[0]
        if n < 10:
            raise ValueError("bootstrapping needs at least 10 draws per location")
        for _ in range(b):
            take = streams[idx].integers(0, n, size=n)
            params = families.estimate_params(draws[take], tag)
            xs.append(pts[idx])
            ys.append(params.values)
    return np.asarray(xs), np.asarray(ys)


def _phase1(problem, design, cfg: EcpConfig, rng):
    """Estimate conditional-family parameters at every design location."""
    size = design.size
    streams = rng.spawn(size)
    psi = np.empty((size, cfg.family.n_params))
    per_location = [] if cfg.bootstrap_b is not None else None
    warn: list[str] = []
    for idx in range(size):
        gamma = design.points[idx]
        try:
            if cfg.phase1 == "laplace":
                fit = laplace_fit(problem.conditional_factory(gamma), problem.init_for(gamma))
                if fit.params.tag.n_params != cfg.family.n_params:
                    raise ConfigError("laplace fit dimension does not match the family")
                psi[idx] = fit.params.values
                if fit.hessian_repaired:
                    warn.append(f"location {idx}: laplace Hessian repaired")
            else:
                chain = _run_conditional_chain(
                    problem, gamma, cfg.m, streams[idx],
                    burn_in=cfg.burn_in, adapt_start=cfg.adapt_start,
                )
                draws = chain.states if problem.p > 1 else chain.states.ravel()
                psi[idx] = families.estimate_params(draws, cfg.family).values
                if per_location is not None:
                    per_location.append(draws)
                warn.extend(f"location {idx}: {w}" for w in chain.warnings)
        except Exception as exc:
            raise RuntimeError(f"phase 1 failed at location {idx}") from exc
    return psi, per_location, warn


def _fit_bank(design, psi, tag, noise, x_override=None):
    transforms = surface_transforms(tag)
    x = design.points if x_override is None else x_override
    models = []
    for j, tr in enumerate(transforms):
        y = psi[:, j]
        if tr == "log":
            if np.any(y <= 0):
                raise RuntimeError(f"surface {j}: positive-valued target has nonpositive estimates")
            y = np.log(y)
        try:
            models.append(gp.gp_fit(x, y, noise=noise))
        except Exception as exc:
            raise RuntimeError(f"emulator fit failed for parameter surface {j}") from exc
    return EmulatorBank(
        tag=tag, models=tuple(models), transforms=transforms, design=design, psi_hat=psi
    )


def _prediction_points(problem, cfg: EcpConfig, rng) -> np.ndarray:
    method = cfg.prediction_method
    if isinstance(method, doe.DesignMatrix):
        return method.points
    if isinstance(method, np.ndarray):
        return np.atleast_2d(method)
    if method == "prior":
        pts = np.asarray(problem.prior.sample(cfg.M, rng), dtype=float)
        return pts[:, None] if pts.ndim == 1 else pts
    if method == "support":
        pool = getattr(problem.prior, "pool", None)
        target = pool if pool is not None else problem.prior
        return doe.support_points(target, cfg.M, rng, bounds=problem.gamma_bounds).points
    raise ConfigError(f"unknown prediction method {method!r}")


def _phase2(bank: EmulatorBank, points) -> Mixture:
    rows, n_repaired = bank.predict_params(points)
    meta = {"engine": "ecp", "n_repaired": n_repaired, "prediction_points": np.atleast_2d(points).shape[0]}
    if n_repaired > REPAIR_WARN_FRACTION * rows.shape[0]:
        msg = (
            f"{n_repaired}/{rows.shape[0]} predicted covariance matrices needed "
            "PSD repair; the emulators may be unreliable here"
        )
        meta["warnings"] = (msg,)
        warnings.warn(msg, RuntimeWarning)
    return Mixture(bank.tag, rows, meta)


def ecp_sample(problem: ProblemSpec, cfg: EcpConfig, rng: np.random.Generator):
    """Emulate the conditional posterior: returns ``(mixture, bank)``.

    Phase 1 draws the training design (optionally variance-inflated), runs a
    conditional chain (or Laplace fit) per location and estimates the family
    parameters.  Phase 2 fits one GP per parameter surface, predicts at
    ``M`` fresh locations, repairs any non-PSD covariance, and returns the
    ``M``-component mixture.
    """
    cfg.validate()
    size = cfg.budget(problem.q)
    r_design, r_p1, _r_seq, r_p2 = rng.spawn(4)

    design = build_design(problem, size, cfg.design_method, r_design, inflate=cfg.inflate)
    psi, per_location, warn = _phase1(problem, design, cfg, r_p1)

    if cfg.bootstrap_b is not None:
        r_boot, r_pred = r_p2.spawn(2)
        x_aug, psi_aug = ecp_bootstrap_augment(
            design.points, per_location, cfg.family, cfg.bootstrap_b, r_boot
        )
        bank = _fit_bank(design, psi_aug, cfg.family, noise="estimate", x_override=x_aug)
    else:
        r_pred = r_p2
        # Chain-based parameter estimates carry O(1/sqrt(m)) noise, so the
        # surfaces are emulated with an estimated homoskedastic nugget; a
        # forced-interpolation fit would thread the estimation noise instead
        # of the surface.  Laplace estimates are deterministic and keep the
        # interpolation regime.
        noise = "estimate" if cfg.phase1 == "mcmc" else "fixed"
        bank = _fit_bank(design, psi, cfg.family, noise=noise)

    points = _prediction_points(problem, cfg, r_pred)
    mixture = _phase2(bank, points)
    if warn:
        mixture.meta["phase1_warnings"] = tuple(warn)
    return mixture, bank
