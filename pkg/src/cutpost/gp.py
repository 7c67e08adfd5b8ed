"""Interpolating Gaussian-process emulator with a squared-exponential kernel.

One fitted model per emulated parameter surface.  Inputs are standardized
per column, targets are centered, and hyperparameters (anisotropic
lengthscales plus a signal variance) maximize the log marginal likelihood
from a deterministic grid of starts.  The nugget is fixed at
``1e-8 * var(y)`` so fitted models interpolate; an estimated-noise mode
exists for bootstrap-augmented training sets, which carry replicated inputs.

Also hosts :func:`nearest_psd`, the eigenvalue-clipping projection onto the
positive semi-definite cone used to repair predicted covariance matrices.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

_LOG_2PI = math.log(2.0 * math.pi)
LENGTHSCALE_BOUNDS = (1e-2, 1e2)  # in standardized input units


class DuplicateDesignError(ValueError):
    """Training design contains (numerically) identical rows."""


class ConditioningError(RuntimeError):
    """Kernel matrix could not be factorized even after nugget escalation."""


@dataclass
class GpPrediction:
    mean: np.ndarray
    sd: np.ndarray
    extrapolated: np.ndarray  # bool per row

    def __iter__(self):  # allows ``mean, sd, flags = gp_predict(...)``
        return iter((self.mean, self.sd, self.extrapolated))


@dataclass
class GpModel:
    """Fitted GP. Treat as immutable; predictions are reentrant."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    xs: np.ndarray  # standardized training inputs, L x q
    y_mean: float
    yc: np.ndarray  # centered targets
    lengthscales: np.ndarray  # standardized units
    signal_variance: float
    noise_variance: float
    chol: np.ndarray
    alpha: np.ndarray
    constant: bool = False

    @property
    def n_train(self) -> int:
        return self.xs.shape[0]

    def predict(self, x_new) -> GpPrediction:
        return gp_predict(self, x_new)

    def summary(self) -> dict:
        """JSON-ready hyperparameter and provenance summary."""
        raw = np.ascontiguousarray(self.xs * self.x_scale + self.x_mean)
        digest = hashlib.sha256(np.round(raw, 12).tobytes()).hexdigest()
        return {
            "n_train": int(self.n_train),
            "lengthscales_standardized": [float(v) for v in self.lengthscales],
            "lengthscales": [
                float(v) for v in self.lengthscales * self.x_scale
            ],
            "signal_variance": float(self.signal_variance),
            "noise_variance": float(self.noise_variance),
            "constant": bool(self.constant),
            "design_sha256": digest,
        }


def _sq_dists(a, b, lengthscales):
    """Pairwise squared distances of length-scaled inputs."""
    aw = a / lengthscales
    bw = b / lengthscales
    return (
        np.sum(aw**2, axis=1)[:, None]
        + np.sum(bw**2, axis=1)[None, :]
        - 2.0 * aw @ bw.T
    )


def _kernel(a, b, lengthscales, signal_variance):
    return signal_variance * np.exp(-0.5 * np.clip(_sq_dists(a, b, lengthscales), 0.0, None))


class _NlmlWorkspace:
    """Preallocated buffers for the marginal-likelihood objective.

    The objective is evaluated hundreds of times per fit; reusing
    Fortran-ordered ``n x n`` buffers keeps the hot loop free of large
    allocations and LAPACK-side copies (page-fault churn dominates the
    runtime otherwise).
    """

    def __init__(self, xs, yc, nugget, estimate_noise):
        n, q = xs.shape
        self.yc = np.asarray(yc, dtype=float)
        self.nugget = nugget
        self.estimate_noise = estimate_noise
        self.n = n
        self.q = q
        self.sq = [
            np.asfortranarray((xs[:, j][:, None] - xs[:, j][None, :]) ** 2)
            for j in range(q)
        ]
        self.r = np.empty((n, n), order="F")
        self.k = np.empty((n, n), order="F")
        self.w = np.empty((n, n), order="F")
        self.scratch = np.empty((n, n), order="F")

    def __call__(self, theta):
        yc = self.yc
        n, q = self.n, self.q
        ls2 = np.exp(2.0 * theta[:q])
        sf2 = math.exp(theta[q])
        noise = math.exp(theta[q + 1]) if self.estimate_noise else self.nugget

        r, k, w, scratch = self.r, self.k, self.w, self.scratch
        r.fill(0.0)
        for j in range(q):
            np.multiply(self.sq[j], -0.5 / ls2[j], out=scratch)
            r += scratch
        np.exp(r, out=r)
        np.multiply(r, sf2, out=k)
        k.flat[:: n + 1] += noise
        c, info = lapack.dpotrf(k, lower=1, overwrite_a=1, clean=1)
        if info != 0:
            return 1e25, np.zeros_like(theta)
        log_det_half = float(np.log(np.diag(c)).sum())
        alpha, info = lapack.dpotrs(c, yc, lower=1)
        if info != 0:
            return 1e25, np.zeros_like(theta)
        nlml = 0.5 * float(yc @ alpha) + log_det_half + 0.5 * n * _LOG_2PI

        # dNLML/dtheta_j = -0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta_j)
        kinv, info = lapack.dpotri(c, lower=1, overwrite_c=1)
        if info != 0:
            return 1e25, np.zeros_like(theta)
        diag = np.diag(kinv).copy()
        np.add(kinv, kinv.T, out=w)  # upper triangle of kinv is zero
        w.flat[:: n + 1] -= diag
        np.negative(w, out=w)
        np.multiply(alpha[:, None], alpha[None, :], out=scratch)
        w += scratch

        grad = np.empty_like(theta)
        for j in range(q):
            np.multiply(r, self.sq[j], out=scratch)
            scratch *= w
            grad[j] = -0.5 * sf2 / ls2[j] * float(scratch.sum())
        np.multiply(w, r, out=scratch)
        grad[q] = -0.5 * sf2 * float(scratch.sum())
        if self.estimate_noise:
            grad[q + 1] = -0.5 * noise * float(np.trace(w))
        return nlml, grad


def _nlml_and_grad(theta, xs, yc, nugget, estimate_noise):
    """Negative log marginal likelihood and gradient wrt log-hyperparameters."""
    return _NlmlWorkspace(xs, yc, nugget, estimate_noise)(theta)


def gp_fit(x, y, noise: str = "fixed") -> GpModel:
    """Fit a GP to targets ``y`` at inputs ``x`` (L x q).

    ``noise="fixed"`` pins the nugget at ``1e-8 * var(y)`` (interpolation);
    ``noise="estimate"`` adds an optimized noise variance and permits
    replicated design rows (bootstrap-augmented training sets).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and x.shape[1] > 1 and np.asarray(y).size == x.shape[1]:
        x = x.T
    y = np.asarray(y, dtype=float).reshape(-1)
    n, q = x.shape
    if n != y.shape[0]:
        raise ValueError("x and y lengths differ")
    if n < 3:
        raise ValueError("need at least 3 training points")
    if noise not in ("fixed", "estimate"):
        raise ValueError("noise must be 'fixed' or 'estimate'")

    x_mean = x.mean(axis=0)
    x_scale = x.std(axis=0)
    x_scale[x_scale == 0.0] = 1.0
    xs = (x - x_mean) / x_scale

    if noise == "fixed":
        d2 = _sq_dists(xs, xs, np.ones(q))
        np.fill_diagonal(d2, np.inf)
        if np.min(d2) < (1e-12) ** 2:
            raise DuplicateDesignError("duplicate rows in training design")

    y_mean = float(y.mean())
    yc = y - y_mean
    y_var = float(np.var(y))
    if y_var <= 0.0 or y_var < 1e-24 * max(1.0, y_mean**2):
        # constant targets: centered values are all ~0, predict the constant
        return GpModel(
            x_mean=x_mean,
            x_scale=x_scale,
            xs=xs,
            y_mean=y_mean,
            yc=np.zeros(n),
            lengthscales=np.ones(q),
            signal_variance=0.0,
            noise_variance=0.0,
            chol=np.eye(n),
            alpha=np.zeros(n),
            constant=True,
        )

    nugget0 = 1e-8 * y_var
    lo, hi = LENGTHSCALE_BOUNDS
    bounds = [(math.log(lo), math.log(hi))] * q
    bounds.append((math.log(1e-6 * y_var), math.log(1e6 * y_var)))
    if noise == "estimate":
        bounds.append((math.log(1e-10 * y_var), math.log(10.0 * y_var)))

    starts = []
    for ls0 in (0.3, 1.0, 3.0, 10.0):
        for sf0 in (1.0, 10.0):
            th = [math.log(ls0)] * q + [math.log(sf0 * y_var)]
            if noise == "estimate":
                th.append(math.log(1e-2 * y_var))
            starts.append(np.array(th))

    objective = _NlmlWorkspace(xs, yc, nugget0, noise == "estimate")
    best = None
    for th0 in starts:
        res = minimize(
            objective,
            th0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 120},
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    ls = np.exp(theta[:q])
    sf2 = math.exp(theta[q])

    # The final factorization starts from a much smaller nugget than the one
    # used during hyperparameter search: interpolation error at the training
    # points scales with it directly.  Escalate x10 on failure.
    nugget = math.exp(theta[q + 1]) if noise == "estimate" else 1e-12 * y_var
    k = _kernel(xs, xs, ls, sf2)
    low = None
    while True:
        try:
            low = np.linalg.cholesky(k + nugget * np.eye(n))
            break
        except np.linalg.LinAlgError:
            nugget *= 10.0
            if nugget > 1e-4 * y_var:
                raise ConditioningError(
                    "kernel matrix not factorizable within nugget budget"
                )
    alpha = cho_solve((low, True), yc)
    return GpModel(
        x_mean=x_mean,
        x_scale=x_scale,
        xs=xs,
        y_mean=y_mean,
        yc=yc,
        lengthscales=ls,
        signal_variance=sf2,
        noise_variance=nugget,
        chol=low,
        alpha=alpha,
    )


def gp_predict(model: GpModel, x_new) -> GpPrediction:
    """Posterior mean and sd at new inputs, with per-row extrapolation flags.

    Extrapolation (any standardized coordinate outside the training range
    widened by 0.5) is flagged, never refused; widening the training design
    is the mitigation.
    """
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    if x_new.shape[1] != model.xs.shape[1]:
        x_new = x_new.reshape(-1, model.xs.shape[1])
    if not np.all(np.isfinite(x_new)):
        raise ValueError("prediction inputs must be finite")
    xs_new = (x_new - model.x_mean) / model.x_scale

    lo = model.xs.min(axis=0) - 0.5
    hi = model.xs.max(axis=0) + 0.5
    extrapolated = np.any((xs_new < lo) | (xs_new > hi), axis=1)

    if model.constant:
        mean = np.full(x_new.shape[0], model.y_mean)
        sd = np.zeros(x_new.shape[0])
        return GpPrediction(mean, sd, extrapolated)

    ks = _kernel(xs_new, model.xs, model.lengthscales, model.signal_variance)
    mean = model.y_mean + ks @ model.alpha
    v = solve_triangular(model.chol, ks.T, lower=True)
    var = model.signal_variance - np.sum(v * v, axis=0)
    sd = np.sqrt(np.clip(var, 0.0, None))
    return GpPrediction(mean, sd, extrapolated)


def nearest_psd(m) -> np.ndarray:
    """Frobenius-nearest positive semi-definite matrix to a symmetric input.

    Symmetrizes on entry (inputs must already be symmetric to ~1e-10),
    clips negative eigenvalues to zero, and reassembles.  Idempotent.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("input must be a square matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (m + m.T)
    w, u = np.linalg.eigh(sym)
    if w[0] >= 0.0:
        return sym
    out = (u * np.clip(w, 0.0, None)) @ u.T
    return 0.5 * (out + out.T)
