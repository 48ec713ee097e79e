"""Gaussian mixture model: density, forward sampling, and EM fitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import InsufficientDataError, ShapeError
from .rng import RngHandle, as_generator
from .samplers import cholesky_pd

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights pi (K,), means mu (K, d), covariances sigma (K, d, d)."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        k = pi.size
        if pi.ndim != 1 or k < 1:
            raise ShapeError("pi must be a nonempty vector")
        if mu.ndim != 2 or mu.shape[0] != k:
            raise ShapeError(f"mu must be ({k}, d), got {mu.shape}")
        d = mu.shape[1]
        if sigma.shape != (k, d, d):
            raise ShapeError(f"sigma must be ({k}, {d}, {d}), got {sigma.shape}")
        if np.any(pi < 0) or np.any(pi > 1) or abs(pi.sum() - 1.0) > 1e-9:
            raise ShapeError("pi must lie on the probability simplex")

    @property
    def n_components(self) -> int:
        return self.pi.size

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def validate_pd(self) -> None:
        """Check every component covariance factorizes; raises otherwise."""
        for k in range(self.n_components):
            cholesky_pd(self.sigma[k])

    def to_json(self) -> dict:
        return {
            "pi": self.pi.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GmmParams":
        return cls(
            pi=np.asarray(doc["pi"], dtype=float),
            mu=np.asarray(doc["mu"], dtype=float),
            sigma=np.asarray(doc["sigma"], dtype=float),
        )


@dataclass(frozen=True)
class ComponentAssignment:
    """Component index per generated row."""

    z: np.ndarray


@dataclass
class GmmFit:
    """EM output: parameters plus the per-iteration mean log-likelihood trace."""

    params: GmmParams
    loglik_trace: list[float] = field(default_factory=list)
    converged: bool = False


def _mvn_log_pdf(x: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Row-wise log N(x | mu, L L.T) given the Cholesky factor L."""
    d = mu.size
    diff = (x - mu).T
    sol = solve_triangular(chol, diff, lower=True)
    log_det = np.sum(np.log(np.diag(chol)))
    with np.errstate(over="ignore"):  # near-singular components: -inf logpdf
        return -0.5 * (d * _LOG_2PI + np.sum(sol * sol, axis=0)) - log_det


def gmm_log_density(params: GmmParams, x: np.ndarray) -> np.ndarray | float:
    """log p(x) under the mixture; accepts a single vector or an (n, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != params.dim:
        raise ShapeError(f"points have dimension {pts.shape[1]}, model has {params.dim}")
    comp = np.empty((pts.shape[0], params.n_components))
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    for k in range(params.n_components):
        if params.pi[k] == 0.0:
            comp[:, k] = -np.inf
            continue
        chol = cholesky_pd(params.sigma[k])
        comp[:, k] = log_pi[k] + _mvn_log_pdf(pts, params.mu[k], chol)
    out = logsumexp(comp, axis=1)
    return float(out[0]) if single else out


def gmm_density(params: GmmParams, x: np.ndarray) -> np.ndarray | float:
    """p(x) = sum_k pi_k N(x | mu_k, sigma_k)."""
    return np.exp(gmm_log_density(params, x))


def sample_gmm(
    params: GmmParams,
    n: int,
    rng: RngHandle | np.random.Generator,
) -> tuple[np.ndarray, ComponentAssignment]:
    """Draw n rows: component index from Categorical(pi), then the Gaussian."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    gen = as_generator(rng)
    d = params.dim
    if n == 0:
        return np.empty((0, d)), ComponentAssignment(np.empty(0, dtype=int))
    z = gen.choice(params.n_components, size=n, p=params.pi)
    normals = gen.standard_normal((n, d))
    out = np.empty((n, d))
    chols = {}
    for k in np.unique(z):
        chols[k] = cholesky_pd(params.sigma[k])
    for i in range(n):
        out[i] = params.mu[z[i]] + chols[z[i]] @ normals[i]
    return out, ComponentAssignment(z)


def _ridge_to_pd(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky of sigma, adding an escalating trace-scaled ridge on failure."""
    d = sigma.shape[0]
    try:
        return sigma, np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-6 * np.trace(sigma) / d
    if not ridge > 0:
        ridge = 1e-12
    while True:
        candidate = sigma + ridge * np.eye(d)
        try:
            return candidate, np.linalg.cholesky(candidate)
        except np.linalg.LinAlgError:
            ridge *= 10.0
            if not np.isfinite(ridge):
                raise


def _kmeanspp_means(data: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial means over the data."""
    n = data.shape[0]
    means = [data[gen.integers(n)]]
    for _ in range(1, k):
        dist2 = np.min(
            [np.sum((data - m) ** 2, axis=1) for m in means], axis=0
        )
        total = dist2.sum()
        if total <= 0:  # all rows coincide with a chosen mean
            means.append(data[gen.integers(n)])
            continue
        means.append(data[gen.choice(n, p=dist2 / total)])
    return np.asarray(means)


def fit_gmm_em(
    data: np.ndarray,
    n_components: int,
    tol: float = 1e-6,
    max_iter: int = 500,
    rng: RngHandle | np.random.Generator = RngHandle(0),
) -> GmmFit:
    """Fit a K-component mixture by EM.

    Initialization: k-means++ means, uniform weights, pooled covariance.
    Convergence when the mean log-likelihood improves by less than tol.
    Singular component covariances are ridged, never fatal.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ShapeError("data must be an (n, d) matrix")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    n, d = data.shape
    if n < n_components:
        raise InsufficientDataError(
            f"{n} rows cannot support {n_components} components"
        )
    gen = as_generator(rng)

    mu = _kmeanspp_means(data, n_components, gen)
    pooled = np.cov(data, rowvar=False, bias=True).reshape(d, d)
    pooled, _ = _ridge_to_pd(pooled)
    sigma = np.repeat(pooled[None, :, :], n_components, axis=0)
    log_pi = np.full(n_components, -np.log(n_components))

    trace: list[float] = []
    prev_ll = -np.inf
    converged = False
    snapshot = None
    for it in range(max_iter):
        # E-step
        log_resp = np.empty((n, n_components))
        for k in range(n_components):
            sigma[k], chol = _ridge_to_pd(sigma[k])
            log_resp[:, k] = log_pi[k] + _mvn_log_pdf(data, mu[k], chol)
        row_norm = logsumexp(log_resp, axis=1)
        mean_ll = float(np.mean(row_norm))
        if mean_ll < prev_ll:
            # Numerical regime: a collapsed component got ridged and the
            # likelihood dropped. Keep the pre-drop parameters.
            log_pi, mu, sigma = snapshot
            converged = True
            break
        trace.append(mean_ll)
        if mean_ll - prev_ll < tol and it > 0:
            converged = True
            break
        prev_ll = mean_ll
        snapshot = (log_pi.copy(), mu.copy(), sigma.copy())
        resp = np.exp(log_resp - row_norm[:, None])

        # M-step (biased 1/n covariance, the MLE form)
        nk = resp.sum(axis=0) + 10 * np.finfo(float).tiny
        log_pi = np.log(nk / n)
        mu = (resp.T @ data) / nk[:, None]
        for k in range(n_components):
            diff = data - mu[k]
            sigma[k] = (resp[:, k][:, None] * diff).T @ diff / nk[k]
            sigma[k] = (sigma[k] + sigma[k].T) / 2.0

    pi = np.exp(log_pi)
    pi = pi / pi.sum()
    for k in range(n_components):
        sigma[k], _ = _ridge_to_pd(sigma[k])
    params = GmmParams(pi=pi, mu=mu, sigma=sigma)
    return GmmFit(params=params, loglik_trace=trace, converged=converged)
