"""Seeded sampling from the mixture-model prior distributions.

Dirichlet over mixture weights, and Normal-Inverse-Wishart over each
component's (mean, covariance) pair: the covariance comes from an
Inverse-Wishart(nu, psi) and the mean from N(m, sigma/kappa) given that
covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidHyperparameterError, NotPositiveDefiniteError
from .rng import RngHandle, as_generator

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class DirichletAlpha:
    """Concentration vector; one positive entry per mixture component."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", a)
        if a.ndim != 1 or a.size < 1:
            raise InvalidHyperparameterError("alpha must be a nonempty vector")
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise InvalidHyperparameterError("alpha entries must be finite and > 0")

    @property
    def n_components(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class NiwHyper:
    """Normal-Inverse-Wishart hyperparameters (m, kappa, psi, nu)."""

    m: np.ndarray
    kappa: float
    psi: np.ndarray
    nu: float

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "psi", psi)
        if m.ndim != 1:
            raise InvalidHyperparameterError("m must be a vector")
        d = m.size
        if psi.shape != (d, d):
            raise InvalidHyperparameterError(f"psi must be {d}x{d}, got {psi.shape}")
        if not self.kappa > 0:
            raise InvalidHyperparameterError("kappa must be > 0")
        if not self.nu > d - 1:
            raise InvalidHyperparameterError(f"nu must exceed d-1 = {d - 1}, got {self.nu}")
        # validates positive definiteness; cached for the samplers
        object.__setattr__(self, "chol_psi", cholesky_pd(psi))

    @property
    def dim(self) -> int:
        return self.m.size


def cholesky_pd(sigma: np.ndarray) -> np.ndarray:
    """Cholesky factor of a symmetric PD matrix, absorbing float drift.

    Symmetry is checked to SYMMETRY_TOL and the matrix symmetrized as
    (A + A.T)/2 before factorization.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise NotPositiveDefiniteError(f"expected a square matrix, got {sigma.shape}")
    scale = max(np.abs(sigma).max(), 1.0)
    if np.abs(sigma - sigma.T).max() > SYMMETRY_TOL * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    sym = (sigma + sigma.T) / 2.0
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("Cholesky factorization failed") from exc


def sample_dirichlet(alpha: DirichletAlpha, rng: RngHandle | np.random.Generator) -> np.ndarray:
    """One draw from Dir(alpha) via normalized gamma variates."""
    gen = as_generator(rng)
    gammas = gen.standard_gamma(alpha.alpha)
    total = gammas.sum()
    while total <= 0.0:  # all-zero underflow is possible for tiny alpha
        gammas = gen.standard_gamma(alpha.alpha)
        total = gammas.sum()
    return gammas / total


def sample_mvn(
    m: np.ndarray,
    sigma: np.ndarray,
    n: int,
    rng: RngHandle | np.random.Generator,
) -> np.ndarray:
    """n i.i.d. rows from N(m, sigma)."""
    m = np.asarray(m, dtype=float)
    if n < 0:
        raise ValueError("n must be nonnegative")
    chol = cholesky_pd(sigma)
    gen = as_generator(rng)
    z = gen.standard_normal((n, m.size))
    return m + z @ chol.T


def sample_inverse_wishart(
    nu: float,
    psi: np.ndarray,
    rng: RngHandle | np.random.Generator,
) -> np.ndarray:
    """One draw from InverseWishart(nu, psi).

    Bartlett construction: draw W ~ Wishart(nu, psi^-1) as B B.T with
    B = L A, where L is the Cholesky factor of psi^-1 and A is lower
    triangular with sqrt-chi-square diagonal; the inverse-Wishart draw is
    W^-1 = B^-T B^-1, formed from a triangular solve so the result is PD
    by construction. Valid for real nu > d - 1.
    """
    psi = np.asarray(psi, dtype=float)
    d = psi.shape[0] if psi.ndim == 2 else 0
    if not nu > d - 1:
        raise InvalidHyperparameterError(f"nu must exceed d-1 = {d - 1}, got {nu}")
    chol_psi = cholesky_pd(psi)  # L, lower, psi = L L.T
    m_mat = _bartlett_inverse_factor(nu, chol_psi, as_generator(rng))
    sigma = m_mat.T @ m_mat
    return (sigma + sigma.T) / 2.0


def _bartlett_inverse_factor(
    nu: float, chol_psi: np.ndarray, gen: np.random.Generator
) -> np.ndarray:
    """Matrix M with M.T M ~ InverseWishart(nu, chol_psi chol_psi.T).

    W = (U A)(U A).T ~ Wishart(nu, psi^-1) with U = L^-T (Wishart(nu, I) is
    orthogonally invariant, so any square root of psi^-1 serves); the draw
    is W^-1 = M.T M with M = A^-1 L.T, a single triangular solve.
    """
    d = chol_psi.shape[0]
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = np.sqrt(gen.chisquare(nu - np.arange(d)))
    tril = np.tril_indices(d, k=-1)
    if d > 1:
        a[tril] = gen.standard_normal(len(tril[0]))
    return solve_triangular(a, chol_psi.T, lower=True)


def sample_niw(
    hyper: NiwHyper,
    rng: RngHandle | np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One (mu, sigma) draw: sigma from the IW marginal, then mu | sigma.

    The inverse factor M (sigma = M.T M) doubles as the square root for the
    conditional mean draw, so no second factorization is needed.
    """
    gen = as_generator(rng)
    m_mat = _bartlett_inverse_factor(hyper.nu, hyper.chol_psi, gen)
    sigma = m_mat.T @ m_mat
    sigma = (sigma + sigma.T) / 2.0
    z = gen.standard_normal(hyper.dim)
    mu = hyper.m + (z @ m_mat) / np.sqrt(hyper.kappa)
    return mu, sigma
