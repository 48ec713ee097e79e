"""Site-level similarity between encoded and generated latent batches.

Paired squared Euclidean distance plus a per-dimension histogram KL
divergence. The KL estimator clamps values to a fixed range and Laplace
smooths every bin, so it stays finite for any candidate the server proposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError


@dataclass(frozen=True)
class HistogramSpec:
    """Binning used by the KL estimator: bins over [lo, hi], smoothing eps."""

    bins: int = 16
    lo: float = -3.0
    hi: float = 3.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least 2 bins")
        if not self.lo < self.hi:
            raise ValueError("lo must be below hi")
        if not self.epsilon > 0:
            raise ValueError("smoothing epsilon must be positive")


@dataclass(frozen=True)
class LatentBatch:
    """Encoded or generated rows for one site."""

    values: np.ndarray
    site_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ShapeError("latent batch must be an (n, d) matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent batch must be finite")


def _values(batch) -> np.ndarray:
    if isinstance(batch, LatentBatch):
        return batch.values
    return np.asarray(batch, dtype=float)


def euclidean_disc(enc, gen) -> float:
    """Sum over index-paired rows of squared Euclidean distance."""
    a = _values(enc)
    b = _values(gen)
    if a.shape != b.shape:
        raise ShapeError(f"paired batches must share a shape, got {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def _smoothed_histograms(x: np.ndarray, spec: HistogramSpec) -> np.ndarray:
    """(d, bins) matrix of clamped, smoothed, renormalized bin masses."""
    n, d = x.shape
    clamped = np.clip(x, spec.lo, spec.hi)
    width = (spec.hi - spec.lo) / spec.bins
    bin_idx = np.minimum(
        ((clamped - spec.lo) / width).astype(np.intp), spec.bins - 1
    )
    flat = bin_idx + np.arange(d, dtype=np.intp) * spec.bins
    counts = np.bincount(flat.ravel(), minlength=d * spec.bins).reshape(d, spec.bins)
    mass = counts / n + spec.epsilon
    return mass / mass.sum(axis=1, keepdims=True)


def kl_empirical(enc, gen, spec: HistogramSpec = HistogramSpec()) -> float:
    """Histogram KL(enc || gen), summed over latent dimensions."""
    a = _values(enc)
    b = _values(gen)
    if a.size == 0 or b.size == 0:
        raise EmptyInputError("cannot estimate a distribution from an empty batch")
    if a.shape[1] != b.shape[1]:
        raise ShapeError("batches must share the latent dimension")
    p = _smoothed_histograms(a, spec)
    q = _smoothed_histograms(b, spec)
    return float(np.sum(p * np.log(p / q)))


def site_similarity(enc, gen, spec: HistogramSpec = HistogramSpec()) -> float:
    """The scalar a site reports per round: Euclidean part plus KL part."""
    return euclidean_disc(enc, gen) + kl_empirical(enc, gen, spec)
