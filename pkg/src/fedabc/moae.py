"""Bottleneck autoencoder with a logistic side head.

Six dense layers (two SeLU encoder layers, a tanh bottleneck, two SeLU
decoder layers, a linear reconstruction layer) plus a sigmoid classifier fed
from the bottleneck. The bottleneck output doubles as the summary statistic
the inference protocol compares across sites, and the tanh keeps it in
(-1, 1) regardless of where it was trained. Forward, backward, and the Adam
update are explicit; the gradient is checked against finite differences in
the test suite.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedTrainingError, InvalidArchitectureError
from .rng import RngHandle, as_generator

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

MODEL_FORMAT_TAG = "moae-v1"

PROB_CLAMP = 1e-12


def selu(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(x))


def selu_grad(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(x))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class MoaeArchitecture:
    """Layer plan: input_dim -> h1 -> h2 -> latent -> h2 -> h1 -> input_dim."""

    input_dim: int
    latent_dim: int
    hidden: tuple[int, int] = (64, 32)

    def __post_init__(self):
        if self.latent_dim < 1:
            raise InvalidArchitectureError("latent dimension must be >= 1")
        if self.latent_dim >= self.input_dim:
            raise InvalidArchitectureError(
                "latent dimension must be strictly smaller than the input dimension"
            )
        if any(h < 1 for h in self.hidden):
            raise InvalidArchitectureError("hidden widths must be >= 1")

    def layers(self) -> list[tuple[str, int, int, str]]:
        """(name, fan_in, fan_out, activation) in forward order, head last."""
        d_in, d_lat = self.input_dim, self.latent_dim
        h1, h2 = self.hidden
        return [
            ("encode_1", d_in, h1, "selu"),
            ("encode_2", h1, h2, "selu"),
            ("latent", h2, d_lat, "tanh"),
            ("decode_1", d_lat, h2, "selu"),
            ("decode_2", h2, h1, "selu"),
            ("recon", h1, d_in, "identity"),
            ("classifier", d_lat, 1, "sigmoid"),
        ]

    def parameter_counts(self) -> dict[str, int]:
        return {name: fan_out * fan_in + fan_out for name, fan_in, fan_out, _ in self.layers()}


@dataclass(frozen=True)
class LossWeights:
    """Reconstruction weight alpha, classification weight beta."""

    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class MoaeModel:
    """Weights and biases per layer, plus Adam moment accumulators."""

    arch: MoaeArchitecture
    weights: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0

    def reset_optimizer(self) -> None:
        self.adam_m = {k: np.zeros_like(v) for k, v in self.weights.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.weights.items()}
        self.adam_step = 0

    def n_parameters(self) -> int:
        return sum(v.size for v in self.weights.values())

    def clone(self) -> "MoaeModel":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT_TAG,
            "input_dim": self.arch.input_dim,
            "latent_dim": self.arch.latent_dim,
            "hidden": list(self.arch.hidden),
            "weights": {k: v.tolist() for k, v in self.weights.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MoaeModel":
        if doc.get("format") != MODEL_FORMAT_TAG:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        arch = MoaeArchitecture(
            input_dim=int(doc["input_dim"]),
            latent_dim=int(doc["latent_dim"]),
            hidden=tuple(int(h) for h in doc["hidden"]),
        )
        weights = {k: np.asarray(v, dtype=float) for k, v in doc["weights"].items()}
        model = cls(arch=arch, weights=weights)
        model.reset_optimizer()
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "MoaeModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def init_moae(
    input_dim: int,
    latent_dim: int,
    rng: RngHandle | np.random.Generator,
    hidden: tuple[int, int] = (64, 32),
) -> MoaeModel:
    """Fresh model: N(0, 1/fan_in) weights, zero biases, zeroed Adam state."""
    arch = MoaeArchitecture(input_dim=input_dim, latent_dim=latent_dim, hidden=hidden)
    gen = as_generator(rng)
    weights: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out, _ in arch.layers():
        weights[f"{name}.W"] = gen.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        weights[f"{name}.b"] = np.zeros(fan_out)
    model = MoaeModel(arch=arch, weights=weights)
    model.reset_optimizer()
    return model


# Largest double below 1; keeps saturated tanh outputs inside the open
# interval (-1, 1) without touching unsaturated values.
_LATENT_LIMIT = float(np.nextafter(1.0, 0.0))


def _forward_cached(model: MoaeModel, x: np.ndarray) -> dict[str, np.ndarray]:
    w = model.weights
    cache: dict[str, np.ndarray] = {"x": x}
    z1 = x @ w["encode_1.W"].T + w["encode_1.b"]
    a1 = selu(z1)
    z2 = a1 @ w["encode_2.W"].T + w["encode_2.b"]
    a2 = selu(z2)
    z3 = a2 @ w["latent.W"].T + w["latent.b"]
    latent = np.clip(np.tanh(z3), -_LATENT_LIMIT, _LATENT_LIMIT)
    z4 = latent @ w["decode_1.W"].T + w["decode_1.b"]
    a4 = selu(z4)
    z5 = a4 @ w["decode_2.W"].T + w["decode_2.b"]
    a5 = selu(z5)
    recon = a5 @ w["recon.W"].T + w["recon.b"]
    zc = latent @ w["classifier.W"].T + w["classifier.b"]
    prob = sigmoid(zc[:, 0])
    cache.update(
        z1=z1, a1=a1, z2=z2, a2=a2, latent=latent,
        z4=z4, a4=a4, z5=z5, a5=a5, recon=recon, prob=prob,
    )
    return cache


def forward(model: MoaeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the network; returns (reconstruction, latent, class probability)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise ValueError(f"expected (n, {model.arch.input_dim}) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    cache = _forward_cached(model, x)
    return cache["recon"], cache["latent"], cache["prob"]


def encode(model: MoaeModel, x: np.ndarray) -> np.ndarray:
    """Bottleneck representation of x; deterministic, entries in (-1, 1)."""
    return forward(model, x)[1]


def moae_loss(
    recon: np.ndarray,
    x: np.ndarray,
    prob: np.ndarray,
    y: np.ndarray,
    w: LossWeights,
) -> float:
    """alpha * summed squared reconstruction error plus beta/N * summed
    binary cross entropy of the side head (probabilities clamped before
    the logs)."""
    recon = np.asarray(recon, dtype=float)
    x = np.asarray(x, dtype=float)
    prob = np.asarray(prob, dtype=float)
    y = np.asarray(y, dtype=float)
    if recon.shape != x.shape or prob.shape != y.shape:
        raise ValueError("shape mismatch between outputs and targets")
    n = x.shape[0]
    recon_term = np.sum((x - recon) ** 2)
    p = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(w.alpha * recon_term + w.beta * bce / n)


def loss_and_gradients(
    model: MoaeModel,
    x: np.ndarray,
    y: np.ndarray,
    w: LossWeights,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus its gradient with respect to every weight and bias."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    wt = model.weights
    c = _forward_cached(model, x)
    loss = moae_loss(c["recon"], x, c["prob"], y, w)

    grads: dict[str, np.ndarray] = {}

    def dense_backward(name: str, dz: np.ndarray, a_in: np.ndarray) -> np.ndarray:
        grads[f"{name}.W"] = dz.T @ a_in
        grads[f"{name}.b"] = dz.sum(axis=0)
        return dz @ wt[f"{name}.W"]

    dz6 = 2.0 * w.alpha * (c["recon"] - x)
    da5 = dense_backward("recon", dz6, c["a5"])
    dz5 = da5 * selu_grad(c["z5"])
    da4 = dense_backward("decode_2", dz5, c["a4"])
    dz4 = da4 * selu_grad(c["z4"])
    dlat_dec = dense_backward("decode_1", dz4, c["latent"])

    dzc = (w.beta / n) * (c["prob"] - y)[:, None]
    dlat_clf = dense_backward("classifier", dzc, c["latent"])

    dlat = dlat_dec + dlat_clf
    dz3 = dlat * (1.0 - c["latent"] ** 2)
    da2 = dense_backward("latent", dz3, c["a2"])
    dz2 = da2 * selu_grad(c["z2"])
    da1 = dense_backward("encode_2", dz2, c["a1"])
    dz1 = da1 * selu_grad(c["z1"])
    dense_backward("encode_1", dz1, c["x"])

    return loss, grads


def adam_update(model: MoaeModel, grads: dict[str, np.ndarray], cfg: AdamConfig) -> None:
    """In-place Adam step with bias correction."""
    model.adam_step += 1
    t = model.adam_step
    for key, g in grads.items():
        m = model.adam_m[key]
        v = model.adam_v[key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        model.weights[key] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train_moae(
    model: MoaeModel,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    rng: RngHandle | np.random.Generator,
    batch_size: int | None = None,
    adam: AdamConfig = AdamConfig(),
    loss_weights: LossWeights = LossWeights(),
) -> tuple[MoaeModel, list[float]]:
    """Train a copy of the model; returns it with the per-epoch loss trace.

    batch_size None means full batch. Raises DivergedTrainingError on a
    non-finite loss, reporting the epoch.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    model = model.clone()
    if epochs == 0:
        return model, []
    size = n if batch_size is None else min(batch_size, n)
    gen = as_generator(rng)
    trace: list[float] = []
    for epoch in range(epochs):
        order = gen.permutation(n) if size < n else np.arange(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, size):
                idx = order[start : start + size]
                loss, grads = loss_and_gradients(model, x[idx], y[idx], loss_weights)
                if not np.isfinite(loss):
                    raise DivergedTrainingError(epoch)
                adam_update(model, grads, adam)
            cache = _forward_cached(model, x)
            epoch_loss = moae_loss(cache["recon"], x, cache["prob"], y, loss_weights)
        if not np.isfinite(epoch_loss):
            raise DivergedTrainingError(epoch)
        trace.append(epoch_loss)
    return model, trace
