"""Site role: train locally, then answer candidate batches with scalars.

A site trains its autoencoder on all local training rows, encodes the
minority-class rows once as the comparison target, registers that row
count, and then serves rounds until told to shut down. The only outbound
messages are the registration and the scalar discrepancy replies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..discrepancy import HistogramSpec, site_similarity
from ..errors import ProtocolError
from ..moae import AdamConfig, LossWeights, MoaeModel, encode, init_moae, train_moae
from ..rng import RngHandle
from .messages import AcceptNotice, CandidateBatch, DiscrepancyReply, Register, SampleDelivery, Shutdown

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SiteTrainingConfig:
    """Local autoencoder hyperparameters."""

    latent_dim: int
    hidden: tuple[int, int] = (64, 32)
    epochs: int = 300
    batch_size: int | None = None
    adam: AdamConfig = AdamConfig()
    loss_weights: LossWeights = LossWeights()
    histogram: HistogramSpec = HistogramSpec()


@dataclass
class SiteResult:
    """What a site session produced, kept local to the site."""

    site_id: int
    model: MoaeModel
    encoded_minority: np.ndarray
    loss_trace: list[float] = field(default_factory=list)
    phi_trace: list[float] = field(default_factory=list)
    accept_notices: list[bool] = field(default_factory=list)
    received_samples: np.ndarray | None = None
    rounds_served: int = 0


def run_site(
    site_id: int,
    x_train: np.ndarray,
    y_train: np.ndarray,
    config: SiteTrainingConfig,
    channel,
    rng: RngHandle,
    timeout: float | None = 120.0,
) -> SiteResult:
    """Train, register, serve discrepancy rounds until Shutdown."""
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    minority = x_train[y_train == 1]
    if minority.shape[0] < 1:
        raise ValueError(f"site {site_id} has no minority rows")

    model = init_moae(
        x_train.shape[1], config.latent_dim, rng.child(0), hidden=config.hidden
    )
    model, loss_trace = train_moae(
        model,
        x_train,
        y_train,
        epochs=config.epochs,
        rng=rng.child(1),
        batch_size=config.batch_size,
        adam=config.adam,
        loss_weights=config.loss_weights,
    )
    enc = encode(model, minority)
    result = SiteResult(
        site_id=site_id, model=model, encoded_minority=enc, loss_trace=loss_trace
    )

    channel.send(Register(site_id=site_id, n_rows=enc.shape[0]))
    while True:
        msg = channel.recv(timeout=timeout)
        if isinstance(msg, CandidateBatch):
            if msg.data.shape != enc.shape:
                raise ProtocolError(
                    f"site {site_id} expected a {enc.shape} batch, got {msg.data.shape}"
                )
            phi = site_similarity(enc, msg.data, config.histogram)
            result.phi_trace.append(phi)
            result.rounds_served += 1
            channel.send(DiscrepancyReply(round_id=msg.round_id, site_id=site_id, phi=phi))
        elif isinstance(msg, AcceptNotice):
            result.accept_notices.append(msg.accepted)
        elif isinstance(msg, SampleDelivery):
            result.received_samples = msg.data
        elif isinstance(msg, Shutdown):
            break
        else:
            raise ProtocolError(f"site {site_id} cannot handle {type(msg).__name__}")
    channel.close()
    return result
