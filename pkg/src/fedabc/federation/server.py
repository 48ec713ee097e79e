"""Central server: proposes mixture candidates, aggregates site replies.

Per round the server draws mixture parameters from the prior, generates one
latent row per registered data row, splits the rows by site in registration
order (ascending site id), and accepts the candidate when the mean of the
returned scalar discrepancies falls strictly below the threshold. Only
Register and DiscrepancyReply messages ever arrive from sites; no data,
encoded or raw, reaches the server.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..abc_engine import AbcProblem, AbcResult
from ..discrepancy import HistogramSpec, site_similarity
from ..errors import NoPosteriorError, ProtocolError, TransportError
from ..gmm import GmmParams, sample_gmm
from ..rng import RngHandle, as_generator
from ..samplers import DirichletAlpha, NiwHyper, sample_dirichlet, sample_niw
from .messages import (
    AcceptNotice,
    CandidateBatch,
    DiscrepancyReply,
    Register,
    SampleDelivery,
    Shutdown,
    WireMessage,
    encode_message,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GmmPrior:
    """Dirichlet over weights plus one NIW per component."""

    alpha: DirichletAlpha
    niw: NiwHyper

    @property
    def n_components(self) -> int:
        return self.alpha.n_components

    @property
    def dim(self) -> int:
        return self.niw.dim

    @classmethod
    def default(cls, n_components: int, dim: int) -> "GmmPrior":
        """Weakly informative: alpha=1, m=0, kappa=1, psi=I, nu=d+2."""
        return cls(
            alpha=DirichletAlpha(np.ones(n_components)),
            niw=NiwHyper(m=np.zeros(dim), kappa=1.0, psi=np.eye(dim), nu=dim + 2.0),
        )


def sample_gmm_prior(prior: GmmPrior, rng: RngHandle | np.random.Generator) -> GmmParams:
    """One joint draw of (pi, mu_1..K, sigma_1..K) from the prior."""
    gen = as_generator(rng)
    pi = sample_dirichlet(prior.alpha, gen)
    mus = np.empty((prior.n_components, prior.dim))
    sigmas = np.empty((prior.n_components, prior.dim, prior.dim))
    for k in range(prior.n_components):
        mus[k], sigmas[k] = sample_niw(prior.niw, gen)
    return GmmParams(pi=pi, mu=mus, sigma=sigmas)


def posterior_oversample(
    accepted: list[GmmParams],
    n_needed: int,
    rng: RngHandle | np.random.Generator,
) -> np.ndarray:
    """Posterior-predictive rows: parameters uniform over the accepted list,
    then one mixture draw per row."""
    if not accepted:
        raise NoPosteriorError("no accepted parameter sets to sample from")
    if n_needed < 0:
        raise ValueError("n_needed must be nonnegative")
    gen = as_generator(rng)
    dim = accepted[0].dim
    out = np.empty((n_needed, dim))
    for i in range(n_needed):
        theta = accepted[gen.integers(len(accepted))]
        out[i] = sample_gmm(theta, 1, gen)[0][0]
    return out


class MessageLog:
    """Ordered record of protocol traffic, persistable as JSON lines.

    Inbound (site to server) messages are logged with their full payload;
    that direction carries the privacy claim. Outbound matrix payloads are
    logged as shapes unless payloads=True.
    """

    def __init__(self, payloads: bool = False):
        self.entries: list[dict] = []
        self._payloads = payloads

    def record(self, direction: str, peer: int | None, msg: WireMessage) -> None:
        if not self._payloads and isinstance(msg, CandidateBatch):
            doc = {
                "type": "candidate_batch",
                "round_id": msg.round_id,
                "rows": msg.data.shape[0],
                "cols": msg.data.shape[1],
            }
        elif not self._payloads and isinstance(msg, SampleDelivery):
            doc = {
                "type": "sample_delivery",
                "rows": msg.data.shape[0],
                "cols": msg.data.shape[1],
            }
        else:
            doc = encode_message(msg)
        self.entries.append({"direction": direction, "peer": peer, "message": doc})

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


@dataclass
class ServerConfig:
    """Protocol-side knobs; the prior carries K and the latent dimension."""

    n_sites: int
    prior: GmmPrior
    epsilon: float | None
    target_accepted: int
    max_trials: int
    pilot_trials: int = 2000
    pilot_quantile: float = 0.05
    retry_budget: int = 3
    timeout: float = 120.0

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("need at least one site")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.target_accepted < 1:
            raise ValueError("target accepted count must be >= 1")
        if self.max_trials < self.target_accepted:
            raise ValueError("max trials must cover the target accepted count")


@dataclass
class _SiteLink:
    site_id: int
    n_rows: int
    channel: object


class FederationServer:
    def __init__(
        self,
        config: ServerConfig,
        transport,
        rng: RngHandle,
        log: MessageLog | None = None,
    ):
        self.config = config
        self.transport = transport
        self.rng = rng
        self.log = log if log is not None else MessageLog()
        self.sites: list[_SiteLink] = []

    # -- registration -----------------------------------------------------

    def wait_for_sites(self) -> None:
        """Accept connections and collect one Register per site.

        Registration order (candidate split order, aggregation order) is
        ascending site id regardless of connection arrival order.
        """
        channels = self.transport.accept(self.config.n_sites, timeout=self.config.timeout)
        links = []
        for channel in channels:
            msg = channel.recv(timeout=self.config.timeout)
            if not isinstance(msg, Register):
                raise ProtocolError(f"expected Register, got {type(msg).__name__}")
            if msg.n_rows < 1:
                raise ProtocolError(f"site {msg.site_id} registered {msg.n_rows} rows")
            self.log.record("site_to_server", msg.site_id, msg)
            links.append(_SiteLink(site_id=msg.site_id, n_rows=msg.n_rows, channel=channel))
        ids = [link.site_id for link in links]
        if len(set(ids)) != len(ids):
            raise ProtocolError(f"duplicate site ids in {ids}")
        self.sites = sorted(links, key=lambda link: link.site_id)

    @property
    def total_rows(self) -> int:
        return sum(link.n_rows for link in self.sites)

    # -- one protocol round -----------------------------------------------

    def _run_round(self, round_id: int) -> tuple[GmmParams, float]:
        trial_gen = self.rng.child(round_id).generator()
        theta = sample_gmm_prior(self.config.prior, trial_gen)
        n_total = sum(link.n_rows for link in self.sites)
        generated, _ = sample_gmm(theta, n_total, trial_gen)

        batches = []
        offset = 0
        for link in self.sites:
            batches.append(generated[offset : offset + link.n_rows])
            offset += link.n_rows

        last_error: TransportError | None = None
        for attempt in range(self.config.retry_budget + 1):
            try:
                phis = self._exchange(round_id, batches)
                break
            except TransportError as exc:
                last_error = exc
                logger.warning("round %d attempt %d failed: %s", round_id, attempt, exc)
        else:
            raise TransportError(
                f"round {round_id} failed after {self.config.retry_budget + 1} attempts"
            ) from last_error

        phi_bar = sum(phis) / len(phis)
        return theta, phi_bar

    def _exchange(self, round_id: int, batches: list[np.ndarray]) -> list[float]:
        for link, batch in zip(self.sites, batches):
            msg = CandidateBatch(round_id=round_id, data=batch)
            link.channel.send(msg)
            self.log.record("server_to_site", link.site_id, msg)
        phis = []
        for link in self.sites:
            reply = link.channel.recv(timeout=self.config.timeout)
            if not isinstance(reply, DiscrepancyReply):
                raise ProtocolError(f"expected DiscrepancyReply, got {type(reply).__name__}")
            if reply.round_id != round_id:
                raise ProtocolError(
                    f"round id mismatch: expected {round_id}, got {reply.round_id}"
                )
            if reply.site_id != link.site_id:
                raise ProtocolError(
                    f"reply from site {reply.site_id} on site {link.site_id}'s channel"
                )
            if not np.isfinite(reply.phi) or reply.phi < 0:
                raise ProtocolError(f"invalid discrepancy {reply.phi}")
            self.log.record("site_to_server", link.site_id, reply)
            phis.append(reply.phi)
        return phis

    def _notify(self, round_id: int, accepted: bool) -> None:
        for link in self.sites:
            msg = AcceptNotice(round_id=round_id, accepted=accepted)
            link.channel.send(msg)
            self.log.record("server_to_site", link.site_id, msg)

    # -- inference --------------------------------------------------------

    def infer_posterior(self) -> AbcResult:
        """Run the accept/reject loop; calibrates epsilon first when unset.

        Returns a partial result when max trials run out, mirroring the
        centralized engine.
        """
        if not self.sites:
            raise ProtocolError("no sites registered")
        cfg = self.config
        round_id = 0

        epsilon = cfg.epsilon
        if epsilon is None:
            pilot: list[float] = []
            for _ in range(cfg.pilot_trials):
                _, phi_bar = self._run_round(round_id)
                self._notify(round_id, accepted=False)
                pilot.append(phi_bar)
                round_id += 1
            epsilon = float(np.quantile(pilot, cfg.pilot_quantile))
            logger.info("calibrated epsilon=%.6g from %d pilot rounds", epsilon, len(pilot))

        result = AbcResult(epsilon=epsilon)
        for _ in range(cfg.max_trials):
            theta, phi_bar = self._run_round(round_id)
            result.discrepancy_trace.append(phi_bar)
            result.trials += 1
            accepted = phi_bar < epsilon
            self._notify(round_id, accepted)
            if accepted:
                result.accepted.append(theta)
                result.accepted_trials.append(round_id)
                if len(result.accepted) >= cfg.target_accepted:
                    result._target_met = True
                    break
            round_id += 1
        return result

    # -- epilogue ---------------------------------------------------------

    def deliver_samples(self, per_site: dict[int, np.ndarray]) -> None:
        for link in self.sites:
            if link.site_id in per_site:
                msg = SampleDelivery(data=per_site[link.site_id])
                link.channel.send(msg)
                self.log.record("server_to_site", link.site_id, msg)

    def shutdown(self) -> None:
        for link in self.sites:
            msg = Shutdown()
            link.channel.send(msg)
            self.log.record("server_to_site", link.site_id, msg)
            link.channel.close()


def run_server(
    config: ServerConfig,
    transport,
    rng: RngHandle,
    log: MessageLog | None = None,
) -> AbcResult:
    """Registration plus inference; caller handles delivery and shutdown."""
    server = FederationServer(config, transport, rng, log=log)
    server.wait_for_sites()
    return server.infer_posterior()


def centralized_problem(
    prior: GmmPrior,
    encoded: np.ndarray,
    histogram: "HistogramSpec",
    epsilon: float,
    target_accepted: int,
    max_trials: int,
) -> AbcProblem:
    """Single-site reference: the rejection engine configured to consume
    randomness exactly like the protocol loop, for equivalence checks."""
    n_rows = encoded.shape[0]
    return AbcProblem(
        prior_sample=lambda gen: sample_gmm_prior(prior, gen),
        simulate=lambda theta, gen: sample_gmm(theta, n_rows, gen)[0],
        summarize=lambda data: data,
        discrepancy=lambda sim, obs: site_similarity(obs, sim, histogram),
        observed_summary=encoded,
        epsilon=epsilon,
        target_accepted=target_accepted,
        max_trials=max_trials,
    )
