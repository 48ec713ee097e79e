"""Server/site protocol for distributed inference over scalar discrepancies."""

from .messages import (
    AcceptNotice,
    CandidateBatch,
    DiscrepancyReply,
    Register,
    SampleDelivery,
    Shutdown,
    WireMessage,
    decode_message,
    encode_message,
)
from .server import (
    FederationServer,
    GmmPrior,
    MessageLog,
    ServerConfig,
    centralized_problem,
    posterior_oversample,
    run_server,
    sample_gmm_prior,
)
from .site import SiteResult, run_site
from .transport import InProcessTransport, TcpListener, tcp_connect

from .site import SiteTrainingConfig

__all__ = [
    "AcceptNotice",
    "CandidateBatch",
    "DiscrepancyReply",
    "FederationServer",
    "GmmPrior",
    "InProcessTransport",
    "MessageLog",
    "Register",
    "SampleDelivery",
    "ServerConfig",
    "Shutdown",
    "SiteResult",
    "SiteTrainingConfig",
    "TcpListener",
    "WireMessage",
    "centralized_problem",
    "decode_message",
    "encode_message",
    "posterior_oversample",
    "run_server",
    "run_site",
    "sample_gmm_prior",
    "tcp_connect",
]
