"""Exception types shared across the package."""


class FedAbcError(Exception):
    """Base class for all package errors."""


class InvalidHyperparameterError(FedAbcError, ValueError):
    """A prior hyperparameter violates its domain constraint."""


class NotPositiveDefiniteError(FedAbcError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class ShapeError(FedAbcError, ValueError):
    """Array shapes do not match the operation's contract."""


class InvalidArchitectureError(FedAbcError, ValueError):
    """Autoencoder dimensions violate the bottleneck constraint."""


class DivergedTrainingError(FedAbcError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class EmptyInputError(FedAbcError, ValueError):
    """An operation received an empty batch."""


class InsufficientDataError(FedAbcError, ValueError):
    """Too few rows for the requested fit."""


class IngestionError(FedAbcError, ValueError):
    """A data file could not be parsed."""


class ConfigError(FedAbcError, ValueError):
    """An experiment configuration is invalid."""


class ProtocolError(FedAbcError, RuntimeError):
    """A peer sent a message that violates the federation protocol."""


class TransportError(FedAbcError, RuntimeError):
    """A transport failed to deliver or decode a message."""


class NoPosteriorError(FedAbcError, ValueError):
    """Posterior-predictive sampling requested with no accepted parameters."""
