"""Federated likelihood-free inference of a Gaussian mixture, used to
oversample a minority class across simulated sites without moving data."""

__version__ = "0.1.0"

from .rng import RngHandle

__all__ = ["RngHandle", "__version__"]
