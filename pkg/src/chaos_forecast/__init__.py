"""Multi-rate hierarchical latent forecasting of chaotic 1D systems."""

__version__ = "0.1.0"
