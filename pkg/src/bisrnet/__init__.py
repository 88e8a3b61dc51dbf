"""Binarized spectral-redistribution networks for snapshot hyperspectral
reconstruction, with bit-exact XNOR/popcount 1-bit convolution."""

__version__ = "0.1.0"

from .network import Accounting, NetworkConfig, build  # noqa: F401
