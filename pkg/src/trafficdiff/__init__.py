"""Time-series imaging + diffusion synthesis of network traffic traces."""

__version__ = "0.1.0"
