"""Double-domain guided low-light image enhancement toolkit."""

__version__ = "0.1.0"
