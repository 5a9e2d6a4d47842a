"""mockpool: offline stand-in for the pool website's measurement endpoints."""

__version__ = "0.3.0"
