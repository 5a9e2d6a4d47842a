"""poolmodel: offline analytics and simulation over pool measurements."""

__version__ = "0.3.0"
