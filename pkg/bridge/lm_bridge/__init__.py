"""Remote log-prob provider speaking the scoring wire protocol, version 1."""

__version__ = "0.1.0"
