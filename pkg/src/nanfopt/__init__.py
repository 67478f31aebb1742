"""Two-stage neural surrogate search for NANF hollow-core fiber designs."""

__version__ = "0.1.0"
