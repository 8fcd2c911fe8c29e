"""Interleaved classical/learned control of a four-wing flapping bench."""

__version__ = "0.1.0"
