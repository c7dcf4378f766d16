"""Symbolic embodied-agent environment with a teacher loop and a small RLEF stack."""

__version__ = "0.1.0"
