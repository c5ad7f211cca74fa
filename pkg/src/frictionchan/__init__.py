"""Numerical toolkit for measurement-feedback friction channels."""

__version__ = "0.1.0"
