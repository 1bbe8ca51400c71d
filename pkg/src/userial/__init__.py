"""Constructing and verifying sign-modified universal series on grids."""

__version__ = "0.1.0"
