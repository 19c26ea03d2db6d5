"""Weighted Hele-Shaw flow on the Riemann sphere and the Legendre-dual HMAE solution."""

__version__ = "0.1.0"
