"""Moment-matched lognormal polynomial approximations for products of random variables."""

__version__ = "0.1.0"
