"""Indirect output-feedback stochastic MPC for linear Gaussian systems."""

__version__ = "0.1.0"
