"""Kac-Ising Kawasaki dynamics and its stochastic Cahn-Hilliard limit at desk scale."""

__version__ = "0.1.0"
