"""Spectral dimensions and transport exponents of finite lattice Hamiltonians."""

__version__ = "0.1.0"
