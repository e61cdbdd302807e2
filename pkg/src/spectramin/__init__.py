"""Mineral identification from Raman, VNIR and LIBS spectra and their fusion."""

__version__ = "0.1.0"
