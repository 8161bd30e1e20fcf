"""Occupation-conditioned face aging: generator/decoder/discriminator training stack."""

__version__ = "0.1.0"
