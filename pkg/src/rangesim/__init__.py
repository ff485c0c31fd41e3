"""Deterministic simulator for duty-cycled LoRa ranging networks."""

__version__ = "0.1.0"
