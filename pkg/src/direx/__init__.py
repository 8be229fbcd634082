"""direx: simulation and certification toolkit for untrusted-device
randomness expansion and key distribution."""

__version__ = "0.1.0"
