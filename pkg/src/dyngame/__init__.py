"""Two-player dynamic entry game: equilibrium, estimation, and variance engine."""

__version__ = "0.1.0"
