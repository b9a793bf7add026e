"""flamelab: spectral flame-front solvers plus learned time-advancement operators."""

__version__ = "0.1.0"
