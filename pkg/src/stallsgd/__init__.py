"""SGD stalling, restarted stochastic gradient methods, and exact error bounds."""

__version__ = "0.1.0"
