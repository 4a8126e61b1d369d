"""Sum-of-squares bounds on desirability functions of first-exit stochastic control problems."""

__version__ = "0.1.0"
