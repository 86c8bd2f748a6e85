"""Greedy LASSO bandits on sparse linear rewards, with compatibility-constant certification."""

__version__ = "0.1.0"
