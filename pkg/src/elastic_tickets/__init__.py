"""Lottery-ticket toolkit: iterative magnitude pruning, one-shot pruning
baselines, and elastic stretch/squeeze transforms across depth families."""

__version__ = "0.1.0"
