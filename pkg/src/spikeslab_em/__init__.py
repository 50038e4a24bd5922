"""Spike-and-slab variable selection by EM, with a Bayesian-bootstrap ensemble."""

__version__ = "0.1.0"
