"""Surrogate-based generalization experiments: minimum-norm regression and the hypercube classifier."""

__version__ = "0.1.0"
