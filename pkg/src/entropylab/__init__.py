"""Exact dyadic-model computations for entropy-bump two-weight inequalities."""

__version__ = "0.1.0"
