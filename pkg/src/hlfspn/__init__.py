"""Stochastic Petri net performance toolkit for permissioned blockchain
transaction flows (endorse -> order -> commit)."""

from . import doe, experiments, hlf, metrics, spn

__all__ = ["doe", "experiments", "hlf", "metrics", "spn"]
__version__ = "0.1.0"
