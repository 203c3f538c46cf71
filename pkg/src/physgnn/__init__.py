"""Physics-inspired multi-phase consensus graph networks for imbalanced node classification."""

__version__ = "0.1.0"
