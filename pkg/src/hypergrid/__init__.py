"""Hyperparameter study harness: grids, searches, native learners and post-hoc analysis."""

__version__ = "0.1.0"
