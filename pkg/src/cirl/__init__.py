"""Tabular constrained MDPs and constrained inverse reinforcement learning."""

__version__ = "0.1.0"
