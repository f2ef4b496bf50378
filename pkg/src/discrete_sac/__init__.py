"""Discrete soft actor-critic for maximum-reward RL, with exact tabular oracles
and robust aggregate evaluation metrics."""

__version__ = "0.1.0"
