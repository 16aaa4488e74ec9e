"""Markov-property diagnostics for reinforcement-learning observation streams."""

__version__ = "0.1.0"
