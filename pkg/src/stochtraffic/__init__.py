"""Stochastic highway traffic simulation with rule-based and generative drivers,
plus a noisy dueling Q-learning lane-change agent."""

__version__ = "0.1.0"
