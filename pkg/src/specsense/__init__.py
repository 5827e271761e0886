"""Spectrum sensing toolkit: signal generation, detectors, a numpy 1-D CNN,
Q-learning architecture search and bandit sensing-time selection."""

__version__ = "0.1.0"
