"""Noise augmentation, perception-aware linting and robustness evaluation for speech emotion recognition."""

__version__ = "0.1.0"
