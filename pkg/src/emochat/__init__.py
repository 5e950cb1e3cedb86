"""Emotion-aware neural dialogue: corpus tools, model, training, evaluation."""

__version__ = "0.1.0"
