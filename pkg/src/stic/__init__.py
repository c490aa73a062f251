"""Self-training data factory and preference-loss core for vision-language models."""

__version__ = "0.1.0"
