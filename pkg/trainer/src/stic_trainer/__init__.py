"""Toy-scale trainer that consumes the data factory's JSONL outputs."""

__version__ = "0.1.0"
