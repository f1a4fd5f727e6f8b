"""Side-information co-training for long-tailed recognition."""

__version__ = "0.1.0"
