"""Figure rendering for training-lab artifacts."""

__version__ = "0.1.0"
