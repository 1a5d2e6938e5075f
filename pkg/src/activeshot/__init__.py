"""Stream-based active one-shot learning with memory-augmented Q-networks."""

__version__ = "0.1.0"
