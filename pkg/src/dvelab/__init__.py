"""Multi-scene gridworld RL lab with sparse-attention dynamic value estimation."""

__version__ = "0.1.0"
