"""Multi-objective reinforcement learning engine for covalent-inhibitor generation."""

__version__ = "0.1.0"
