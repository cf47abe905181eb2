"""Architecture-sampling strategies for one-shot NAS, including MCTS over learned hierarchies."""

__version__ = "0.1.0"
