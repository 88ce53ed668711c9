"""Physics-informed neural network training with adaptive collocation points."""

__version__ = "0.1.0"
