"""Group interaction relational network over skeleton trajectories."""

__version__ = "0.1.0"
