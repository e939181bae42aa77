"""Set prediction with feed-forward networks: cardinality heads, permutation-aware
losses, exact MAP set inference and synthetic benchmarks."""

__version__ = "0.1.0"
