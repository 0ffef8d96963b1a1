"""Extract-optimize-reinforce motion pipeline at desk scale."""

__version__ = "0.1.0"
