"""Open-world graph structure learning on numpy."""

__version__ = "0.1.0"
