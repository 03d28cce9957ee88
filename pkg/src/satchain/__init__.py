"""Service function chain placement and VNF caching on LEO satellite networks."""

__version__ = "0.1.0"
