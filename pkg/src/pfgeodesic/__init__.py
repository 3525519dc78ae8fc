"""Power-flow manifold evaluation from local data via geodesic jets."""

__version__ = "0.1.0"
