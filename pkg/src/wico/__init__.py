"""Window token concatenation projectors for visual token compression."""

__version__ = "0.1.0"
