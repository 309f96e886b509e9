"""Three-stage contact planning for planar quasi-static manipulation."""

__version__ = "0.1.0"
