"""Lead sheet reduction of multitrack scores."""

__version__ = "0.1.0"
