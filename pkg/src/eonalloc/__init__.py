"""Energy-aware routing, grooming and transponder configuration for elastic optical networks."""

__version__ = "0.1.0"
