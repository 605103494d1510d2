"""Version information for the engineered-bath toolkit."""

__version__ = "0.1.0"
