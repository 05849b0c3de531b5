"""Local module identification in dynamic networks with correlated process noise."""
__version__ = "0.1.0"
