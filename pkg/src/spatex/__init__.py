"""Spatial extremes of sub-daily precipitation: GEV additive margins and max-id dependence."""

__version__ = "0.1.0"
