"""Figure rendering for csg-emos verification report JSON."""

__version__ = "0.1.0"
