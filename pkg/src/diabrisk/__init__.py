"""Two-stage diabetes risk pipeline: clinical entity tagging, feature fusion, risk models."""

__version__ = "0.1.0"
