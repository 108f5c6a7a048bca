"""Temporal graph forecasting: features, graph composition, A3T-GCN and evaluation in numpy."""

__version__ = "0.1.0"
