"""Shard stacking with Golomb placement and dynamic reordering for fault-tolerant
data-parallel training."""

__version__ = "0.1.0"
