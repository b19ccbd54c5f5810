"""Pairwise ranking (BPR) with uniform, reduced-space, dynamic and view-aware samplers."""

__version__ = "0.1.0"
