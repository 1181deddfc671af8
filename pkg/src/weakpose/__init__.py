"""Weakly supervised monocular 3D pose regression from multi-view consistency."""

__version__ = "0.1.0"
