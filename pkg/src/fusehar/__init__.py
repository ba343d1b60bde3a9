"""Depth + inertial action recognition with image encodings, small CNNs and feature fusion."""

__version__ = "0.1.0"
