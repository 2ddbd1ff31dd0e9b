"""Stereo visual odometry with depth-normalized, two-view feature descriptors."""

__version__ = "0.1.0"
