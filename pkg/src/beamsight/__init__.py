"""Beam selection from GPS, camera and LiDAR with a from-scratch numpy transformer stack."""
__version__ = "0.1.0"
