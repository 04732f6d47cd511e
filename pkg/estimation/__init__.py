"""Dual-quaternion pose estimation: algebra, rigid bodies, single and distributed MEKFs, consensus."""

__version__ = "0.1.0"
