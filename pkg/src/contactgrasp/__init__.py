"""Contact-anchored multi-finger grasp representation and synthetic dataset tools."""
__version__ = "0.1.0"
