"""Corrective augmentation for eye-in-hand behavior cloning with voxel radiance fields."""
__version__ = "0.1.0"
