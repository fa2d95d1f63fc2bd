"""Photon-resolved quantum trajectories for driven atom arrays in free space."""
from .model import AtomArray, DriveField, PhysicalParams, build_hex_array, derive_drive

__all__ = ["AtomArray", "DriveField", "PhysicalParams", "build_hex_array", "derive_drive"]
__version__ = "0.1.0"
