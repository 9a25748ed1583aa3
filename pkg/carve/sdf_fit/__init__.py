"""
Signed distances to meshes and grid SDF fitting
"""

from .fit_core import fit_sdf, sample_near_surface, signed_distance
