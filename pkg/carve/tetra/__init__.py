"""
Deformable tetrahedral grid and Marching Tetrahedra
"""

from .tet_core import TetGrid, build_grid, extract_surface, marching_tetrahedra, mt_vertex_jacobian
