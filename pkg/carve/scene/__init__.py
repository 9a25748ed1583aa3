"""
3D instantiation: camera rigs, body normalization and pose sheets
"""

from .scene_core import RigSpec, instantiate_rig, project_skeleton, concat_views
