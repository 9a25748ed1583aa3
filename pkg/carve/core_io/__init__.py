"""
Core domain types and file I/O
"""

from .io_core import (
    Camera,
    CameraRig,
    CameraValidator,
    ImageKind,
    ImagePlane,
    ImageValidator,
    MeshValidator,
    Skeleton,
    SkeletonValidator,
    TriMesh,
    ViewTag,
    as_trimesh,
    boundary_edges,
    enclosed_volume,
    euler_characteristic,
    is_watertight,
    mesh_edges,
)
from .io_formats import (
    load_camera_rig,
    load_image,
    load_labels,
    load_mesh,
    load_skeleton,
    save_camera_rig,
    save_image,
    save_labels,
    save_mesh,
    save_skeleton,
)
