"""
Core domain types and their validators (no file I/O)
Meshes, cameras, image planes and skeletons shared by every carve module
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import trimesh

from carve.errors import ImageValidationWarning, ValidationError

logger = logging.getLogger(__name__)

NORMAL_TOLERANCE = 1e-3


def _frozen_array(values, dtype, shape_tail=None):
    arr = np.array(values, dtype=dtype, copy=True)
    if shape_tail is not None:
        arr = arr.reshape((-1,) + shape_tail)
    arr.setflags(write=False)
    return arr


# ============================================================================
# TRIANGLE MESH
# ============================================================================

@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Indexed triangle mesh.

    vertices: (N, 3) float64 positions
    faces: (F, 3) int64 vertex indices
    part_labels: optional (N,) int64 semantic labels in [0, gamma)
    uvs: optional (N, 2) float64 texture coordinates in [0, 1]
    """

    vertices: np.ndarray
    faces: np.ndarray
    part_labels: np.ndarray = None
    uvs: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen_array(self.vertices, np.float64, (3,)))
        object.__setattr__(self, "faces", _frozen_array(self.faces, np.int64, (3,)))
        if self.part_labels is not None:
            object.__setattr__(self, "part_labels", _frozen_array(self.part_labels, np.int64))
        if self.uvs is not None:
            object.__setattr__(self, "uvs", _frozen_array(self.uvs, np.float64, (2,)))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def replace(self, **changes):
        """Return a copy with some fields replaced"""
        values = {
            "vertices": self.vertices,
            "faces": self.faces,
            "part_labels": self.part_labels,
            "uvs": self.uvs,
        }
        values.update(changes)
        return TriMesh(**values)

    def check(self):
        """Raise ValidationError unless every invariant holds; returns self"""
        is_valid, message = MeshValidator.validate(self)
        if not is_valid:
            raise ValidationError(message)
        return self


class MeshValidator:
    """Validates triangle meshes before processing"""

    @staticmethod
    def validate(mesh):
        """
        Validate mesh structure

        Args:
            mesh: TriMesh

        Returns:
            (is_valid, error_message)
        """
        n = mesh.n_vertices
        if mesh.vertices.ndim != 2 or mesh.vertices.shape[1] != 3:
            return False, "Vertices must be an (N, 3) array"
        if not np.all(np.isfinite(mesh.vertices)):
            return False, "Vertices contain non-finite coordinates"

        faces = mesh.faces
        if len(faces):
            if faces.min() < 0:
                bad = int(np.argmax((faces < 0).any(axis=1)))
                return False, f"Face {bad} has a negative vertex index"
            if faces.max() >= n:
                bad = int(np.argmax((faces >= n).any(axis=1)))
                return False, f"Face {bad} references vertex {int(faces[bad].max())} but mesh has {n} vertices"
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degenerate.any():
                bad = np.flatnonzero(degenerate)
                return False, f"Degenerate faces (repeated indices): {bad[:10].tolist()}"

        if mesh.part_labels is not None:
            if len(mesh.part_labels) != n:
                return False, (
                    f"part_labels has {len(mesh.part_labels)} entries but mesh has {n} vertices"
                )
            if len(mesh.part_labels) and mesh.part_labels.min() < 0:
                return False, "part_labels must be non-negative"

        if mesh.uvs is not None:
            if len(mesh.uvs) != n:
                return False, f"uvs has {len(mesh.uvs)} entries but mesh has {n} vertices"
            if len(mesh.uvs) and (mesh.uvs.min() < 0.0 or mesh.uvs.max() > 1.0):
                return False, "uv coordinates must lie in [0, 1]"

        return True, "Mesh is valid"


def as_trimesh(mesh):
    """trimesh copy of a TriMesh; vertex order and faces are kept as they are"""
    return trimesh.Trimesh(np.array(mesh.vertices), np.array(mesh.faces), process=False, validate=False)


def mesh_edges(mesh):
    """
    Undirected edges with their face incidence counts

    Returns:
        (edges (E, 2) sorted pairs in lexicographic order, counts (E,))
    """
    if len(mesh.faces) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    tm = as_trimesh(mesh)
    edges = np.asarray(tm.edges_unique, dtype=np.int64)
    counts = np.bincount(tm.edges_unique_inverse, minlength=len(edges))
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], counts[order]


def boundary_edges(mesh):
    """Edges used by exactly one face"""
    edges, counts = mesh_edges(mesh)
    return edges[counts == 1]


def is_watertight(mesh):
    """Every edge shared by exactly two faces"""
    if mesh.n_faces == 0:
        return False
    return bool(as_trimesh(mesh).is_watertight)


def euler_characteristic(mesh):
    """V - E + F over the vertices that faces reference"""
    if mesh.n_faces == 0:
        return 0
    tm = as_trimesh(mesh)
    return int(tm.referenced_vertices.sum() - len(tm.edges_unique) + len(tm.faces))


def enclosed_volume(mesh):
    """Signed volume enclosed by a closed, outward-oriented mesh"""
    if mesh.n_faces == 0:
        return 0.0
    return float(as_trimesh(mesh).volume)


# ============================================================================
# CAMERAS
# ============================================================================

class ViewTag(str, Enum):
    FRONT = "front"
    BACK = "back"
    OTHER = "other"


@dataclass(frozen=True, eq=False)
class Camera:
    """
    Pinhole camera looking from position toward look_at.

    Image x grows to the right, image y grows downward; pixel (r, c) has its
    center at (c + 0.5, r + 0.5).
    """

    position: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    fov_y: float = 30.0
    width: int = 512
    height: int = 512
    view_tag: ViewTag = ViewTag.OTHER

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "look_at", tuple(float(x) for x in self.look_at))
        object.__setattr__(self, "up", tuple(float(x) for x in self.up))
        object.__setattr__(self, "fov_y", float(self.fov_y))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "view_tag", ViewTag(self.view_tag))

    def basis(self):
        """Orthonormal (right, true_up, forward) camera axes in world space"""
        pos = np.asarray(self.position)
        forward = np.asarray(self.look_at) - pos
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up))
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return right, true_up, forward

    @property
    def focal(self):
        """Focal length in pixels"""
        return 0.5 * self.height / math.tan(math.radians(self.fov_y) / 2.0)

    def to_camera_space(self, points):
        """World points (N, 3) to camera coordinates (x right, y up, z forward)"""
        right, true_up, forward = self.basis()
        d = np.asarray(points, dtype=np.float64) - np.asarray(self.position)
        return np.stack([d @ right, d @ true_up, d @ forward], axis=-1)

    def project(self, points):
        """
        Project world points to pixel coordinates

        Returns:
            (sx, sy, depth) arrays; depth is the distance along the view axis
        """
        cam = self.to_camera_space(points)
        z = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = 0.5 * self.width + self.focal * cam[..., 0] / z
            sy = 0.5 * self.height - self.focal * cam[..., 1] / z
        return sx, sy, z

    def pixel_rays(self):
        """Unit ray directions (H, W, 3) through every pixel center"""
        right, true_up, forward = self.basis()
        cols = np.arange(self.width) + 0.5
        rows = np.arange(self.height) + 0.5
        x = (cols - 0.5 * self.width) / self.focal
        y = (0.5 * self.height - rows) / self.focal
        d = (
            x[None, :, None] * right[None, None, :]
            + y[:, None, None] * true_up[None, None, :]
            + forward[None, None, :]
        )
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_dict(self):
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov_y": self.fov_y,
            "width": self.width,
            "height": self.height,
            "view_tag": self.view_tag.value,
        }


class CameraValidator:
    """Validates camera intrinsics and extrinsics"""

    @staticmethod
    def validate(camera):
        pos = np.asarray(camera.position)
        target = np.asarray(camera.look_at)
        up = np.asarray(camera.up)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(target)) and np.all(np.isfinite(up))):
            return False, "Camera vectors must be finite"
        view = target - pos
        view_len = np.linalg.norm(view)
        if view_len == 0.0:
            return False, "Camera position equals look_at"
        up_len = np.linalg.norm(up)
        if up_len == 0.0:
            return False, "Camera up vector is zero"
        if np.linalg.norm(np.cross(view / view_len, up / up_len)) < 1e-9:
            return False, "Camera up vector is parallel to the view direction"
        if not (0.0 < camera.fov_y < 180.0):
            return False, f"fov_y must be in (0, 180) degrees, got {camera.fov_y}"
        if camera.width < 1 or camera.height < 1:
            return False, f"Image size must be at least 1x1, got {camera.width}x{camera.height}"
        return True, "Camera is valid"


@dataclass(frozen=True, eq=False)
class CameraRig:
    """Ordered set of cameras (the viewpoint set)"""

    cameras: tuple

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, index):
        return self.cameras[index]

    def weights(self, w_front_back=1.0, w_other=0.2):
        """Per-view reconstruction weights from the view tags"""
        return [
            w_front_back if cam.view_tag in (ViewTag.FRONT, ViewTag.BACK) else w_other
            for cam in self.cameras
        ]

    def check(self):
        if not self.cameras:
            raise ValidationError("empty rig")
        for i, cam in enumerate(self.cameras):
            is_valid, message = CameraValidator.validate(cam)
            if not is_valid:
                raise ValidationError(f"camera {i}: {message}")
        return self


# ============================================================================
# IMAGE PLANES
# ============================================================================

class ImageKind(str, Enum):
    COLOR = "color"
    NORMAL = "normal"
    SILHOUETTE = "silhouette"
    POSE = "pose"


EXPECTED_CHANNELS = {
    ImageKind.COLOR: (3,),
    ImageKind.NORMAL: (3,),
    ImageKind.SILHOUETTE: (1,),
    ImageKind.POSE: (3,),
}


@dataclass(frozen=True, eq=False)
class ImagePlane:
    """H x W x C float raster; data is row-major with shape (H, W, C)"""

    data: np.ndarray
    kind: ImageKind = ImageKind.COLOR

    def __post_init__(self):
        arr = np.array(self.data, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "kind", ImageKind(self.kind))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def decoded_normals(self):
        """World-space normals from the (n + 1) / 2 encoding"""
        return 2.0 * np.asarray(self.data, dtype=np.float64) - 1.0

    @classmethod
    def from_normals(cls, normals, mask=None):
        """Encode unit normals as (n + 1) / 2; background (mask 0) stays 0"""
        enc = 0.5 * (np.asarray(normals, dtype=np.float64) + 1.0)
        if mask is not None:
            enc = enc * (np.asarray(mask).reshape(enc.shape[:2])[:, :, None] > 0.5)
        return cls(enc, ImageKind.NORMAL)

    def mask(self):
        """Boolean (H, W) foreground for silhouettes"""
        return np.asarray(self.data[:, :, 0]) > 0.5

    def check(self, silhouette=None):
        is_valid, message = ImageValidator.validate(self, silhouette)
        if not is_valid:
            raise ValidationError(message)
        return self


class ImageValidator:
    """Validates image planes against their declared kind"""

    @staticmethod
    def validate(plane, silhouette=None):
        """
        Validate shape and values of an image plane

        Non-unit normal pixels are reported as a warning rather than failure.

        Args:
            plane: ImagePlane
            silhouette: optional ImagePlane restricting the normal check

        Returns:
            (is_valid, error_message)
        """
        expected = EXPECTED_CHANNELS[plane.kind]
        if plane.channels not in expected:
            return False, (
                f"{plane.kind.value} image must have {expected[0]} channel(s), got {plane.channels}"
            )
        if plane.width < 1 or plane.height < 1:
            return False, "Image must be at least 1x1"
        if not np.all(np.isfinite(plane.data)):
            return False, "Image contains non-finite samples"

        if plane.kind == ImageKind.SILHOUETTE:
            values = np.unique(plane.data)
            if not np.all(np.isin(values, (0.0, 1.0))):
                return False, "Silhouette values must be 0 or 1"

        if plane.kind == ImageKind.NORMAL:
            if silhouette is not None:
                if silhouette.width != plane.width or silhouette.height != plane.height:
                    return False, "Silhouette size does not match the normal map"
                inside = silhouette.mask()
            else:
                inside = np.any(plane.data != 0.0, axis=2)
            lengths = np.linalg.norm(plane.decoded_normals()[inside], axis=-1)
            off = np.abs(lengths - 1.0) > NORMAL_TOLERANCE
            if off.any():
                message = f"{int(off.sum())} normal pixel(s) are not unit length"
                logger.warning(message)
                warnings.warn(message, ImageValidationWarning, stacklevel=3)

        return True, "Image is valid"


# ============================================================================
# SKELETONS
# ============================================================================

@dataclass(frozen=True, eq=False)
class Skeleton:
    """Named 3D joints connected by bones (joint index pairs)"""

    names: tuple
    joints: np.ndarray
    bones: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "joints", _frozen_array(self.joints, np.float64, (3,)))
        object.__setattr__(self, "bones", _frozen_array(self.bones, np.int64, (2,)))

    def transformed(self, fn):
        """Skeleton with fn applied to the (J, 3) joint array"""
        return Skeleton(self.names, fn(np.array(self.joints)), self.bones)

    def check(self):
        is_valid, message = SkeletonValidator.validate(self)
        if not is_valid:
            raise ValidationError(message)
        return self


class SkeletonValidator:
    """Validates skeleton joints and bone indices"""

    @staticmethod
    def validate(skeleton):
        n = len(skeleton.joints)
        if n < 1:
            return False, "Skeleton needs at least one joint"
        if len(skeleton.names) != n:
            return False, f"{len(skeleton.names)} names for {n} joints"
        if not np.all(np.isfinite(skeleton.joints)):
            return False, "Joint positions must be finite"
        for b, (i, j) in enumerate(skeleton.bones.tolist()):
            if not (0 <= i < n and 0 <= j < n):
                return False, f"Bone {b} references joint outside [0, {n})"
            if i == j:
                return False, f"Bone {b} connects joint {i} to itself"
        return True, "Skeleton is valid"
