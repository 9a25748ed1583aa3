"""
3D Instantiation Core Logic
Builds the K-view camera rig, projects a skeleton into pose images and
concatenates them into a multi-view pose sheet, with step recording.
"""

import logging
from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb

from carve.core_io.io_core import Camera, CameraRig, ImageKind, ImagePlane, ViewTag
from carve.errors import ShapeMismatchError, ValidationError
from carve.parallel import ordered_map

logger = logging.getLogger(__name__)

# Bump whenever the drawing style changes so pose images stay reproducible.
PALETTE_VERSION = 1


# ============================================================================
# RIG SPECIFICATION
# ============================================================================

@dataclass(frozen=True)
class RigSpec:
    """Horizontal camera circle around a target"""

    k_views: int = 7
    radius: float = 2.7
    azimuth_start: float = 0.0
    azimuth_end: float = 180.0
    image_size: int = 512
    fov_y: float = 30.0
    target_center: tuple = (0.0, 0.0, 0.0)
    mirror_to_360: bool = False


class RigSpecValidator:
    """Validates rig specifications before building cameras"""

    @staticmethod
    def validate(spec):
        """
        Validate a rig specification

        Args:
            spec: RigSpec

        Returns:
            (is_valid, error_message)
        """
        if spec.k_views < 1:
            return False, f"k_views must be at least 1, got {spec.k_views}"
        if not spec.radius > 0:
            return False, f"radius must be positive, got {spec.radius}"
        if not spec.azimuth_start < spec.azimuth_end:
            return False, "azimuth_start must be smaller than azimuth_end"
        if spec.image_size < 1:
            return False, f"image_size must be at least 1, got {spec.image_size}"
        if not 0 < spec.fov_y < 180:
            return False, f"fov_y must be in (0, 180), got {spec.fov_y}"
        if len(spec.target_center) != 3:
            return False, "target_center needs 3 components"
        return True, "Rig specification is valid"


def _angular_gap(a, b):
    d = abs((a - b) % 360.0)
    return min(d, 360.0 - d)


def tag_views(azimuths):
    """
    Assign view tags to a list of azimuths (degrees)

    The camera nearest 0/360 is front and the camera nearest 180 is back, each
    only if within 90 degrees; front wins ties and the earlier camera wins
    among equals. Everything else is other.
    """
    tags = [ViewTag.OTHER] * len(azimuths)
    front_gap = [_angular_gap(a, 0.0) for a in azimuths]
    back_gap = [_angular_gap(a, 180.0) for a in azimuths]
    front = int(np.argmin(front_gap)) if azimuths else None
    if front is not None and front_gap[front] < 90.0:
        tags[front] = ViewTag.FRONT
    candidates = [i for i in range(len(azimuths)) if tags[i] == ViewTag.OTHER]
    if candidates:
        back = min(candidates, key=lambda i: (back_gap[i], i))
        if back_gap[back] < 90.0 and back_gap[back] <= front_gap[back]:
            tags[back] = ViewTag.BACK
    return tags


def rig_azimuths(spec):
    if spec.k_views == 1:
        return [float(spec.azimuth_start)]
    return [float(a) for a in np.linspace(spec.azimuth_start, spec.azimuth_end, spec.k_views)]


def camera_at_azimuth(azimuth, radius, target_center=(0.0, 0.0, 0.0), elevation=0.0,
                      fov_y=30.0, size=512, view_tag=ViewTag.OTHER):
    """Camera on a sphere around target_center; azimuth 0 looks from +z, 90 from +x"""
    az = np.radians(azimuth)
    el = np.radians(elevation)
    center = np.asarray(target_center, dtype=np.float64)
    direction = np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
    return Camera(
        position=center + radius * direction,
        look_at=center,
        up=(0.0, 1.0, 0.0),
        fov_y=fov_y,
        width=size,
        height=size,
        view_tag=view_tag,
    )


def instantiate_rig(spec):
    """
    Build the K-view rig on the horizontal circle around target_center

    Args:
        spec: RigSpec

    Returns:
        CameraRig with K cameras (2K minus the 0/180 duplicates with mirror_to_360)
    """
    is_valid, message = RigSpecValidator.validate(spec)
    if not is_valid:
        raise ValidationError(message)

    azimuths = rig_azimuths(spec)
    tags = tag_views(azimuths)
    if spec.mirror_to_360:
        for a in list(azimuths):
            mirrored = (360.0 - a) % 360.0
            if _angular_gap(mirrored, a) < 1e-9:
                continue
            azimuths.append(mirrored)
            tags.append(ViewTag.OTHER)

    cameras = [
        camera_at_azimuth(a, spec.radius, spec.target_center, fov_y=spec.fov_y,
                          size=spec.image_size, view_tag=tag)
        for a, tag in zip(azimuths, tags)
    ]
    logger.info("instantiated rig: %d cameras, radius %.3f", len(cameras), spec.radius)
    return CameraRig(cameras).check()


# ============================================================================
# BODY NORMALIZATION
# ============================================================================

def normalize_body(points):
    """
    Scale to unit height (y extent) and center the bounding box at the origin

    Returns:
        (normalized points, scale, offset) with normalized = (points - offset) * scale
    """
    p = np.asarray(points, dtype=np.float64)
    lo, hi = p.min(axis=0), p.max(axis=0)
    height = hi[1] - lo[1]
    if height <= 0:
        raise ValidationError("body has zero height")
    offset = 0.5 * (lo + hi)
    scale = 1.0 / height
    return (p - offset) * scale, scale, offset


def normalize_mesh(mesh):
    vertices, _, _ = normalize_body(mesh.vertices)
    return mesh.replace(vertices=vertices)


# ============================================================================
# POSE IMAGES
# ============================================================================

def joint_palette(n_joints):
    """Fixed RGB colors in [0, 1], one per joint index, quantized to 1/255"""
    hues = (np.arange(n_joints) * 0.6180339887498949) % 1.0
    hsv = np.stack([hues, np.full(n_joints, 0.85), np.ones(n_joints)], axis=1)
    return np.round(hsv_to_rgb(hsv) * 255.0) / 255.0


def bone_color(palette, child):
    return np.round(palette[child] * 0.6 * 255.0) / 255.0


def _segment_distance(px, py, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def _stamp(image, a, b, reach, color):
    """Paint pixels whose center lies within reach of segment ab"""
    h, w = image.shape[:2]
    lo = np.floor(np.minimum(a, b) - reach).astype(int)
    hi = np.ceil(np.maximum(a, b) + reach).astype(int)
    c0, c1 = max(lo[0], 0), min(hi[0] + 1, w)
    r0, r1 = max(lo[1], 0), min(hi[1] + 1, h)
    if c0 >= c1 or r0 >= r1:
        return
    px = np.arange(c0, c1)[None, :] + 0.5
    py = np.arange(r0, r1)[:, None] + 0.5
    inside = _segment_distance(px, py, a, b) <= reach
    image[r0:r1, c0:c1][inside] = color


def project_skeleton(skeleton, camera):
    """
    Draw a skeleton as seen from a camera

    Bones are drawn first as lines of width size/256, then joints as filled
    discs of radius size/128 in joint index order, size = min(width, height).

    Args:
        skeleton: Skeleton
        camera: Camera

    Returns:
        ImagePlane of kind pose
    """
    skeleton.check()
    sx, sy, depth = camera.project(skeleton.joints)
    behind = np.flatnonzero(depth <= 0)
    if len(behind):
        raise ValidationError(f"joint '{skeleton.names[behind[0]]}' is behind the camera")

    size = min(camera.width, camera.height)
    radius = size / 128.0
    half_width = size / 512.0
    palette = joint_palette(len(skeleton.joints))
    pts = np.stack([sx, sy], axis=1)

    image = np.zeros((camera.height, camera.width, 3), dtype=np.float32)
    for parent, child in skeleton.bones.tolist():
        _stamp(image, pts[parent], pts[child], half_width, bone_color(palette, child))
    for j in range(len(pts)):
        _stamp(image, pts[j], pts[j], radius, palette[j])
    return ImagePlane(image, ImageKind.POSE)


def project_all(skeleton, rig):
    """Pose image for every camera, in rig order"""
    return ordered_map(lambda cam: project_skeleton(skeleton, cam), rig.cameras)


def concat_views(poses):
    """
    Horizontally concatenate same-size images; view j lands at columns [j*W, (j+1)*W)
    """
    if not poses:
        raise ShapeMismatchError("no images to concatenate")
    shape = poses[0].data.shape
    for j, plane in enumerate(poses):
        if plane.data.shape != shape:
            raise ShapeMismatchError(
                f"image {j} has shape {plane.data.shape}, expected {shape}"
            )
    return ImagePlane(np.concatenate([p.data for p in poses], axis=1), poses[0].kind)


def split_views(sheet, k):
    """Inverse of concat_views"""
    if k < 1 or sheet.width % k:
        raise ShapeMismatchError(f"sheet width {sheet.width} is not a multiple of {k}")
    w = sheet.width // k
    return [ImagePlane(sheet.data[:, j * w:(j + 1) * w], sheet.kind) for j in range(k)]


# ============================================================================
# STEP RECORDING
# ============================================================================

class PoseSheetBuilder:
    """Runs the instantiation stage and records one step per view"""

    def __init__(self, skeleton, spec):
        self.skeleton = skeleton
        self.spec = spec
        self.rig = None
        self.poses = []
        self.steps = []

    def _record_step(self, step_type, view_idx=None, explanation=""):
        self.steps.append({
            'type': step_type,
            'view_idx': view_idx,
            'rig': self.rig,
            'pose': self.poses[view_idx] if view_idx is not None else None,
            'explanation': explanation,
        })

    def get_steps(self):
        return self.steps

    def run(self):
        self.steps = []
        self.rig = instantiate_rig(self.spec)
        self.poses = []
        self._record_step(
            'build_rig', None,
            f"Built {len(self.rig)} cameras\n\n"
            f"- Radius: {self.spec.radius}\n"
            f"- Azimuths: {self.spec.azimuth_start} to {self.spec.azimuth_end} degrees"
        )
        self.poses = project_all(self.skeleton, self.rig)
        for j, cam in enumerate(self.rig):
            self._record_step(
                'project_view', j,
                f"Projected skeleton into view {j + 1}\n\n"
                f"- View tag: {cam.view_tag.value}\n"
                f"- Joints: {len(self.skeleton.joints)}"
            )
        sheet = concat_views(self.poses)
        self.steps.append({
            'type': 'complete',
            'view_idx': None,
            'rig': self.rig,
            'pose': sheet,
            'explanation': f"Pose sheet complete\n\n- Size: {sheet.height} x {sheet.width}",
        })
        return self.rig, self.poses, sheet
