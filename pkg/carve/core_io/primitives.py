"""
Synthetic shapes used as test assets and benchmark oracles:
icosphere, cube, open cylinder, a capsule humanoid with its 24-joint
skeleton, and analytic sphere/ellipsoid fields.
"""

import numpy as np

from carve.core_io.io_core import Skeleton, TriMesh

# ============================================================================
# MESHES
# ============================================================================

_GOLDEN = (1.0 + 5.0 ** 0.5) / 2.0

_ICOSAHEDRON_VERTS = np.array([
    [-1, _GOLDEN, 0], [1, _GOLDEN, 0], [-1, -_GOLDEN, 0], [1, -_GOLDEN, 0],
    [0, -1, _GOLDEN], [0, 1, _GOLDEN], [0, -1, -_GOLDEN], [0, 1, -_GOLDEN],
    [_GOLDEN, 0, -1], [_GOLDEN, 0, 1], [-_GOLDEN, 0, -1], [-_GOLDEN, 0, 1],
], dtype=np.float64)

_ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def _orient_away_from(vertices, faces, references):
    """Flip faces whose normal points toward their reference point"""
    tri = vertices[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = tri.mean(axis=1) - references
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """
    Subdivided icosahedron projected onto a sphere

    Args:
        subdivisions: 0 gives 12 vertices, 3 gives 642
        radius: sphere radius
        center: sphere center

    Returns:
        outward-oriented closed TriMesh
    """
    verts = [v / np.linalg.norm(v) for v in _ICOSAHEDRON_VERTS]
    faces = [tuple(f) for f in _ICOSAHEDRON_FACES]
    for _ in range(subdivisions):
        midpoint_cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint_cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined

    vertices = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    faces = _orient_away_from(vertices, faces, np.asarray(center, dtype=np.float64))
    return TriMesh(vertices, faces)


def unit_cube():
    """Cube [0, 1]^3 with 8 vertices and 12 outward triangles"""
    idx = np.arange(8)
    vertices = np.stack([idx & 1, (idx >> 1) & 1, (idx >> 2) & 1], axis=1).astype(np.float64)
    quads = [
        (0, 2, 3, 1), (4, 5, 7, 6),  # z = 0, z = 1
        (0, 1, 5, 4), (2, 6, 7, 3),  # y = 0, y = 1
        (0, 4, 6, 2), (1, 3, 7, 5),  # x = 0, x = 1
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    faces = np.asarray(faces, dtype=np.int64)
    faces = _orient_away_from(vertices, faces, np.full(3, 0.5))
    return TriMesh(vertices, faces)


def open_cylinder(radius=0.2, height=1.0, segments=32, rings=8):
    """
    Open tube around +y from y = 0 to y = height

    Angle 0 sits on +z and grows toward +x, so x = r sin(theta), z = r cos(theta).
    """
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ys = height * np.arange(rings + 1) / rings
    yy, tt = np.meshgrid(ys, theta, indexing="ij")
    vertices = np.stack([radius * np.sin(tt), yy, radius * np.cos(tt)], axis=-1).reshape(-1, 3)

    i, j = np.meshgrid(np.arange(rings), np.arange(segments), indexing="ij")
    i, j = i.ravel(), j.ravel()
    jn = (j + 1) % segments
    a = i * segments + j
    b = i * segments + jn
    c = (i + 1) * segments + jn
    d = (i + 1) * segments + j
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    centroid_y = vertices[faces].mean(axis=1)[:, 1]
    refs = np.stack([np.zeros_like(centroid_y), centroid_y, np.zeros_like(centroid_y)], axis=1)
    faces = _orient_away_from(vertices, faces, refs)
    return TriMesh(vertices, faces)


# ============================================================================
# ANALYTIC FIELDS
# ============================================================================

def sphere_sdf(points, radius, center=(0.0, 0.0, 0.0)):
    p = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return np.linalg.norm(p, axis=-1) - radius


def sphere_normal(points, center=(0.0, 0.0, 0.0)):
    p = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def ellipsoid_sdf(points, radii):
    """First-order signed distance to an axis-aligned ellipsoid (exact on spheres)"""
    radii = np.asarray(radii, dtype=np.float64)
    q = np.asarray(points, dtype=np.float64) / radii
    return (np.linalg.norm(q, axis=-1) - 1.0) * radii.min()


def ellipsoid_normal(points, radii):
    """Outward unit normal of the level set through each point"""
    g = np.asarray(points, dtype=np.float64) / np.asarray(radii, dtype=np.float64) ** 2
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def intersect_ellipsoid(origins, directions, radii):
    """
    Nearest forward ray hit with an origin-centered ellipsoid

    Returns:
        (t, hit) with t = inf where the ray misses
    """
    radii = np.asarray(radii, dtype=np.float64)
    o = np.asarray(origins, dtype=np.float64) / radii
    d = np.asarray(directions, dtype=np.float64) / radii
    a = np.einsum("...i,...i->...", d, d)
    b = 2.0 * np.einsum("...i,...i->...", o, d)
    c = np.einsum("...i,...i->...", o, o) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - root) / (2.0 * a)
    t1 = (-b + root) / (2.0 * a)
    t = np.where(t0 > 0.0, t0, t1)
    hit &= t > 0.0
    return np.where(hit, t, np.inf), hit


def capsule_sdf(points, a, b, radius):
    """Distance to the segment ab minus radius; a == b gives a sphere"""
    p = np.asarray(points, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    ab = np.asarray(b, dtype=np.float64) - a
    length2 = float(ab @ ab)
    if length2 > 0.0:
        h = np.clip(((p - a) @ ab) / length2, 0.0, 1.0)
    else:
        h = np.zeros(p.shape[:-1])
    return np.linalg.norm(p - a - h[..., None] * ab, axis=-1) - radius


# ============================================================================
# CAPSULE HUMANOID
# ============================================================================

# Canonical T-pose, height close to 1, facing +z; the body's left side is +x.
SKELETON_JOINTS = (
    ("pelvis", (0.0, -0.05, 0.0)),
    ("left_hip", (0.08, -0.09, 0.0)),
    ("right_hip", (-0.08, -0.09, 0.0)),
    ("spine1", (0.0, 0.02, 0.0)),
    ("left_knee", (0.075, -0.28, 0.0)),
    ("right_knee", (-0.075, -0.28, 0.0)),
    ("spine2", (0.0, 0.10, 0.0)),
    ("left_ankle", (0.07, -0.46, 0.0)),
    ("right_ankle", (-0.07, -0.46, 0.0)),
    ("spine3", (0.0, 0.17, 0.0)),
    ("left_foot", (0.07, -0.49, 0.05)),
    ("right_foot", (-0.07, -0.49, 0.05)),
    ("neck", (0.0, 0.28, 0.0)),
    ("left_collar", (0.06, 0.24, 0.0)),
    ("right_collar", (-0.06, 0.24, 0.0)),
    ("head", (0.0, 0.38, 0.0)),
    ("left_shoulder", (0.15, 0.22, 0.0)),
    ("right_shoulder", (-0.15, 0.22, 0.0)),
    ("left_elbow", (0.28, 0.22, 0.0)),
    ("right_elbow", (-0.28, 0.22, 0.0)),
    ("left_wrist", (0.40, 0.22, 0.0)),
    ("right_wrist", (-0.40, 0.22, 0.0)),
    ("left_hand", (0.45, 0.22, 0.0)),
    ("right_hand", (-0.45, 0.22, 0.0)),
)

SKELETON_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# (label, start, end, radius); labels 0 trunk, 1 left arm, 2 right arm, 3 left leg, 4 right leg
HUMANOID_CAPSULES = (
    (0, (0.0, -0.05, 0.0), (0.0, 0.22, 0.0), 0.12),
    (0, (0.0, 0.22, 0.0), (0.0, 0.38, 0.0), 0.045),
    (0, (0.0, 0.38, 0.0), (0.0, 0.38, 0.0), 0.08),
    (1, (0.12, 0.22, 0.0), (0.45, 0.22, 0.0), 0.05),
    (2, (-0.12, 0.22, 0.0), (-0.45, 0.22, 0.0), 0.05),
    (3, (0.08, -0.09, 0.0), (0.07, -0.46, 0.0), 0.06),
    (4, (-0.08, -0.09, 0.0), (-0.07, -0.46, 0.0), 0.06),
)


def example_skeleton():
    """The shipped 24-joint T-pose skeleton"""
    names = [name for name, _ in SKELETON_JOINTS]
    joints = [p for _, p in SKELETON_JOINTS]
    bones = [(parent, child) for child, parent in enumerate(SKELETON_PARENTS) if parent >= 0]
    return Skeleton(names, joints, bones)


def _capsule_distances(points):
    return np.stack(
        [capsule_sdf(points, a, b, r) for _, a, b, r in HUMANOID_CAPSULES], axis=-1
    )


def humanoid_sdf(points):
    """Union of the humanoid capsules (negative inside)"""
    return _capsule_distances(points).min(axis=-1)


def humanoid_labels(points):
    """Part label of the nearest capsule for every point"""
    labels = np.array([label for label, *_ in HUMANOID_CAPSULES], dtype=np.int64)
    return labels[np.argmin(_capsule_distances(points), axis=-1)]
