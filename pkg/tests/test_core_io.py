import json
import warnings

import numpy as np
import pytest

from carve.core_io.io_core import (
    Camera,
    CameraRig,
    CameraValidator,
    ImageKind,
    ImagePlane,
    MeshValidator,
    Skeleton,
    TriMesh,
    ViewTag,
    boundary_edges,
    enclosed_volume,
    euler_characteristic,
    is_watertight,
    mesh_edges,
)
from carve.core_io.io_formats import (
    labels_sidecar_path,
    load_camera_rig,
    load_image,
    load_mesh,
    load_skeleton,
    save_camera_rig,
    save_image,
    save_mesh,
    save_skeleton,
)
from carve.core_io.primitives import capsule_sdf, example_skeleton, humanoid_sdf, intersect_ellipsoid
from carve.errors import FormatError, ImageValidationWarning, ValidationError


# ============================================================================
# MESHES
# ============================================================================

def test_primitives_are_closed_and_outward(sphere, cube):
    assert is_watertight(sphere)
    assert euler_characteristic(sphere) == 2
    assert enclosed_volume(sphere) > 0
    assert enclosed_volume(cube) == pytest.approx(1.0)
    assert cube.n_vertices == 8 and cube.n_faces == 12


def test_open_cylinder_has_two_boundary_loops(tube):
    assert not is_watertight(tube)
    assert len(boundary_edges(tube)) == 2 * 24


def test_edges_are_unique_sorted_pairs(cube):
    edges, counts = mesh_edges(cube)
    assert len(edges) == 18
    assert np.all(edges[:, 0] < edges[:, 1])
    assert np.all(counts == 2)
    assert [tuple(e) for e in edges] == sorted(tuple(e) for e in edges)
    flipped = TriMesh(cube.vertices, cube.faces[:, ::-1])
    assert enclosed_volume(flipped) == pytest.approx(-1.0)


@pytest.mark.parametrize("faces, fragment", [
    ([[0, 1, 5]], "references vertex 5"),
    ([[0, 1, -1]], "negative"),
    ([[0, 1, 1]], "Degenerate"),
])
def test_mesh_validator_rejects_bad_faces(faces, fragment):
    mesh = TriMesh(np.eye(3), faces)
    is_valid, message = MeshValidator.validate(mesh)
    assert not is_valid
    assert fragment in message
    with pytest.raises(ValidationError):
        mesh.check()


def test_mesh_validator_rejects_bad_attributes():
    verts = np.eye(3)
    assert not MeshValidator.validate(TriMesh(verts, [[0, 1, 2]], part_labels=[0, 1]))[0]
    assert not MeshValidator.validate(TriMesh(verts, [[0, 1, 2]], uvs=[[0, 0], [1, 1], [1.5, 0]]))[0]
    assert not MeshValidator.validate(TriMesh([[0, 0, np.nan]] + verts[1:].tolist(), [[0, 1, 2]]))[0]


def test_mesh_arrays_are_read_only(cube):
    with pytest.raises(ValueError):
        cube.vertices[0, 0] = 5.0


def test_obj_round_trip_preserves_order_uvs_and_labels(tmp_path):
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    faces = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    uvs = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
    mesh = TriMesh(verts, faces, part_labels=[0, 1, 1, 2], uvs=uvs)
    path = tmp_path / "tet.obj"
    save_mesh(mesh, path)
    assert labels_sidecar_path(path).exists()

    loaded = load_mesh(path)
    np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
    np.testing.assert_array_equal(loaded.faces, mesh.faces)
    np.testing.assert_array_equal(loaded.uvs, mesh.uvs)
    np.testing.assert_array_equal(loaded.part_labels, [0, 1, 1, 2])


def test_ply_round_trip(tmp_path, sphere):
    path = tmp_path / "sphere.ply"
    save_mesh(sphere, path)
    loaded = load_mesh(path)
    # binary ply stores float32 positions
    np.testing.assert_allclose(loaded.vertices, sphere.vertices, rtol=0, atol=1e-6)
    np.testing.assert_array_equal(loaded.faces, sphere.faces)
    assert euler_characteristic(loaded) == 2


def test_ply_keeps_uvs(tmp_path):
    mesh = TriMesh(np.eye(3), [[0, 1, 2]], uvs=[[0.0, 0.0], [1.0, 0.0], [0.25, 0.75]])
    path = tmp_path / "tri.ply"
    save_mesh(mesh, path)
    loaded = load_mesh(path)
    np.testing.assert_allclose(loaded.uvs, mesh.uvs, atol=1e-6)


def test_unreadable_ply_is_a_format_error(tmp_path):
    path = tmp_path / "junk.ply"
    path.write_bytes(b"not a ply file at all")
    with pytest.raises(FormatError, match="junk.ply"):
        load_mesh(path)


def test_obj_quads_are_fan_triangulated(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = load_mesh(path)
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])


def test_obj_errors_carry_path_and_line(tmp_path):
    path = tmp_path / "broken.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(FormatError) as info:
        load_mesh(path)
    assert info.value.line == 4
    assert "broken.obj:4" in str(info.value)


def test_conflicting_corner_uvs_are_rejected(tmp_path):
    path = tmp_path / "seam.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\n"
        "vt 0 0\nvt 1 0\nvt 0 1\nvt 0.5 0.5\n"
        "f 1/1 2/2 3/3\nf 2/2 4/4 3/4\n"
    )
    with pytest.raises(FormatError, match="conflicting texture coordinates"):
        load_mesh(path)


def test_missing_mesh_file(tmp_path):
    with pytest.raises(FormatError, match="does not exist"):
        load_mesh(tmp_path / "nope.obj")


# ============================================================================
# IMAGES
# ============================================================================

def test_pfm_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    data = rng.normal(size=(5, 7, 3)).astype(np.float32)
    path = tmp_path / "x.pfm"
    save_image(ImagePlane(data, ImageKind.COLOR), path)
    loaded = load_image(path, ImageKind.COLOR)
    np.testing.assert_array_equal(loaded.data, data)


def test_png_quantizes_to_255_levels(tmp_path):
    data = np.linspace(0.0, 1.0, 12, dtype=np.float32).reshape(2, 2, 3)
    path = tmp_path / "c.png"
    save_image(ImagePlane(data), path)
    loaded = load_image(path, ImageKind.COLOR)
    assert np.abs(loaded.data - data).max() <= 0.5 / 255.0 + 1e-7


def test_silhouette_is_thresholded(tmp_path):
    data = np.array([[0.2, 0.7], [1.0, 0.0]], dtype=np.float32)
    path = tmp_path / "s.png"
    save_image(ImagePlane(data, ImageKind.SILHOUETTE), path)
    loaded = load_image(path, ImageKind.SILHOUETTE)
    np.testing.assert_array_equal(loaded.data[:, :, 0], [[0, 1], [1, 0]])


def test_image_validation():
    with pytest.raises(ValidationError, match="channel"):
        ImagePlane(np.zeros((2, 2, 1)), ImageKind.COLOR).check()
    with pytest.raises(ValidationError, match="0 or 1"):
        ImagePlane(np.full((2, 2, 1), 0.5), ImageKind.SILHOUETTE).check()
    with pytest.raises(ValidationError, match="non-finite"):
        ImagePlane(np.full((2, 2, 3), np.inf)).check()


def test_non_unit_normals_only_warn():
    normals = np.zeros((2, 2, 3))
    normals[..., 2] = 1.0
    good = ImagePlane.from_normals(normals)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        good.check()
    bad = ImagePlane.from_normals(normals * 0.5)
    with pytest.warns(ImageValidationWarning):
        bad.check()


# ============================================================================
# CAMERAS AND SKELETONS
# ============================================================================

def test_camera_projects_look_at_to_image_center():
    cam = Camera((0, 0, 3), (0, 0, 0), width=64, height=48)
    sx, sy, depth = cam.project(np.zeros((1, 3)))
    assert sx[0] == pytest.approx(32.0)
    assert sy[0] == pytest.approx(24.0)
    assert depth[0] == pytest.approx(3.0)
    rays = cam.pixel_rays()
    assert rays.shape == (48, 64, 3)
    np.testing.assert_allclose(np.linalg.norm(rays, axis=-1), 1.0)


def test_camera_image_axes():
    cam = Camera((0, 0, 3), (0, 0, 0), width=64, height=64)
    sx, sy, _ = cam.project(np.array([[0.1, 0.1, 0.0]]))
    # +x appears right of center, +y above it
    assert sx[0] > 32 and sy[0] < 32


@pytest.mark.parametrize("kwargs, fragment", [
    (dict(position=(0, 0, 0), look_at=(0, 0, 0)), "equals"),
    (dict(position=(0, 3, 0), look_at=(0, 0, 0)), "parallel"),
    (dict(position=(0, 0, 3), look_at=(0, 0, 0), fov_y=180), "fov_y"),
    (dict(position=(0, 0, 3), look_at=(0, 0, 0), width=0), "at least"),
])
def test_camera_validator(kwargs, fragment):
    is_valid, message = CameraValidator.validate(Camera(**kwargs))
    assert not is_valid
    assert fragment in message


def test_rig_json_round_trip(tmp_path, small_rig):
    path = tmp_path / "rig.json"
    save_camera_rig(small_rig, path)
    loaded = load_camera_rig(path)
    assert len(loaded) == len(small_rig)
    for a, b in zip(loaded, small_rig):
        assert a.to_dict() == b.to_dict()


def test_rig_json_errors(tmp_path):
    path = tmp_path / "rig.json"
    path.write_text(json.dumps([{"position": [0, 0, 3]}]))
    with pytest.raises(FormatError, match="lacks"):
        load_camera_rig(path)
    path.write_text("[]")
    with pytest.raises(ValidationError, match="empty rig"):
        load_camera_rig(path)
    with pytest.raises(ValidationError):
        CameraRig([]).check()


def test_rig_weights_follow_view_tags():
    rig = CameraRig([
        Camera((0, 0, 3), (0, 0, 0), view_tag=ViewTag.FRONT),
        Camera((3, 0, 0), (0, 0, 0)),
        Camera((0, 0, -3), (0, 0, 0), view_tag="back"),
    ])
    assert rig.weights() == [1.0, 0.2, 1.0]


def test_skeleton_round_trip(tmp_path):
    skeleton = example_skeleton()
    assert len(skeleton.joints) == 24
    assert len(skeleton.bones) == 23
    path = tmp_path / "skeleton.json"
    save_skeleton(skeleton, path)
    loaded = load_skeleton(path)
    assert loaded.names == skeleton.names
    np.testing.assert_array_equal(loaded.joints, skeleton.joints)
    np.testing.assert_array_equal(loaded.bones, skeleton.bones)


def test_skeleton_rejects_bad_bones():
    with pytest.raises(ValidationError, match="outside"):
        Skeleton(["a", "b"], [[0, 0, 0], [0, 1, 0]], [[0, 2]]).check()
    with pytest.raises(ValidationError, match="itself"):
        Skeleton(["a", "b"], [[0, 0, 0], [0, 1, 0]], [[1, 1]]).check()


# ============================================================================
# ANALYTIC SHAPES
# ============================================================================

def test_ray_ellipsoid_hit_distance():
    t, hit = intersect_ellipsoid(np.array([[0.0, 0.0, 3.0]]), np.array([[0.0, 0.0, -1.0]]), (0.5, 0.4, 0.3))
    assert hit[0]
    assert t[0] == pytest.approx(2.7)
    _, miss = intersect_ellipsoid(np.array([[2.0, 0.0, 3.0]]), np.array([[0.0, 0.0, -1.0]]), (0.5, 0.4, 0.3))
    assert not miss[0]


def test_humanoid_sdf_inside_and_outside():
    assert humanoid_sdf(np.array([[0.0, 0.1, 0.0]]))[0] < 0
    assert humanoid_sdf(np.array([[0.0, 0.0, 0.5]]))[0] > 0


def test_point_capsule_is_a_sphere():
    pts = np.array([[0.0, 0.38, 0.0], [0.3, 0.38, 0.0], [0.0, 0.38, -0.08]])
    np.testing.assert_allclose(capsule_sdf(pts, (0.0, 0.38, 0.0), (0.0, 0.38, 0.0), 0.08), [-0.08, 0.22, 0.0])


def test_humanoid_sdf_is_finite_everywhere():
    rng = np.random.default_rng(0)
    values = humanoid_sdf(rng.uniform(-0.6, 0.6, size=(500, 3)))
    assert np.all(np.isfinite(values))
    # inside the head sphere only
    assert humanoid_sdf(np.array([[0.06, 0.42, 0.0]]))[0] < 0
