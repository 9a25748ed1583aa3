import numpy as np
import pytest

from carve.core_io.io_core import TriMesh
from carve.core_io.primitives import icosphere
from carve.errors import FormatError, ValidationError
from carve.raster.raster_core import TextureAtlas, TextureAtlasValidator
from carve.unwrap.unwrap_core import (
    AtlasLayout,
    ShelfPacker,
    cylinder_unwrap,
    face_adjacency_graph,
    face_labels,
    is_edge_connected,
    label_body_parts,
    load_layout,
    pack_atlas,
    part_name,
    partition,
    principal_axis,
    save_layout,
    unwrap,
)


def halves(mesh):
    """Label 0 below y = 0.5, 1 above"""
    return (mesh.vertices[:, 1] > 0.5).astype(np.int64)


# ============================================================================
# PARTITION
# ============================================================================

def test_face_label_majority():
    faces = np.array([[0, 1, 2], [0, 1, 3], [2, 3, 4]])
    labels = np.array([1, 1, 2, 0, 3])
    assert face_labels(faces, labels).tolist() == [1, 1, 0]


def test_partition_splits_faces_and_shares_boundary(tube):
    parts = partition(tube, gamma=2, labels=halves(tube))
    assert [p.label for p in parts] == [0, 1]
    assert sum(p.mesh.n_faces for p in parts) == tube.n_faces
    np.testing.assert_array_equal(
        np.sort(np.concatenate([p.face_ids for p in parts])), np.arange(tube.n_faces)
    )
    shared = np.intersect1d(parts[0].vertex_ids, parts[1].vertex_ids)
    # the two rings either side of y = 0.5 border faces of both labels
    assert len(shared) == 48
    for p in parts:
        np.testing.assert_array_equal(p.mesh.vertices, tube.vertices[p.vertex_ids])
        assert is_edge_connected(p.mesh)


def test_partition_rejects_bad_labels(tube):
    with pytest.raises(ValidationError, match="labels for"):
        partition(tube, 2, labels=[0, 1])
    with pytest.raises(ValidationError, match=r"\[0, 2\)"):
        partition(tube, 2, labels=np.full(tube.n_vertices, 2))
    with pytest.raises(ValidationError, match="empty"):
        partition(tube, 3, labels=halves(tube))
    with pytest.raises(ValidationError):
        partition(tube, 0)


def test_body_labels_follow_the_canonical_pose(humanoid):
    labels = label_body_parts(humanoid)
    assert set(labels.tolist()) == {0, 1, 2, 3, 4}
    x = humanoid.vertices[:, 0]
    assert x[labels == 1].mean() > 0 > x[labels == 2].mean()
    assert x[labels == 3].mean() > 0 > x[labels == 4].mean()
    y = humanoid.vertices[:, 1]
    assert y[labels == 3].max() < y[labels == 0].max()
    assert not label_body_parts(humanoid, gamma=1).any()
    with pytest.raises(ValidationError):
        label_body_parts(humanoid, gamma=3)


def test_humanoid_partition_covers_every_face(humanoid):
    parts = partition(humanoid)
    assert len(parts) == 5
    assert sum(p.mesh.n_faces for p in parts) == humanoid.n_faces
    assert part_name(1) == "left arm"
    assert part_name(7, gamma=9) == "part 7"


def test_face_adjacency_connectivity():
    a = icosphere(1, 0.2)
    b = TriMesh(a.vertices + 1.0, a.faces)
    both = TriMesh(np.concatenate([a.vertices, b.vertices]), np.concatenate([a.faces, b.faces + a.n_vertices]))
    assert is_edge_connected(a)
    assert not is_edge_connected(both)
    graph = face_adjacency_graph(a)
    # closed manifold: every face has exactly three neighbors
    assert {d for _, d in graph.degree()} == {3}


# ============================================================================
# CYLINDRICAL UNWRAP
# ============================================================================

def test_principal_axis_of_a_tube_points_up(tube):
    np.testing.assert_allclose(principal_axis(tube.vertices), (0.0, 1.0, 0.0), atol=1e-9)


def test_tube_unwrap_has_no_wrapping_faces(tube):
    part = cylinder_unwrap(tube, label=3)
    uv = part.mesh.uvs
    assert uv.min() >= 0.0 and uv.max() <= 1.0
    fu = uv[part.mesh.faces, 0]
    assert (fu.max(axis=1) - fu.min(axis=1)).max() <= 0.5
    assert part.height == pytest.approx(1.0)
    assert part.radius == pytest.approx(0.2)
    assert part.mesh.n_vertices > tube.n_vertices
    np.testing.assert_array_equal(part.mesh.vertices, tube.vertices[part.source_ids])
    np.testing.assert_allclose(uv[tube.n_vertices:, 0], 1.0)
    assert np.all(part.mesh.part_labels == 3)


def test_unwrap_v_follows_height(tube):
    part = cylinder_unwrap(tube, axis=(0.0, 1.0, 0.0))
    np.testing.assert_allclose(part.mesh.uvs[:, 1], part.mesh.vertices[:, 1], atol=1e-12)


def test_unwrap_rejects_bad_input(tube):
    with pytest.raises(ValidationError, match="unit length"):
        cylinder_unwrap(tube, axis=(0.0, 2.0, 0.0))
    flat = TriMesh([[0, 0, 0], [1, 0, 0], [0, 0, 1]], [[0, 1, 2]])
    with pytest.raises(ValidationError, match="zero height"):
        cylinder_unwrap(flat, axis=(0.0, 1.0, 0.0))


def test_unwrap_keeps_the_part_label(tube):
    part = partition(tube, 2, halves(tube))[1]
    assert cylinder_unwrap(part).label == 1


# ============================================================================
# PACKING
# ============================================================================

def test_shelf_packer_first_fit():
    packer = ShelfPacker([(10, 5), (10, 8), (30, 4)], atlas_size=40, gutter=2)
    positions = packer.run()
    assert positions == [(14, 2), (2, 2), (2, 12)]
    assert [s['type'] for s in packer.get_steps()] == [
        'evaluate_chart', 'new_shelf',
        'evaluate_chart', 'check_shelf', 'place_chart',
        'evaluate_chart', 'check_shelf', 'new_shelf',
        'complete',
    ]
    assert packer.get_steps()[-1]['shelves_state'] == [
        {'y0': 2, 'height': 8, 'charts': [1, 0]},
        {'y0': 12, 'height': 4, 'charts': [2]},
    ]


def test_shelf_packer_reports_overflow():
    assert ShelfPacker([(30, 30), (30, 30)], atlas_size=40).run() is None
    assert ShelfPacker([(39, 1)], atlas_size=40).run(record=False) is None


def test_packed_charts_are_disjoint_and_hold_their_uvs(tube):
    parts = [cylinder_unwrap(p) for p in partition(tube, 2, halves(tube))]
    merged, layout, steps = pack_atlas(parts, atlas_size=64, gutter=2, record=True)
    assert steps[-1]['type'] == 'complete'
    assert TextureAtlasValidator.validate(TextureAtlas.filled(64, chart_boxes=layout.chart_boxes))[0]
    assert merged.n_faces == tube.n_faces
    for label, (x0, y0, w, h) in zip(layout.labels, layout.chart_boxes):
        uv = merged.uvs[merged.part_labels == label]
        col = uv[:, 0] * 64 - 0.5
        row = (1.0 - uv[:, 1]) * 64 - 0.5
        assert col.min() >= x0 - 1e-9 and col.max() <= x0 + w - 1 + 1e-9
        assert row.min() >= y0 - 1e-9 and row.max() <= y0 + h - 1 + 1e-9


def test_stretched_layout_fills_the_atlas(tube):
    parts = [cylinder_unwrap(p) for p in partition(tube, 2, halves(tube))]
    _, layout, _ = pack_atlas(parts, atlas_size=64, gutter=2)
    right = max(x0 + w for x0, _, w, _ in layout.chart_boxes)
    bottom = max(y0 + h for _, y0, _, h in layout.chart_boxes)
    assert right == 62 and bottom == 62


def test_pack_atlas_rejects_impossible_layouts(tube):
    parts = [cylinder_unwrap(tube)] * 3
    with pytest.raises(ValidationError, match="too small"):
        pack_atlas(parts, atlas_size=4, gutter=2)
    with pytest.raises(ValidationError, match="nothing"):
        pack_atlas([], atlas_size=64)


def test_layout_json_round_trip(tmp_path):
    layout = AtlasLayout(128, 2, ((2, 2, 60, 40), (64, 2, 62, 40)), (0, 1))
    path = tmp_path / "layout.json"
    save_layout(layout, path)
    assert load_layout(path) == layout
    path.write_text('{"schema_version": 99}')
    with pytest.raises(FormatError, match="schema_version"):
        load_layout(path)


def test_humanoid_unwrap(humanoid):
    merged, layout = unwrap(humanoid, atlas_size=64)
    assert len(layout.chart_boxes) == 5
    assert merged.n_faces == humanoid.n_faces
    assert merged.uvs is not None and merged.uvs.shape == (merged.n_vertices, 2)
    assert set(merged.part_labels.tolist()) == {0, 1, 2, 3, 4}
