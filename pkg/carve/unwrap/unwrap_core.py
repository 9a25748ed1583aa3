"""
UV Unwrapping Core Logic
Semantic partition into body parts, cylindrical unwrap of each part, and
First Fit shelf packing of the charts into one atlas with step recording.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np
from scipy.spatial.transform import Rotation

from carve.core_io.io_core import TriMesh
from carve.errors import FormatError, ValidationError
from carve.parallel import ordered_map

logger = logging.getLogger(__name__)

PART_NAMES = ("trunk", "left arm", "right arm", "left leg", "right leg")
LAYOUT_SCHEMA_VERSION = 1


def part_name(label, gamma=5):
    if gamma == 5 and 0 <= label < 5:
        return PART_NAMES[label]
    return f"part {label}"


# ============================================================================
# PARTITION
# ============================================================================

def label_body_parts(mesh, leg_top=0.45, arm_x=0.15, gamma=5):
    """
    Heuristic part labels for a canonical body (T-pose, facing +z, unit height)

    Below leg_top (fraction of the height from the bottom) vertices are legs,
    split by the sign of x (+x is the body's left). Above it, vertices further
    than arm_x (in body heights) from the vertical center line are arms;
    the rest is trunk.

    Returns:
        (N,) labels: 0 trunk, 1 left arm, 2 right arm, 3 left leg, 4 right leg
    """
    if gamma == 1:
        return np.zeros(mesh.n_vertices, dtype=np.int64)
    if gamma != 5:
        raise ValidationError(f"the heuristic labeler supports gamma 1 or 5, got {gamma}")
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    height = hi[1] - lo[1]
    if height <= 0:
        raise ValidationError("mesh has zero height")
    t = (v[:, 1] - lo[1]) / height
    x = (v[:, 0] - 0.5 * (lo[0] + hi[0])) / height

    labels = np.zeros(mesh.n_vertices, dtype=np.int64)
    legs = t < leg_top
    labels[legs & (x >= 0)] = 3
    labels[legs & (x < 0)] = 4
    arms = ~legs & (np.abs(x) > arm_x)
    labels[arms & (x > 0)] = 1
    labels[arms & (x < 0)] = 2
    return labels


def face_labels(faces, labels):
    """Majority vertex label per face; three different labels go to the lowest"""
    l = labels[faces]
    out = np.min(l, axis=1)
    out = np.where(l[:, 1] == l[:, 2], l[:, 1], out)
    out = np.where((l[:, 0] == l[:, 1]) | (l[:, 0] == l[:, 2]), l[:, 0], out)
    return out


@dataclass(frozen=True, eq=False)
class MeshPart:
    """One semantic part: a submesh and where its vertices and faces came from"""

    label: int
    mesh: TriMesh
    vertex_ids: np.ndarray
    face_ids: np.ndarray


def submesh(mesh, face_ids, label=None):
    faces = mesh.faces[face_ids]
    vertex_ids = np.unique(faces)
    local = np.searchsorted(vertex_ids, faces)
    labels = None if label is None else np.full(len(vertex_ids), label, dtype=np.int64)
    return TriMesh(mesh.vertices[vertex_ids], local, part_labels=labels), vertex_ids


def partition(mesh, gamma=5, labels=None, leg_top=0.45, arm_x=0.15):
    """
    Split a mesh into gamma parts by per-vertex labels

    Faces with mixed labels go to the majority label; vertices on part
    boundaries appear in every adjacent part.

    Args:
        mesh: TriMesh
        gamma: number of parts
        labels: optional (N,) labels; mesh.part_labels or the heuristic otherwise

    Returns:
        list of MeshPart ordered by label
    """
    if gamma < 1:
        raise ValidationError(f"gamma must be >= 1, got {gamma}")
    if labels is None:
        labels = mesh.part_labels
    if labels is None:
        labels = label_body_parts(mesh, leg_top, arm_x, gamma)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != mesh.n_vertices:
        raise ValidationError(f"{len(labels)} labels for {mesh.n_vertices} vertices")
    if len(labels) and (labels.min() < 0 or labels.max() >= gamma):
        raise ValidationError(f"labels must lie in [0, {gamma})")

    per_face = face_labels(mesh.faces, labels)
    parts = []
    for label in range(gamma):
        face_ids = np.flatnonzero(per_face == label)
        if len(face_ids) == 0:
            raise ValidationError(f"part {label} ({part_name(label, gamma)}) is empty")
        part_mesh, vertex_ids = submesh(mesh, face_ids, label)
        parts.append(MeshPart(label, part_mesh, vertex_ids, face_ids))
    logger.info("partitioned %d faces into %d parts", mesh.n_faces, gamma)
    return parts


def face_adjacency_graph(mesh):
    """Faces as nodes, joined when they share an edge"""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    owner = np.tile(np.arange(len(f)), 3)
    order = np.lexsort((owner, edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    same = np.all(edges[1:] == edges[:-1], axis=1)
    graph = nx.Graph()
    graph.add_nodes_from(range(len(f)))
    graph.add_edges_from(zip(owner[:-1][same].tolist(), owner[1:][same].tolist()))
    return graph


def is_edge_connected(mesh):
    return mesh.n_faces > 0 and nx.is_connected(face_adjacency_graph(mesh))


# ============================================================================
# CYLINDRICAL UNWRAP
# ============================================================================

def principal_axis(points):
    """Largest-variance direction, signed toward +y (or its largest component)"""
    p = np.asarray(points, dtype=np.float64)
    cov = np.cov((p - p.mean(axis=0)).T)
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    ref = axis[1] if abs(axis[1]) > 1e-12 else axis[np.argmax(np.abs(axis))]
    return axis if ref >= 0 else -axis


@dataclass(frozen=True, eq=False)
class UnwrappedPart:
    """
    A part with cylinder UVs; seam vertices are duplicated

    source_ids maps every vertex back to the part's original vertex order.
    """

    label: int
    mesh: TriMesh
    source_ids: np.ndarray
    height: float
    radius: float


def cylinder_unwrap(part, axis=None, label=0):
    """
    Cylindrical UVs around an axis

    The axis is rotated onto +y; u = atan2(x', z') / 2 pi + 0.5 and v is the
    normalized height. Faces straddling the seam get their low-u corners
    duplicated at u = 1 so that no face spans more than 0.5 in u.

    Args:
        part: TriMesh (or MeshPart)
        axis: unit vector; the principal axis when None

    Returns:
        UnwrappedPart whose mesh carries the UVs
    """
    if isinstance(part, MeshPart):
        label = part.label
        part = part.mesh
    if part.n_vertices == 0 or part.n_faces == 0:
        raise ValidationError("cannot unwrap an empty part")
    axis = principal_axis(part.vertices) if axis is None else np.asarray(axis, dtype=np.float64)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
        raise ValidationError(f"axis must have unit length, got {np.linalg.norm(axis):.6g}")

    rot, _ = Rotation.align_vectors([[0.0, 1.0, 0.0]], [axis])
    local = rot.apply(part.vertices - part.vertices.mean(axis=0))
    y = local[:, 1]
    height = float(y.max() - y.min())
    if height <= 1e-12:
        raise ValidationError(f"{part_name(label)} has zero height along its axis")
    u = np.arctan2(local[:, 0], local[:, 2]) / (2.0 * math.pi) + 0.5
    v = (y - y.min()) / height

    faces = part.faces.copy()
    fu = u[faces]
    seam = fu.max(axis=1) - fu.min(axis=1) > 0.5
    low = seam[:, None] & (fu < 0.5)
    dup_src = np.unique(faces[low])
    n = part.n_vertices
    remap = np.full(n, -1, dtype=np.int64)
    remap[dup_src] = n + np.arange(len(dup_src))
    faces[low] = remap[faces[low]]

    source = np.concatenate([np.arange(n), dup_src])
    uv = np.concatenate([np.stack([u, v], axis=1), np.stack([np.ones(len(dup_src)), v[dup_src]], axis=1)])
    uv = np.clip(uv, 0.0, 1.0)
    radius = float(np.linalg.norm(local[:, [0, 2]], axis=1).mean())
    mesh = TriMesh(part.vertices[source], faces, part_labels=np.full(len(source), label), uvs=uv)
    return UnwrappedPart(label, mesh, source, height, radius)


# ============================================================================
# ATLAS PACKING
# ============================================================================

@dataclass(frozen=True)
class AtlasLayout:
    size: int
    gutter: int
    chart_boxes: tuple
    labels: tuple

    def to_dict(self):
        return {
            "schema_version": LAYOUT_SCHEMA_VERSION,
            "atlas_size": self.size,
            "gutter": self.gutter,
            "charts": [
                {"label": int(l), "box": [int(x) for x in b]}
                for l, b in zip(self.labels, self.chart_boxes)
            ],
        }


def save_layout(layout, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(layout.to_dict(), f, indent=2)


def load_layout(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if data.get("schema_version") != LAYOUT_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {data.get('schema_version')}")
        charts = data["charts"]
        return AtlasLayout(
            size=int(data["atlas_size"]),
            gutter=int(data["gutter"]),
            chart_boxes=tuple(tuple(int(x) for x in c["box"]) for c in charts),
            labels=tuple(int(c["label"]) for c in charts),
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid layout: {exc}", path) from exc


def _spread(total, weights):
    """Split an integer total proportionally; the remainder goes to the last entry"""
    weights = np.asarray(weights, dtype=np.float64)
    shares = np.floor(total * weights / weights.sum()).astype(np.int64)
    shares[-1] += total - shares.sum()
    return shares


class ShelfPacker:
    """
    First Fit shelf packing of chart rectangles:
    each chart goes onto the first shelf with enough remaining width;
    if no shelf fits, a new shelf is opened below the last one.
    """

    def __init__(self, sizes, atlas_size, gutter=2):
        # sizes: list of (w, h) chart sizes in texels
        self.sizes = [(int(w), int(h)) for w, h in sizes]
        self.atlas_size = int(atlas_size)
        self.gutter = int(gutter)
        self.shelves = []
        self.steps = []

    def _record_step(self, step_type, chart_idx, active_shelf_idx=None, explanation=""):
        """
        Record a snapshot of the packing state.
        Types of steps:
        - 'evaluate_chart': started looking at a new chart
        - 'check_shelf': testing whether the chart fits on a shelf
        - 'place_chart': placed the chart onto a shelf
        - 'new_shelf': opened a shelf for the chart
        - 'complete': packing finished
        """
        self.steps.append({
            'type': step_type,
            'chart_idx': chart_idx,
            'chart_size': self.sizes[chart_idx] if chart_idx is not None else None,
            'sizes': list(self.sizes),
            'active_shelf_idx': active_shelf_idx,
            'shelves_state': copy.deepcopy(self.shelves),
            'atlas_size': self.atlas_size,
            'gutter': self.gutter,
            'explanation': explanation,
        })

    def get_steps(self):
        return self.steps

    def _shelf_used(self, shelf):
        return sum(self.sizes[i][0] + self.gutter for i in shelf['charts'])

    def run(self, record=True):
        """
        Pack charts in decreasing height order (stable by index)

        Returns:
            list of (x0, y0) per chart in input order, or None if they do not fit
        """
        self.shelves = []
        self.steps = []
        g, size = self.gutter, self.atlas_size
        usable = size - g
        order = sorted(range(len(self.sizes)), key=lambda i: (-self.sizes[i][1], i))
        for i in order:
            w, h = self.sizes[i]
            if record:
                self._record_step(
                    'evaluate_chart', i, None,
                    f"Evaluating chart {i + 1} ({w} x {h} texels)\n\n"
                    f"- Looking for the FIRST shelf with {w + g} texels free."
                )
            placed = False
            for j, shelf in enumerate(self.shelves):
                free = usable - self._shelf_used(shelf)
                fits = w + g <= free and h <= shelf['height']
                if record:
                    self._record_step(
                        'check_shelf', i, j,
                        f"Checking shelf {j + 1}\n\n"
                        f"- Free width: {free}\n- Shelf height: {shelf['height']}\n\n"
                        f"{'Can fit!' if fits else 'Cannot fit.'}"
                    )
                if fits:
                    shelf['charts'].append(i)
                    placed = True
                    if record:
                        self._record_step('place_chart', i, j, f"Placed chart {i + 1} on shelf {j + 1}")
                    break
            if not placed:
                top = g if not self.shelves else self.shelves[-1]['y0'] + self.shelves[-1]['height'] + g
                if top + h + g > size or w + 2 * g > size:
                    return None
                self.shelves.append({'y0': top, 'height': h, 'charts': [i]})
                if record:
                    self._record_step(
                        'new_shelf', i, len(self.shelves) - 1,
                        f"No shelf could fit chart {i + 1}.\n\n"
                        f"- Opened shelf {len(self.shelves)} at row {top}."
                    )

        positions = [None] * len(self.sizes)
        for shelf in self.shelves:
            x = g
            for i in shelf['charts']:
                positions[i] = (x, shelf['y0'])
                x += self.sizes[i][0] + g
        if record:
            self._record_step(
                'complete', None, None,
                f"Packing complete\n\n- Charts: {len(self.sizes)}\n- Shelves: {len(self.shelves)}"
            )
        return positions


def chart_sizes(parts, scale):
    """Texel sizes keeping each chart's circumference/height aspect and area share"""
    sizes = []
    for p in parts:
        circumference = max(2.0 * math.pi * p.radius, 1e-9)
        sizes.append((max(1, int(math.ceil(scale * circumference))), max(1, int(math.ceil(scale * p.height)))))
    return sizes


def _fill_layout(packer, positions):
    """Stretch charts so that shelves span the full width and shelves the full height"""
    g, size = packer.gutter, packer.atlas_size
    boxes = {}
    shelves = packer.shelves
    free_h = size - g - sum(s['height'] + g for s in shelves)
    heights = [s['height'] for s in shelves]
    extra_h = _spread(free_h, heights)
    y = g
    for shelf, dh in zip(shelves, extra_h):
        h = shelf['height'] + int(dh)
        widths = [packer.sizes[i][0] for i in shelf['charts']]
        free_w = size - g - sum(w + g for w in widths)
        extra_w = _spread(free_w, widths)
        x = g
        for i, w, dw in zip(shelf['charts'], widths, extra_w):
            boxes[i] = (x, y, w + int(dw), h)
            x += w + int(dw) + g
        y += h + g
    return [boxes[i] for i in range(len(positions))]


def pack_atlas(parts, atlas_size=1024, gutter=2, record=False):
    """
    Pack unwrapped parts into disjoint chart rectangles and merge them

    Chart u maps onto texel centers x0 .. x0 + w - 1 and v onto rows
    y0 + h - 1 (v = 0) .. y0 (v = 1), so bilinear taps never leave the chart.

    Args:
        parts: list of UnwrappedPart
        atlas_size: texels per side
        gutter: texels between charts and around the border

    Returns:
        (merged TriMesh with final UVs and part labels, AtlasLayout, packer steps)
    """
    if not parts:
        raise ValidationError("nothing to pack")

    def fits(scale):
        return ShelfPacker(chart_sizes(parts, scale), atlas_size, gutter).run(record=False) is not None

    if not fits(0.0):
        raise ValidationError(
            f"atlas of {atlas_size} texels is too small for {len(parts)} charts with {gutter}-texel gutters"
        )
    # largest scale (texels per world unit) at which the shelves fit
    lo, hi = 0.0, 1.0
    while fits(hi):
        lo, hi = hi, hi * 2.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid

    packer = ShelfPacker(chart_sizes(parts, lo), atlas_size, gutter)
    positions = packer.run(record=record)
    boxes = _fill_layout(packer, positions)

    vertices, faces, uvs, labels = [], [], [], []
    offset = 0
    for part, (x0, y0, w, h) in zip(parts, boxes):
        m = part.mesh
        u = (x0 + m.uvs[:, 0] * (w - 1) + 0.5) / atlas_size
        v = 1.0 - (y0 + (1.0 - m.uvs[:, 1]) * (h - 1) + 0.5) / atlas_size
        vertices.append(m.vertices)
        faces.append(m.faces + offset)
        uvs.append(np.stack([u, v], axis=1))
        labels.append(np.full(m.n_vertices, part.label, dtype=np.int64))
        offset += m.n_vertices

    merged = TriMesh(
        np.concatenate(vertices), np.concatenate(faces),
        part_labels=np.concatenate(labels), uvs=np.clip(np.concatenate(uvs), 0.0, 1.0),
    )
    layout = AtlasLayout(atlas_size, gutter, tuple(boxes), tuple(p.label for p in parts))
    logger.info("packed %d charts into a %d atlas", len(parts), atlas_size)
    return merged, layout, packer.get_steps()


def unwrap(mesh, gamma=5, labels=None, atlas_size=1024, gutter=2, leg_top=0.45, arm_x=0.15):
    """Partition, unwrap every part and pack the atlas"""
    parts = partition(mesh, gamma, labels, leg_top, arm_x)
    unwrapped = ordered_map(cylinder_unwrap, parts)
    merged, layout, _ = pack_atlas(unwrapped, atlas_size, gutter)
    return merged, layout
