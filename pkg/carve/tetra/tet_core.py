"""
Deformable Tetrahedral Grid Core Logic
Grid construction, the per-vertex SDF/offset parameter field, Marching
Tetrahedra extraction with welded vertices, and the crossing-vertex Jacobians
used to push surface gradients back into the grid.
"""

import itertools
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from carve.core_io.io_core import TriMesh
from carve.errors import EmptySurfaceError, FormatError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_BOUNDS = ((-0.6, -0.6, -0.6), (0.6, 0.6, 0.6))
OFFSET_BOUND_FRACTION = 0.45

# Local tet edges as (u, v) vertex slots
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64)


def _kuhn_tets():
    """
    The 6 tets of a unit cube sharing the (0,0,0)-(1,1,1) diagonal, as corner
    bit codes (x | y << 1 | z << 2), all positively oriented.
    """
    tets = []
    for perm in itertools.permutations(range(3)):
        corner = 0
        path = [corner]
        for axis in perm:
            corner |= 1 << axis
            path.append(corner)
        # odd permutations come out negatively oriented
        inversions = sum(1 for i in range(3) for j in range(i + 1, 3) if perm[i] > perm[j])
        if inversions % 2:
            path[2], path[3] = path[3], path[2]
        tets.append(path)
    return np.array(tets, dtype=np.int64)


KUHN_TETS = _kuhn_tets()


# ============================================================================
# GRID
# ============================================================================

@dataclass(eq=False)
class TetGrid:
    """
    Tetrahedral lattice over an axis-aligned box.

    verts/tets are fixed at construction; sdf and offsets are the parameters.
    Tet t of cell c is tets[6 * c + t] with cells ordered x-major.
    """

    resolution: int
    bounds: np.ndarray
    verts: np.ndarray
    tets: np.ndarray
    sdf: np.ndarray
    offsets: np.ndarray
    offset_bound: float

    @property
    def n_verts(self):
        return len(self.verts)

    @property
    def cell_size(self):
        return (self.bounds[1] - self.bounds[0]) / self.resolution

    def deformed_verts(self):
        return self.verts + self.offsets

    def lattice_index(self, i, j, k):
        n1 = self.resolution + 1
        return (np.asarray(i) * n1 + np.asarray(j)) * n1 + np.asarray(k)

    def copy(self):
        return TetGrid(
            self.resolution, self.bounds, self.verts, self.tets,
            self.sdf.copy(), self.offsets.copy(), self.offset_bound,
        )

    def check(self):
        is_valid, message = GridValidator.validate(self)
        if not is_valid:
            raise ValidationError(message)
        return self


def build_grid(resolution, bounds=DEFAULT_BOUNDS):
    """
    Cube lattice over bounds, each cell split into 6 tets along its main diagonal

    Args:
        resolution: cells per axis (>= 2)
        bounds: ((xmin, ymin, zmin), (xmax, ymax, zmax))

    Returns:
        TetGrid with (n+1)^3 vertices and 6 n^3 tets; sdf +1, offsets 0
    """
    if int(resolution) != resolution or resolution < 2:
        raise ValidationError(f"grid resolution must be an integer >= 2, got {resolution}")
    n = int(resolution)
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    if np.any(bounds[1] <= bounds[0]):
        raise ValidationError("grid bounds must have positive extent on every axis")

    axes = [np.linspace(bounds[0, d], bounds[1, d], n + 1) for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    ci, cj, ck = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    n1 = n + 1
    bits = KUHN_TETS  # (6, 4)
    di, dj, dk = bits & 1, (bits >> 1) & 1, (bits >> 2) & 1
    tets = (
        ((ci[:, None, None] + di) * n1 + (cj[:, None, None] + dj)) * n1
        + (ck[:, None, None] + dk)
    ).reshape(-1, 4)

    cell = (bounds[1] - bounds[0]) / n
    grid = TetGrid(
        resolution=n,
        bounds=bounds,
        verts=verts,
        tets=tets,
        sdf=np.ones(len(verts)),
        offsets=np.zeros((len(verts), 3)),
        offset_bound=OFFSET_BOUND_FRACTION * float(cell.min()),
    )
    logger.debug("built grid: resolution %d, %d verts, %d tets", n, len(verts), len(tets))
    return grid


def tet_volumes(grid, positions=None):
    """Six times the signed volume of every tet (positive = correctly oriented)"""
    p = grid.deformed_verts() if positions is None else positions
    t = p[grid.tets]
    a, b, c = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0], t[:, 3] - t[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c))


class GridValidator:
    """Validates TetGrid parameter arrays and tet orientation"""

    @staticmethod
    def validate(grid):
        n = grid.n_verts
        if grid.sdf.shape != (n,):
            return False, f"sdf has shape {grid.sdf.shape}, expected ({n},)"
        if grid.offsets.shape != (n, 3):
            return False, f"offsets has shape {grid.offsets.shape}, expected ({n}, 3)"
        if grid.tets.min() < 0 or grid.tets.max() >= n:
            return False, "tet references a vertex outside the grid"
        if not np.all(np.isfinite(grid.sdf)) or not np.all(np.isfinite(grid.offsets)):
            return False, "grid parameters contain non-finite values"
        if np.abs(grid.offsets).max(initial=0.0) > grid.offset_bound * (1 + 1e-12):
            return False, f"offsets exceed the bound {grid.offset_bound}"
        inverted = np.flatnonzero(tet_volumes(grid) <= 0)
        if len(inverted):
            return False, f"{len(inverted)} tets are inverted, first {int(inverted[0])}"
        return True, "Grid is valid"


def project_offsets(grid, max_rounds=16):
    """
    Clamp offsets to the bound, then repair inverted tets in place

    Offsets of vertices touching an inverted tet are halved repeatedly; after
    max_rounds those vertices fall back to zero offset.

    Returns:
        number of tets that were inverted after clamping
    """
    b = grid.offset_bound
    np.clip(grid.offsets, -b, b, out=grid.offsets)
    eps = 1e-12 * float(np.prod(grid.cell_size))
    inverted = np.flatnonzero(tet_volumes(grid) <= eps)
    repaired = len(inverted)
    rounds = 0
    while len(inverted):
        touched = np.unique(grid.tets[inverted])
        if rounds >= max_rounds:
            grid.offsets[touched] = 0.0
        else:
            grid.offsets[touched] *= 0.5
        rounds += 1
        inverted = np.flatnonzero(tet_volumes(grid) <= eps)
    if repaired:
        logger.debug("repaired %d inverted tets in %d rounds", repaired, rounds)
    return repaired


# ============================================================================
# MARCHING TETRAHEDRA
# ============================================================================

def _two_inside_table():
    """For each 4-bit inside code with two bits set: (a, b) inside, (c, d) outside"""
    table = np.zeros((16, 4), dtype=np.int64)
    for code in range(16):
        ins = [i for i in range(4) if code >> i & 1]
        outs = [i for i in range(4) if not code >> i & 1]
        if len(ins) == 2:
            table[code] = ins + outs
    return table


_TWO_INSIDE = _two_inside_table()
_OTHERS = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class MTSurface:
    """
    Extracted surface plus its provenance

    edges[i] = (a, b), a < b, is the grid edge whose crossing produced mesh vertex i.
    """

    mesh: TriMesh
    edges: np.ndarray


def crossing_points(positions, sdf, edges):
    """p = (p_a s_b - p_b s_a) / (s_b - s_a) for every edge"""
    a, b = edges[:, 0], edges[:, 1]
    sa, sb = sdf[a], sdf[b]
    d = (sb - sa)[:, None]
    return (positions[a] * sb[:, None] - positions[b] * sa[:, None]) / d


def extract_surface(grid):
    """
    Marching Tetrahedra over the deformed grid

    Inside is sdf < 0. Crossing vertices are welded by sorted edge key and
    triangles face toward increasing SDF (outward).

    Returns:
        MTSurface
    """
    sdf = grid.sdf
    inside = sdf < 0
    tet_in = inside[grid.tets]
    n_in = tet_in.sum(axis=1)
    active = np.flatnonzero((n_in > 0) & (n_in < 4))
    if len(active) == 0:
        raise EmptySurfaceError("SDF has no sign change; nothing to extract")

    tets = grid.tets[active]
    tin = tet_in[active]
    nin = n_in[active]
    n = grid.n_verts

    # welded crossing vertices, one per sign-changing edge
    ea = tets[:, TET_EDGES[:, 0]]
    eb = tets[:, TET_EDGES[:, 1]]
    crossing = tin[:, TET_EDGES[:, 0]] != tin[:, TET_EDGES[:, 1]]
    lo, hi = np.minimum(ea, eb)[crossing], np.maximum(ea, eb)[crossing]
    keys = np.unique(lo * n + hi)
    edges = np.stack([keys // n, keys % n], axis=1)

    def vertex_of(rows, u, v):
        sub = tets[rows]
        gu = np.take_along_axis(sub, u[:, None], axis=1)[:, 0]
        gv = np.take_along_axis(sub, v[:, None], axis=1)[:, 0]
        key = np.minimum(gu, gv) * n + np.maximum(gu, gv)
        return np.searchsorted(keys, key)

    tris = []
    owners = []

    # one vertex separated from the other three
    single = np.flatnonzero((nin == 1) | (nin == 3))
    if len(single):
        code_in = tin[single]
        lone = np.where(nin[single] == 1, np.argmax(code_in, axis=1), np.argmin(code_in, axis=1))
        others = _OTHERS[lone]
        tri = np.stack([vertex_of(single, lone, others[:, k]) for k in range(3)], axis=1)
        tris.append(tri)
        owners.append(single)

    # two inside, two outside: a quad split in two
    double = np.flatnonzero(nin == 2)
    if len(double):
        code = (tin[double] * np.array([1, 2, 4, 8])).sum(axis=1)
        a, b, c, d = _TWO_INSIDE[code].T
        ac, ad, bd, bc = (vertex_of(double, u, v) for u, v in ((a, c), (a, d), (b, d), (b, c)))
        tris.append(np.stack([ac, ad, bd], axis=1))
        tris.append(np.stack([ac, bd, bc], axis=1))
        owners.extend([double, double])

    faces = np.concatenate(tris)
    owner = active[np.concatenate(owners)]

    positions = grid.deformed_verts()
    vertices = crossing_points(positions, sdf, edges)

    # orient toward the outside vertices of the owning tet
    t_pos = positions[grid.tets[owner]]
    t_in = inside[grid.tets[owner]][:, :, None]
    in_centroid = (t_pos * t_in).sum(axis=1) / t_in.sum(axis=1)
    out_centroid = (t_pos * ~t_in).sum(axis=1) / (~t_in).sum(axis=1)
    tri = vertices[faces]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", normal, out_centroid - in_centroid) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    # canonical face order: smallest index first (orientation kept), rows sorted
    shift = np.argmin(faces, axis=1)
    rows = np.arange(len(faces))[:, None]
    faces = faces[rows, (shift[:, None] + np.arange(3)) % 3]
    faces = faces[np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))]

    return MTSurface(TriMesh(vertices, faces), edges)


def marching_tetrahedra(grid):
    """Extract the zero level set of the grid as a welded, outward-facing TriMesh"""
    surface = extract_surface(grid)
    logger.debug("MT: %d vertices, %d faces", surface.mesh.n_vertices, surface.mesh.n_faces)
    return surface.mesh


# ============================================================================
# JACOBIANS
# ============================================================================

@dataclass(frozen=True)
class EdgeJacobian:
    """Partial derivatives of a crossing position; d_va / d_vb are 3x3 matrices"""

    d_sa: np.ndarray
    d_sb: np.ndarray
    d_va: np.ndarray
    d_vb: np.ndarray

    def as_matrix(self):
        """3 x 8 map over (s_a, s_b, dv_a, dv_b)"""
        return np.column_stack([self.d_sa, self.d_sb, self.d_va, self.d_vb])


def crossing_jacobians(positions, sdf, edges):
    """
    Vectorized Jacobian factors for many edges

    Returns:
        (d_sa (E, 3), d_sb (E, 3), w_a (E,), w_b (E,)) with
        dp/d(dv_a) = w_a * I and dp/d(dv_b) = w_b * I
    """
    a, b = edges[:, 0], edges[:, 1]
    sa, sb = sdf[a], sdf[b]
    d = sb - sa
    diff = positions[a] - positions[b]
    d_sa = diff * (sb / d ** 2)[:, None]
    d_sb = -diff * (sa / d ** 2)[:, None]
    return d_sa, d_sb, sb / d, -sa / d


def mt_vertex_jacobian(grid, edge):
    """
    Jacobian of the crossing position on one grid edge

    Args:
        grid: TetGrid
        edge: (a, b) vertex indices

    Returns:
        EdgeJacobian with respect to (s_a, s_b, dv_a, dv_b)
    """
    a, b = (int(x) for x in edge)
    if (grid.sdf[a] < 0) == (grid.sdf[b] < 0):
        raise ValidationError(f"edge ({a}, {b}) has no sign change")
    edges = np.array([[a, b]])
    d_sa, d_sb, w_a, w_b = crossing_jacobians(grid.deformed_verts(), grid.sdf, edges)
    eye = np.eye(3)
    return EdgeJacobian(d_sa[0], d_sb[0], w_a[0] * eye, w_b[0] * eye)


def surface_vjp(grid, surface, grad_vertices):
    """
    Pull a gradient on MT vertex positions back onto the grid parameters

    Returns:
        (grad_sdf (N,), grad_offsets (N, 3))
    """
    edges = surface.edges
    g = np.asarray(grad_vertices, dtype=np.float64)
    d_sa, d_sb, w_a, w_b = crossing_jacobians(grid.deformed_verts(), grid.sdf, edges)
    n = grid.n_verts
    a, b = edges[:, 0], edges[:, 1]
    grad_sdf = (
        np.bincount(a, weights=np.einsum("ij,ij->i", g, d_sa), minlength=n)
        + np.bincount(b, weights=np.einsum("ij,ij->i", g, d_sb), minlength=n)
    )
    grad_offsets = np.zeros((n, 3))
    for k in range(3):
        grad_offsets[:, k] = (
            np.bincount(a, weights=g[:, k] * w_a, minlength=n)
            + np.bincount(b, weights=g[:, k] * w_b, minlength=n)
        )
    return grad_sdf, grad_offsets


# ============================================================================
# POINT LOCATION
# ============================================================================

def locate_points(grid, points):
    """
    Containing tet and barycentric coordinates for every point

    Candidates are the 6 tets of the undeformed cell holding the point; the
    candidate with the largest minimum barycentric wins.

    Returns:
        (tet_idx (M,), bary (M, 4))
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = grid.resolution
    cell = np.floor((p - grid.bounds[0]) / grid.cell_size).astype(np.int64)
    cell = np.clip(cell, 0, n - 1)
    cell_id = (cell[:, 0] * n + cell[:, 1]) * n + cell[:, 2]
    candidates = cell_id[:, None] * 6 + np.arange(6)[None, :]

    pos = grid.deformed_verts()[grid.tets[candidates]]  # (M, 6, 4, 3)
    m = np.stack([pos[:, :, 1] - pos[:, :, 0], pos[:, :, 2] - pos[:, :, 0], pos[:, :, 3] - pos[:, :, 0]], axis=-1)
    rhs = p[:, None, :] - pos[:, :, 0]
    lam = np.linalg.solve(m, rhs[..., None])[..., 0]
    bary = np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
    best = np.argmax(bary.min(axis=-1), axis=1)
    rows = np.arange(len(p))
    return candidates[rows, best], bary[rows, best]


def interpolate_sdf(grid, tet_idx, bary):
    return np.einsum("ij,ij->i", bary, grid.sdf[grid.tets[tet_idx]])


def points_in_bounds(grid, points, tol=1e-12):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.all((p >= grid.bounds[0] - tol) & (p <= grid.bounds[1] + tol), axis=1)


# ============================================================================
# CHECKPOINTS
# ============================================================================

CHECKPOINT_MAGIC = b"CTG1"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sII6dd")


def save_grid(grid, path):
    """Versioned binary checkpoint: header then little-endian float64 sdf and offsets"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, grid.resolution,
        *grid.bounds.ravel().tolist(), grid.offset_bound,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(grid.sdf.astype("<f8").tobytes())
        f.write(grid.offsets.astype("<f8").tobytes())


def load_grid(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("grid checkpoint is truncated", path)
    magic, version, resolution, *rest = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("not a grid checkpoint", path)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path)
    bounds = np.array(rest[:6]).reshape(2, 3)
    grid = build_grid(resolution, bounds)
    grid.offset_bound = rest[6]
    n = grid.n_verts
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 4 * n:
        raise FormatError(f"checkpoint holds {body.size} values, expected {4 * n}", path)
    grid.sdf = body[:n].astype(np.float64)
    grid.offsets = body[n:].reshape(n, 3).astype(np.float64)
    return grid
