"""
SDF Adaptation Core Logic
Exact signed distances to a watertight mesh, near-surface sampling, and the
Adam fit of the grid's vertex SDF to the sampled distances.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from tqdm import tqdm

from carve.core_io.io_core import boundary_edges
from carve.errors import ValidationError
from carve.parallel import derive_rng, ordered_map
from carve.pipeline.optim import Adam, annealed_lr
from carve.tetra.tet_core import interpolate_sdf, locate_points, points_in_bounds

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 20000
SURFACE_FRACTION = 0.8
DEFAULT_SAMPLE_RESOLUTION = 64
_CHUNK = 4_000_000


# ============================================================================
# DISTANCES
# ============================================================================

def closest_points_on_triangles(p, a, b, c):
    """
    Closest point on triangle (a, b, c) to p, row by row (Voronoi region walk)

    Args:
        p, a, b, c: (M, 3) arrays

    Returns:
        (M, 3) closest points
    """
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        nonlocal done
        sel = mask & ~done
        out[sel] = value[sel] if value.ndim == 2 else value
        done |= sel

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), a)
        take((d3 >= 0) & (d4 <= d3), b)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + (d1 / (d1 - d3))[:, None] * ab)
        take((d6 >= 0) & (d5 <= d6), c)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + (d2 / (d2 - d6))[:, None] * ac)
        e43, e56 = d4 - d3, d5 - d6
        take((va <= 0) & (e43 >= 0) & (e56 >= 0), b + (e43 / (e43 + e56))[:, None] * (c - b))
        denom = va + vb + vc
        v = (vb / denom)[:, None]
        w = (vc / denom)[:, None]
        take(~done, a + ab * v + ac * w)
    return out


def winding_numbers(vertices, faces, points):
    """Generalized winding number of a closed triangle mesh at every point"""
    tri = vertices[faces]
    chunk = max(1, _CHUNK // max(len(faces), 1))

    def one(start):
        p = points[start:start + chunk]
        a = tri[None, :, 0] - p[:, None]
        b = tri[None, :, 1] - p[:, None]
        c = tri[None, :, 2] - p[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        det = np.einsum("pfi,pfi->pf", a, np.cross(b, c))
        div = (
            la * lb * lc
            + np.einsum("pfi,pfi->pf", a, b) * lc
            + np.einsum("pfi,pfi->pf", b, c) * la
            + np.einsum("pfi,pfi->pf", c, a) * lb
        )
        return (2.0 * np.arctan2(det, div)).sum(axis=1) / (4.0 * math.pi)

    parts = ordered_map(one, range(0, len(points), chunk))
    return np.concatenate(parts) if parts else np.zeros(0)


class MeshDistance:
    """
    Signed distance queries against one watertight mesh

    Candidate triangles come from a KD-tree over face centroids; any triangle
    closer than the best candidate has its centroid within best + max face radius.
    """

    def __init__(self, mesh, k=16):
        holes = boundary_edges(mesh)
        if mesh.n_faces == 0 or len(holes):
            raise ValidationError(
                f"mesh is not watertight ({len(holes)} boundary edges); sign is undefined"
            )
        self.mesh = mesh
        self.tri = mesh.vertices[mesh.faces]
        centroids = self.tri.mean(axis=1)
        self.max_radius = float(np.linalg.norm(self.tri - centroids[:, None], axis=-1).max())
        self.tree = cKDTree(centroids)
        self.k = min(k, mesh.n_faces)

    def _exact(self, points, face_ids):
        t = self.tri[face_ids]
        q = closest_points_on_triangles(points, t[:, 0], t[:, 1], t[:, 2])
        return np.linalg.norm(points - q, axis=1)

    def unsigned(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        m = len(points)
        centroid_dist, idx = self.tree.query(points, k=self.k)
        centroid_dist = centroid_dist.reshape(m, -1)
        idx = idx.reshape(m, -1)
        d = self._exact(np.repeat(points, idx.shape[1], axis=0), idx.ravel()).reshape(m, -1)
        best = d.min(axis=1)

        if self.k < self.mesh.n_faces:
            unsure = np.flatnonzero(best > centroid_dist[:, -1] - self.max_radius)
            for i in unsure:
                ids = np.asarray(
                    self.tree.query_ball_point(points[i], best[i] + self.max_radius), dtype=np.int64
                )
                if len(ids):
                    cand = self._exact(np.repeat(points[i:i + 1], len(ids), axis=0), ids)
                    best[i] = min(best[i], cand.min())
        return best

    def signed(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dist = self.unsigned(points)
        inside = winding_numbers(self.mesh.vertices, self.mesh.faces, points) > 0.5
        signed = np.where(inside, -dist, dist)
        return np.where(dist == 0.0, 0.0, signed)


def signed_distance(mesh, p):
    """Signed distance from one point to a watertight mesh (negative inside)"""
    return float(MeshDistance(mesh).signed(np.asarray(p, dtype=np.float64)[None])[0])


def signed_distances(mesh, points):
    return MeshDistance(mesh).signed(points)


# ============================================================================
# SAMPLES
# ============================================================================

class SamplePoint(NamedTuple):
    p: np.ndarray
    sdf_gt: float


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Sample positions with their ground-truth signed distances"""

    points: np.ndarray
    sdf_gt: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        sdf_gt = np.asarray(self.sdf_gt, dtype=np.float64).reshape(-1)
        if len(points) != len(sdf_gt):
            raise ValidationError(f"{len(points)} points but {len(sdf_gt)} distances")
        if not np.all(np.isfinite(sdf_gt)):
            raise ValidationError("sample distances must be finite")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "sdf_gt", sdf_gt)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return SamplePoint(self.points[i], float(self.sdf_gt[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def sample_near_surface(mesh, n=DEFAULT_SAMPLES, sigma=None, seed=0, bounds=None,
                        distance=None, grid=None):
    """
    Draw SDF training samples around a watertight mesh

    80% area-weighted surface points with isotropic Gaussian jitter, 20% uniform
    in bounds; every point is kept inside bounds.

    Args:
        mesh: watertight TriMesh
        n: number of samples
        sigma: jitter std (world units); defaults to 2 cells of `grid`, or of a
            resolution-64 lattice over bounds when no grid is given
        seed: random seed
        bounds: ((lo), (hi)) box; defaults to the grid bounds, else the mesh
            bbox padded by 10%
        distance: optional prebuilt MeshDistance
        grid: TetGrid the samples are meant for

    Returns:
        SampleSet
    """
    if n < 1:
        raise ValidationError(f"sample count must be at least 1, got {n}")
    distance = distance or MeshDistance(mesh)
    if bounds is None and grid is not None:
        bounds = grid.bounds
    if bounds is None:
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        pad = 0.1 * (hi - lo).max()
        bounds = (lo - pad, hi + pad)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if sigma is None:
        cell = grid.cell_size if grid is not None else (hi - lo) / DEFAULT_SAMPLE_RESOLUTION
        sigma = 2.0 * float(np.min(cell))

    rng = derive_rng(seed, "samples")
    n_surface = int(round(SURFACE_FRACTION * n))
    tri = mesh.vertices[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    face = rng.choice(len(tri), size=n_surface, p=area / area.sum())
    r1 = np.sqrt(rng.random(n_surface))
    r2 = rng.random(n_surface)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    surface = np.einsum("ij,ijk->ik", bary, tri[face])
    if sigma > 0:
        surface = surface + rng.normal(0.0, sigma, size=surface.shape)
    uniform = rng.uniform(lo, hi, size=(n - n_surface, 3))
    points = np.clip(np.concatenate([surface, uniform]), lo, hi)

    sdf = distance.signed(points)
    logger.info("sampled %d points (sigma %.4f)", n, sigma)
    return SampleSet(points, sdf)


# ============================================================================
# FITTING
# ============================================================================

@dataclass
class FitReport:
    iters: int
    lr: float
    n_samples: int
    losses: list = field(default_factory=list)
    rmse: float = float("nan")
    filled_vertices: int = 0
    steps: list = field(default_factory=list)

    @property
    def initial_loss(self):
        return self.losses[0]

    @property
    def final_loss(self):
        return self.losses[-1]

    def to_dict(self):
        return {
            "iters": self.iters,
            "lr": self.lr,
            "n_samples": self.n_samples,
            "losses": [float(x) for x in self.losses],
            "rmse": float(self.rmse),
            "filled_vertices": int(self.filled_vertices),
        }


def evaluate_rmse(grid, samples):
    """RMSE of the interpolated grid SDF at the given samples"""
    tet_idx, bary = locate_points(grid, samples.points)
    r = interpolate_sdf(grid, tet_idx, bary) - samples.sdf_gt
    return float(np.sqrt(np.mean(r * r)))


def fill_unconstrained(grid, constrained, sweeps=64):
    """
    Give lattice vertices that no sample touches a value from their neighbors

    Each such vertex starts from its nearest constrained vertex and is then
    relaxed toward the mean of its 6 lattice neighbors for a bounded number
    of Jacobi sweeps. Constrained vertices never change.

    Returns:
        number of filled vertices
    """
    free = ~np.asarray(constrained, dtype=bool)
    if not free.any() or not (~free).any():
        return 0
    n1 = grid.resolution + 1
    values = grid.sdf.reshape(n1, n1, n1).copy()
    free3 = free.reshape(n1, n1, n1)
    nearest = ndimage.distance_transform_edt(free3, return_distances=False, return_indices=True)
    values[free3] = values[tuple(idx[free3] for idx in nearest)]
    for _ in range(sweeps):
        p = np.pad(values, 1, mode="edge")
        mean = (
            p[:-2, 1:-1, 1:-1] + p[2:, 1:-1, 1:-1]
            + p[1:-1, :-2, 1:-1] + p[1:-1, 2:, 1:-1]
            + p[1:-1, 1:-1, :-2] + p[1:-1, 1:-1, 2:]
        ) / 6.0
        values[free3] = mean[free3]
    grid.sdf[:] = values.ravel()
    return int(free.sum())


class SdfFitter:
    """
    Adam fit of vertex SDF values to sample distances, offsets frozen

    The rate holds at lr for the first half of the run and then decays
    geometrically to lr / 100, so the last iterations settle instead of
    jittering at the scale of lr.
    """

    def __init__(self, grid, samples, iters=400, lr=0.01, fill=True, log_every=50,
                 record_every=25, progress=False):
        self.grid = grid
        self.samples = samples
        self.iters = int(iters)
        self.lr = float(lr)
        self.fill = fill
        self.log_every = log_every
        self.record_every = record_every
        self.progress = progress
        self.steps = []

    def _record_step(self, step_type, iteration, loss, explanation=""):
        self.steps.append({
            'type': step_type,
            'iteration': iteration,
            'loss': float(loss),
            'explanation': explanation,
        })

    def get_steps(self):
        return self.steps

    def run(self):
        grid, samples = self.grid, self.samples
        if len(samples) == 0:
            raise ValidationError("no samples to fit")
        if self.iters < 0 or self.lr <= 0:
            raise ValidationError("fit needs iters >= 0 and lr > 0")
        outside = np.flatnonzero(~points_in_bounds(grid, samples.points))
        if len(outside):
            p = samples.points[outside[0]]
            raise ValidationError(
                f"{len(outside)} samples lie outside the grid bounds, "
                f"first #{int(outside[0])} at ({p[0]:.6g}, {p[1]:.6g}, {p[2]:.6g})"
            )

        tet_idx, bary = locate_points(grid, samples.points)
        corners = grid.tets[tet_idx]
        flat = corners.ravel()
        gt = samples.sdf_gt
        n = grid.n_verts
        adam = Adam(self.lr)
        report = FitReport(self.iters, self.lr, len(samples))
        self.steps = []

        def residual():
            return np.einsum("ij,ij->i", bary, grid.sdf[corners]) - gt

        r = residual()
        for it in tqdm(range(self.iters), desc="fit", disable=not self.progress):
            loss = float(r @ r)
            report.losses.append(loss)
            if self.record_every and it % self.record_every == 0:
                self._record_step(
                    'iteration', it, loss,
                    f"Iteration {it}\n\n- Loss: {loss:.6g}\n- RMSE: {math.sqrt(loss / len(gt)):.6g}"
                )
            if self.log_every and it % self.log_every == 0:
                logger.info("fit iter %d/%d loss %.6g", it, self.iters, loss)
            grad = np.bincount(flat, weights=(2.0 * r[:, None] * bary).ravel(), minlength=n)
            adam.lr = annealed_lr(self.lr, it, self.iters)
            adam.step([grid.sdf], [grad])
            r = residual()

        loss = float(r @ r)
        report.losses.append(loss)
        report.rmse = math.sqrt(loss / len(gt))

        if self.iters > 0 and self.fill:
            touched = np.bincount(flat, weights=np.abs(bary).ravel(), minlength=n) > 0
            report.filled_vertices = fill_unconstrained(grid, touched)

        self._record_step(
            'complete', self.iters, loss,
            f"Fit complete\n\n- Final loss: {loss:.6g}\n- RMSE: {report.rmse:.6g}\n"
            f"- Filled vertices: {report.filled_vertices}"
        )
        report.steps = self.steps
        logger.info("fit done: loss %.6g rmse %.6g", loss, report.rmse)
        return report


def fit_sdf(grid, samples, iters=400, lr=0.01, **options):
    """
    Minimize the summed squared SDF error at the samples by Adam, in place

    Args:
        grid: TetGrid (sdf updated in place, offsets untouched)
        samples: SampleSet
        iters: Adam iterations
        lr: learning rate

    Returns:
        FitReport with losses[0] the initial loss and losses[-1] the final loss
    """
    return SdfFitter(grid, samples, iters, lr, **options).run()
