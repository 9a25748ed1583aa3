"""
Geometric Sculpting Core Logic
Refines the grid so that Marching Tetrahedra meshes match multi-view normal
maps: extract, render, compare, backpropagate into (sdf, offsets), Adam step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from tqdm import tqdm

from carve.core_io.io_core import CameraRig, ImageKind, ImagePlane, mesh_edges
from carve.core_io.primitives import intersect_ellipsoid
from carve.errors import EmptySurfaceError, ShapeMismatchError, SurfaceVanishedError, ValidationError
from carve.parallel import derive_rng, ordered_map
from carve.pipeline.optim import Adam, annealed_lr
from carve.raster.raster_core import backward_normal, render
from carve.scene.scene_core import camera_at_azimuth
from carve.tetra.tet_core import extract_surface, project_offsets, surface_vjp

logger = logging.getLogger(__name__)

ELEVATION_RANGE = (-15.0, 30.0)


# ============================================================================
# CONFIGURATION
# ============================================================================

@dataclass(frozen=True)
class SculptConfig:
    iters: int = 100
    lr: float = 0.01
    views_per_iter: int = 1
    camera_sampling: str = "rig"
    seed: int = 0
    laplacian_weight: float = 0.0
    smoothing: float = 2.0
    radius: float = 2.7
    image_size: int = 256
    fov_y: float = 30.0
    log_every: int = 50
    record_every: int = 10


class SculptConfigValidator:
    @staticmethod
    def validate(cfg):
        if cfg.iters < 0:
            return False, f"iters must be >= 0, got {cfg.iters}"
        if not cfg.lr > 0:
            return False, f"lr must be positive, got {cfg.lr}"
        if cfg.views_per_iter < 1:
            return False, f"views_per_iter must be >= 1, got {cfg.views_per_iter}"
        if cfg.camera_sampling not in ("rig", "uniform"):
            return False, f"camera_sampling must be 'rig' or 'uniform', got '{cfg.camera_sampling}'"
        if cfg.laplacian_weight < 0:
            return False, "laplacian_weight must be >= 0"
        if cfg.smoothing < 0:
            return False, "smoothing must be >= 0"
        return True, "Sculpt configuration is valid"


# ============================================================================
# TARGETS
# ============================================================================

@dataclass(frozen=True, eq=False)
class SculptTarget:
    """Pseudo ground-truth normal map and mask for one camera"""

    camera: object
    normal: ImagePlane
    mask: ImagePlane

    def check(self):
        for name, plane in (("normal", self.normal), ("mask", self.mask)):
            if plane.width != self.camera.width or plane.height != self.camera.height:
                raise ShapeMismatchError(
                    f"{name} image is {plane.width}x{plane.height}, camera is "
                    f"{self.camera.width}x{self.camera.height}"
                )
        return self


class TargetProvider:
    """Produces (normal, mask) for any camera"""

    def targets_for(self, camera):
        raise NotImplementedError


class AnalyticTargets(TargetProvider):
    """Exact normal maps of an origin-centered ellipsoid by ray casting"""

    def __init__(self, radii):
        self.radii = np.asarray(radii, dtype=np.float64)

    def targets_for(self, camera):
        rays = camera.pixel_rays()
        origins = np.broadcast_to(np.asarray(camera.position), rays.shape)
        t, hit = intersect_ellipsoid(origins, rays, self.radii)
        points = origins + np.where(hit, t, 0.0)[..., None] * rays
        g = points / self.radii ** 2
        normals = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)
        mask = hit.astype(np.float64)
        return SculptTarget(
            camera,
            ImagePlane.from_normals(normals, mask),
            ImagePlane(mask[:, :, None], ImageKind.SILHOUETTE),
        )


# ============================================================================
# LOSS
# ============================================================================

def _check_same_size(*planes):
    shape = planes[0].data.shape[:2]
    for p in planes[1:]:
        if p.data.shape[:2] != shape:
            raise ShapeMismatchError(f"image sizes differ: {shape} vs {p.data.shape[:2]}")


def normal_loss_and_grad(rendered, target, mask):
    """
    Masked mean of |decoded rendered - decoded target|^2 and its gradient with
    respect to the encoded rendered image
    """
    _check_same_size(rendered, target, mask)
    m = mask.data[:, :, 0] > 0.5
    count = int(m.sum())
    grad = np.zeros(rendered.data.shape)
    if count == 0:
        return 0.0, grad
    diff = 2.0 * (np.asarray(rendered.data, dtype=np.float64) - np.asarray(target.data, dtype=np.float64))
    diff = diff[m]
    loss = float(np.einsum("ij,ij->", diff, diff) / count)
    grad[m] = 4.0 * diff / count
    return loss, grad


def normal_loss(rendered, target, mask):
    """
    Mean squared difference of decoded normals over mask pixels; 0 on an empty mask

    Args:
        rendered: normal ImagePlane
        target: normal ImagePlane
        mask: silhouette ImagePlane (already the intersection of both masks)
    """
    return normal_loss_and_grad(rendered, target, mask)[0]


def intersect_masks(a, b):
    both = (a.data[:, :, 0] > 0.5) & (b.data[:, :, 0] > 0.5)
    return ImagePlane(both.astype(np.float64)[:, :, None], ImageKind.SILHOUETTE)


# ============================================================================
# CAMERA SAMPLING
# ============================================================================

def sample_views(cfg, iteration, rig=None):
    """
    Cameras for one iteration

    Rig mode walks the rig round-robin; uniform mode draws azimuth in
    [0, 360) and elevation in [-15, 30] degrees from (seed, iteration).
    """
    if cfg.camera_sampling == "rig":
        if rig is None or len(rig) == 0:
            raise ValidationError("rig sampling needs a non-empty camera rig")
        n = len(rig)
        return [rig[(iteration * cfg.views_per_iter + j) % n] for j in range(cfg.views_per_iter)]
    rng = derive_rng(cfg.seed, "view", iteration)
    cams = []
    for _ in range(cfg.views_per_iter):
        az = rng.uniform(0.0, 360.0)
        el = rng.uniform(*ELEVATION_RANGE)
        cams.append(camera_at_azimuth(az, cfg.radius, elevation=el, fov_y=cfg.fov_y, size=cfg.image_size))
    return cams


def sample_view(cfg, iteration, rig=None):
    return sample_views(cfg, iteration, rig)[0]


# ============================================================================
# REGULARIZER
# ============================================================================

def uniform_laplacian(mesh):
    """Sparse L = I - D^-1 A over the mesh edge graph"""
    edges, _ = mesh_edges(mesh)
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = sparse.diags(np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0))
    return sparse.identity(n, format="csr") - inv @ adj


def laplacian_loss_and_grad(mesh):
    """Mean squared uniform-Laplacian displacement and its vertex gradient"""
    lap = uniform_laplacian(mesh)
    delta = lap @ mesh.vertices
    n = max(mesh.n_vertices, 1)
    return float(np.sum(delta * delta) / n), 2.0 * (lap.T @ delta) / n


def smooth_gradient(mesh, grad, weight):
    """Solve (I + weight * L) g = grad on the mesh edge graph; weight 0 is a no-op"""
    if weight <= 0 or mesh.n_vertices == 0:
        return grad
    system = sparse.identity(mesh.n_vertices, format="csc") + weight * uniform_laplacian(mesh).tocsc()
    return splu(system.tocsc()).solve(np.ascontiguousarray(grad, dtype=np.float64))


# ============================================================================
# SCULPTING
# ============================================================================

@dataclass
class SculptReport:
    iters: int
    lr: float
    losses: list = field(default_factory=list)
    views: list = field(default_factory=list)
    repaired_tets: int = 0
    param_change: float = 0.0
    n_vertices: int = 0
    n_faces: int = 0
    steps: list = field(default_factory=list)

    def head_tail_means(self, k=10):
        if not self.losses:
            return float("nan"), float("nan")
        return float(np.mean(self.losses[:k])), float(np.mean(self.losses[-k:]))

    def to_dict(self):
        head, tail = self.head_tail_means()
        return {
            "iters": self.iters,
            "lr": self.lr,
            "losses": [float(x) for x in self.losses],
            "first10_mean": head,
            "last10_mean": tail,
            "repaired_tets": int(self.repaired_tets),
            "param_change": float(self.param_change),
            "n_vertices": int(self.n_vertices),
            "n_faces": int(self.n_faces),
        }


class Sculptor:
    """Normal-map driven refinement of an adapted grid, with step recording"""

    def __init__(self, grid, targets, cfg=SculptConfig(), rig=None, progress=False):
        is_valid, message = SculptConfigValidator.validate(cfg)
        if not is_valid:
            raise ValidationError(message)
        self.grid = grid
        self.cfg = cfg
        self.progress = progress
        self.rig = rig
        self.provider = targets if isinstance(targets, TargetProvider) else None
        self.fixed = None
        if self.provider is None:
            self.fixed = [t.check() for t in targets]
            if not self.fixed:
                raise ValidationError("sculpting needs at least one target view")
            if cfg.camera_sampling == "uniform":
                raise ValidationError("uniform camera sampling needs a target provider")
        self.steps = []

    def _record_step(self, step_type, iteration, loss, view=None, explanation=""):
        self.steps.append({
            'type': step_type,
            'iteration': iteration,
            'loss': float(loss),
            'rendered': view[0] if view else None,
            'target': view[1] if view else None,
            'explanation': explanation,
        })

    def get_steps(self):
        return self.steps

    def _views(self, iteration):
        if self.cfg.camera_sampling == "uniform":
            cams = sample_views(self.cfg, iteration)
            return [None] * len(cams), [self.provider.targets_for(c) for c in cams]
        pool = self.fixed if self.fixed is not None else list(self.rig or ())
        if not pool:
            raise ValidationError("rig sampling needs a non-empty camera rig")
        n = len(pool)
        idx = [(iteration * self.cfg.views_per_iter + j) % n for j in range(self.cfg.views_per_iter)]
        if self.fixed is not None:
            return idx, [pool[i] for i in idx]
        return idx, [self.provider.targets_for(pool[i]) for i in idx]

    def _view_gradient(self, mesh, target):
        bundle = render(mesh, target.camera)
        mask = intersect_masks(target.mask, bundle.silhouette)
        loss, g_img = normal_loss_and_grad(bundle.normal, target.normal, mask)
        if loss == 0.0:
            return loss, np.zeros((mesh.n_vertices, 3)), bundle
        return loss, backward_normal(bundle, mesh, g_img), bundle

    def run(self):
        grid, cfg = self.grid, self.cfg
        try:
            surface = extract_surface(grid)
        except EmptySurfaceError as exc:
            raise SurfaceVanishedError(f"no surface before sculpting: {exc}", 0) from exc

        report = SculptReport(cfg.iters, cfg.lr)
        start = np.concatenate([grid.sdf, grid.offsets.ravel()])
        # offsets step in cell units
        cell = float(np.min(grid.cell_size))
        adam = Adam([cfg.lr, cfg.lr * cell])
        self.steps = []

        for it in tqdm(range(cfg.iters), desc="sculpt", disable=not self.progress):
            if it > 0:
                try:
                    surface = extract_surface(grid)
                except EmptySurfaceError as exc:
                    raise SurfaceVanishedError(
                        f"surface vanished at iteration {it}; the SDF has no sign change "
                        f"(min {grid.sdf.min():.4g}, max {grid.sdf.max():.4g})", it
                    ) from exc
            mesh = surface.mesh
            view_ids, targets = self._views(it)
            results = ordered_map(lambda t: self._view_gradient(mesh, t), targets)

            loss = sum(r[0] for r in results) / len(results)
            grad = smooth_gradient(mesh, sum(r[1] for r in results) / len(results), cfg.smoothing)
            if cfg.laplacian_weight > 0:
                lap_loss, lap_grad = laplacian_loss_and_grad(mesh)
                loss += cfg.laplacian_weight * lap_loss
                grad = grad + cfg.laplacian_weight * lap_grad
            report.losses.append(float(loss))
            report.views.append(view_ids[0])

            if cfg.record_every and it % cfg.record_every == 0:
                bundle = results[0][2]
                self._record_step(
                    'iteration', it, loss, (bundle.normal, targets[0].normal),
                    f"Iteration {it}\n\n- Normal loss: {loss:.6g}\n"
                    f"- Mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces"
                )
            if cfg.log_every and it % cfg.log_every == 0:
                logger.info("sculpt iter %d/%d loss %.6g", it, cfg.iters, loss)

            g_sdf, g_off = surface_vjp(grid, surface, grad)
            rate = annealed_lr(cfg.lr, it, cfg.iters)
            adam.lr = [rate, rate * cell]
            adam.step([grid.sdf, grid.offsets], [g_sdf, g_off])
            report.repaired_tets += project_offsets(grid)

        if cfg.iters > 0:
            try:
                surface = extract_surface(grid)
            except EmptySurfaceError as exc:
                raise SurfaceVanishedError("surface vanished after the last step", cfg.iters) from exc

        mesh = surface.mesh
        report.param_change = float(np.linalg.norm(np.concatenate([grid.sdf, grid.offsets.ravel()]) - start))
        report.n_vertices = mesh.n_vertices
        report.n_faces = mesh.n_faces
        head, tail = report.head_tail_means()
        self._record_step(
            'complete', cfg.iters, report.losses[-1] if report.losses else 0.0, None,
            f"Sculpting complete\n\n- First-10 mean loss: {head:.6g}\n"
            f"- Last-10 mean loss: {tail:.6g}\n- Final mesh: {mesh.n_vertices} vertices"
        )
        report.steps = self.steps
        return mesh, report


def sculpt(grid, targets, cfg=SculptConfig(), rig=None, progress=False):
    """
    Refine an adapted grid against normal targets, in place

    Args:
        grid: TetGrid after fit_sdf
        targets: list of SculptTarget, or a TargetProvider
        cfg: SculptConfig
        rig: cameras for rig sampling when targets is a provider

    Returns:
        (final MT mesh, SculptReport)
    """
    return Sculptor(grid, targets, cfg, rig, progress).run()


def normal_error_report(mesh, targets):
    """Mean angular error in degrees between rendered and target normals, per view"""
    errors = []
    for t in targets:
        bundle = render(mesh, t.camera)
        m = intersect_masks(t.mask, bundle.silhouette).data[:, :, 0] > 0.5
        if not m.any():
            errors.append(float("nan"))
            continue
        a = bundle.normal.decoded_normals()[m]
        b = t.normal.decoded_normals()[m]
        b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
        cos = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
        errors.append(float(np.degrees(np.arccos(cos)).mean()))
    return errors


def targets_from_rig(rig, normals, masks):
    """Zip a rig with per-view normal and mask images into sculpt targets"""
    if not (len(rig) == len(normals) == len(masks)):
        raise ShapeMismatchError(
            f"{len(rig)} cameras, {len(normals)} normal maps and {len(masks)} masks"
        )
    cams = rig.cameras if isinstance(rig, CameraRig) else list(rig)
    return [SculptTarget(c, n, m).check() for c, n, m in zip(cams, normals, masks)]


def rendered_targets(mesh, rig):
    """Targets that reproduce the current rendering of a mesh exactly"""
    out = []
    for cam in rig:
        bundle = render(mesh, cam)
        out.append(SculptTarget(cam, bundle.normal, bundle.silhouette))
    return out

