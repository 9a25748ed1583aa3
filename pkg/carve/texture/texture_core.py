"""
Explicit Texturing Core Logic
Bakes a texture atlas from multi-view color images: weighted masked
reconstruction plus total variation, minimized with Adam over the texels.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from carve.core_io.io_core import ImageKind, ImagePlane, ViewTag
from carve.errors import ShapeMismatchError, ValidationError
from carve.parallel import derive_rng, ordered_map
from carve.pipeline.optim import Adam
from carve.raster.raster_core import TextureAtlas, bilinear_taps, rasterize, render

logger = logging.getLogger(__name__)

INIT_MODES = ("zero", "mid-gray", "uniform")


# ============================================================================
# CONFIGURATION
# ============================================================================

@dataclass(frozen=True)
class TexConfig:
    iters: int = 500
    lr: float = 0.001
    lambda_tv: float = 1.0
    w_front_back: float = 1.0
    w_other: float = 0.2
    init: str = "mid-gray"
    seed: int = 0
    atlas_size: int = 1024
    fill_sweeps: int = 64
    log_every: int = 50
    record_every: int = 25


class TexConfigValidator:
    @staticmethod
    def validate(cfg):
        if cfg.iters < 0:
            return False, f"iters must be >= 0, got {cfg.iters}"
        if not cfg.lr > 0:
            return False, f"lr must be positive, got {cfg.lr}"
        if cfg.lambda_tv < 0:
            return False, f"lambda_tv must be >= 0, got {cfg.lambda_tv}"
        if cfg.w_front_back < 0 or cfg.w_other < 0:
            return False, "view weights must be >= 0"
        if cfg.init not in INIT_MODES:
            return False, f"init must be one of {', '.join(INIT_MODES)}, got '{cfg.init}'"
        if cfg.atlas_size < 1:
            return False, f"atlas_size must be >= 1, got {cfg.atlas_size}"
        return True, "Texture configuration is valid"


def view_weight(camera, cfg=TexConfig()):
    try:
        tag = ViewTag(camera.view_tag)
    except ValueError:
        raise ValidationError(f"unknown view tag '{camera.view_tag}'") from None
    return cfg.w_front_back if tag in (ViewTag.FRONT, ViewTag.BACK) else cfg.w_other


# ============================================================================
# VIEWS
# ============================================================================

@dataclass(frozen=True, eq=False)
class TextureView:
    """One supervising view: camera, target color image and its silhouette"""

    camera: object
    image: ImagePlane
    mask: ImagePlane

    def check(self):
        for name, plane in (("image", self.image), ("mask", self.mask)):
            if plane.width != self.camera.width or plane.height != self.camera.height:
                raise ShapeMismatchError(
                    f"{name} is {plane.width}x{plane.height}, camera is "
                    f"{self.camera.width}x{self.camera.height}"
                )
        if self.image.channels != 3:
            raise ShapeMismatchError(f"image has {self.image.channels} channels, expected 3")
        return self


def make_views(rig, images, masks):
    """Zip a camera rig with per-view images and masks"""
    if not (len(rig) == len(images) == len(masks)):
        raise ValidationError(
            f"{len(rig)} cameras, {len(images)} images and {len(masks)} masks"
        )
    return [TextureView(c, i, m).check() for c, i, m in zip(rig, images, masks)]


def replace_view(views, index, image):
    """Substitute the color image of one view (guided editing)"""
    if not 0 <= index < len(views):
        raise ValidationError(f"view index {index} out of range for {len(views)} views")
    views = list(views)
    views[index] = TextureView(views[index].camera, image, views[index].mask).check()
    logger.info("replaced the image of view %d", index)
    return views


class PreparedView:
    """
    Rasterized once: the mesh is fixed while texels change, so coverage,
    pixel UVs and bilinear taps are computed up front.
    """

    def __init__(self, mesh, view, size, weight):
        view.check()
        self.view = view
        self.weight = weight
        self.size = size
        cam = view.camera
        self.shape = (cam.height, cam.width)
        cov = rasterize(mesh, cam)
        keep = view.mask.mask().ravel()[cov.pixels]
        self.pixels = cov.pixels[keep]
        corners = mesh.uvs[mesh.faces[cov.faces[keep]]]
        uv = np.einsum("pk,pkd->pd", cov.bary[keep], corners)
        self.taps, self.tap_weights = bilinear_taps(uv, size)
        self.target = view.image.data.reshape(-1, 3)[self.pixels]

    @property
    def count(self):
        return len(self.pixels)

    def colors(self, texels):
        flat = texels.reshape(-1, 3)
        return np.einsum("pk,pkc->pc", self.tap_weights, flat[self.taps])

    def mse_and_grad(self, texels):
        """Unweighted masked MSE and its texel gradient"""
        if self.count == 0:
            return 0.0, np.zeros_like(texels)
        diff = self.colors(texels) - self.target
        denom = 3.0 * self.count
        mse = float(np.sum(diff * diff) / denom)
        d_pix = 2.0 * diff / denom
        n = self.size * self.size
        grad = np.zeros((n, 3))
        for c in range(3):
            for k in range(4):
                grad[:, c] += np.bincount(self.taps[:, k], self.tap_weights[:, k] * d_pix[:, c], minlength=n)
        return mse, grad.reshape(texels.shape)

    def image(self, texels):
        img = np.zeros((self.shape[0] * self.shape[1], 3))
        img[self.pixels] = self.colors(texels)
        return ImagePlane(img.reshape(self.shape[0], self.shape[1], 3), ImageKind.COLOR)

    def loss_mask(self):
        """Target silhouette intersected with rendered coverage, as an (H, W) bool mask"""
        m = np.zeros(self.shape[0] * self.shape[1], dtype=bool)
        m[self.pixels] = True
        return m.reshape(self.shape)

    def observed(self):
        flat = np.zeros(self.size * self.size, dtype=bool)
        flat[self.taps[self.tap_weights > 0]] = True
        return flat.reshape(self.size, self.size)


def prepare_views(mesh, views, size, cfg=TexConfig()):
    if mesh.uvs is None:
        raise ValidationError("texturing needs a mesh with UVs")
    if not views:
        raise ValidationError("texturing needs at least one view")
    weights = [view_weight(v.camera, cfg) for v in views]
    return ordered_map(lambda item: PreparedView(mesh, item[0], size, item[1]), list(zip(views, weights)))


# ============================================================================
# LOSSES
# ============================================================================

def _texels(atlas):
    return atlas.texels if isinstance(atlas, TextureAtlas) else np.asarray(atlas, dtype=np.float64)


def tv_loss_and_grad(atlas):
    """
    Anisotropic total variation: mean over texels and channels of
    |forward difference in x| + |forward difference in y| (zero at the border)
    """
    t = _texels(atlas)
    if t.ndim == 2:
        t = t[:, :, None]
    n = t.size
    dx = t[:, 1:] - t[:, :-1]
    dy = t[1:] - t[:-1]
    loss = float((np.abs(dx).sum() + np.abs(dy).sum()) / n)
    sx, sy = np.sign(dx), np.sign(dy)
    grad = np.zeros_like(t)
    grad[:, 1:] += sx
    grad[:, :-1] -= sx
    grad[1:] += sy
    grad[:-1] -= sy
    return loss, grad.reshape(_texels(atlas).shape) / n


def tv_loss(atlas):
    return tv_loss_and_grad(atlas)[0]


def recon_loss_and_grad(prepared, texels):
    """
    Weighted sum of masked per-view MSEs

    Returns:
        (loss, texel gradient, list of unweighted per-view MSEs)
    """
    results = ordered_map(lambda pv: pv.mse_and_grad(texels), prepared)
    loss = 0.0
    grad = np.zeros_like(texels)
    for pv, (mse, g) in zip(prepared, results):
        loss += pv.weight * mse
        grad += pv.weight * g
    return loss, grad, [mse for mse, _ in results]


def recon_loss(mesh, atlas, views, cfg=TexConfig()):
    """
    Reconstruction loss of an atlas against target views

    Args:
        mesh: TriMesh with UVs
        atlas: TextureAtlas
        views: list of TextureView

    Returns:
        sum over views of w * masked MSE, with the mask being the target
        silhouette intersected with the rendered one
    """
    prepared = prepare_views(mesh, views, atlas.size, cfg)
    return recon_loss_and_grad(prepared, atlas.texels)[0]


def texture_loss_and_grad(prepared, texels, lambda_tv):
    rec, g_rec, per_view = recon_loss_and_grad(prepared, texels)
    tv, g_tv = tv_loss_and_grad(texels)
    return rec + lambda_tv * tv, g_rec + lambda_tv * g_tv, per_view


def psnr(rendered, target, mask):
    """
    Masked PSNR in dB for images in [0, 1]

    Returns:
        float; inf when the images agree on the mask
    """
    r = rendered.data if isinstance(rendered, ImagePlane) else np.asarray(rendered)
    t = target.data if isinstance(target, ImagePlane) else np.asarray(target)
    m = mask.mask() if isinstance(mask, ImagePlane) else np.asarray(mask).reshape(r.shape[:2]) > 0.5
    if r.shape != t.shape or r.shape[:2] != m.shape:
        raise ShapeMismatchError(f"image shapes differ: {r.shape}, {t.shape}, mask {m.shape}")
    if not m.any():
        raise ValidationError("PSNR over an empty mask")
    mse = float(np.mean((r[m] - t[m]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ============================================================================
# INITIALIZATION AND FILL
# ============================================================================

def init_texels(size, cfg=TexConfig()):
    if cfg.init == "zero":
        return np.zeros((size, size, 3))
    if cfg.init == "mid-gray":
        return np.full((size, size, 3), 0.5)
    return derive_rng(cfg.seed, "texture-init").uniform(0.0, 1.0, (size, size, 3))


_CROSS = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)


def fill_unobserved(texels, observed, chart_boxes=(), sweeps=64):
    """
    Diffuse observed colors into unobserved texels, one ring per sweep,
    without crossing chart borders

    Returns:
        (filled texels, number of texels filled)
    """
    out = np.array(texels, dtype=np.float64)
    size = out.shape[0]
    boxes = chart_boxes or ((0, 0, size, size),)
    filled = 0
    for x0, y0, w, h in boxes:
        sub = out[y0:y0 + h, x0:x0 + w]
        known = observed[y0:y0 + h, x0:x0 + w].astype(np.float64)
        if known.all() or not known.any():
            continue
        for _ in range(sweeps):
            counts = ndimage.convolve(known, _CROSS, mode="constant")
            grow = (known == 0) & (counts > 0)
            if not grow.any():
                break
            for c in range(3):
                sums = ndimage.convolve(sub[:, :, c] * known, _CROSS, mode="constant")
                sub[:, :, c][grow] = sums[grow] / counts[grow]
            known[grow] = 1.0
            filled += int(grow.sum())
    return out, filled


# ============================================================================
# BAKING
# ============================================================================

@dataclass
class BakeReport:
    iters: int
    lr: float
    lambda_tv: float
    losses: list = field(default_factory=list)
    view_psnr: list = field(default_factory=list)
    observed_fraction: float = 0.0
    filled_texels: int = 0
    steps: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else None

    def to_dict(self):
        return {
            "iters": self.iters,
            "lr": self.lr,
            "lambda_tv": self.lambda_tv,
            "losses": [float(x) for x in self.losses],
            "view_psnr": self.view_psnr,
            "observed_fraction": self.observed_fraction,
            "filled_texels": self.filled_texels,
        }


class Baker:
    """Adam over the texels; clamped to [0, 1] after every step"""

    def __init__(self, mesh, views, cfg=TexConfig(), layout=None, progress=False):
        is_valid, message = TexConfigValidator.validate(cfg)
        if not is_valid:
            raise ValidationError(message)
        if mesh.uvs is None:
            raise ValidationError("texturing needs a mesh with UVs")
        self.mesh = mesh
        self.views = list(views)
        self.cfg = cfg
        self.size = layout.size if layout is not None else cfg.atlas_size
        self.chart_boxes = layout.chart_boxes if layout is not None else ()
        self.progress = progress
        self.steps = []

    def _record_step(self, step_type, iteration, loss, explanation=""):
        self.steps.append({
            'type': step_type,
            'iteration': iteration,
            'loss': loss,
            'explanation': explanation,
        })

    def get_steps(self):
        return self.steps

    def run(self):
        cfg = self.cfg
        prepared = prepare_views(self.mesh, self.views, self.size, cfg)
        texels = init_texels(self.size, cfg)
        report = BakeReport(cfg.iters, cfg.lr, cfg.lambda_tv)
        self._record_step(
            'init', 0, None,
            f"Initialized a {self.size} x {self.size} atlas ({cfg.init}) for {len(prepared)} views"
        )

        adam = Adam(cfg.lr)
        bar = tqdm(range(cfg.iters), desc="texture", disable=not self.progress)
        for it in bar:
            loss, grad, _ = texture_loss_and_grad(prepared, texels, cfg.lambda_tv)
            report.losses.append(loss)
            adam.step([texels], [grad])
            np.clip(texels, 0.0, 1.0, out=texels)
            if cfg.log_every and (it % cfg.log_every == 0):
                logger.info("texture iter %d/%d loss %.6g", it, cfg.iters, loss)
            logger.debug("texture iter %d loss %.9g", it, loss)
            if cfg.record_every and it % cfg.record_every == 0:
                self._record_step('iterate', it, loss, f"Iteration {it}: loss {loss:.6g}")
        if cfg.iters > 0:
            report.losses.append(texture_loss_and_grad(prepared, texels, cfg.lambda_tv)[0])

        observed = np.zeros((self.size, self.size), dtype=bool)
        for pv in prepared:
            observed |= pv.observed()
        report.observed_fraction = float(observed.mean())
        if cfg.iters > 0:
            texels, report.filled_texels = fill_unobserved(texels, observed, self.chart_boxes, cfg.fill_sweeps)

        for i, pv in enumerate(prepared):
            value = psnr(pv.image(texels), pv.view.image, pv.loss_mask()) if pv.count else None
            report.view_psnr.append({
                "view": i,
                "tag": pv.view.camera.view_tag.value,
                "psnr": None if value is None or math.isinf(value) else float(value),
                "exact": value is not None and math.isinf(value),
            })

        atlas = TextureAtlas(self.size, texels, self.chart_boxes)
        final = report.final_loss
        self._record_step(
            'complete', cfg.iters, final,
            f"Baking complete\n\n- Final loss: {final if final is not None else 'n/a'}\n"
            f"- Observed texels: {report.observed_fraction:.1%}\n- Filled texels: {report.filled_texels}"
        )
        report.steps = self.steps
        logger.info("baked %d texels from %d views", self.size * self.size, len(prepared))
        return atlas, report


def bake(mesh, views, cfg=TexConfig(), layout=None, progress=False):
    """
    Recover a texture atlas from target views

    Args:
        mesh: TriMesh with packed UVs
        views: list of TextureView
        cfg: TexConfig
        layout: optional AtlasLayout (atlas size and chart boxes)

    Returns:
        (TextureAtlas, BakeReport)
    """
    return Baker(mesh, views, cfg, layout, progress).run()


def render_views(mesh, atlas, rig):
    """Color images and silhouettes of a textured mesh for every camera"""
    bundles = ordered_map(lambda cam: render(mesh, cam, atlas, normals=False), list(rig))
    return [TextureView(cam, b.color, b.silhouette) for cam, b in zip(rig, bundles)]
