"""
Synthetic ground-truth bundle: a textured capsule humanoid, its rig renderings
and a coarse starting mesh, written as pipeline inputs plus a config.toml
"""

import dataclasses
import logging
from pathlib import Path

import numpy as np

from carve.core_io.io_core import ImageKind, ImagePlane
from carve.core_io.io_formats import save_camera_rig, save_image, save_mesh
from carve.core_io.primitives import humanoid_labels, humanoid_sdf
from carve.parallel import ordered_map
from carve.pipeline.config import (
    FitSection,
    GridSection,
    InputsSection,
    PipelineConfig,
    RigSection,
    RunSection,
    SculptSection,
    TextureSection,
    UnwrapSection,
    dump_config,
)
from carve.raster.raster_core import TextureAtlas, render
from carve.scene.scene_core import RigSpec, instantiate_rig
from carve.tetra.tet_core import build_grid, extract_surface
from carve.unwrap.unwrap_core import unwrap

logger = logging.getLogger(__name__)

PART_COLORS = np.array([
    [0.80, 0.55, 0.40],
    [0.25, 0.45, 0.75],
    [0.30, 0.65, 0.35],
    [0.70, 0.30, 0.30],
    [0.60, 0.50, 0.75],
])


@dataclasses.dataclass(frozen=True)
class BundleSpec:
    resolution: int = 48
    coarse_resolution: int = 32
    dilation: float = 0.02
    image_size: int = 128
    atlas_size: int = 256
    k_views: int = 7
    radius: float = 2.7
    fov_y: float = 30.0


def humanoid_mesh(resolution, dilation=0.0):
    """MT surface of the capsule humanoid, grown by dilation, with part labels"""
    grid = build_grid(resolution)
    grid.sdf[:] = humanoid_sdf(grid.verts) - dilation
    mesh = extract_surface(grid).mesh
    return mesh.replace(part_labels=humanoid_labels(mesh.vertices))


def part_texture(layout):
    """Smooth per-part color patterns inside each chart; gray elsewhere"""
    size = layout.size
    texels = np.full((size, size, 3), 0.5)
    for (x0, y0, w, h), label in zip(layout.chart_boxes, layout.labels):
        ys, xs = np.mgrid[0:h, 0:w]
        u = (xs + 0.5) / w
        v = (ys + 0.5) / h
        shade = 0.8 + 0.15 * np.sin(2.0 * np.pi * v) * np.cos(2.0 * np.pi * u)
        texels[y0:y0 + h, x0:x0 + w] = PART_COLORS[label % len(PART_COLORS)] * shade[:, :, None]
    return np.clip(texels, 0.0, 1.0)


def make_gt_bundle(out_dir, spec=BundleSpec(), config_overrides=None):
    """
    Write a complete pipeline input bundle

    Layout of out_dir:
        coarse.obj (+ coarse.labels.json), rig.json,
        normals/n_XX.pfm, colors/c_XX.png, masks/s_XX.png,
        gt/gt_mesh.obj, gt/gt_tex.png, config.toml

    Args:
        out_dir: target directory
        spec: BundleSpec
        config_overrides: optional {section: {key: value}} applied to config.toml

    Returns:
        path of config.toml
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    gt = humanoid_mesh(spec.resolution)
    textured, layout = unwrap(gt, gamma=5, atlas_size=spec.atlas_size)
    atlas = TextureAtlas(layout.size, part_texture(layout), layout.chart_boxes)
    coarse = humanoid_mesh(spec.coarse_resolution, spec.dilation)

    rig = instantiate_rig(RigSpec(spec.k_views, spec.radius, image_size=spec.image_size, fov_y=spec.fov_y))
    bundles = ordered_map(lambda cam: render(textured, cam, atlas), list(rig))

    save_mesh(coarse, out / "coarse.obj")
    save_camera_rig(rig, out / "rig.json")
    save_mesh(textured, out / "gt" / "gt_mesh.obj")
    save_image(ImagePlane(atlas.texels, ImageKind.COLOR), out / "gt" / "gt_tex.png")
    normals, colors, masks = [], [], []
    for i, b in enumerate(bundles):
        normals.append(f"normals/n_{i:02d}.pfm")
        colors.append(f"colors/c_{i:02d}.png")
        masks.append(f"masks/s_{i:02d}.png")
        save_image(b.normal, out / normals[-1])
        save_image(b.color, out / colors[-1])
        save_image(b.silhouette, out / masks[-1])

    cfg = PipelineConfig(
        run=RunSection(seed=0, out_dir="out"),
        inputs=InputsSection(
            coarse_mesh="coarse.obj", labels="coarse.labels.json", cameras="rig.json",
            normals=tuple(normals), masks=tuple(masks), colors=tuple(colors),
        ),
        rig=RigSection(spec.k_views, spec.radius, spec.image_size, spec.fov_y),
        grid=GridSection(resolution=spec.resolution),
        fit=FitSection(iters=200, samples=8000),
        sculpt=SculptSection(iters=30),
        unwrap=UnwrapSection(atlas_size=spec.atlas_size),
        texture=TextureSection(iters=300, lr=0.01),
    )
    for section, values in (config_overrides or {}).items():
        cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **values)})
    path = out / "config.toml"
    dump_config(cfg, path)
    logger.info("wrote ground-truth bundle to %s (%d views)", out, len(rig))
    return path
