"""
carve command line: one subcommand per stage plus the full pipeline
"""

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

from carve import __version__
from carve.core_io.io_core import ImageKind, ImagePlane
from carve.core_io.io_formats import (
    load_camera_rig,
    load_image,
    load_mesh,
    load_skeleton,
    save_camera_rig,
    save_image,
    save_mesh,
)
from carve.core_io.primitives import example_skeleton
from carve.errors import CarveError, ConfigError, StageError
from carve.log import setup_logging
from carve.parallel import set_threads

logger = logging.getLogger("carve.cli")


def _expand(pattern):
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise ConfigError(f"no files match '{pattern}'")
    return paths


def _write_json(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)


def _stage(name, fn):
    try:
        return fn()
    except StageError:
        raise
    except ConfigError:
        raise
    except (CarveError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_instantiate(args):
    from carve.scene.scene_core import PoseSheetBuilder, RigSpec

    def run():
        skeleton = load_skeleton(args.skeleton) if args.skeleton else example_skeleton()
        spec = RigSpec(args.k, args.radius, image_size=args.size, fov_y=args.fov, mirror_to_360=args.mirror_360)
        return PoseSheetBuilder(skeleton, spec).run()

    rig, poses, sheet = _stage("instantiate", run)
    out = Path(args.out_dir)
    save_camera_rig(rig, out / "camera_rig.json")
    for j, pose in enumerate(poses):
        save_image(pose, out / f"pose_{j:02d}.png")
    save_image(sheet, out / "pose_sheet.png")
    logger.info("wrote %d views to %s", len(poses), out)


def cmd_sculpt(args):
    import numpy as np

    from carve.pipeline.pipeline_core import transfer_labels
    from carve.sculpt.sculpt_core import SculptConfig, sculpt, targets_from_rig
    from carve.sdf_fit.fit_core import fit_sdf, sample_near_surface
    from carve.tetra.tet_core import DEFAULT_BOUNDS, build_grid, save_grid

    def inputs():
        return (
            load_mesh(args.coarse),
            load_camera_rig(args.views),
            [load_image(p, ImageKind.NORMAL) for p in _expand(args.normals)],
            [load_image(p, ImageKind.SILHOUETTE) for p in _expand(args.masks)],
        )

    coarse, rig, normals, masks = _stage("sculpt", inputs)

    def fit():
        grid = build_grid(args.resolution, DEFAULT_BOUNDS)
        samples = sample_near_surface(coarse, args.samples, seed=args.seed, grid=grid)
        report = fit_sdf(grid, samples, args.fit_iters, args.fit_lr, progress=args.progress)
        return grid, report

    grid, fit_report = _stage("fit", fit)
    cfg = SculptConfig(iters=args.iters, lr=args.lr, views_per_iter=args.views_per_iter,
                       seed=args.seed, laplacian_weight=args.laplacian_weight, smoothing=args.smoothing)
    refined, report = _stage(
        "sculpt", lambda: sculpt(grid, targets_from_rig(rig, normals, masks), cfg, progress=args.progress)
    )
    save_mesh(transfer_labels(coarse, refined), args.out)
    if args.checkpoint:
        save_grid(grid, args.checkpoint)
    if args.report:
        fit_entry = fit_report.to_dict()
        fit_entry["initial_rmse"] = float(np.sqrt(fit_report.initial_loss / args.samples))
        _write_json({"tool_version": __version__, "fit": fit_entry, "sculpt": report.to_dict()}, args.report)


def cmd_unwrap(args):
    from carve.core_io.io_formats import load_labels
    from carve.unwrap.unwrap_core import save_layout, unwrap

    def run():
        mesh = load_mesh(args.mesh)
        labels = load_labels(args.labels) if args.labels else None
        return unwrap(mesh, args.gamma, labels, args.atlas_size, args.gutter, args.leg_top, args.arm_x)

    merged, layout = _stage("unwrap", run)
    save_mesh(merged, args.out)
    save_layout(layout, args.layout)


def cmd_texture(args):
    from carve.pipeline.config import parse_replace_view
    from carve.texture.texture_core import TexConfig, bake, make_views, replace_view
    from carve.unwrap.unwrap_core import load_layout

    def run():
        mesh = load_mesh(args.mesh)
        rig = load_camera_rig(args.views)
        images = [load_image(p, ImageKind.COLOR) for p in _expand(args.images)]
        masks = [load_image(p, ImageKind.SILHOUETTE) for p in _expand(args.masks)]
        layout = load_layout(args.layout) if args.layout else None
        views = make_views(rig, images, masks)
        for entry in args.replace_view:
            index, path = parse_replace_view(entry)
            views = replace_view(views, index, load_image(path, ImageKind.COLOR))
        cfg = TexConfig(iters=args.iters, lr=args.lr, lambda_tv=args.lambda_tv, init=args.init,
                        seed=args.seed, atlas_size=args.atlas_size)
        return bake(mesh, views, cfg, layout, progress=args.progress)

    atlas, report = _stage("texture", run)
    save_image(ImagePlane(atlas.texels, ImageKind.COLOR), args.out)
    if args.report:
        _write_json(report.to_dict(), args.report)


def cmd_render(args):
    from carve.raster.raster_core import TextureAtlas, render

    def run():
        mesh = load_mesh(args.mesh)
        rig = load_camera_rig(args.camera)
        if not 0 <= args.index < len(rig):
            raise ConfigError(f"camera index {args.index} out of range for {len(rig)} cameras")
        atlas = None
        if args.atlas:
            tex = load_image(args.atlas, ImageKind.COLOR)
            if tex.width != tex.height:
                raise ConfigError(f"atlas must be square, got {tex.width}x{tex.height}")
            atlas = TextureAtlas(tex.width, tex.data)
        return render(mesh, rig[args.index], atlas)

    bundle = _stage("render", run)
    if args.out:
        save_image(bundle.color if bundle.color is not None else bundle.normal, args.out)
    if args.normals:
        save_image(bundle.normal, args.normals)
    if args.mask:
        save_image(bundle.silhouette, args.mask)


def cmd_pipeline(args):
    from carve.pipeline.config import load_config
    from carve.pipeline.pipeline_core import run_pipeline

    cfg = load_config(args.config).with_overrides(seed=args.seed, threads=args.threads)
    report = run_pipeline(cfg, args.out_dir)
    if not report["acceptance"]["all_passed"]:
        logger.warning("some acceptance checks did not pass; see report.json")


def cmd_bundle(args):
    from carve.pipeline.gt_bundle import BundleSpec, make_gt_bundle

    spec = BundleSpec(resolution=args.resolution, image_size=args.size, atlas_size=args.atlas_size)
    path = _stage("instantiate", lambda: make_gt_bundle(args.out_dir, spec))
    logger.info("bundle config: %s", path)


# ============================================================================
# PARSER
# ============================================================================

def build_parser():
    parser = argparse.ArgumentParser(prog="carve", description="Mesh sculpting and explicit texturing toolkit")
    parser.add_argument("--version", action="version", version=f"carve {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (0 = all cores)")
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    parser.add_argument("--progress", action="store_true", help="show progress bars")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("instantiate", help="build a camera rig and pose images")
    p.add_argument("--skeleton", help="skeleton JSON (default: built-in T-pose)")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--radius", type=float, default=2.7)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--fov", type=float, default=30.0)
    p.add_argument("--mirror-360", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_instantiate)

    p = sub.add_parser("sculpt", help="fit the grid to a coarse mesh and sculpt it from normal maps")
    p.add_argument("--coarse", required=True)
    p.add_argument("--views", required=True, help="camera rig JSON")
    p.add_argument("--normals", required=True, help="glob of normal maps, one per camera")
    p.add_argument("--masks", required=True, help="glob of silhouettes, one per camera")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--fit-iters", type=int, default=400)
    p.add_argument("--fit-lr", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--views-per-iter", type=int, default=1)
    p.add_argument("--laplacian-weight", type=float, default=0.0)
    p.add_argument("--smoothing", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="write the sculpted grid here")
    p.add_argument("--report")
    p.set_defaults(func=cmd_sculpt)

    p = sub.add_parser("unwrap", help="partition, unwrap and pack an atlas")
    p.add_argument("--mesh", required=True)
    p.add_argument("--labels")
    p.add_argument("--gamma", type=int, default=5)
    p.add_argument("--atlas-size", type=int, default=1024)
    p.add_argument("--gutter", type=int, default=2)
    p.add_argument("--leg-top", type=float, default=0.45)
    p.add_argument("--arm-x", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.add_argument("--layout", required=True)
    p.set_defaults(func=cmd_unwrap)

    p = sub.add_parser("texture", help="bake a texture atlas from color views")
    p.add_argument("--mesh", required=True)
    p.add_argument("--views", required=True, help="camera rig JSON")
    p.add_argument("--images", required=True, help="glob of color images, one per camera")
    p.add_argument("--masks", required=True, help="glob of silhouettes, one per camera")
    p.add_argument("--layout", help="layout JSON from unwrap")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lambda-tv", type=float, default=1.0)
    p.add_argument("--atlas-size", type=int, default=1024)
    p.add_argument("--init", choices=("zero", "mid-gray", "uniform"), default="mid-gray")
    p.add_argument("--replace-view", action="append", default=[], metavar="INDEX=PATH",
                   help="substitute one view's image before baking")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_texture)

    p = sub.add_parser("render", help="render one view of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--camera", required=True, help="camera rig JSON")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--atlas")
    p.add_argument("--out")
    p.add_argument("--normals")
    p.add_argument("--mask")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", help="run every stage from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("bundle", help="write the synthetic ground-truth bundle")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resolution", type=int, default=48)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--atlas-size", type=int, default=256)
    p.set_defaults(func=cmd_bundle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(1 if args.verbose else -1 if args.quiet else 0)
    if args.seed is None and args.command != "pipeline":
        args.seed = 0
    try:
        if args.threads is not None:
            set_threads(args.threads)
        args.func(args)
    except StageError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    except CarveError as exc:
        logger.error("%s", exc)
        return 1
    except ValueError as exc:
        logger.error("%s", exc)
        return 2
    except Exception:
        logger.exception("unexpected error")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
