"""
Pipeline Core Logic
instantiate -> fit -> sculpt -> unwrap -> texture, with artifacts on disk and
a versioned report (config echo, content hashes, traces, timings, acceptance).
"""

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from carve import __version__
from carve.core_io.io_core import ImageKind, ImagePlane
from carve.core_io.io_formats import load_camera_rig, load_image, load_mesh, save_image, save_mesh
from carve.errors import CarveError, ConfigError, StageError
from carve.parallel import set_threads
from carve.pipeline.config import load_config, parse_replace_view
from carve.scene.scene_core import RigSpec, instantiate_rig
from carve.sculpt.sculpt_core import SculptConfig, sculpt, targets_from_rig
from carve.sdf_fit.fit_core import fit_sdf, sample_near_surface
from carve.tetra.tet_core import build_grid, points_in_bounds
from carve.texture.texture_core import TexConfig, bake, make_views, replace_view
from carve.unwrap.unwrap_core import save_layout, unwrap

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

FIT_RMSE_REDUCTION = 0.9
PSNR_FRONT_BACK = 30.0
PSNR_OTHER = 26.0


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_images(paths, kind, what):
    if not paths:
        raise ConfigError(f"no {what} configured (inputs.{what})")
    return [load_image(p, kind) for p in paths]


def transfer_labels(source, target):
    """Part labels of the nearest source vertex"""
    if source.part_labels is None:
        return target
    _, idx = cKDTree(source.vertices).query(target.vertices)
    return target.replace(part_labels=source.part_labels[idx])


def acceptance_checks(report):
    """Threshold checks recorded in the report; missing stages count as not passed"""
    out = {}
    fit = report.get("fit")
    if fit:
        rmse0, rmse1 = fit["initial_rmse"], fit["rmse"]
        reduction = 1.0 - rmse1 / rmse0 if rmse0 > 0 else 1.0
        out["fit_rmse_reduction"] = {"value": reduction, "threshold": FIT_RMSE_REDUCTION,
                                     "passed": bool(reduction >= FIT_RMSE_REDUCTION)}
    sculpt_report = report.get("sculpt")
    if sculpt_report and sculpt_report["losses"]:
        head, tail = sculpt_report["first10_mean"], sculpt_report["last10_mean"]
        out["sculpt_loss_decrease"] = {"first10": head, "last10": tail, "passed": bool(tail <= head)}
    texture_report = report.get("texture")
    if texture_report:
        views = []
        for v in texture_report["view_psnr"]:
            threshold = PSNR_FRONT_BACK if v["tag"] in ("front", "back") else PSNR_OTHER
            value = math.inf if v["exact"] else v["psnr"]
            views.append(value is not None and value >= threshold)
        out["texture_psnr"] = {"front_back": PSNR_FRONT_BACK, "other": PSNR_OTHER, "passed": bool(views and all(views))}
    out["all_passed"] = bool(out) and all(v["passed"] for v in out.values())
    return out


@dataclass
class PipelineRun:
    """Mutable state threaded through the stages"""

    cfg: object
    out_dir: Path
    report: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def stage(self, name, fn):
        start = time.perf_counter()
        logger.info("stage %s", name)
        try:
            result = fn()
        except StageError:
            raise
        except (CarveError, OSError, ValueError) as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - start
        return result

    def output(self, name):
        path = self.out_dir / name
        self.outputs[name] = path
        return path


def _instantiate(run):
    cfg = run.cfg
    if not cfg.inputs.coarse_mesh:
        raise ConfigError("no coarse mesh configured (inputs.coarse_mesh)")
    labels = cfg.resolve(cfg.inputs.labels) if cfg.inputs.labels else None
    mesh = load_mesh(cfg.resolve(cfg.inputs.coarse_mesh), labels)
    if cfg.inputs.cameras:
        rig = load_camera_rig(cfg.resolve(cfg.inputs.cameras))
    else:
        r = cfg.rig
        rig = instantiate_rig(RigSpec(r.k_views, r.radius, image_size=r.image_size, fov_y=r.fov_y))
    run.report["instantiate"] = {"n_vertices": mesh.n_vertices, "n_faces": mesh.n_faces, "n_views": len(rig)}
    return mesh, rig


def _fit(run, mesh):
    cfg = run.cfg
    bounds = (tuple(cfg.grid.bounds_min), tuple(cfg.grid.bounds_max))
    grid = build_grid(cfg.grid.resolution, bounds)
    if not points_in_bounds(grid, mesh.vertices).all():
        raise ConfigError("the coarse mesh leaves the grid bounds")
    samples = sample_near_surface(
        mesh, cfg.fit.samples, sigma=cfg.fit.sigma or None, seed=cfg.run.seed, grid=grid,
    )
    report = fit_sdf(grid, samples, cfg.fit.iters, cfg.fit.lr, progress=cfg.run.progress)
    entry = report.to_dict()
    entry["initial_rmse"] = float(np.sqrt(report.initial_loss / len(samples)))
    run.report["fit"] = entry
    return grid


def _sculpt(run, grid, rig, coarse):
    cfg = run.cfg
    normals = _load_images(cfg.resolve_list(cfg.inputs.normals), ImageKind.NORMAL, "normals")
    masks = _load_images(cfg.resolve_list(cfg.inputs.masks), ImageKind.SILHOUETTE, "masks")
    targets = targets_from_rig(rig, normals, masks)
    s = cfg.sculpt
    scfg = SculptConfig(
        iters=s.iters, lr=s.lr, views_per_iter=s.views_per_iter, camera_sampling=s.camera_sampling,
        seed=cfg.run.seed, laplacian_weight=s.laplacian_weight, smoothing=s.smoothing,
    )
    refined, report = sculpt(grid, targets, scfg, progress=cfg.run.progress)
    refined = transfer_labels(coarse, refined)
    save_mesh(refined, run.output("refined.obj"))
    run.report["sculpt"] = report.to_dict()
    return refined, masks


def _unwrap(run, refined):
    u = run.cfg.unwrap
    merged, layout = unwrap(refined, u.gamma, None, u.atlas_size, u.gutter, u.leg_top, u.arm_x)
    save_mesh(merged, run.output("unwrapped.obj"))
    save_layout(layout, run.output("layout.json"))
    run.report["unwrap"] = {"gamma": u.gamma, "atlas_size": layout.size, "n_vertices": merged.n_vertices,
                            "chart_boxes": [list(b) for b in layout.chart_boxes]}
    return merged, layout


def _texture(run, merged, layout, rig, masks):
    cfg = run.cfg
    colors = _load_images(cfg.resolve_list(cfg.inputs.colors), ImageKind.COLOR, "colors")
    views = make_views(rig, colors, masks)
    for entry in cfg.inputs.replace_views:
        index, path = parse_replace_view(entry)
        views = replace_view(views, index, load_image(cfg.resolve(path), ImageKind.COLOR))
    t = cfg.texture
    tcfg = TexConfig(iters=t.iters, lr=t.lr, lambda_tv=t.lambda_tv, w_front_back=t.w_front_back,
                     w_other=t.w_other, init=t.init, seed=cfg.run.seed, atlas_size=layout.size)
    atlas, report = bake(merged, views, tcfg, layout, progress=cfg.run.progress)
    save_image(ImagePlane(atlas.texels, ImageKind.COLOR), run.output("tex.png"))
    run.report["texture"] = report.to_dict()


def _input_files(cfg):
    paths = []
    for name in ("coarse_mesh", "labels", "cameras"):
        value = getattr(cfg.inputs, name)
        if value:
            paths.append(cfg.resolve(value))
    for name in ("normals", "masks", "colors"):
        paths.extend(cfg.resolve_list(getattr(cfg.inputs, name)))
    for entry in cfg.inputs.replace_views:
        paths.append(cfg.resolve(parse_replace_view(entry)[1]))
    return paths


def _hashes(paths, root=None):
    out = {}
    for p in paths:
        p = Path(p)
        if p.exists():
            key = str(p.relative_to(root)) if root is not None and p.is_relative_to(root) else str(p)
            out[key] = file_sha256(p)
    return out


def _json_safe(value):
    """Non-finite floats become null; numpy scalars become Python numbers"""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_report(run, status, failed_stage=None, error=None):
    cfg = run.cfg
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "status": status,
        "failed_stage": failed_stage,
        "error": error,
        "partial": status != "ok",
        "config": cfg.to_dict(),
        "inputs": _hashes(_input_files(cfg), Path(cfg.base_dir)),
        "outputs": _hashes(run.outputs.values(), run.out_dir),
        "timings": run.timings,
    }
    report.update(run.report)
    report["acceptance"] = acceptance_checks(run.report)
    path = run.out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_json_safe(report), f, indent=2, sort_keys=True, allow_nan=False)
    return report


def run_pipeline(config, out_dir=None):
    """
    Run every stage and write artifacts to the output directory

    Args:
        config: PipelineConfig or path to a TOML file
        out_dir: overrides [run] out_dir

    Returns:
        the report dict (also written to report.json)
    """
    cfg = load_config(config) if isinstance(config, (str, Path)) else config
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_threads(cfg.run.threads)
    run = PipelineRun(cfg, out)
    logger.info("pipeline started, writing to %s", out)

    try:
        coarse, rig = run.stage("instantiate", lambda: _instantiate(run))
        grid = run.stage("fit", lambda: _fit(run, coarse))
        refined, masks = run.stage("sculpt", lambda: _sculpt(run, grid, rig, coarse))
        merged, layout = run.stage("unwrap", lambda: _unwrap(run, refined))
        run.stage("texture", lambda: _texture(run, merged, layout, rig, masks))
    except StageError as exc:
        logger.error("%s", exc)
        write_report(run, "failed", exc.stage, str(exc.cause))
        raise

    report = write_report(run, "ok")
    logger.info("pipeline finished in %.1f s", sum(run.timings.values()))
    return report
