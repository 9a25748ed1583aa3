import json

import numpy as np
import pytest

from carve import __version__
from carve.core_io.io_formats import load_camera_rig, load_image, save_camera_rig, save_mesh
from carve.core_io.io_core import ImageKind
from carve.core_io.primitives import icosphere
from carve.errors import ConfigError, StageError
from carve.pipeline.cli import main
from carve.pipeline.config import (
    PipelineConfig,
    config_from_dict,
    dump_config,
    load_config,
    parse_replace_view,
)
from carve.pipeline.pipeline_core import acceptance_checks, run_pipeline, transfer_labels


# ============================================================================
# CONFIGURATION
# ============================================================================

def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.to_dict() == PipelineConfig().to_dict()
    assert cfg.resolve("a.obj") == tmp_path / "a.obj"


@pytest.mark.parametrize("text, fragment", [
    ("[fit]\nitres = 3\n", "unknown key 'itres' in [fit]"),
    ("[sculptt]\n", "unknown section"),
    ("[fit]\niters = 1.5\n", "must be an integer"),
    ("[run]\nprogress = 1\n", "must be a boolean"),
    ("[grid]\nresolution = 1\n", "resolution"),
    ("[sculpt]\ncamera_sampling = \"uniform\"\n", "camera_sampling"),
    ("[inputs]\nreplace_views = [\"front.png\"]\n", "INDEX=PATH"),
    ("[fit\n", "config.toml"),
])
def test_config_errors(tmp_path, text, fragment):
    path = tmp_path / "config.toml"
    path.write_text(text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert fragment in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.toml")


def test_config_dump_and_reload(tmp_path):
    cfg = config_from_dict({
        "fit": {"iters": 7, "lr": 1},
        "inputs": {"normals": ["n/a.pfm", "n/b.pfm"], "replace_views": ["0=front.png"]},
        "run": {"progress": True},
    })
    assert cfg.fit.lr == 1.0 and isinstance(cfg.fit.lr, float)
    path = tmp_path / "config.toml"
    dump_config(cfg, path)
    assert load_config(path).to_dict() == cfg.to_dict()


def test_input_globs_expand_in_sorted_order(tmp_path):
    (tmp_path / "n").mkdir()
    for name in ("n_02.pfm", "n_00.pfm", "n_01.pfm"):
        (tmp_path / "n" / name).write_bytes(b"")
    cfg = config_from_dict({"inputs": {"normals": "n/*.pfm"}}, base_dir=tmp_path)
    assert [p.name for p in cfg.resolve_list(cfg.inputs.normals)] == ["n_00.pfm", "n_01.pfm", "n_02.pfm"]


def test_parse_replace_view():
    assert parse_replace_view("3=edits/front.png") == (3, "edits/front.png")
    for bad in ("3", "x=front.png", "3="):
        with pytest.raises(ConfigError):
            parse_replace_view(bad)


def test_overrides_only_touch_the_run_section():
    cfg = PipelineConfig().with_overrides(seed=5, threads=2)
    assert (cfg.run.seed, cfg.run.threads) == (5, 2)
    assert cfg.fit == PipelineConfig().fit


# ============================================================================
# REPORT
# ============================================================================

def _report(side_psnr=27.0, exact=False, last10=0.5):
    return {
        "fit": {"initial_rmse": 1.0, "rmse": 0.05},
        "sculpt": {"losses": [1.0, 0.5], "first10_mean": 1.0, "last10_mean": last10},
        "texture": {"view_psnr": [
            {"view": 0, "tag": "front", "psnr": None, "exact": True},
            {"view": 1, "tag": "other", "psnr": side_psnr, "exact": exact},
        ]},
    }


def test_acceptance_checks_pass():
    checks = acceptance_checks(_report())
    assert checks["fit_rmse_reduction"]["value"] == pytest.approx(0.95)
    assert checks["all_passed"]


@pytest.mark.parametrize("kwargs, failing", [
    (dict(side_psnr=25.0), "texture_psnr"),
    (dict(last10=1.5), "sculpt_loss_decrease"),
])
def test_acceptance_checks_fail(kwargs, failing):
    checks = acceptance_checks(_report(**kwargs))
    assert not checks[failing]["passed"]
    assert not checks["all_passed"]


def test_no_stages_means_no_pass():
    assert acceptance_checks({}) == {"all_passed": False}


def test_labels_follow_the_nearest_vertex():
    source = icosphere(2, 0.3)
    source = source.replace(part_labels=(source.vertices[:, 0] > 0).astype(np.int64))
    target = icosphere(3, 0.3)
    out = transfer_labels(source, target)
    far = np.abs(target.vertices[:, 0]) > 0.1
    np.testing.assert_array_equal(out.part_labels[far], (target.vertices[far, 0] > 0).astype(np.int64))
    assert transfer_labels(icosphere(1), target) is target


def test_failed_stage_writes_a_partial_report(tmp_path):
    cfg = config_from_dict({"inputs": {"coarse_mesh": "missing.obj"}}, base_dir=tmp_path)
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "instantiate"
    assert info.value.exit_code == 10
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["status"] == "failed"
    assert report["partial"] is True
    assert report["failed_stage"] == "instantiate"
    assert report["acceptance"] == {"all_passed": False}


# ============================================================================
# COMMAND LINE
# ============================================================================

def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "nope.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[fit]\nitres = 3\n")
    assert main(["pipeline", "--config", str(bad)]) == 2
    missing = tmp_path / "missing.toml"
    missing.write_text('[inputs]\ncoarse_mesh = "missing.obj"\n')
    assert main(["pipeline", "--config", str(missing)]) == 10
    assert main(["--threads", "-1", "instantiate", "--out-dir", str(tmp_path / "x")]) == 2


def test_cli_instantiate(tmp_path):
    out = tmp_path / "rig"
    assert main(["-q", "instantiate", "--k", "2", "--size", "64", "--out-dir", str(out)]) == 0
    assert len(load_camera_rig(out / "camera_rig.json")) == 2
    assert (out / "pose_00.png").exists() and (out / "pose_01.png").exists()
    assert load_image(out / "pose_sheet.png", ImageKind.POSE).width == 128


def test_cli_render(tmp_path, small_rig):
    save_mesh(icosphere(2, 0.3), tmp_path / "s.obj")
    save_camera_rig(small_rig, tmp_path / "rig.json")
    args = ["-q", "render", "--mesh", str(tmp_path / "s.obj"), "--camera", str(tmp_path / "rig.json")]
    assert main(args + ["--index", "1", "--normals", str(tmp_path / "n.pfm"),
                        "--mask", str(tmp_path / "m.png")]) == 0
    mask = load_image(tmp_path / "m.png", ImageKind.SILHOUETTE)
    assert mask.data.any() and not mask.data[0, 0].any()
    assert load_image(tmp_path / "n.pfm", ImageKind.NORMAL).width == 48
    assert main(args + ["--index", "9"]) == 2
    assert main(["-q", "render", "--mesh", str(tmp_path / "nope.obj"),
                 "--camera", str(tmp_path / "rig.json")]) == 15


def test_cli_unwrap(tmp_path, humanoid):
    save_mesh(humanoid, tmp_path / "h.obj")
    assert main(["-q", "unwrap", "--mesh", str(tmp_path / "h.obj"), "--atlas-size", "64",
                 "--out", str(tmp_path / "u.obj"), "--layout", str(tmp_path / "layout.json")]) == 0
    layout = json.loads((tmp_path / "layout.json").read_text())
    assert layout["atlas_size"] == 64
    assert sorted(c["label"] for c in layout["charts"]) == [0, 1, 2, 3, 4]


# ============================================================================
# END TO END
# ============================================================================

def test_bundle_is_a_loadable_pipeline_input(tiny_bundle):
    cfg = load_config(tiny_bundle)
    root = tiny_bundle.parent
    assert cfg.fit.iters == 200 and cfg.sculpt.iters == 4
    for name in ("coarse.obj", "coarse.labels.json", "rig.json", "gt/gt_mesh.obj", "gt/gt_tex.png"):
        assert (root / name).exists()
    assert len(load_camera_rig(root / "rig.json")) == 3
    for entry in (cfg.inputs.normals, cfg.inputs.masks, cfg.inputs.colors):
        paths = cfg.resolve_list(entry)
        assert len(paths) == 3 and all(p.exists() for p in paths)
    assert load_image(cfg.resolve(cfg.inputs.normals[0]), ImageKind.NORMAL).width == 48


@pytest.mark.slow
def test_pipeline_on_the_tiny_bundle(tiny_bundle, tmp_path):
    report = run_pipeline(tiny_bundle, tmp_path / "run")
    assert report["status"] == "ok"
    assert report["tool_version"] == __version__
    for name in ("refined.obj", "unwrapped.obj", "layout.json", "tex.png"):
        assert (tmp_path / "run" / name).exists()
        assert name in report["outputs"]
    assert "coarse.obj" in report["inputs"]
    assert len(report["sculpt"]["losses"]) == 4
    assert len(report["texture"]["view_psnr"]) == 3
    assert set(report["acceptance"]) >= {"fit_rmse_reduction", "sculpt_loss_decrease", "texture_psnr", "all_passed"}
    on_disk = json.loads((tmp_path / "run" / "report.json").read_text())
    assert on_disk["status"] == "ok"


@pytest.mark.slow
def test_pipeline_outputs_do_not_depend_on_thread_count(tiny_bundle, tmp_path):
    cfg = load_config(tiny_bundle)
    one = run_pipeline(cfg.with_overrides(threads=1), tmp_path / "one")
    many = run_pipeline(cfg.with_overrides(threads=4), tmp_path / "many")
    assert one["outputs"] == many["outputs"]
    assert one["sculpt"]["losses"] == many["sculpt"]["losses"]


@pytest.mark.slow
def test_cli_pipeline_run(tiny_bundle, tmp_path):
    assert main(["-q", "--seed", "0", "pipeline", "--config", str(tiny_bundle),
                 "--out-dir", str(tmp_path / "cli")]) == 0
    assert (tmp_path / "cli" / "report.json").exists()
