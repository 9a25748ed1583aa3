"""
Pipeline configuration: a TOML file parsed into frozen dataclasses
"""

import dataclasses
import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path

from carve.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 0
    out_dir: str = "out"
    progress: bool = False


@dataclass(frozen=True)
class InputsSection:
    coarse_mesh: str = ""
    labels: str = ""
    cameras: str = ""
    normals: tuple = ()
    masks: tuple = ()
    colors: tuple = ()
    replace_views: tuple = ()


@dataclass(frozen=True)
class RigSection:
    k_views: int = 7
    radius: float = 2.7
    image_size: int = 512
    fov_y: float = 30.0


@dataclass(frozen=True)
class GridSection:
    resolution: int = 64
    bounds_min: tuple = (-0.6, -0.6, -0.6)
    bounds_max: tuple = (0.6, 0.6, 0.6)


@dataclass(frozen=True)
class FitSection:
    iters: int = 400
    lr: float = 0.01
    samples: int = 20000
    sigma: float = 0.0


@dataclass(frozen=True)
class SculptSection:
    iters: int = 100
    lr: float = 0.01
    views_per_iter: int = 1
    camera_sampling: str = "rig"
    laplacian_weight: float = 0.0
    smoothing: float = 2.0


@dataclass(frozen=True)
class UnwrapSection:
    gamma: int = 5
    atlas_size: int = 1024
    gutter: int = 2
    leg_top: float = 0.45
    arm_x: float = 0.15


@dataclass(frozen=True)
class TextureSection:
    iters: int = 500
    lr: float = 0.001
    lambda_tv: float = 1.0
    w_front_back: float = 1.0
    w_other: float = 0.2
    init: str = "mid-gray"


@dataclass(frozen=True)
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    inputs: InputsSection = field(default_factory=InputsSection)
    rig: RigSection = field(default_factory=RigSection)
    grid: GridSection = field(default_factory=GridSection)
    fit: FitSection = field(default_factory=FitSection)
    sculpt: SculptSection = field(default_factory=SculptSection)
    unwrap: UnwrapSection = field(default_factory=UnwrapSection)
    texture: TextureSection = field(default_factory=TextureSection)
    base_dir: str = "."

    def resolve(self, path):
        """Input paths are relative to the config file's directory"""
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def resolve_list(self, entry):
        """A list of paths, or one glob pattern expanded in sorted order"""
        if isinstance(entry, str):
            pattern = Path(entry)
            base = Path(self.base_dir) if not pattern.is_absolute() else Path(pattern.anchor)
            rel = str(pattern) if not pattern.is_absolute() else str(pattern.relative_to(pattern.anchor))
            return sorted(base.glob(rel))
        return [self.resolve(p) for p in entry]

    def to_dict(self):
        data = dataclasses.asdict(self)
        data.pop("base_dir")
        return data

    def with_overrides(self, seed=None, threads=None, out_dir=None):
        run = self.run
        if seed is not None:
            run = dataclasses.replace(run, seed=int(seed))
        if threads is not None:
            run = dataclasses.replace(run, threads=int(threads))
        if out_dir is not None:
            run = dataclasses.replace(run, out_dir=str(out_dir))
        return dataclasses.replace(self, run=run)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(PipelineConfig) if f.name != "base_dir"}


def _coerce(section, name, value, default):
    where = f"[{section}] {name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str) and section == "inputs":
            return value
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return tuple(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    return value


def _build_section(name, table):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    section = _SECTIONS[name]()
    known = {f.name: getattr(section, f.name) for f in dataclasses.fields(section)}
    values = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in [{name}]")
        values[key] = _coerce(name, key, value, known[key])
    return dataclasses.replace(section, **values)


def check_config(cfg):
    """Value checks that do not need the input files"""
    if cfg.grid.resolution < 2:
        raise ConfigError(f"[grid] resolution must be >= 2, got {cfg.grid.resolution}")
    if len(cfg.grid.bounds_min) != 3 or len(cfg.grid.bounds_max) != 3:
        raise ConfigError("[grid] bounds must have 3 components")
    if any(lo >= hi for lo, hi in zip(cfg.grid.bounds_min, cfg.grid.bounds_max)):
        raise ConfigError("[grid] bounds_min must be below bounds_max")
    if cfg.sculpt.camera_sampling != "rig":
        raise ConfigError(
            "[sculpt] camera_sampling must be 'rig' in the pipeline; uniform sampling needs an analytic target provider"
        )
    if cfg.unwrap.gamma < 1:
        raise ConfigError("[unwrap] gamma must be >= 1")
    if cfg.run.threads < 0:
        raise ConfigError("[run] threads must be >= 0")
    for entry in cfg.inputs.replace_views:
        parse_replace_view(entry)
    return cfg


def parse_replace_view(entry):
    """'INDEX=PATH' to (index, path)"""
    index, sep, path = str(entry).partition("=")
    if not sep or not path:
        raise ConfigError(f"view replacement must look like INDEX=PATH, got '{entry}'")
    try:
        return int(index), path
    except ValueError:
        raise ConfigError(f"view replacement index must be an integer, got '{index}'") from None


def config_from_dict(data, base_dir="."):
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {name: _build_section(name, data.get(name, {})) for name in _SECTIONS}
    return check_config(PipelineConfig(**sections, base_dir=str(base_dir)))


def load_config(path):
    """
    Parse a pipeline TOML file

    Args:
        path: config file; relative input paths resolve against its directory

    Returns:
        PipelineConfig
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = config_from_dict(data, path.parent)
    logger.debug("loaded config %s", path)
    return cfg


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(cfg, path):
    """Write a config as TOML (used for generated bundles)"""
    lines = []
    for name, section in cfg.to_dict().items():
        lines.append(f"[{name}]")
        for key, value in section.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
