"""Pipeline configuration: `key = value` text files and defaults.

PipelineConfig is the single source of truth: each dataclass field carries
its parse kind, bounds, and help text in its metadata, and the text parser,
validator, and CLI flag set are all derived from it. Unknown keys are
rejected by name rather than ignored.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

_TRUE = {"true", "1"}
_FALSE = {"false", "0"}


class ConfigError(ValueError):
    pass


def _f(default, kind: str, help_text: str, lo=None, hi=None, choices=None):
    return field(
        default=default,
        metadata={"kind": kind, "help": help_text, "lo": lo, "hi": hi, "choices": choices},
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Validated settings for every pipeline stage.

    Defaults follow the source measurements wherever one is reported
    (downsampling, outlier removal, meshing, smoothing, scan protocol);
    the rest are toolkit choices documented per field.
    """

    # Crop box applied per cloud before other filtering; none = open bound.
    crop_xmin: float | None = _f(None, "optfloat", "crop box lower x bound (none = open)")
    crop_xmax: float | None = _f(None, "optfloat", "crop box upper x bound (none = open)")
    crop_ymin: float | None = _f(None, "optfloat", "crop box lower y bound (none = open)")
    crop_ymax: float | None = _f(None, "optfloat", "crop box upper y bound (none = open)")
    crop_zmin: float | None = _f(None, "optfloat", "crop box lower z bound (none = open)")
    crop_zmax: float | None = _f(None, "optfloat", "crop box upper z bound (none = open)")
    leaf_size: float = _f(0.005, "float", "voxel downsampling leaf size, m", lo=1e-9)
    sor_k: int = _f(50, "int", "outlier removal: neighbors per point", lo=1)
    sor_stddev: float = _f(0.5, "float", "outlier removal: stddev multiplier", lo=1e-9)
    normals_k: int = _f(30, "int", "neighbors used for normal estimation", lo=3)
    icp_max_iterations: int = _f(50, "int", "ICP iteration cap", lo=1)
    icp_max_corr_dist: float = _f(0.05, "float", "ICP correspondence rejection distance, m", lo=1e-9)
    icp_transform_eps: float = _f(1e-8, "float", "ICP convergence: transform change", lo=0.0)
    icp_fitness_eps: float = _f(1e-6, "float", "ICP convergence: relative fitness change", lo=0.0)
    icp_strategy: str = _f(
        "incremental", "choice", "alignment strategy", choices=("incremental", "pairwise")
    )
    mls_radius: float = _f(0.03, "float", "MLS search radius, m", lo=1e-9)
    mls_order: int = _f(2, "int", "MLS polynomial order", lo=1, hi=3)
    mls_upsample: bool = _f(False, "bool", "MLS: resample on the fitted polynomial")
    mls_pre_align: bool = _f(False, "bool", "run MLS per cloud before alignment as well")
    mesher: str = _f("gp", "choice", "surface reconstruction method", choices=("gt", "gp"))
    gt_mu: float = _f(5.0, "float", "greedy meshing: nearest neighbor distance multiplier", lo=1e-9)
    gt_max_nn: int = _f(50, "int", "greedy meshing: neighbor cap per point", lo=3)
    gt_radius: float = _f(0.025, "float", "greedy meshing: neighborhood radius, m", lo=1e-9)
    gt_min_angle: float = _f(10.0, "float", "greedy meshing: minimum triangle angle, deg", lo=0.0, hi=60.0)
    gt_max_angle: float = _f(120.0, "float", "greedy meshing: maximum triangle angle, deg", lo=60.0, hi=180.0)
    gt_max_surface_angle: float = _f(45.0, "float", "greedy meshing: max normal deviation, deg", lo=0.0, hi=180.0)
    gp_resolution: float = _f(0.0025, "float", "grid projection: cell size, m", lo=1e-9)
    gp_padding: int = _f(3, "int", "grid projection: padding shells around occupied cells", lo=1)
    lap_iterations: int = _f(20, "int", "Laplacian smoothing iterations", lo=0)
    lap_relaxation: float = _f(0.1, "float", "Laplacian relaxation factor in (0, 1)", lo=1e-9, hi=1.0 - 1e-9)
    lap_feature_angle: float = _f(45.0, "float", "Laplacian feature edge dihedral threshold, deg", lo=0.0, hi=180.0)
    lap_boundary_smoothing: bool = _f(True, "bool", "smooth boundary vertices along the boundary")
    fill_max_boundary: int = _f(200, "int", "hole filling: largest loop (vertices) to close", lo=3)
    sim_views: int = _f(36, "int", "simulated scan: number of views", lo=2)
    sim_degrees_per_view: float = _f(10.0, "float", "simulated scan: rotation per view, deg", lo=1e-9)
    sim_sigma: float = _f(0.002, "float", "simulated scan: depth noise sigma, m", lo=0.0)
    sim_dropout_angle: float = _f(80.0, "float", "simulated scan: incidence dropout angle, deg", lo=0.0, hi=90.0)
    sim_specular_rate: float = _f(0.0, "float", "simulated scan: specular hole probability", lo=0.0, hi=1.0)
    sim_angle_jitter: float = _f(0.0, "float", "simulated scan: per view angle jitter stddev, deg", lo=0.0)
    sim_bilateral_sigma_space: float = _f(1.5, "float", "depth bilateral filter: spatial sigma, px", lo=1e-9)
    sim_bilateral_sigma_depth: float = _f(0.01, "float", "depth bilateral filter: depth sigma, m", lo=1e-9)
    pivot_x: float = _f(0.0, "float", "turntable axis: pivot point x, m")
    pivot_y: float = _f(0.0, "float", "turntable axis: pivot point y, m")
    pivot_z: float = _f(0.4, "float", "turntable axis: pivot point z, m")
    cam_width: int = _f(320, "int", "camera: image width, px", lo=1)
    cam_height: int = _f(240, "int", "camera: image height, px", lo=1)
    cam_fx: float = _f(280.0, "float", "camera: focal length x, px", lo=1e-9)
    cam_fy: float = _f(280.0, "float", "camera: focal length y, px", lo=1e-9)
    cam_cx: float = _f(160.0, "float", "camera: principal point x, px", lo=0.0)
    cam_cy: float = _f(120.0, "float", "camera: principal point y, px", lo=0.0)
    depth_min: float = _f(0.15, "float", "camera: closest valid depth, m", lo=1e-9)
    depth_max: float = _f(3.0, "float", "camera: farthest valid depth, m", lo=1e-9)

    def __post_init__(self) -> None:
        for fld in dataclasses.fields(self):
            _check(fld, getattr(self, fld.name))
        for axis in "xyz":
            lo = getattr(self, f"crop_{axis}min")
            hi = getattr(self, f"crop_{axis}max")
            if lo is not None and hi is not None and lo > hi:
                raise ConfigError(f"crop_{axis}min: exceeds crop_{axis}max (empty range)")
        if self.depth_min >= self.depth_max:
            raise ConfigError("depth_min: must be smaller than depth_max")
        if self.cam_cx >= self.cam_width:
            raise ConfigError("cam_cx: must lie inside the image width")
        if self.cam_cy >= self.cam_height:
            raise ConfigError("cam_cy: must lie inside the image height")
        if self.gt_min_angle >= self.gt_max_angle:
            raise ConfigError("gt_min_angle: must be smaller than gt_max_angle")

    def replace(self, **updates) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(self)}
        for key in updates:
            if key not in names:
                raise ConfigError(f"unknown configuration key {key!r}")
        return dataclasses.replace(self, **updates)


FIELDS = dataclasses.fields(PipelineConfig)


def _check(fld, value: Any) -> None:
    meta = fld.metadata
    kind = meta["kind"]
    if kind == "choice":
        if value not in meta["choices"]:
            raise ConfigError(f"{fld.name}: must be one of {', '.join(meta['choices'])}")
        return
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{fld.name}: must be a bool")
        return
    if value is None:
        if kind != "optfloat":
            raise ConfigError(f"{fld.name}: value required")
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{fld.name}: must be a number")
    if kind == "int" and not isinstance(value, int):
        raise ConfigError(f"{fld.name}: must be an integer")
    if not math.isfinite(value):
        raise ConfigError(f"{fld.name}: must be finite")
    if meta["lo"] is not None and value < meta["lo"]:
        raise ConfigError(f"{fld.name}: must be >= {meta['lo']}")
    if meta["hi"] is not None and value > meta["hi"]:
        raise ConfigError(f"{fld.name}: must be <= {meta['hi']}")


def parse_value(key: str, raw: str) -> Any:
    """Parse one raw string for the named field, applying its range checks."""
    fld = PipelineConfig.__dataclass_fields__.get(key)
    if fld is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = fld.metadata["kind"]
    raw = raw.strip()
    try:
        if kind == "optfloat":
            value: Any = None if raw.lower() == "none" else float(raw)
        elif kind == "float":
            value = float(raw)
        elif kind == "int":
            value = int(raw)
        elif kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                value = True
            elif low in _FALSE:
                value = False
            else:
                raise ValueError(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    _check(fld, value)
    return value


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse `key = value` lines into a PipelineConfig.

    Comments start with '#'; blank lines are skipped; keys not present keep
    the values of ``base`` (or the documented defaults when base is None).

    Raises
    ------
    ConfigError
        Naming the offending key for unknown keys, unparsable values, and
        out of range values.
    """
    updates: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in PipelineConfig.__dataclass_fields__:
            raise ConfigError(f"unknown configuration key {key!r} (line {lineno})")
        try:
            updates[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{exc} (line {lineno})") from None
    cfg = base if base is not None else PipelineConfig()
    return cfg.replace(**updates)


def _format_value(fld, value: Any) -> str:
    if value is None:
        return "none"
    if fld.metadata["kind"] == "bool":
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def format_config(cfg: PipelineConfig) -> str:
    """Render a config as parseable `key = value` text (round trips exactly)."""
    lines = [f"{f.name} = {_format_value(f, getattr(cfg, f.name))}" for f in FIELDS]
    return "\n".join(lines) + "\n"
