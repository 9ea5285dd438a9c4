"""Command line front end: simulate, reconstruct, audit, convert.

Every PipelineConfig field is exposed as a --kebab-case flag taking a
value parsed exactly like the config file, so `--sor-stddev 0.5` and a
`sor_stddev = 0.5` line mean the same thing. Flags override the file.
Exit codes: 0 success, 1 stage or I/O error, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    FIELDS,
    ConfigError,
    PipelineConfig,
    format_config,
    parse_config,
    parse_value,
)
from .formats import read_ply, read_stl, write_ply, write_stl
from .geometry import PointCloud, TriangleMesh
from .meshing import mesh_audit
from .pipeline import SimulatedSource, StageError, camera_from_config, run_pipeline
from .register import transforms_to_text
from .report import audit_text
from .scansim import NoiseModel, render_depth, simulate_scan, write_pgm
from .shapes import (
    make_cube,
    make_cube_with_notch,
    make_dented_sphere,
    make_icosphere,
    make_torus,
)

__all__ = ["cli_main", "build_parser"]

_CROP_KEYS = ("crop_xmin", "crop_xmax", "crop_ymin", "crop_ymax", "crop_zmin", "crop_zmax")


def _shape_mesh(name: str, center) -> TriangleMesh:
    if name == "cube":
        return make_cube(0.25, center=center)
    if name == "cube-notch":
        return make_cube_with_notch(0.25, 0.1, center=center)
    if name == "sphere":
        return make_icosphere(4, 0.1, center=center)
    if name == "dented-sphere":
        return make_dented_sphere(4, 0.1, center=center)
    if name == "torus":
        base = make_torus(0.08, 0.03)
        return TriangleMesh(base.vertices + np.asarray(center), base.triangles)
    raise ConfigError(f"unknown shape {name!r}")


SHAPE_NAMES = ("cube", "cube-notch", "sphere", "dented-sphere", "torus")


def _read_mesh(path: Path) -> TriangleMesh:
    obj = read_stl(path) if path.suffix.lower() == ".stl" else read_ply(path)
    if not isinstance(obj, TriangleMesh):
        raise ValueError(f"{path} holds a point cloud, expected a mesh")
    return obj


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="`key = value` configuration file")
    g.add_argument(
        "--print-config",
        action="store_true",
        help="print the effective configuration and exit",
    )
    g.add_argument(
        "--crop",
        metavar="X0,X1,Y0,Y1,Z0,Z1",
        help="crop box shorthand; six comma separated bounds, each a number or 'none'",
    )
    for fld in FIELDS:
        g.add_argument(
            "--" + fld.name.replace("_", "-"),
            dest="cfg_" + fld.name,
            metavar=fld.metadata["kind"].upper(),
            help=fld.metadata["help"],
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scan2print",
        description="turntable scan simulation and scan-to-print reconstruction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scan a ground-truth mesh into view clouds")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument(
        "--shape",
        choices=SHAPE_NAMES,
        default="dented-sphere",
        help="built-in ground-truth object placed at the pivot",
    )
    p.add_argument(
        "--mesh-file", metavar="FILE", help="ground-truth mesh file instead of --shape"
    )
    p.add_argument(
        "--dump-depth",
        action="store_true",
        help="also write clean depth renders as 16-bit millimeter PGM files",
    )
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="run the full pipeline on a scan directory")
    p.add_argument("--in", dest="in_dir", metavar="DIR", help="directory of .ply clouds (required)")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_reconstruct)

    p = sub.add_parser("audit", help="print topology counters for a mesh")
    p.add_argument("mesh", metavar="MESH", help=".ply or .stl mesh file")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_audit)

    p = sub.add_parser("convert", help="convert between .ply and .stl")
    p.add_argument("src", metavar="SRC", help="input .ply or .stl file")
    p.add_argument("dst", metavar="DST", help="output .ply or .stl file")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_convert)

    return parser


def _effective_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = parse_config(Path(args.config).read_text(), cfg)
    updates = {}
    for fld in FIELDS:
        raw = getattr(args, "cfg_" + fld.name, None)
        if raw is not None:
            updates[fld.name] = parse_value(fld.name, raw)
    crop = getattr(args, "crop", None)
    if crop is not None:
        parts = crop.split(",")
        if len(parts) != 6:
            raise ConfigError("--crop needs six comma separated bounds")
        for key, raw in zip(_CROP_KEYS, parts):
            updates[key] = parse_value(key, raw)
    return cfg.replace(**updates)


def _require(args, name: str, flag: str):
    value = getattr(args, name)
    if value is None:
        raise _UsageError(f"{args.command}: {flag} is required")
    return value


class _UsageError(Exception):
    pass


def _cmd_simulate(args, cfg: PipelineConfig) -> int:
    out = Path(_require(args, "out", "--out"))
    seed = _require(args, "seed", "--seed")
    pivot = (cfg.pivot_x, cfg.pivot_y, cfg.pivot_z)
    if args.mesh_file:
        mesh = _read_mesh(Path(args.mesh_file))
    else:
        mesh = _shape_mesh(args.shape, pivot)

    cam = camera_from_config(cfg)
    noise = NoiseModel(
        gaussian_sigma=cfg.sim_sigma,
        edge_dropout_angle=cfg.sim_dropout_angle,
        specular_hole_rate=cfg.sim_specular_rate,
    )
    clouds, truths = simulate_scan(
        mesh,
        cfg.sim_views,
        cfg.sim_degrees_per_view,
        cam,
        noise,
        seed,
        pivot=pivot,
        sigma_space=cfg.sim_bilateral_sigma_space,
        sigma_depth=cfg.sim_bilateral_sigma_depth,
        angle_jitter_deg=cfg.sim_angle_jitter,
    )
    out.mkdir(parents=True, exist_ok=True)
    for i, cloud in enumerate(clouds):
        write_ply(cloud, out / f"view_{i:03d}.ply")
    (out / "truth_transforms.txt").write_text(transforms_to_text(truths))
    if args.dump_depth:
        for i in range(cfg.sim_views):
            depth = render_depth(mesh, i * cfg.sim_degrees_per_view, cam, pivot=pivot)
            write_pgm(depth, out / f"depth_{i:03d}.pgm")
    total = sum(len(c) for c in clouds)
    print(f"wrote {len(clouds)} views ({total} points) and truth_transforms.txt to {out}")
    return 0


def _cmd_reconstruct(args, cfg: PipelineConfig) -> int:
    in_dir = _require(args, "in_dir", "--in")
    out = Path(_require(args, "out", "--out"))
    run = run_pipeline(cfg, in_dir, out)
    print(f"pipeline ok: {len(run.outputs)} files in {out}")
    print(audit_text(run.audit), end="")
    return 0


def _cmd_audit(args, cfg: PipelineConfig) -> int:
    mesh = _read_mesh(Path(args.mesh))
    print(audit_text(mesh_audit(mesh)), end="")
    return 0


def _cmd_convert(args, cfg: PipelineConfig) -> int:
    src, dst = Path(args.src), Path(args.dst)
    obj = read_stl(src) if src.suffix.lower() == ".stl" else read_ply(src)
    if dst.suffix.lower() == ".stl":
        if not isinstance(obj, TriangleMesh):
            raise ValueError("cannot write a point cloud as STL; convert a mesh instead")
        write_stl(obj, dst)
    elif dst.suffix.lower() == ".ply":
        write_ply(obj, dst)
    else:
        raise _UsageError(f"unsupported output suffix {dst.suffix!r}; use .ply or .stl")
    kind = "mesh" if isinstance(obj, TriangleMesh) else "cloud"
    print(f"wrote {kind} to {dst}")
    return 0


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _effective_config(args)
        if args.print_config:
            print(format_config(cfg), end="")
            return 0
        return args.handler(args, cfg)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
