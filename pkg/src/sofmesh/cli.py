"""Command-line entry points: extract, render, gradcheck, bench and eval-point."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import bench, gradcheck, io, synthetic
from .config import BOUNDINGS, DEPTH_MODES, Z_MODES, RunConfig
from .field import ViewSet, normal_from_depth, opacity_at_point, render_maps
from .geometry import ALPHA_MIN
from .mesher import STAGE_ORDER, Strategies, extract_mesh


def _add_scene_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="splat PLY file")
    src.add_argument("--synthetic", choices=synthetic.SCENES, help="built-in synthetic scene")
    p.add_argument("--cameras", help="camera JSON file (defaults to a synthetic rig with --synthetic)")
    p.add_argument("--num-cameras", type=int, default=4, help="synthetic rig size")


def _add_config_args(p):
    p.add_argument("--config", help="RunConfig JSON; flags below override it")
    p.add_argument("--depth", choices=DEPTH_MODES, dest="depth_mode")
    p.add_argument("--bounding", choices=BOUNDINGS)
    p.add_argument("--cutoff", choices=("none", "1/255"), help="dead-Gaussian seed cutoff")
    p.add_argument("--iterations", type=int, help="binary-search iterations")
    p.add_argument("--tile-size", type=int)
    p.add_argument("--block-size", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--filter-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples-per-gaussian", type=int)
    p.add_argument("--near", type=float)
    p.add_argument("--far", type=float)
    p.add_argument("--z-mode", choices=Z_MODES)
    p.add_argument("--bounded", action="store_true", default=None, help="bounded-scene loss weights")
    p.add_argument("--strategies", help="comma list from schedule,min_z,early_stop,prune,dead_cull or all/none")
    p.add_argument("--naive", action="store_true", help="force the exhaustive oracle path")


def parse_strategy_set(text: str) -> Strategies:
    text = text.strip().lower()
    if text == "all":
        return Strategies.full()
    if text in ("none", ""):
        return Strategies.naive()
    flags = dict.fromkeys(STAGE_ORDER + ("dead_cull",), False)
    for tok in text.split(","):
        key = tok.strip().lstrip("+")
        key = bench.STAGE_ALIASES.get(key, key.replace("-", "_"))
        if key not in flags:
            raise ValueError(f"unknown strategy {tok!r}")
        flags[key] = True
    return Strategies(**flags)


def build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = cfg.override(
        depth_mode=args.depth_mode, bounding=args.bounding, iterations=args.iterations, tile_size=args.tile_size,
        block_size=args.block_size, workers=args.workers, filter_scale=args.filter_scale, seed=args.seed,
        samples_per_gaussian=args.samples_per_gaussian, near=args.near, far=args.far, z_mode=args.z_mode,
        bounded=args.bounded,
    )
    if args.cutoff is not None:
        cfg = replace(cfg, cutoff=None if args.cutoff == "none" else ALPHA_MIN)
    if args.strategies is not None:
        cfg = replace(cfg, strategies=parse_strategy_set(args.strategies))
    if args.naive:
        cfg = replace(cfg, strategies=Strategies.naive())
    return cfg


def load_inputs(args, cfg: RunConfig):
    if args.scene:
        scene = io.load_scene(args.scene)
    else:
        scene = synthetic.make_scene(args.synthetic, cfg.seed)
    if args.cameras:
        cams = io.load_cameras(args.cameras)
    elif args.synthetic:
        cams = synthetic.make_cameras(args.synthetic, args.num_cameras)
    else:
        raise ValueError("--cameras is required with --scene")
    cams = [replace(c, near=cfg.near, far=cfg.far) if (args.near is not None or args.far is not None) else c
            for c in cams]
    return scene, cams


def _extract_kwargs(cfg: RunConfig) -> dict:
    return dict(bounding=cfg.bounding, cutoff=cfg.cutoff, iterations=cfg.iterations, tile_size=cfg.tile_size,
                block_size=cfg.block_size, workers=cfg.workers, filter_scale=cfg.filter_scale,
                samples_per_gaussian=cfg.samples_per_gaussian, seed=cfg.seed, z_mode=cfg.z_mode)


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args) -> int:
    cfg = build_config(args)
    scene, cams = load_inputs(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    res = extract_mesh(scene, cams, strategies=cfg.strategies, compute_residual=args.residual, **_extract_kwargs(cfg))
    mesh_path = os.path.join(args.out, f"mesh.{args.format}")
    io.write_mesh(res.mesh, mesh_path, args.format)
    counters = dict(res.counters)
    if res.mesh.residual is not None and len(res.mesh.residual):
        counters["median_residual"] = float(np.median(res.mesh.residual))
    io.write_counters_csv(os.path.join(args.out, "counters.csv"), counters)
    print(f"wrote {mesh_path}: {len(res.mesh.vertices)} vertices, {len(res.mesh.triangles)} triangles")
    return 0


def cmd_render(args) -> int:
    cfg = build_config(args)
    scene, cams = load_inputs(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    for i, cam in enumerate(cams):
        name = cam.name or f"cam{i}"
        maps = render_maps(scene, cam, cfg.depth_mode, cfg.filter_scale, alpha_max=cfg.alpha_max)
        normals = normal_from_depth(maps["depth"], cam)
        io.write_pfm(os.path.join(args.out, f"depth_{name}.pfm"), maps["depth"])
        io.write_pfm(os.path.join(args.out, f"normal_{name}.pfm"), normals)
        io.write_pfm(os.path.join(args.out, f"opacity_{name}.pfm"), maps["opacity"])
        print(f"{name}: {int(np.isfinite(maps['depth']).sum())} surface pixels")
    return 0


def cmd_gradcheck(args) -> int:
    rows = gradcheck.run_gradcheck(args.configs, args.seed, args.tolerance)
    print(gradcheck.format_table(rows))
    return 0 if all(r.passed for r in rows) else 1


def cmd_bench(args) -> int:
    cfg = build_config(args)
    scene, cams = load_inputs(args, cfg)
    stages = bench.parse_stages(args.stages or args.strategies)
    reports = bench.run_ablation(scene, cams, stages, **_extract_kwargs(cfg))
    text = bench.format_report(reports)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    sys.stdout.write(text)
    if args.table:
        print(bench.format_table(reports))
    return 0


def cmd_eval_point(args) -> int:
    cfg = build_config(args)
    scene, cams = load_inputs(args, cfg)
    if cfg.filter_scale:
        scene = scene.with_filter(cfg.filter_scale)
    x = np.array(args.point, dtype=np.float64)
    for cam in cams:
        single = ViewSet.build(scene, [cam])
        observed = bool(cam.in_frustum(x[None])[0])
        value = opacity_at_point(single, x) if observed else float("nan")
        print(f"{cam.name}: {'unobserved' if not observed else f'{value:.9f}'}")
    value = opacity_at_point(ViewSet.build(scene, cams), x)
    print(f"O(x) = {value:.9f} ({'inside' if value >= 0.5 else 'outside'})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sofmesh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a mesh from a Gaussian scene")
    _add_scene_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("obj", "ply"), default="ply")
    p.add_argument("--residual", action="store_true", help="compute |O - 0.5| per mesh vertex")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("render", help="write depth, normal and opacity float maps per camera")
    _add_scene_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck", help="compare analytic loss gradients with finite differences")
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=gradcheck.TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="strategy ablation counters")
    _add_scene_args(p)
    _add_config_args(p)
    p.add_argument("--stages", help="cumulative stages, e.g. +schedule,+minz (default: all in order); "
                                    "--strategies is accepted as the same list")
    p.add_argument("--out", help="write the CSV report here as well")
    p.add_argument("--table", action="store_true", help="also print a human-readable table")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval-point", help="print the opacity field at one point")
    _add_scene_args(p)
    _add_config_args(p)
    p.add_argument("--point", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    p.set_defaults(func=cmd_eval_point)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"sofmesh: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
