"""Command-line entry point.

Subcommands: train, eval, plan, density, toy, genmap. Exit codes: 0 on
success, 2 for configuration/usage errors, 3 when a map cannot satisfy a
sampling or routing request.
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from . import harness, mapgen, neural, report
from .gridmap import (GeoMap, InfeasibleMapError, MapFormatError, load_map,
                      save_map)
from .planner import (MODES, PLAIN, UnreachableError, build_apsp, lardp,
                      path_cells, rdp)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _parse_lonlat(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'lon,lat', got {text!r}")
    return float(parts[0]), float(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesselnav",
                                     description="Grid vessel navigation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, agent=True):
        p.add_argument("--map", required=True, help="map file path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-dist", type=float, default=0.01,
                       help="max endpoint separation in degrees")
        p.add_argument("--planner", choices=MODES, default=PLAIN)
        p.add_argument("--simplify", choices=("rdp", "lardp"), default="rdp")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--cache-dir", default=None,
                       help="planner table cache directory")
        if agent:
            p.add_argument("--agent", choices=harness.AGENT_KINDS, default="a1")

    p_train = sub.add_parser("train", help="train an agent on a map")
    add_common(p_train)
    p_train.add_argument("--batches", type=int, default=4)
    p_train.add_argument("--plans", type=int, default=200,
                         help="training plans per batch")
    p_train.add_argument("--test-plans", type=int, default=100)
    p_train.add_argument("--obstacles", type=int, default=30)
    p_train.add_argument("--step-cap", type=int, default=200)
    p_train.add_argument("--explore-horizon", type=int, default=20_000)
    p_train.add_argument("--buffer-capacity", type=int, default=100_000)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    add_common(p_eval, agent=False)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--plans", type=int, default=100)
    p_eval.add_argument("--obstacles", type=int, default=30)
    p_eval.add_argument("--step-cap", type=int, default=200)

    p_plan = sub.add_parser("plan", help="plan one route and emit waypoints")
    add_common(p_plan, agent=False)
    p_plan.add_argument("--origin", default=None, help="lon,lat (sampled if absent)")
    p_plan.add_argument("--dest", default=None, help="lon,lat (sampled if absent)")

    p_dens = sub.add_parser("density", help="path density raster over sampled pairs")
    add_common(p_dens, agent=False)
    p_dens.add_argument("--pairs", type=int, default=1000)

    p_toy = sub.add_parser("toy", help="wall-gap ablation experiment")
    p_toy.add_argument("--epochs", type=int, default=20)
    p_toy.add_argument("--train-episodes", type=int, default=200)
    p_toy.add_argument("--test-episodes", type=int, default=100)
    p_toy.add_argument("--variants", default="plain,sar",
                       help="comma list from {plain,sar}")
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--out", default="out")

    p_gen = sub.add_parser("genmap", help="generate a procedural map file")
    p_gen.add_argument("--out", required=True, help="map file to write")
    p_gen.add_argument("--width", type=int, default=36)
    p_gen.add_argument("--height", type=int, default=36)
    p_gen.add_argument("--cell-size", type=float, default=0.0005)
    p_gen.add_argument("--origin-lon", type=float, default=0.0)
    p_gen.add_argument("--origin-lat", type=float, default=0.0)
    p_gen.add_argument("--land-fraction", type=float, default=0.2)
    p_gen.add_argument("--sigma", type=float, default=2.0)
    p_gen.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args) -> int:
    config = harness.TrainConfig(
        agent=args.agent, map_path=args.map, seed=args.seed,
        batches=args.batches, train_plans=args.plans,
        test_plans=args.test_plans, max_dist=args.max_dist,
        planner_mode=args.planner, simplify=args.simplify,
        n_obstacles=args.obstacles, step_cap=args.step_cap,
        explore_horizon=args.explore_horizon,
        buffer_capacity=args.buffer_capacity,
        out_dir=args.out, cache_dir=args.cache_dir)
    result = harness.train(config)
    report.render_metrics_figure(result.rows,
                                 os.path.join(args.out, "metrics.png"))
    print(f"best batch: {result.best_batch}")
    for row in result.rows:
        print(f"batch {row.batch}: ratd={row.ratd:.2f} "
              f"mean_steps={row.mean_plan_steps:.1f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = harness.TrainConfig(
        map_path=args.map, seed=args.seed, test_plans=args.plans,
        max_dist=args.max_dist, planner_mode=args.planner,
        simplify=args.simplify, n_obstacles=args.obstacles,
        step_cap=args.step_cap, out_dir=args.out, cache_dir=args.cache_dir)
    row, _ = harness.evaluate(args.checkpoint, config)
    report.render_outcome_figure(row, os.path.join(args.out, "eval.png"))
    print(f"ratd={row.ratd:.2f} mean_steps={row.mean_plan_steps:.1f}")
    return EXIT_OK


def _cmd_plan(args) -> int:
    geomap = load_map(args.map)
    apsp = build_apsp(geomap, args.planner, cache_dir=args.cache_dir)
    rng = harness.rng_stream(args.seed, "plan")
    if (args.origin is None) != (args.dest is None):
        raise ValueError("give both --origin and --dest, or neither")
    if args.origin is not None:
        origin = _parse_lonlat(args.origin)
        dest_pos = _parse_lonlat(args.dest)
        src = geomap.cell_of(origin)
        dst = geomap.cell_of(dest_pos)
        if not geomap.is_water_cell(src) or not geomap.is_water_cell(dst):
            raise ValueError("origin and destination must lie on water")
    else:
        from .gridmap import sample_endpoints
        origin, dest = sample_endpoints(
            geomap, args.max_dist, rng,
            reachable=lambda a, b: np.isfinite(apsp.distance(a, b)))
        dest_pos = dest.center
        src = geomap.cell_of(origin)
        dst = geomap.cell_of(dest_pos)
    cells = path_cells(apsp, src, dst)
    polyline = [apsp.cell_center(c) for c in cells]
    if len(polyline) == 1:
        polyline = polyline * 2
    if args.simplify == "lardp":
        waypoints = lardp(polyline, geomap)
    else:
        waypoints = rdp(polyline)
    os.makedirs(args.out, exist_ok=True)
    wp_path = os.path.join(args.out, "waypoints.csv")
    with open(wp_path, "w", encoding="ascii") as fh:
        for lon, lat in waypoints:
            fh.write(f"{lon!r},{lat!r}\n")
    report.render_plan_figure(geomap, cells, waypoints,
                              os.path.join(args.out, "plan.png"))
    print(f"{len(cells)} path cells -> {len(waypoints)} waypoints "
          f"({wp_path})")
    return EXIT_OK


def _cmd_density(args) -> int:
    geomap = load_map(args.map)
    apsp = build_apsp(geomap, args.planner, cache_dir=args.cache_dir)
    counts = harness.density_map(geomap, apsp, args.pairs, args.max_dist,
                                 args.seed)
    os.makedirs(args.out, exist_ok=True)
    harness.write_pgm(counts, os.path.join(args.out, "density.pgm"))
    np.savetxt(os.path.join(args.out, "density.csv"), counts,
               fmt="%d", delimiter=",")
    report.render_density_figure(counts,
                                 os.path.join(args.out, "density.png"))
    print(f"{int(counts.sum())} visits over {args.pairs} pairs, "
          f"{int((counts > 0).sum())} distinct cells")
    return EXIT_OK


def _cmd_toy(args) -> int:
    variants = tuple(v for v in args.variants.split(",") if v)
    rows = harness.toy_experiment(args.epochs, args.train_episodes,
                                  args.test_episodes, variants, args.seed)
    os.makedirs(args.out, exist_ok=True)
    harness.write_toy_csv(rows, os.path.join(args.out, "toy_results.csv"))
    report.render_toy_figure(rows, os.path.join(args.out, "toy_results.png"))
    final = {(r.variant, r.kind): r.ratd for r in rows
             if r.epoch == args.epochs}
    for (variant, kind), value in sorted(final.items()):
        print(f"{variant} {kind}: {value:.1f}")
    return EXIT_OK


def _cmd_genmap(args) -> int:
    rng = harness.rng_stream(args.seed, "genmap")
    geomap = mapgen.generate_map(
        args.width, args.height, args.cell_size,
        origin=(args.origin_lon, args.origin_lat),
        land_fraction=args.land_fraction, smooth_sigma=args.sigma, rng=rng)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    save_map(geomap, args.out)
    water = int((geomap.cells == 0).sum())
    print(f"wrote {args.out}: {geomap.width}x{geomap.height}, "
          f"{water} water cells")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "plan": _cmd_plan,
    "density": _cmd_density,
    "toy": _cmd_toy,
    "genmap": _cmd_genmap,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleMapError as exc:
        print(f"infeasible map: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UnreachableError as exc:
        print(f"unreachable endpoints: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (MapFormatError, neural.CheckpointMismatchError, ValueError,
            FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
