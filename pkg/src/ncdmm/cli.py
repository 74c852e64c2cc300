"""Command line interface: ``gen-cloud``, ``cv``, ``run`` and ``compare``.

Every failure prints one line ``error: <kind>: <message>`` to stderr first
and exits with status 1 (2 for usage errors, handled by argparse).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import io
from .assembler import BoundaryCondition, BoundaryConditionSet, dump_transmissibilities
from .config import RunConfig, parse_config
from .control_volume import write_cv
from .errors import ConfigError, NcdmmError
from .flow_model import RockProps, WellSpec, default_relperm
from .gfdm import dump_stencils
from .pipeline import Discretization, discretize, flow_system, nearest_node
from .pointcloud import PointCloud, add_virtual_nodes, generate_pseudo_cartesian_cloud
from .solver import SimulationSchedule, advance

log = logging.getLogger("ncdmm")


def load_cloud(cfg: RunConfig) -> PointCloud:
    if cfg.cloud_source == "generate":
        return generate_pseudo_cartesian_cloud(cfg.boundary, cfg.spacing, cfg.thickness)
    return io.read_cloud(cfg.cloud_file, cfg.loops_file, cfg.thickness)


def rock_for(cfg: RunConfig, cloud: PointCloud) -> RockProps:
    if cfg.k_file is None:
        return cfg.rock
    k = io.read_columns(cfg.k_file).ravel()
    if len(k) != cloud.n_real:
        raise ConfigError(f"permeability file has {len(k)} values for {cloud.n_real} real nodes", key="rock.k_file")
    return RockProps(cfg.rock.phi_ref, cfg.rock.c_r, k, cfg.rock.thickness, cfg.rock.p_ref)


def build_discretization(cfg: RunConfig) -> tuple[Discretization, RockProps]:
    cloud = load_cloud(cfg)
    rock = rock_for(cfg, cloud)
    tris = io.read_triangles(cfg.triangles_file) if cfg.connectivity == "triangulation" else None
    disc = discretize(
        cloud,
        rock,
        cfg.weight,
        radius=cfg.radius if tris is None else None,
        triangles=tris,
        cv_config=cfg.cv,
        spacing_hint=cfg.virtual_spacing,
        corner_fill=cfg.corner_fill,
        min_neighbors=cfg.min_neighbors,
    )
    return disc, rock


def _in_region(region):
    x0, x1, y0, y1 = region
    tol = 1e-9 * max(1.0, abs(x1 - x0), abs(y1 - y0))
    return lambda x, y: x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol


def build_system(cfg: RunConfig, disc: Discretization, rock: RockProps):
    wells = []
    for w in cfg.wells:
        node = w.node if w.node is not None else nearest_node(disc.cloud, (w.x, w.y))
        if node >= disc.cloud.n_real:
            raise ConfigError(f"well '{w.name}' refers to unknown node {node}", key=f"well.{w.name}.node")
        wells.append(WellSpec(node, w.kind, w.control, w.value, w.r_w, w.skin, w.name))
    rules = [
        (_in_region(b.region), BoundaryCondition(b.kind, b.p, b.sw, b.flux, b.alpha, b.beta, b.gamma))
        for b in cfg.bcs
    ]
    bcs = BoundaryConditionSet.from_selector(disc.cloud, rules)
    relperm = io.read_relperm(cfg.relperm_file) if cfg.relperm_file else default_relperm()
    system = flow_system(disc, cfg.fluid, rock, relperm, wells, bcs, cfg.sw_init)
    return system, wells


def cmd_gen_cloud(args) -> int:
    cfg = parse_config(args.config)
    cloud = load_cloud(cfg)
    if args.with_virtual and not cloud.n_virtual:
        cloud = add_virtual_nodes(cloud, cfg.virtual_spacing, corner_fill=cfg.corner_fill)
    io.write_cloud(cloud, args.out)
    print(f"wrote {cloud.n_real} real and {cloud.n_virtual} virtual nodes to {args.out}")
    return 0


def cmd_cv(args) -> int:
    cfg = parse_config(args.config)
    out = io.ensure_dir(args.out_dir)
    disc, _ = build_discretization(cfg)
    with open(out / "cv.txt", "w") as fh:
        write_cv(disc.cv, fh)
    with open(out / "transmissibility.txt", "w") as fh:
        dump_transmissibilities(disc.trans, fh)
    with open(out / "stencils.txt", "w") as fh:
        dump_stencils(disc.stencils, fh)
    with open(out / "cv_report.txt", "w") as fh:
        fh.write(f"volume_constraint_error {disc.cv.volume_constraint_error:.6e}\n")
        fh.write(f"residual_norm {disc.cv.residual_norm:.6e}\n")
        fh.write(f"n_nodes {disc.cloud.n_real}\n")
        fh.write(f"n_pairs {len(disc.trans.pairs)}\n")
        fh.write(f"dropped_pairs {len(disc.trans.dropped)}\n")
        fh.write(f"sum_V_bar {disc.cv.V_bar.sum():.17e}\n")
        fh.write(f"domain_area {disc.cloud.area:.17e}\n")
    print(f"volume_constraint_error {disc.cv.volume_constraint_error:.3e}")
    return 0


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if cfg.end_time is None:
        raise ConfigError("missing required key 'end_time' in [schedule]", key="schedule.end_time")
    out_dir = args.out_dir or cfg.output_dir
    if out_dir is None:
        raise ConfigError("no output directory given (use --out-dir or [output] dir)", key="output.dir")
    out = io.ensure_dir(out_dir)
    disc, rock = build_discretization(cfg)
    system, wells = build_system(cfg, disc, rock)
    state = system.initial_state(cfg.p_init, cfg.sw_init)
    reports = tuple(sorted(set(cfg.report_times) | {0.0, cfg.end_time}))
    result = advance(system, state, SimulationSchedule(cfg.end_time, reports), cfg.newton)
    xy = disc.cloud.xy[: disc.cloud.n_real]
    for t, snap in result.snapshots.items():
        io.write_snapshot(out / f"snapshot_{t:g}.txt", xy, snap.p, snap.sw)
    io.write_well_report(out / "wells.txt", result.steps, system.wells)
    io.write_step_log(out / "steps.txt", result.steps)
    with open(out / "cv.txt", "w") as fh:
        write_cv(disc.cv, fh)
    print(f"{len(result.steps)} steps, {result.cumulative_iterations} Newton iterations, "
          f"{len(result.snapshots)} snapshots in {out}")
    return 0


def cmd_compare(args) -> int:
    rep = io.compare_files(args.candidate, args.reference, args.tolerance)
    text = rep.format()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncdmm", description="Meshless two-phase flow simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-cloud", help="write a point cloud from the [cloud] section")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--with-virtual", action="store_true", help="append virtual nodes")
    g.set_defaults(func=cmd_gen_cloud)

    c = sub.add_parser("cv", help="solve control volumes and write them")
    c.add_argument("--config", required=True)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_cv)

    r = sub.add_parser("run", help="run the simulation schedule")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("compare", help="RMS pressure and saturation differences of two snapshots")
    m.add_argument("--candidate", required=True)
    m.add_argument("--reference", required=True)
    m.add_argument("--tolerance", type=float, default=1e-6, help="node matching distance in m")
    m.add_argument("--out")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NcdmmError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
