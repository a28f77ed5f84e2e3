"""Command-line interface.

Subcommands cover fixture generation, mesh validation, variational and
baseline tree builds, error evaluation, the collision benchmark, and box
exports. A JSON config file supplies defaults; command-line flags win.
Report-producing commands render matplotlib figures next to the delimited
output. Exit codes: 0 success, 2 validation failure, 3 config error,
4 I/O error.
"""

import copy
import json
import logging
import os
import sys

import click
import numpy as np

from . import baseline as baseline_mod
from . import bench as bench_mod
from . import fixtures as fixtures_mod
from . import hierarchy as hier_mod
from . import mesh as mesh_mod
from . import outside as outside_mod
from . import partition as part_mod
from . import reporting

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONFIG = 3
EXIT_IO = 4

DEFAULT_CONFIG = {
    "estimator": {"m": 16, "cache_quantum": 1e-4},
    "lloyd": {"max_iters": 6, "stall_window": 3, "stall_tol": 1e-3,
              "stop_below_rel": 1e-4, "rng_seed": 0, "max_steps": 25},
    "hierarchy": {"branching": 2, "depth": 2, "weight_mode": "l_sub",
                  "max_cycles": 1},
    "bench": {"poses": 1000, "c_v": 1.0, "c_p": 5.0, "rng_seed": 0,
              "meshes": {}, "trees": {}},
}


class CliError(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as e:
            raise CliError("cannot read config: %s" % e, EXIT_IO)
        except json.JSONDecodeError as e:
            raise CliError("malformed config: %s" % e, EXIT_CONFIG)
        if not isinstance(user, dict):
            raise CliError("config root must be an object", EXIT_CONFIG)
        cfg = _merge(cfg, user)
    return cfg


def _load_mesh(path):
    try:
        return mesh_mod.load_mesh(path)
    except OSError as e:
        raise CliError("cannot read mesh: %s" % e, EXIT_IO)
    except mesh_mod.MeshError as e:
        raise CliError("invalid mesh: %s" % e, EXIT_VALIDATION)


def _require_watertight(mesh):
    rep = mesh_mod.validate_solid(mesh)
    if not (rep.watertight and rep.consistently_oriented):
        doc = {
            "watertight": rep.watertight,
            "consistently_oriented": rep.consistently_oriented,
            "signed_volume": rep.signed_volume,
            "defect_edges": [list(map(int, e)) for e in rep.defect_edges],
        }
        click.echo(json.dumps(doc, indent=1, sort_keys=True))
        raise CliError("mesh is not a watertight oriented solid",
                       EXIT_VALIDATION)


def _ensure_outdir(out):
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        raise CliError("output directory unusable: %s" % e, EXIT_IO)


def _grid(cfg):
    try:
        est = outside_mod.EstimatorConfig(m=int(cfg["estimator"]["m"]))
    except (ValueError, TypeError, KeyError) as e:
        raise CliError("bad estimator config: %s" % e, EXIT_CONFIG)
    return outside_mod.build_direction_grid(est.m)


def _hier_config(cfg, mesh):
    lc = cfg["lloyd"]
    hc = cfg["hierarchy"]
    try:
        descent = part_mod.DescentConfig(max_steps=int(lc["max_steps"]))
        lloyd = part_mod.LloydConfig(
            n_clusters=int(hc["branching"]),
            max_iters=int(lc["max_iters"]),
            stall_window=int(lc["stall_window"]),
            stall_tol=float(lc["stall_tol"]),
            stop_below=float(lc["stop_below_rel"]) * mesh.diagonal ** 3,
            descent=descent,
            rng_seed=int(lc["rng_seed"]),
        )
        wm = hc["weight_mode"]
        if wm != "l_sub":
            wm = tuple(float(x) for x in wm)
        return hier_mod.HierarchyConfig(
            branching=int(hc["branching"]),
            depth=int(hc["depth"]),
            weight_mode=wm,
            lloyd=lloyd,
            max_cycles=int(hc["max_cycles"]),
        )
    except (ValueError, TypeError, KeyError) as e:
        raise CliError("bad build config: %s" % e, EXIT_CONFIG)


def _apply_overrides(cfg, m, branching, depth, cycles, seed, poses):
    if m is not None:
        cfg["estimator"]["m"] = m
    if branching is not None:
        cfg["hierarchy"]["branching"] = branching
    if depth is not None:
        cfg["hierarchy"]["depth"] = depth
    if cycles is not None:
        cfg["hierarchy"]["max_cycles"] = cycles
    if seed is not None:
        cfg["lloyd"]["rng_seed"] = seed
        cfg["bench"]["rng_seed"] = seed
    if poses is not None:
        cfg["bench"]["poses"] = poses
    return cfg


@click.group()
def main():
    """Hierarchical oriented-bounding-box toolkit."""
    logging.basicConfig(
        level=os.environ.get("VOBB_LOGLEVEL", "WARNING"),
        format="%(levelname)s %(name)s: %(message)s",
    )
    threads = os.environ.get("VOBB_THREADS")
    if threads:
        try:
            n = int(threads)
            if n < 1:
                raise ValueError
        except ValueError:
            raise CliError("VOBB_THREADS must be a positive integer",
                           EXIT_CONFIG)
        import numba
        numba.set_num_threads(n)


@main.command()
@click.option("--out", required=True, type=click.Path())
def fixtures(out):
    """Write the analytic fixture meshes (OBJ, deterministic bytes)."""
    _ensure_outdir(out)
    for name, (v, f) in (
        ("cube", fixtures_mod.cube()),
        ("icosphere", fixtures_mod.icosphere()),
        ("dumbbell", fixtures_mod.dumbbell()),
    ):
        fixtures_mod.write_obj(os.path.join(out, name + ".obj"), v, f)
        click.echo("wrote %s.obj" % name)


@main.command()
@click.option("--mesh", "mesh_path", required=True, type=click.Path())
def validate(mesh_path):
    """Check that a mesh is a watertight, consistently oriented solid."""
    m = _load_mesh(mesh_path)
    rep = mesh_mod.validate_solid(m)
    doc = {
        "watertight": rep.watertight,
        "consistently_oriented": rep.consistently_oriented,
        "signed_volume": rep.signed_volume,
        "defect_edges": [list(map(int, e)) for e in rep.defect_edges],
        "n_vertices": int(m.vertices.shape[0]),
        "n_faces": int(m.n_faces),
    }
    click.echo(json.dumps(doc, indent=1, sort_keys=True))
    if not (rep.watertight and rep.consistently_oriented):
        sys.exit(EXIT_VALIDATION)


def _write_error_report(out, stem, report, digest):
    doc = {
        "format_version": reporting.REPORT_FORMAT_VERSION,
        "config_digest": digest,
        "per_level_omv": {str(k): v for k, v in
                          sorted(report.per_level_omv.items())},
        "weighted_total": report.weighted_total,
        "trace": [{"step": s, "label": l, "weighted_total": t}
                  for s, l, t in report.trace],
    }
    reporting.write_json(os.path.join(out, stem + ".json"), doc)
    if report.trace:
        reporting.fig_error_trace(report.trace,
                                  os.path.join(out, stem + "_trace.png"))
    reporting.fig_per_level({"tree": report.per_level_omv},
                            os.path.join(out, stem + "_levels.png"))


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--mesh", "mesh_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--m", type=int, default=None)
@click.option("--branching", type=int, default=None)
@click.option("--depth", type=int, default=None)
@click.option("--cycles", type=int, default=None)
@click.option("--seed", type=int, default=None)
def build(config_path, mesh_path, out, m, branching, depth, cycles, seed):
    """Build the variational tree; write tree file + error report/figures."""
    cfg = _apply_overrides(load_config(config_path), m, branching, depth,
                           cycles, seed, None)
    digest = reporting.config_digest(cfg)
    mesh = _load_mesh(mesh_path)
    _require_watertight(mesh)
    grid = _grid(cfg)
    hcfg = _hier_config(cfg, mesh)
    tree, report = hier_mod.reciprocate(mesh, hcfg, grid)
    _ensure_outdir(out)
    hier_mod.save_tree(
        tree, os.path.join(out, "tree.json"), hier_mod.mesh_hash(mesh),
        weight_mode=cfg["hierarchy"]["weight_mode"],
        config_digest=digest,
    )
    _write_error_report(out, "error_report", report, digest)
    click.echo("weighted_total %.17g" % report.weighted_total)


@main.command("build-baseline")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--mesh", "mesh_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--m", type=int, default=None)
@click.option("--depth", type=int, default=None)
def build_baseline(config_path, mesh_path, out, m, depth):
    """Build the PCA-split baseline tree; write the tree file."""
    cfg = _apply_overrides(load_config(config_path), m, None, depth, None,
                           None, None)
    digest = reporting.config_digest(cfg)
    mesh = _load_mesh(mesh_path)
    _require_watertight(mesh)
    try:
        bcfg = baseline_mod.BaselineConfig(depth=int(cfg["hierarchy"]["depth"]))
    except (ValueError, TypeError) as e:
        raise CliError("bad baseline config: %s" % e, EXIT_CONFIG)
    tree = baseline_mod.build_pca_tree(mesh, bcfg)
    _ensure_outdir(out)
    hier_mod.save_tree(
        tree, os.path.join(out, "baseline_tree.json"),
        hier_mod.mesh_hash(mesh),
        weight_mode=cfg["hierarchy"]["weight_mode"],
        config_digest=digest,
    )
    click.echo("nodes %d" % tree.n_nodes())


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--tree", "tree_path", required=True, type=click.Path())
@click.option("--mesh", "mesh_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--m", type=int, default=None)
def eval_cmd(config_path, tree_path, mesh_path, out, m):
    """Recompute a tree's per-level error report against its mesh."""
    cfg = _apply_overrides(load_config(config_path), m, None, None, None,
                           None, None)
    digest = reporting.config_digest(cfg)
    mesh = _load_mesh(mesh_path)
    _require_watertight(mesh)
    try:
        tree, doc = hier_mod.load_tree(tree_path, mesh)
    except OSError as e:
        raise CliError("cannot read tree: %s" % e, EXIT_IO)
    except (hier_mod.TreeFormatError, json.JSONDecodeError, KeyError) as e:
        raise CliError("bad tree file: %s" % e, EXIT_VALIDATION)
    grid = _grid(cfg)
    hier_mod.refresh_obvs(mesh, tree, grid, None)
    wm = doc.get("weight_mode", "l_sub")
    if wm != "l_sub":
        wm = tuple(float(x) for x in wm)
    report = hier_mod.tree_error(mesh, tree, grid, None, weight_mode=wm)
    _ensure_outdir(out)
    _write_error_report(out, "eval_report", report, digest)
    rows = [{"level": lv, "omv": "%.17g" % s,
             "weight": "%.17g" % hier_mod.level_weight(tree.depth, lv, wm)}
            for lv, s in sorted(report.per_level_omv.items())]
    reporting.write_table(os.path.join(out, "eval_levels.csv"),
                          ["level", "omv", "weight"], rows)
    click.echo("weighted_total %.17g" % report.weighted_total)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--poses", type=int, default=None)
@click.option("--seed", type=int, default=None)
def bench(config_path, out, poses, seed):
    """Run the collision benchmark described by the config file.

    The config's "bench" section must name two meshes and, per tree id,
    a tree file pair: {"meshes": {"a": PATH, "b": PATH},
    "trees": {"variational": [TREE_A, TREE_B], "baseline": [...]}}.
    """
    cfg = _apply_overrides(load_config(config_path), None, None, None, None,
                           seed, poses)
    digest = reporting.config_digest(cfg)
    b = cfg["bench"]
    if set(b.get("meshes", {})) != {"a", "b"} or not b.get("trees"):
        raise CliError('bench config needs meshes {"a","b"} and trees',
                       EXIT_CONFIG)
    mesh_a = _load_mesh(b["meshes"]["a"])
    mesh_b = _load_mesh(b["meshes"]["b"])
    trees = {}
    for tid, pair in sorted(b["trees"].items()):
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise CliError("tree entry %r must be a path pair" % tid,
                           EXIT_CONFIG)
        loaded = []
        for path, mm in zip(pair, (mesh_a, mesh_b)):
            try:
                tr, _ = hier_mod.load_tree(path, mm)
            except OSError as e:
                raise CliError("cannot read tree: %s" % e, EXIT_IO)
            except (hier_mod.TreeFormatError, json.JSONDecodeError,
                    KeyError) as e:
                raise CliError("bad tree file %s: %s" % (path, e),
                               EXIT_VALIDATION)
            loaded.append(tr)
        trees[tid] = tuple(loaded)
    try:
        cost = bench_mod.CostModel(c_v=float(b["c_v"]), c_p=float(b["c_p"]))
        k = int(b["poses"])
        rng_seed = int(b["rng_seed"])
        if k < 1:
            raise ValueError("poses must be >= 1")
    except (ValueError, TypeError, KeyError) as e:
        raise CliError("bad bench config: %s" % e, EXIT_CONFIG)
    report = bench_mod.run_bench(mesh_a, mesh_b, trees, k, cost, rng_seed)
    _ensure_outdir(out)
    rows = [{"pose": r["pose"], "tree": r["tree"], "n_v": r["n_v"],
             "n_p": r["n_p"], "hit": int(r["hit"]),
             "cost": "%.17g" % r["cost"]} for r in report.rows]
    reporting.write_table(os.path.join(out, "bench_poses.csv"),
                          ["pose", "tree", "n_v", "n_p", "hit", "cost"], rows)
    summary = dict(report.summary)
    summary["format_version"] = reporting.REPORT_FORMAT_VERSION
    summary["config_digest"] = digest
    reporting.write_json(os.path.join(out, "bench_summary.json"), summary)
    reporting.fig_bench(report.summary, os.path.join(out, "bench.png"))
    if "n_v_reduction" in report.summary:
        click.echo("n_v_reduction %.17g" % report.summary["n_v_reduction"])
    else:
        click.echo("done")


@main.command("export-obj")
@click.option("--tree", "tree_path", required=True, type=click.Path())
@click.option("--level", type=int, required=True)
@click.option("--out", required=True, type=click.Path())
def export_obj(tree_path, level, out):
    """Export every box at a tree level as OBJ groups (8 verts, 12 tris)."""
    try:
        tree, _ = hier_mod.load_tree(tree_path)
    except OSError as e:
        raise CliError("cannot read tree: %s" % e, EXIT_IO)
    except (hier_mod.TreeFormatError, json.JSONDecodeError, KeyError) as e:
        raise CliError("bad tree file: %s" % e, EXIT_VALIDATION)
    levels = tree.levels()
    if level < 0 or level not in levels:
        raise CliError("level %d not present (max %d)"
                       % (level, max(levels)), EXIT_CONFIG)
    lines = []
    base = 0
    # canonical unit-box faces, CCW outward
    box_faces = fixtures_mod.box_face_indices()
    for nid in levels[level]:
        nd = tree.nodes[nid]
        lines.append("g node_%d" % nid)
        for c in nd.box.corners():
            lines.append("v %s %s %s"
                         % (repr(float(c[0])), repr(float(c[1])),
                            repr(float(c[2]))))
        for tri in box_faces:
            lines.append("f %d %d %d" % tuple(base + i + 1 for i in tri))
        base += 8
    try:
        tmp = out + ".tmp"
        with open(tmp, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, out)
    except OSError as e:
        raise CliError("cannot write: %s" % e, EXIT_IO)
    click.echo("wrote %d boxes" % len(levels[level]))


if __name__ == "__main__":
    main()
