"""End-to-end acceptance gate.

Each test covers one release criterion and prints a single PASS/FAIL line
(visible with `pytest -v -rA` or `-s`) in addition to its assertions.
"""
import json
import os
import time

import numpy as np
import pytest
from click.testing import CliRunner

from vobb import baseline, bench, cli, fixtures, hierarchy as hier_mod
from vobb import mesh as mesh_mod, obb as obb_mod, outside
from vobb import partition as part_mod
from tests.test_hierarchy import check_tree, _pair_ideal_tree
from tests.test_partition import _axis_aligned_total, _connected


DUMBBELL_TIGHT_OBV = 5.0 * 1.0 * 1.0 - 2.12   # hull minus enclosed solid


def _verdict(num, name, ok, detail=""):
    line = "ACCEPTANCE %d (%s): %s" % (num, name, "PASS" if ok else "FAIL")
    if detail:
        line += " - " + detail
    print("\n" + line)
    assert ok, line


def _cache(mesh):
    return outside.ObvCache(quantum_center=1e-4 * mesh.diagonal,
                            quantum_rot=1e-4)


def _tight_box(mesh):
    params = obb_mod.ObbParams(mesh.vertices.mean(axis=0), np.zeros(3))
    return obb_mod.fit_tight(mesh.vertices, params, recenter=True)


def test_criterion_1_analytic_fixtures(cube_mesh, dumbbell_mesh, grid32):
    fails = []
    cases = [
        ("cube-in-2box", cube_mesh,
         obb_mod.Obb(np.zeros(3), np.eye(3), np.full(3, 1.0)),
         7.0, 0.02 * 7.0),
        ("coincident", cube_mesh, _tight_box(cube_mesh), 0.0, 1e-6 * 1.0),
        ("dumbbell-tight", dumbbell_mesh, _tight_box(dumbbell_mesh),
         DUMBBELL_TIGHT_OBV, 0.03 * DUMBBELL_TIGHT_OBV),
    ]
    for name, mesh, box, want, tol in cases:
        t0 = time.perf_counter()
        got = outside.estimate_obv(mesh, box, grid32)
        dt = time.perf_counter() - t0
        if abs(got - want) > tol:
            fails.append("%s got %.6g want %.6g±%.2g" % (name, got, want,
                                                         tol))
        if dt >= 5.0:
            fails.append("%s took %.1fs (limit 5s)" % (name, dt))
    _verdict(1, "analytic OBV fixtures", not fails, "; ".join(fails))


def test_criterion_2_oracle_equivalence(cube_mesh, dumbbell_mesh,
                                        icosphere_mesh, grid32):
    rng = np.random.default_rng(42)
    meshes = [cube_mesh, dumbbell_mesh, icosphere_mesh]
    fails = []
    t0 = time.perf_counter()
    for case in range(20):
        mesh = meshes[case % 3]
        rot = rng.normal(size=3) * 0.6
        center = (mesh.vertices.mean(axis=0)
                  + rng.uniform(-0.3, 0.3, size=3) * mesh.diagonal)
        half = rng.uniform(0.15, 0.6, size=3) * mesh.diagonal
        box = obb_mod.Obb(center, obb_mod.ObbParams(center, rot).matrix(),
                          half)
        est = outside.estimate_obv(mesh, box, grid32)
        ref = outside.brute_force_obv(mesh, box, n=64)
        rel = abs(est - ref) / obb_mod.box_volume(box)
        if rel > 0.03:
            fails.append("case %d rel err %.4f" % (case, rel))
    dt = time.perf_counter() - t0
    if dt >= 120.0:
        fails.append("took %.0fs (limit 120s)" % dt)
    _verdict(2, "estimator vs brute-force oracle", not fails,
             "; ".join(fails) or "20 cases in %.0fs" % dt)


def test_criterion_3_quadrature_convergence(cube_mesh):
    box = obb_mod.Obb(np.zeros(3), np.eye(3), np.full(3, 1.0))
    errs = []
    for m in (8, 16, 32):
        grid = outside.build_direction_grid(m)
        errs.append(abs(outside.estimate_obv(cube_mesh, box, grid) - 7.0))
    ok = errs[0] > errs[1] > errs[2]
    _verdict(3, "quadrature convergence", ok,
             "errors at m=8,16,32: %.3g, %.3g, %.3g" % tuple(errs))


def test_criterion_4_clustering_optimality(pair_mesh, cube_mesh, grid16):
    fails = []
    # two separated solids, N=2: optimum is one tight box each (sum ~0)
    hits = 0
    for seed in range(10):
        cfg = part_mod.LloydConfig(n_clusters=2, rng_seed=seed, max_iters=6,
                                   stop_below=1e-3,
                                   descent=part_mod.DescentConfig(
                                       max_steps=25))
        _, _, err = part_mod.lloyd_optimize(
            pair_mesh, np.arange(pair_mesh.n_faces), cfg, grid16,
            _cache(pair_mesh))
        hits += err <= 0.1
    if hits < 8:
        fails.append("sum OBV <= 0.1 in only %d/10 seeds" % hits)
    # flood on the 12-face cube matches exhaustive connected 2-partitions
    cache = _cache(cube_mesh)
    best = np.inf
    for bits in range(1, 2 ** 11):
        a = {0} | {f for f in range(1, 12) if bits & (1 << (f - 1))}
        b = set(range(12)) - a
        if not b or not _connected(cube_mesh, a) \
                or not _connected(cube_mesh, b):
            continue
        best = min(best, _axis_aligned_total(cube_mesh, [a, b], grid16))
    seeds = part_mod.init_seeds(cube_mesh, np.arange(12), 2, rng_seed=0)
    clusters = [part_mod.make_cluster(cube_mesh, s, grid16, cache, i)
                for i, s in enumerate(seeds)]
    part = part_mod.flood_partition(cube_mesh, np.arange(12), clusters,
                                    grid16, cache)
    got = _axis_aligned_total(cube_mesh, [set(c) for c in part.clusters],
                              grid16)
    if abs(got - best) > 1e-6:   # both are zero up to estimator noise
        fails.append("flood %.3g vs exhaustive %.3g" % (got, best))
    _verdict(4, "clustering reaches the optimum", not fails,
             "; ".join(fails) or "%d/10 seeds; flood matches exhaustive"
             % hits)


def test_criterion_5_monotonicity_fuzz(cube_mesh, pair_mesh, dumbbell_mesh,
                                       grid8, tmp_path):
    fails = []
    observations = 0
    rng = np.random.default_rng(0)
    # best-so-far error is non-increasing across Lloyd iterations
    for mesh in (cube_mesh, pair_mesh, dumbbell_mesh):
        for seed in range(4):
            trace = []
            cfg = part_mod.LloydConfig(n_clusters=2, rng_seed=seed,
                                       max_iters=6,
                                       descent=part_mod.DescentConfig(
                                           max_steps=20))
            part_mod.lloyd_optimize(mesh, np.arange(mesh.n_faces), cfg,
                                    grid8, _cache(mesh), trace_out=trace)
            for a, b in zip(trace, trace[1:]):
                observations += 1
                if b > a + 1e-12:
                    fails.append("lloyd trace increased %.3g -> %.3g"
                                 % (a, b))
    # accepted descent steps never go uphill
    refits = 0
    while observations < 1000 and refits < 500:
        mesh = (cube_mesh, pair_mesh, dumbbell_mesh)[refits % 3]
        start = obb_mod.ObbParams(mesh.vertices.mean(axis=0),
                                  rng.normal(size=3) * 0.5)
        trace = []
        part_mod.refit_points(mesh, mesh.vertices, start, grid8,
                              _cache(mesh),
                              part_mod.DescentConfig(max_steps=40),
                              trace=trace)
        for a, b in zip(trace, trace[1:]):
            observations += 1
            if b > a + 1e-12:
                fails.append("descent step increased %.3g -> %.3g" % (a, b))
        refits += 1
    # a rejected merge leaves the tree bit-identical
    grid16 = outside.build_direction_grid(16)
    hcfg = hier_mod.HierarchyConfig(
        branching=2, depth=2,
        lloyd=part_mod.LloydConfig(n_clusters=2, rng_seed=7, max_iters=3,
                                   descent=part_mod.DescentConfig(
                                       max_steps=20)))
    tree = _pair_ideal_tree(pair_mesh, grid16)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    hier_mod.save_tree(tree, str(p1), "x")
    tree2, improved = hier_mod.merge_bottom_up(pair_mesh, tree, 2, hcfg,
                                               grid16, _cache(pair_mesh))
    hier_mod.save_tree(tree2, str(p2), "x")
    observations += 1
    if improved or p1.read_bytes() != p2.read_bytes():
        fails.append("rejected merge mutated the tree")
    if observations < 1000:
        fails.append("only %d observations (need 1000)" % observations)
    _verdict(5, "monotonicity fuzz", not fails,
             "; ".join(fails[:3]) or "%d observations" % observations)


def test_criterion_6_structural_invariants(cube_mesh, pair_mesh,
                                           dumbbell_mesh, grid8):
    fails = []
    lloyd = part_mod.LloydConfig(n_clusters=2, rng_seed=7, max_iters=3,
                                 stop_below=1e-3,
                                 descent=part_mod.DescentConfig(max_steps=20))
    for mesh in (cube_mesh, pair_mesh, dumbbell_mesh):
        cfg = hier_mod.HierarchyConfig(branching=2, depth=2, max_cycles=1,
                                       lloyd=lloyd)
        tree, _ = hier_mod.reciprocate(mesh, cfg, grid8)
        try:
            check_tree(mesh, tree)
        except AssertionError as e:
            fails.append("reciprocate tree invalid: %s" % e)
    # an accepted merge mutation also preserves the invariants
    grid16 = outside.build_direction_grid(16)
    hcfg = hier_mod.HierarchyConfig(branching=2, depth=2, lloyd=lloyd)
    bad = _pair_ideal_tree(pair_mesh, grid16, cross=True)
    tree2, improved = hier_mod.merge_bottom_up(pair_mesh, bad, 2, hcfg,
                                               grid16, _cache(pair_mesh))
    if not improved:
        fails.append("adversarial merge not accepted")
    else:
        try:
            check_tree(pair_mesh, tree2)
        except AssertionError as e:
            fails.append("merged tree invalid: %s" % e)
    _verdict(6, "structural invariants", not fails, "; ".join(fails))


@pytest.fixture(scope="module")
def d3_trees(cube_mesh, dumbbell_mesh, icosphere_mesh, grid8):
    lloyd = part_mod.LloydConfig(n_clusters=2, rng_seed=7, max_iters=4,
                                 stop_below=1e-3,
                                 descent=part_mod.DescentConfig(max_steps=25))
    cfg = hier_mod.HierarchyConfig(branching=2, depth=3, max_cycles=1,
                                   lloyd=lloyd)
    out = {}
    for name, mesh in (("cube", cube_mesh), ("dumbbell", dumbbell_mesh),
                       ("icosphere", icosphere_mesh)):
        var, _ = hier_mod.reciprocate(mesh, cfg, grid8)
        base = baseline.build_pca_tree(mesh, baseline.BaselineConfig(depth=3))
        out[name] = (mesh, var, base)
    return out


def test_criterion_7_collision_benchmark(d3_trees):
    t0 = time.perf_counter()
    fails = []
    reductions = {}
    pairs = [("dumbbell", "cube"), ("icosphere", "dumbbell")]
    for na, nb in pairs:
        mesh_a, var_a, base_a = d3_trees[na]
        mesh_b, var_b, base_b = d3_trees[nb]
        rep = bench.run_bench(mesh_a, mesh_b,
                              {"variational": (var_a, var_b),
                               "baseline": (base_a, base_b)},
                              k=1000, rng_seed=11)
        mv = rep.summary["trees"]["variational"]["mean_n_v"]
        mb = rep.summary["trees"]["baseline"]["mean_n_v"]
        reductions["%s-vs-%s" % (na, nb)] = 1.0 - mv / mb
        if mv > mb:
            fails.append("%s-vs-%s: variational mean n_v %.1f > baseline "
                         "%.1f" % (na, nb, mv, mb))
        # every hit/no-hit decision is sound on 50 poses per fixture pair
        for pose in bench.sample_poses(mesh_a, mesh_b, 50, rng_seed=23):
            want = bench.brute_force_hit(mesh_a, mesh_b, pose)
            for ta, tb in ((var_a, var_b), (base_a, base_b)):
                st = bench.traverse_pair(ta, tb, pose, mesh_a, mesh_b)
                if st.hit != want:
                    fails.append("unsound decision on %s-vs-%s" % (na, nb))
    if max(reductions.values()) < 0.05:
        fails.append("no fixture pair reached a 5%% n_v reduction: %r"
                     % reductions)
    dt = time.perf_counter() - t0
    if dt >= 600.0:
        fails.append("took %.0fs (limit 600s)" % dt)
    _verdict(7, "collision benchmark direction", not fails,
             "; ".join(fails[:3]) or
             "n_v reductions %s in %.0fs"
             % ({k: round(v, 3) for k, v in reductions.items()}, dt))


def test_criterion_8_cli_determinism(tmp_path):
    runner = CliRunner()
    fails = []

    def snap(d):
        return {p: (d / p).read_bytes() for p in sorted(os.listdir(d))}

    def rerun(label, args, outdir):
        r1 = runner.invoke(cli.main, args)
        if r1.exit_code != 0:
            fails.append("%s failed: %s" % (label, r1.output))
            return
        s1, o1 = snap(outdir), r1.output
        r2 = runner.invoke(cli.main, args)
        if r2.exit_code != 0 or snap(outdir) != s1 or r2.output != o1:
            fails.append("%s not byte-identical on rerun" % label)

    meshes = tmp_path / "meshes"
    rerun("fixtures", ["fixtures", "--out", str(meshes)], meshes)
    cfg = {"estimator": {"m": 8},
           "lloyd": {"rng_seed": 7, "max_iters": 3,
                     "descent": {"max_steps": 15}},
           "hierarchy": {"branching": 2, "depth": 2, "max_cycles": 1}}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    cube = str(meshes / "cube.obj")
    dumbbell = str(meshes / "dumbbell.obj")

    r1 = runner.invoke(cli.main, ["validate", "--mesh", cube])
    r2 = runner.invoke(cli.main, ["validate", "--mesh", cube])
    if r1.exit_code != 0 or r1.output != r2.output:
        fails.append("validate not deterministic")

    built = {}
    for name, mesh in (("cube", cube), ("dumbbell", dumbbell)):
        outv = tmp_path / ("var_" + name)
        rerun("build " + name,
              ["build", "--config", str(cfg_path), "--mesh", mesh,
               "--out", str(outv)], outv)
        outb = tmp_path / ("base_" + name)
        rerun("build-baseline " + name,
              ["build-baseline", "--config", str(cfg_path), "--mesh", mesh,
               "--out", str(outb)], outb)
        built[name] = (str(outv / "tree.json"),
                       str(outb / "baseline_tree.json"))

    ev = tmp_path / "eval"
    rerun("eval", ["eval", "--config", str(cfg_path),
                   "--tree", built["cube"][0], "--mesh", cube,
                   "--out", str(ev)], ev)

    bcfg = dict(cfg)
    bcfg["bench"] = {"meshes": {"a": cube, "b": dumbbell},
                     "trees": {"variational": [built["cube"][0],
                                               built["dumbbell"][0]],
                               "baseline": [built["cube"][1],
                                            built["dumbbell"][1]]},
                     "poses": 20, "rng_seed": 3, "c_v": 1.0, "c_p": 5.0}
    bcfg_path = tmp_path / "bench_config.json"
    bcfg_path.write_text(json.dumps(bcfg))
    bout = tmp_path / "bench"
    rerun("bench", ["bench", "--config", str(bcfg_path), "--out",
                    str(bout)], bout)

    obj = tmp_path / "export"
    obj.mkdir()
    rerun("export-obj", ["export-obj", "--tree", built["cube"][0],
                         "--level", "1",
                         "--out", str(obj / "boxes.obj")], obj)
    _verdict(8, "CLI determinism", not fails, "; ".join(fails[:3]))
