import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from vobb import cli, fixtures


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Fixture meshes plus a small shared config that keeps builds fast."""
    root = tmp_path_factory.mktemp("cli")
    meshes = root / "meshes"
    meshes.mkdir()
    for name, (v, f) in (
        ("cube", fixtures.cube()),
        ("pair", fixtures.cube_pair()),
        ("dumbbell", fixtures.dumbbell()),
    ):
        fixtures.write_obj(str(meshes / (name + ".obj")), v, f)
    open_v, open_f = fixtures.cube()
    fixtures.write_obj(str(meshes / "open.obj"), open_v, open_f[:-1])
    cfg = {
        "estimator": {"m": 8},
        "lloyd": {"rng_seed": 7, "max_iters": 3, "stop_below_rel": 1e-4,
                  "descent": {"max_steps": 15}},
        "hierarchy": {"branching": 2, "depth": 2, "max_cycles": 1},
    }
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def _snapshot(outdir):
    return {p: (outdir / p).read_bytes()
            for p in sorted(os.listdir(outdir))}


def test_fixtures_command(runner, tmp_path):
    res = runner.invoke(cli.main, ["fixtures", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert sorted(os.listdir(tmp_path)) == ["cube.obj", "dumbbell.obj",
                                            "icosphere.obj"]
    res2 = runner.invoke(cli.main, ["fixtures", "--out", str(tmp_path)])
    assert res2.exit_code == 0
    # byte-identical rerun
    assert _snapshot(tmp_path) == _snapshot(tmp_path)


def test_validate_ok(runner, workdir):
    res = runner.invoke(cli.main,
                        ["validate", "--mesh",
                         str(workdir / "meshes" / "cube.obj")])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["watertight"] and doc["consistently_oriented"]
    assert doc["signed_volume"] == pytest.approx(1.0, rel=1e-12)


def test_validate_open_mesh_fails(runner, workdir):
    res = runner.invoke(cli.main,
                        ["validate", "--mesh",
                         str(workdir / "meshes" / "open.obj")])
    assert res.exit_code == 2
    doc = json.loads(res.output)
    assert not doc["watertight"]
    assert doc["defect_edges"]


def test_validate_missing_file(runner, tmp_path):
    res = runner.invoke(cli.main,
                        ["validate", "--mesh", str(tmp_path / "nope.obj")])
    assert res.exit_code == 4


def test_build_and_rerun_identical(runner, workdir, tmp_path):
    args = ["build", "--config", str(workdir / "config.json"),
            "--mesh", str(workdir / "meshes" / "cube.obj"),
            "--out", str(tmp_path)]
    res = runner.invoke(cli.main, args)
    assert res.exit_code == 0, res.output
    assert res.output.startswith("weighted_total ")
    names = sorted(os.listdir(tmp_path))
    assert "tree.json" in names and "error_report.json" in names
    assert "error_report_trace.png" in names
    assert "error_report_levels.png" in names
    snap = _snapshot(tmp_path)
    res2 = runner.invoke(cli.main, args)
    assert res2.exit_code == 0
    assert _snapshot(tmp_path) == snap


def test_build_rejects_open_mesh(runner, workdir, tmp_path):
    res = runner.invoke(cli.main,
                        ["build", "--mesh",
                         str(workdir / "meshes" / "open.obj"),
                         "--out", str(tmp_path)])
    assert res.exit_code == 2
    assert "watertight" in res.output


def test_flag_overrides_config(runner, workdir, tmp_path):
    args = ["build", "--config", str(workdir / "config.json"),
            "--mesh", str(workdir / "meshes" / "cube.obj"),
            "--out", str(tmp_path), "--depth", "1"]
    res = runner.invoke(cli.main, args)
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "tree.json").read_text())
    assert max(n["level"] for n in doc["nodes"]) <= 1


def test_build_bad_config_value(runner, workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"hierarchy": {"branching": 1}}))
    res = runner.invoke(cli.main,
                        ["build", "--config", str(bad),
                         "--mesh", str(workdir / "meshes" / "cube.obj"),
                         "--out", str(tmp_path / "out")])
    assert res.exit_code == 3


def test_build_malformed_config(runner, workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    res = runner.invoke(cli.main,
                        ["build", "--config", str(bad),
                         "--mesh", str(workdir / "meshes" / "cube.obj"),
                         "--out", str(tmp_path / "out")])
    assert res.exit_code == 3


@pytest.fixture(scope="module")
def built(runner, workdir, tmp_path_factory):
    """Variational + baseline trees for cube and pair, built once."""
    root = tmp_path_factory.mktemp("built")
    cfg = str(workdir / "config.json")
    paths = {}
    for name in ("cube", "pair"):
        outv = root / ("var_" + name)
        outb = root / ("base_" + name)
        mesh = str(workdir / "meshes" / (name + ".obj"))
        r = runner.invoke(cli.main, ["build", "--config", cfg, "--mesh",
                                     mesh, "--out", str(outv)])
        assert r.exit_code == 0, r.output
        r = runner.invoke(cli.main, ["build-baseline", "--config", cfg,
                                     "--mesh", mesh, "--out", str(outb)])
        assert r.exit_code == 0, r.output
        paths[name] = {"mesh": mesh, "var": str(outv / "tree.json"),
                       "base": str(outb / "baseline_tree.json")}
    return paths


def test_eval_roundtrip(runner, workdir, built, tmp_path):
    args = ["eval", "--config", str(workdir / "config.json"),
            "--tree", built["cube"]["var"],
            "--mesh", built["cube"]["mesh"], "--out", str(tmp_path)]
    res = runner.invoke(cli.main, args)
    assert res.exit_code == 0, res.output
    assert (tmp_path / "eval_levels.csv").exists()
    snap = _snapshot(tmp_path)
    res2 = runner.invoke(cli.main, args)
    assert res2.exit_code == 0
    assert _snapshot(tmp_path) == snap


def test_eval_wrong_mesh_hash(runner, workdir, built, tmp_path):
    res = runner.invoke(cli.main,
                        ["eval", "--tree", built["cube"]["var"],
                         "--mesh", built["pair"]["mesh"],
                         "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_bench_command(runner, workdir, built, tmp_path):
    cfg = json.loads((workdir / "config.json").read_text())
    cfg["bench"] = {
        "meshes": {"a": built["cube"]["mesh"], "b": built["pair"]["mesh"]},
        "trees": {"variational": [built["cube"]["var"], built["pair"]["var"]],
                  "baseline": [built["cube"]["base"],
                               built["pair"]["base"]]},
        "poses": 20, "rng_seed": 3, "c_v": 1.0, "c_p": 5.0,
    }
    cfg_path = tmp_path / "bench.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    args = ["bench", "--config", str(cfg_path), "--out", str(out)]
    res = runner.invoke(cli.main, args)
    assert res.exit_code == 0, res.output
    assert sorted(os.listdir(out)) == ["bench.png", "bench_poses.csv",
                                       "bench_summary.json"]
    summary = json.loads((out / "bench_summary.json").read_text())
    assert summary["k"] == 20
    assert "n_v_reduction" in summary
    snap = _snapshot(out)
    res2 = runner.invoke(cli.main, args)
    assert res2.exit_code == 0
    assert _snapshot(out) == snap


def test_bench_missing_section(runner, workdir, tmp_path):
    res = runner.invoke(cli.main,
                        ["bench", "--config", str(workdir / "config.json"),
                         "--out", str(tmp_path)])
    assert res.exit_code == 3


def test_export_obj(runner, built, tmp_path):
    out = tmp_path / "boxes.obj"
    res = runner.invoke(cli.main,
                        ["export-obj", "--tree", built["pair"]["var"],
                         "--level", "1", "--out", str(out)])
    assert res.exit_code == 0, res.output
    text = out.read_text()
    assert text.count("g node_") >= 2
    assert text.count("v ") % 8 == 0


def test_export_obj_bad_level(runner, built, tmp_path):
    res = runner.invoke(cli.main,
                        ["export-obj", "--tree", built["cube"]["var"],
                         "--level", "9", "--out", str(tmp_path / "x.obj")])
    assert res.exit_code == 3
