import csv
import json
import shutil

import pytest

from innovrefine.cli import main
from innovrefine.experiment import ExperimentConfig, derive_seed

FAST = ["--iters", "40", "--alpha", "0.05"]


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "scenes"
    assert main(["gen", "--out", str(out), "--n-scenes", "3", "--seed", "5"]) == 0
    return out


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_gen_writes_scenes_and_manifest(scenes):
    manifest = json.loads((scenes / "manifest.json").read_text())
    assert [e["name"] for e in manifest["scenes"]] == ["scene_0000", "scene_0001", "scene_0002"]
    assert [e["seed"] for e in manifest["scenes"]] == [derive_seed(5, "scene", i) for i in range(3)]
    for e in manifest["scenes"]:
        assert {p.name for p in (scenes / e["name"]).iterdir()} >= {"model.ply", "scene.json", "field.ivf"}


def test_gen_is_byte_reproducible(scenes, tmp_path):
    again = tmp_path / "again"
    assert main(["gen", "--out", str(again), "--n-scenes", "3", "--seed", "5"]) == 0
    assert _files(again) == _files(scenes)
    assert _files(again / "scene_0001") == _files(scenes / "scene_0001")


def test_gen_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen", "--out", str(blocker / "sub"), "--n-scenes", "1"]) != 0
    assert "IoError" in capsys.readouterr().err


def test_refine_outputs(scenes, tmp_path):
    out = tmp_path / "run"
    assert main(["refine", str(scenes), "--out", str(out), *FAST]) == 0
    names = set(p.name for p in out.iterdir())
    assert {"results.json", "errors.json", "convergence.svg"} <= names
    for i in range(3):
        assert {f"trace_scene_{i:04d}.csv", f"plot_scene_{i:04d}.svg"} <= names
    res = json.loads((out / "results.json").read_text())
    assert len(res["scenes"]) == 3
    assert set(res["aggregate"]) == {"initial", "final"}
    assert json.loads((out / "errors.json").read_text()) == []
    rec = res["scenes"][0]
    assert rec["iterations"] == 40
    assert rec["rho"] == 2.0
    assert len(rec["final"]["keypoints"]) == 8
    assert set(rec["final"]["report"]) == {"add", "add_s", "proj2d", "add_correct", "proj_correct"}


def test_refine_jobs_do_not_change_outputs(scenes, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["refine", str(scenes), "--out", str(a), *FAST]) == 0
    assert main(["refine", str(scenes), "--out", str(b), "--jobs", "2", *FAST]) == 0
    for name in ["results.json", "trace_scene_0000.csv", "trace_scene_0002.csv"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_zero_iteration_run_keeps_reports(scenes, tmp_path):
    out = tmp_path / "zero"
    assert main(["refine", str(scenes), "--out", str(out), "--tol", "inf"]) == 0
    res = json.loads((out / "results.json").read_text())
    for rec in res["scenes"]:
        assert rec["iterations"] == 0
        assert rec["initial"] == rec["final"]
    assert res["aggregate"]["initial"] == res["aggregate"]["final"]


def test_refine_reports_scene_errors(scenes, tmp_path):
    broken = tmp_path / "scenes"
    shutil.copytree(scenes, broken)
    (broken / "scene_0001" / "scene.json").write_text("{")
    out = tmp_path / "run"
    assert main(["refine", str(broken), "--out", str(out), *FAST]) == 1
    errors = json.loads((out / "errors.json").read_text())
    assert [e["scene"] for e in errors] == ["scene_0001"]
    assert len(json.loads((out / "results.json").read_text())["scenes"]) == 2


def test_eval_recomputes_aggregates(scenes, tmp_path):
    out = tmp_path / "run"
    main(["refine", str(scenes), "--out", str(out), *FAST])
    assert main(["eval", str(out)]) == 0
    ev = json.loads((out / "eval.json").read_text())
    res = json.loads((out / "results.json").read_text())
    assert ev == res["aggregate"]
    rows = list(csv.DictReader(open(out / "eval.csv")))
    assert [r["stage"] for r in rows] == ["initial", "final"]


def test_sweep_single_cell(tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--out", str(out), "--n-scenes", "2", "--alpha", "0.1", "--iters", "10",
            "--noise-sigma", "0"]
    assert main(args) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 1
    assert float(rows[0]["mean_rho"]) == 1.0
    assert (out / "sweep.svg").exists()


def test_sweep_sd_follows_closed_form_ordering(tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--out", str(out), "--n-scenes", "2", "--alpha", "0.01,0.1", "--iters", "30",
            "--noise-sigma", "0", "--tol", "0"]
    assert main(args) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    sd = {float(r["alpha"]): float(r["mean_final_sd"]) for r in rows}
    sd0 = {float(r["alpha"]): float(r["mean_initial_sd"]) for r in rows}
    for a in sd:
        assert sd[a] == pytest.approx((1 - a) ** 60 * sd0[a], rel=1e-9)
    assert sd[0.1] < sd[0.01]


def test_sweep_empty_grid_is_usage_error(tmp_path, capsys):
    assert main(["sweep", "--out", str(tmp_path / "sw"), "--alpha", ""]) == 2
    assert "usage error" in capsys.readouterr().err


def test_flags_override_file_override_defaults(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 3, "refine": {"alpha": 0.2, "iters": 9}}))
    cfg = ExperimentConfig.load(cfg_file, {"refine": {"iters": 4}})
    assert cfg.seed == 3
    rc = cfg.refine_config()
    assert rc.schedule(0) == 0.2
    assert rc.max_iterations == 4
    assert rc.convergence_tol == 1e-4
