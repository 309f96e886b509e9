import csv
import io
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from contactopt import bench, scenarios
from contactopt.cli import EXIT_IO, EXIT_OK, EXIT_PLANNER, main
from contactopt.kopt import solve_kopt
from contactopt.qopt import Trajectory
from contactopt.render import render_svg, snapshot_steps
from contactopt.scene import RobotSpec, Scenario, scenario_to_dict

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden"


def _write(tmp_path, sc, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(scenario_to_dict(sc)))
    return str(path)


def test_run_writes_three_files(tmp_path):
    out = tmp_path / "out"
    code = main(["run", str(ROOT / "scenarios" / "sliding_box.json"), "--out", str(out),
                 "--relaxation", "encoded", "--K", "2"])
    assert code == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["metrics.json", "snapshots.svg", "trajectory.json"]
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["config"]["relaxation"] == "encoded:4"
    traj = Trajectory.from_dict(json.loads((out / "trajectory.json").read_text()))
    assert traj.T == 5


def test_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_IO
    assert "error" in capsys.readouterr().err


def test_schema_error_is_reported(tmp_path, capsys):
    d = scenario_to_dict(scenarios.pivot())
    d["object"]["mass"] = -1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_IO
    assert "invalid scenario" in capsys.readouterr().err


def test_planner_failure_still_writes_metrics(tmp_path):
    base = scenarios.grasp_lift()
    robots = tuple(RobotSpec(r.id, mu=0.0) for r in base.robots)
    sc = Scenario(base.object, robots, base.env, base.q_start, base.q_goal, base.T, base.step)
    out = tmp_path / "out"
    code = main(["run", _write(tmp_path, sc), "--out", str(out), "--relaxation", "mccormick", "--max-cuts", "0"])
    assert code == EXIT_PLANNER
    assert [p.name for p in out.iterdir()] == ["metrics.json"]
    assert json.loads((out / "metrics.json").read_text())["success"] is False


def test_export_lp(tmp_path):
    out = tmp_path / "m.lp"
    assert main(["export-lp", str(ROOT / "scenarios" / "resting_box.json"), "--out", str(out),
                 "--relaxation", "encoded", "--C", "4"]) == EXIT_OK
    text = out.read_text()
    assert text.startswith("\\ Model") and text.rstrip().endswith("End")
    assert "Binaries" in text


def _synthetic_trajectory(sc):
    kin = solve_kopt(sc)
    T, Nr, Nv = sc.T, len(sc.robots), sc.object.n_vertices
    Np = sc.object.n_surfaces
    return Trajectory(poses=kin.poses, rates=kin.rates, p=np.zeros((T + 1, Nr, 2)), u=np.zeros((T + 1, Nr, 2)),
                      lam=np.zeros((T + 1, Nr, Np, 2)), alpha=np.zeros((T + 1, Nr)),
                      surface=np.zeros((T + 1, Nr), dtype=int), f=np.zeros((T + 1, Nv, 2)),
                      f_local=np.zeros((T + 1, Nv, 2)), contact_map=kin.contact_map,
                      halfspace=kin.halfspace, step=sc.step)


@pytest.mark.parametrize("n, expected", [(10, 10), (1, 1)])
def test_render_snapshot_count(n, expected):
    sc = scenarios.sliding_box(T=50)
    svg = render_svg(sc, _synthetic_trajectory(sc), n)
    root = ET.fromstring(svg)
    polys = [e for e in root.iter() if e.tag.endswith("polygon") and e.get("class") == "object"]
    assert len(polys) == expected
    assert any(e.get("class") == "goal" for e in root.iter())


def test_snapshot_steps():
    assert snapshot_steps(50, 1) == [50]
    s = snapshot_steps(50, 10)
    assert len(s) == 10 and s[0] == 0 and s[-1] == 50
    assert snapshot_steps(3, 10) == [0, 1, 2, 3]


def test_render_command(tmp_path):
    sc = scenarios.sliding_box(T=6)
    traj_path = tmp_path / "traj.json"
    traj_path.write_text(_synthetic_trajectory(sc).to_json())
    out = tmp_path / "s.svg"
    assert main(["render", _write(tmp_path, sc), str(traj_path), "--out", str(out), "--snapshots", "3"]) == EXIT_OK
    ET.fromstring(out.read_text())
    (tmp_path / "broken.json").write_text("{}")
    assert main(["render", _write(tmp_path, sc), str(tmp_path / "broken.json"), "--out", str(out)]) == EXIT_IO


def _strip_timing(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: v for k, v in r.items() if k not in ("a1", "a2")} for r in rows]


def test_bench_is_deterministic_and_schema_stable(tmp_path):
    args = ["bench", "--samples", "2", "--horizons", "4", "--options", "mccormick", "encoded:2",
            "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "results.csv").read_text()
    b = (tmp_path / "b" / "results.csv").read_text()
    assert _strip_timing(a) == _strip_timing(b)
    assert a.splitlines()[0] == (GOLDEN / "bench_header.csv").read_text().strip()
    rows = _strip_timing(a)
    assert len(rows) == 4
    assert {r["option"] for r in rows} == {"mccormick", "encoded:2"}
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())["summary"]
    assert {s["option"] for s in summary} == {"mccormick", "encoded:2"}


def test_bench_samples_are_seeded():
    spec = bench.BenchSpec(n_samples=5, seed=11)
    assert bench.sample_poses(spec) == bench.sample_poses(bench.BenchSpec(n_samples=5, seed=11))
    assert bench.sample_poses(spec) != bench.sample_poses(bench.BenchSpec(n_samples=5, seed=12))
    for start, goal in bench.sample_poses(spec):
        for q in (start, goal):
            assert abs(q.x) <= 0.05 and abs(q.theta) <= np.pi / 2
            assert q.y >= bench.resting_height(0.07, 0.05, q.theta) - 1e-12


def test_bench_spec_validation(tmp_path):
    assert bench.BenchSpec.from_dict({"full_scale": True}).n_samples == 500
    with pytest.raises((ValueError, TypeError)):
        bench.BenchSpec.from_dict({"samples": 3})
    (tmp_path / "spec.json").write_text('{"n_samples": "many"}')
    assert main(["bench", str(tmp_path / "spec.json"), "--out", str(tmp_path / "o")]) == EXIT_IO
