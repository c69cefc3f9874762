from __future__ import annotations

import json
import subprocess
import sys

import pytest

from trajreuse.cli import main
from trajreuse.harness import WorkloadConfig
from trajreuse.store import ExperienceStore


@pytest.fixture
def small_workload(tmp_path):
    cfg = WorkloadConfig.load()
    path = tmp_path / "wl.json"
    d = cfg.to_dict()
    d.update(n_queries=30, n_families=3)
    path.write_text(json.dumps(d))
    return path


def test_init_and_refuse_existing(tmp_path, capsys):
    assert main(["init", str(tmp_path / "st")]) == 0
    assert (tmp_path / "st" / "manifest.json").exists()
    assert main(["init", str(tmp_path / "st")]) == 2
    assert "error:" in capsys.readouterr().err


def test_run_compare_route_replay(tmp_path, small_workload, capsys):
    ours, base = tmp_path / "ours.json", tmp_path / "rtp.json"
    assert main(["run", "--workload", str(small_workload), "--strategy", "AdaptiveReuse",
                 "--store", str(tmp_path / "a"), "--out", str(ours)]) == 0
    assert main(["run", "--workload", str(small_workload), "--strategy", "RealTimePlanning",
                 "--store", str(tmp_path / "b"), "--out", str(base)]) == 0
    capsys.readouterr()

    code = main(["compare", str(ours), str(base), "--out", str(tmp_path / "cmp.json")])
    report = json.loads((tmp_path / "cmp.json").read_text())
    assert code == (0 if report["passed"] else 1)
    assert "vs RealTimePlanning" in capsys.readouterr().out

    store = ExperienceStore.load(tmp_path / "a")
    t = max(store.trajectories(), key=lambda t: t.metadata.usage_count)
    assert main(["route", "--query", t.trigger.text, "--store", str(tmp_path / "a")]) == 0
    decision = json.loads(capsys.readouterr().out)
    assert decision["route"] in ("A_DirectReuse", "B_Rewrite")
    assert decision["best_match"]["score"] == pytest.approx(1.0)

    code = main(["replay", "--trajectory-id", t.trajectory_id, "--store", str(tmp_path / "a")])
    log = json.loads(capsys.readouterr().out)
    assert code == (0 if log["outcome"] == "Success" else 1)
    assert main(["replay", "--trajectory-id", "nope", "--store", str(tmp_path / "a")]) == 2


def test_run_needs_fresh_store(tmp_path, small_workload):
    args = ["run", "--workload", str(small_workload), "--store", str(tmp_path / "a"), "--out", str(tmp_path / "o.json")]
    assert main(args) == 0
    assert main(args) == 2


def test_compare_without_baseline(tmp_path, small_workload, capsys):
    out = tmp_path / "ours.json"
    main(["run", "--workload", str(small_workload), "--store", str(tmp_path / "a"), "--out", str(out)])
    assert main(["compare", str(out), "--out", str(tmp_path / "c.json")]) == 2
    assert "RealTimePlanning" in capsys.readouterr().err


def test_run_is_reproducible(tmp_path, small_workload):
    for name in ("x", "y"):
        main(["run", "--workload", str(small_workload), "--store", str(tmp_path / name),
              "--seed", "11", "--out", str(tmp_path / f"{name}.json")])
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()
    assert json.loads((tmp_path / "x.json").read_text())["workload"]["seed"] == 11


def test_env_twins(tmp_path, small_workload, monkeypatch):
    monkeypatch.setenv("WG_WORKLOAD", str(small_workload))
    monkeypatch.setenv("WG_STORE", str(tmp_path / "envstore"))
    monkeypatch.setenv("WG_OUT", str(tmp_path / "env.json"))
    monkeypatch.setenv("WG_STRATEGY", "BasicICL")
    assert main(["run"]) == 0
    assert json.loads((tmp_path / "env.json").read_text())["strategy"] == "BasicICL"


def test_bench(tmp_path, small_workload):
    code = main(["bench", "--workload", str(small_workload), "--out-dir", str(tmp_path / "bench")])
    report = json.loads((tmp_path / "bench" / "comparison.json").read_text())
    assert code == (0 if report["passed"] else 1)
    assert set(report["strategies"]) == {"AdaptiveReuse", "RealTimePlanning", "StaticSingleTrajectory", "BasicICL"}


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "trajreuse", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for verb in ("init", "run", "compare", "route", "replay"):
        assert verb in out.stdout
