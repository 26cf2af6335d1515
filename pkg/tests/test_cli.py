import csv
import hashlib
import json
from pathlib import Path

import pytest

from humi.cli import main

RATIO_ONE_CONFIG = "retarget:\n  human_height: 1.30\n  robot_height: 1.30\n"


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """demo-recording -> sync -> package, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    rec = root / "rec"
    config = root / "humi.yaml"
    config.write_text(RATIO_ONE_CONFIG)
    assert main(["demo-recording", "--out", str(rec), "--seed", "3"]) == 0
    assert main(["sync", str(rec)]) == 0
    dataset = root / "dataset"
    assert (
        main(["package", str(rec), "--out", str(dataset), "--seed", "5", "--config", str(config)])
        == 0
    )
    return {"root": root, "rec": rec, "dataset": dataset, "config": config}


class TestSync:
    def test_offsets_written_and_recovered(self, workspace):
        doc = json.loads((workspace["rec"] / "offsets.json").read_text())
        assert doc["format"] == "humi-sync/1"
        assert abs(doc["offsets"]["left_gripper"] - 0.8) <= 0.02
        assert abs(doc["offsets"]["right_gripper"] + 0.45) <= 0.02

    def test_idempotent_rerun(self, workspace):
        before = (workspace["rec"] / "offsets.json").read_bytes()
        assert main(["sync", str(workspace["rec"])]) == 0
        assert (workspace["rec"] / "offsets.json").read_bytes() == before

    def test_missing_manifest_exit_2(self, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        assert main(["sync", str(empty)]) == 2

    def test_run_manifest_written(self, workspace):
        doc = json.loads((workspace["rec"] / "offsets.run.json").read_text())
        assert doc["format"] == "humi-run/1"
        assert doc["command"] == "sync"
        assert "config" in doc and "wall_time_s" in doc


class TestPackage:
    def test_two_subsets(self, workspace):
        children = {p.name for p in workspace["dataset"].iterdir()}
        assert children == {"high_level", "low_level", "manifest.json"}

    def test_byte_identical_rerun(self, workspace, tmp_path):
        out2 = tmp_path / "dataset2"
        assert (
            main(
                [
                    "package",
                    str(workspace["rec"]),
                    "--out",
                    str(out2),
                    "--seed",
                    "5",
                    "--config",
                    str(workspace["config"]),
                ]
            )
            == 0
        )
        assert tree_digest(workspace["dataset"]) == tree_digest(out2)

    def test_corrupt_stream_exit_2_names_file(self, workspace, tmp_path, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(workspace["rec"], broken)
        victim = broken / "trackers" / "pelvis.jsonl"
        victim.write_text("this is { not json\n")
        assert main(["package", str(broken), "--out", str(tmp_path / "out")]) == 2
        assert "pelvis.jsonl" in capsys.readouterr().err


class TestSimulate:
    def test_target_mode_zero_discontinuity(self, workspace, tmp_path):
        out = tmp_path / "sim"
        code = main(
            [
                "simulate",
                "--dataset", str(workspace["dataset"]),
                "--mode", "target",
                "--blind-style", "relative",
                "--waypoints", "11",
                "--waypoint-dt", "0.1",
                "--out", str(out),
            ]
        )
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        for ep in metrics["episodes"].values():
            for boundary in ep["boundary_discontinuities"]:
                for dp, _ in boundary.values():
                    assert dp < 1e-9
        assert (out / "boundaries.png").exists()
        assert (out / "drift.png").exists()
        assert (out / "tracking.png").exists()
        with open(out / "boundaries.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["episode", "boundary", "keypoint", "position_m", "rotation_rad"]
        assert len(rows) > 1

    def test_executed_mode_nonzero_discontinuity(self, workspace, tmp_path):
        out = tmp_path / "sim_exec"
        code = main(
            [
                "simulate",
                "--dataset", str(workspace["dataset"]),
                "--mode", "executed",
                "--waypoints", "11",
                "--waypoint-dt", "0.1",
                "--out", str(out),
            ]
        )
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        jumps = [
            dp
            for ep in metrics["episodes"].values()
            for boundary in ep["boundary_discontinuities"]
            for dp, _ in boundary.values()
        ]
        assert max(jumps) > 1e-4

    def test_absolute_drift_curve(self, workspace, tmp_path):
        out = tmp_path / "sim_drift"
        code = main(
            [
                "simulate",
                "--dataset", str(workspace["dataset"]),
                "--blind-style", "absolute",
                "--drift-rate", "0.005",
                "--out", str(out),
            ]
        )
        assert code == 0
        with open(out / "drift.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        finals = {}
        for episode, style, t, err in rows:
            assert style == "absolute"
            finals[episode] = float(err)
        assert all(v > 0 for v in finals.values())

    def test_missing_dataset_exit_2(self, tmp_path):
        assert main(["simulate", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


class TestRewardEval:
    def test_self_tracking_trace(self, workspace, tmp_path):
        out = tmp_path / "rewards"
        code = main(
            [
                "reward-eval",
                "--dataset", str(workspace["dataset"]),
                "--episode", "0",
                "--step", "15000",
                "--out", str(out),
            ]
        )
        assert code == 0
        with open(out / "rewards.csv") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], rows[1:]
        assert header == ["time_s", "r_body", "r_ee", "r_total", "penalty"]
        for row in data:
            assert float(row[1]) == pytest.approx(4.0, abs=1e-9)
            assert float(row[3]) == pytest.approx(4.0 + 0.5 * float(row[2]), abs=1e-9)
        assert (out / "rewards.png").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["w_ee"] == pytest.approx(0.5)

    def test_step_zero_matches_body_only(self, workspace, tmp_path):
        out = tmp_path / "rewards0"
        assert (
            main(
                [
                    "reward-eval",
                    "--dataset", str(workspace["dataset"]),
                    "--episode", "0",
                    "--step", "0",
                    "--out", str(out),
                ]
            )
            == 0
        )
        with open(out / "rewards.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        for row in rows:
            assert float(row[3]) == pytest.approx(float(row[1]), abs=1e-12)

    def test_unknown_episode_exit_1(self, workspace, tmp_path):
        assert (
            main(
                [
                    "reward-eval",
                    "--dataset", str(workspace["dataset"]),
                    "--episode", "99",
                    "--out", str(tmp_path / "x"),
                ]
            )
            == 1
        )


class TestDemoRecording:
    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["demo-recording", "--out", str(a), "--seed", "11"]) == 0
        assert main(["demo-recording", "--out", str(b), "--seed", "11"]) == 0
        assert tree_digest(a) == tree_digest(b)
