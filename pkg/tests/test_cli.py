import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from occ4d.cli import main
from occ4d.grid import ClassDef, ClassTable, GridSpec, TrackedBox
from occ4d.io import load_manifest, load_sequence, save_boxes
from occ4d.synth import Actor, Scenario, Waypoint, write_sequence


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def cli_table():
    return ClassTable(
        (
            ClassDef(0, "free", "free"),
            ClassDef(1, "ground", "stuff"),
            ClassDef(2, "building", "stuff"),
            ClassDef(3, "vehicle", "thing"),
            ClassDef(4, "pedestrian", "thing"),
            ClassDef(5, "general object", "stuff"),
        )
    )


@pytest.fixture(scope="module")
def seq_dir(tmp_path_factory, cli_table):
    """Rendered two-actor scene: gt/ and semantic/ trees."""
    sc = Scenario(
        spec=GridSpec((16, 16, 4), 0.5, (-4.0, -4.0, -1.0)),
        table=cli_table,
        frames=4,
        ground_class=1,
        ground_layers=1,
        sequence_id="cli-demo",
        actors=(
            Actor(
                track_id=1, class_id=3, size=(1.5, 1.5, 1.0),
                waypoints=(
                    Waypoint(0, (-1.75, -0.25, 0.25)),
                    Waypoint(3, (-0.25, -0.25, 0.25)),
                ),
            ),
            Actor(
                track_id=2, class_id=4, size=(1.0, 1.0, 1.0),
                waypoints=(Waypoint(0, (1.75, 1.25, 0.25)),),
            ),
        ),
    )
    root = tmp_path_factory.mktemp("seq")
    write_sequence(sc, root)
    return root


@pytest.fixture(scope="module")
def noise_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("noise") / "noise.yaml"
    p.write_text(
        "class_flip_prob:\n"
        "  ground: 0.05\n"
        "id_switches:\n"
        "- {frame: 2, track_id: 1}\n"
        "seed: 3\n"
    )
    return p


@pytest.fixture(scope="module")
def corrupt_dir(tmp_path_factory, runner, seq_dir, noise_path):
    out = tmp_path_factory.mktemp("pred")
    res = runner.invoke(
        main,
        [
            "corrupt",
            "--gt", str(seq_dir / "gt" / "manifest.yaml"),
            "--noise", str(noise_path),
            "--out", str(out),
        ],
    )
    assert res.exit_code == 0, res.stderr
    return out


class TestSynthCommand:
    def test_renders_sample_scenario(self, runner, tmp_path):
        res = runner.invoke(
            main,
            ["synth", "--scenario", "samples/scenario.yaml", "--out", str(tmp_path / "o")],
        )
        assert res.exit_code == 0, res.stderr
        assert "wrote" in res.output
        manifest = load_manifest(tmp_path / "o" / "gt" / "manifest.yaml")
        assert len(manifest.frames) > 0

    def test_missing_scenario_is_exit_3(self, runner, tmp_path):
        res = runner.invoke(
            main,
            ["synth", "--scenario", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")],
        )
        assert res.exit_code == 3
        assert res.stderr.startswith("error: FileNotFoundError:")

    def test_unparsable_scenario_is_exit_2(self, runner, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("{\n")
        res = runner.invoke(
            main, ["synth", "--scenario", str(bad), "--out", str(tmp_path / "o")]
        )
        assert res.exit_code == 2
        assert res.stderr.startswith("error:")


class TestGenLabelsCommand:
    def test_reproduces_rendered_gt(self, runner, seq_dir, tmp_path):
        out = tmp_path / "labels"
        res = runner.invoke(
            main,
            [
                "gen-labels",
                "--semantic", str(seq_dir / "semantic" / "manifest.yaml"),
                "--out", str(out),
            ],
        )
        assert res.exit_code == 0, res.stderr
        assert "class vehicle:" in res.output
        assert "wrote 4 labeled frames" in res.output
        for f in range(4):
            rel = f"frames/{f:06d}.occ"
            assert (out / rel).read_bytes() == (seq_dir / "gt" / rel).read_bytes()
        regen = load_manifest(out / "manifest.yaml")
        assert len(list(load_sequence(regen))) == 4

    def test_explicit_boxes_override(self, runner, seq_dir, tmp_path):
        out = tmp_path / "labels"
        res = runner.invoke(
            main,
            [
                "gen-labels",
                "--semantic", str(seq_dir / "semantic" / "manifest.yaml"),
                "--boxes", str(seq_dir / "gt" / "boxes.yaml"),
                "--out", str(out),
            ],
        )
        assert res.exit_code == 0, res.stderr
        assert (out / "boxes.yaml").exists()

    def test_boxes_for_unknown_frame(self, runner, seq_dir, tmp_path):
        rogue = tmp_path / "rogue.yaml"
        save_boxes(
            [TrackedBox(frame_index=99, track_id=1, class_id=3,
                        center=(0, 0, 0), size=(1.0, 1.0, 1.0), yaw=0.0)],
            rogue,
        )
        res = runner.invoke(
            main,
            [
                "gen-labels",
                "--semantic", str(seq_dir / "semantic" / "manifest.yaml"),
                "--boxes", str(rogue),
                "--out", str(tmp_path / "o"),
            ],
        )
        assert res.exit_code == 2
        assert "error: FrameMismatch: boxes reference frame 99" in res.stderr

    def test_failure_removes_partial_outputs(self, runner, seq_dir, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(seq_dir / "semantic", broken)
        (broken / "frames" / "000002.occ").unlink()
        out = tmp_path / "o"
        res = runner.invoke(
            main,
            [
                "gen-labels",
                "--semantic", str(broken / "manifest.yaml"),
                "--out", str(out),
            ],
        )
        assert res.exit_code == 3
        assert list(out.rglob("*.occ")) == []
        assert not (out / "manifest.yaml").exists()


class TestEvalCommand:
    def eval_args(self, seq_dir, pred, out, extra=()):
        return [
            "eval",
            "--gt", str(seq_dir / "gt" / "manifest.yaml"),
            "--pred", str(pred),
            "--out", str(out),
            *extra,
        ]

    def test_perfect_prediction(self, runner, seq_dir, tmp_path):
        out = tmp_path / "report.json"
        res = runner.invoke(
            main,
            self.eval_args(seq_dir, seq_dir / "gt" / "manifest.yaml", out),
        )
        assert res.exit_code == 0, res.stderr
        assert "OccSTQ: 100.0" in res.output
        assert "PQ: 100.0" in res.output
        assert "PQ*: 100.0" in res.output
        report = json.loads(out.read_text())
        assert report["occ_stq"] == 1.0
        assert report["pq"] == 1.0
        csv_text = (tmp_path / "report_frames.csv").read_text().splitlines()
        assert csv_text[0] == "frame_index,voxels_evaluated,pq,pq_star"
        assert len(csv_text) == 5

    def test_thread_count_does_not_change_output(self, runner, seq_dir, corrupt_dir, tmp_path):
        pred = corrupt_dir / "manifest.yaml"
        outs = []
        for name, extra in [
            ("a.json", ["--threads", "1"]),
            ("b.json", ["--threads", "8"]),
        ]:
            out = tmp_path / name
            res = runner.invoke(main, self.eval_args(seq_dir, pred, out, extra))
            assert res.exit_code == 0, res.stderr
            outs.append(out)
        assert outs[0].read_bytes() == outs[1].read_bytes()
        assert (tmp_path / "a_frames.csv").read_bytes() == (
            tmp_path / "b_frames.csv"
        ).read_bytes()

    def test_threads_env_default(self, runner, seq_dir, corrupt_dir, tmp_path):
        pred = corrupt_dir / "manifest.yaml"
        out_env = tmp_path / "env.json"
        res = runner.invoke(
            main,
            self.eval_args(seq_dir, pred, out_env),
            env={"OCC4D_THREADS": "8"},
        )
        assert res.exit_code == 0, res.stderr
        out_flag = tmp_path / "flag.json"
        res = runner.invoke(
            main, self.eval_args(seq_dir, pred, out_flag, ["--threads", "8"])
        )
        assert res.exit_code == 0
        assert out_env.read_bytes() == out_flag.read_bytes()

    def test_bad_threads_env(self, runner, seq_dir, tmp_path):
        res = runner.invoke(
            main,
            self.eval_args(seq_dir, seq_dir / "gt" / "manifest.yaml", tmp_path / "r.json"),
            env={"OCC4D_THREADS": "abc"},
        )
        assert res.exit_code == 2

    def test_metric_subset(self, runner, seq_dir, tmp_path):
        out = tmp_path / "r.json"
        res = runner.invoke(
            main,
            self.eval_args(
                seq_dir, seq_dir / "gt" / "manifest.yaml", out, ["--metrics", "pq"]
            ),
        )
        assert res.exit_code == 0, res.stderr
        assert "PQ: 100.0" in res.output
        assert "OccSTQ" not in res.output
        assert "PQ*" not in res.output
        assert json.loads(out.read_text())["pq_star"] is None

    def test_unknown_metric(self, runner, seq_dir, tmp_path):
        res = runner.invoke(
            main,
            self.eval_args(
                seq_dir, seq_dir / "gt" / "manifest.yaml", tmp_path / "r.json",
                ["--metrics", "occstq,bogus"],
            ),
        )
        assert res.exit_code == 2
        assert "error: ValueError: unknown metric 'bogus'" in res.stderr

    def test_out_path_must_differ(self, runner, seq_dir, tmp_path):
        gt = seq_dir / "gt" / "manifest.yaml"
        res = runner.invoke(main, self.eval_args(seq_dir, gt, gt))
        assert res.exit_code == 2
        assert "output path must differ" in res.stderr

    def test_frame_set_mismatch_is_exit_3(self, runner, seq_dir, corrupt_dir, tmp_path):
        doc = yaml.safe_load((corrupt_dir / "manifest.yaml").read_text())
        doc["frames"] = doc["frames"][1:]
        short = corrupt_dir / "manifest_short.yaml"
        short.write_text(yaml.safe_dump(doc))
        res = runner.invoke(main, self.eval_args(seq_dir, short, tmp_path / "r.json"))
        assert res.exit_code == 3
        assert "unmatched indices [0]" in res.stderr

    def test_class_table_mismatch_is_exit_2(self, runner, seq_dir, corrupt_dir, tmp_path):
        doc = yaml.safe_load((corrupt_dir / "manifest.yaml").read_text())
        for entry in doc["classes"]:
            if entry["name"] == "vehicle":
                entry["name"] = "car"
        bad = corrupt_dir / "manifest_badclasses.yaml"
        bad.write_text(yaml.safe_dump(doc))
        res = runner.invoke(main, self.eval_args(seq_dir, bad, tmp_path / "r.json"))
        assert res.exit_code == 2
        assert "error: ClassTableMismatch:" in res.stderr

    def test_bad_thread_flag(self, runner, seq_dir, tmp_path):
        res = runner.invoke(
            main,
            self.eval_args(
                seq_dir, seq_dir / "gt" / "manifest.yaml", tmp_path / "r.json",
                ["--threads", "0"],
            ),
        )
        assert res.exit_code == 2
        assert "threads must be >= 1" in res.stderr


class TestCorruptCommand:
    def test_outputs(self, runner, corrupt_dir):
        manifest = load_manifest(corrupt_dir / "manifest.yaml")
        frames = list(load_sequence(manifest))
        assert len(frames) == 4
        doc = json.loads((corrupt_dir / "proposals.json").read_text())
        assert [f["frame_index"] for f in doc["frames"]] == [0, 1, 2, 3]
        for frame in doc["frames"]:
            for p in frame["proposals"]:
                assert set(p) == {
                    "instance_id", "class_id", "score", "origin", "voxel_count",
                }
                assert p["origin"] in ("emerging", "tracked")
                assert 0.0 <= p["score"] <= 1.0

    def test_deterministic(self, runner, seq_dir, noise_path, tmp_path):
        args = [
            "corrupt",
            "--gt", str(seq_dir / "gt" / "manifest.yaml"),
            "--noise", str(noise_path),
        ]
        for d in ("a", "b"):
            res = runner.invoke(main, args + ["--out", str(tmp_path / d)])
            assert res.exit_code == 0, res.stderr
        assert (tmp_path / "a" / "proposals.json").read_bytes() == (
            tmp_path / "b" / "proposals.json"
        ).read_bytes()
        for p in sorted((tmp_path / "a" / "frames").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / "frames" / p.name).read_bytes()

    def test_seed_override_changes_scores(self, runner, seq_dir, noise_path, tmp_path, corrupt_dir):
        res = runner.invoke(
            main,
            [
                "corrupt",
                "--gt", str(seq_dir / "gt" / "manifest.yaml"),
                "--noise", str(noise_path),
                "--out", str(tmp_path / "o"),
                "--seed", "99",
            ],
        )
        assert res.exit_code == 0, res.stderr
        assert (tmp_path / "o" / "proposals.json").read_bytes() != (
            corrupt_dir / "proposals.json"
        ).read_bytes()

    def test_bad_noise_event(self, runner, seq_dir, tmp_path):
        bad = tmp_path / "noise.yaml"
        bad.write_text("drops:\n- {track_id: 42, start: 0, end: 1}\n")
        res = runner.invoke(
            main,
            [
                "corrupt",
                "--gt", str(seq_dir / "gt" / "manifest.yaml"),
                "--noise", str(bad),
                "--out", str(tmp_path / "o"),
            ],
        )
        assert res.exit_code == 2
        assert "error: UnknownTrack: drop targets unknown track 42" in res.stderr


def track_args(pred, method, out, extra=()):
    return ["track", "--pred", str(pred), "--method", method, "--out", str(out), *extra]


class TestTrackCommand:
    def test_overlap_on_gt(self, runner, seq_dir, tmp_path):
        out = tmp_path / "o"
        res = runner.invoke(
            main, track_args(seq_dir / "gt" / "manifest.yaml", "overlap", out)
        )
        assert res.exit_code == 0, res.stderr
        assert "tracks: 2" in res.output
        assert "births: 2" in res.output
        assert "deaths: 0" in res.output
        manifest = load_manifest(out / "manifest.yaml")
        ids_per_frame = [
            set(np.unique(g.instances[g.instances != 0]).tolist())
            for _, g in load_sequence(manifest)
        ]
        assert ids_per_frame == [{1, 2}] * 4

    def test_overlap_min_iou_config(self, runner, seq_dir, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("min_iou: 0.9\n")
        res = runner.invoke(
            main,
            track_args(
                seq_dir / "gt" / "manifest.yaml", "overlap", tmp_path / "o",
                ["--config", str(cfg)],
            ),
        )
        assert res.exit_code == 0, res.stderr
        tracks = int(res.output.split("tracks: ")[1].split("\n")[0])
        assert tracks > 2  # the moving actor no longer clears the bar

    def test_ab3dmot_on_gt(self, runner, seq_dir, tmp_path):
        out = tmp_path / "o"
        res = runner.invoke(
            main, track_args(seq_dir / "gt" / "manifest.yaml", "ab3dmot", out)
        )
        assert res.exit_code == 0, res.stderr
        assert "tracks: 2" in res.output
        manifest = load_manifest(out / "manifest.yaml")
        for _, g in load_sequence(manifest):
            g.validate_labels(manifest.class_table)

    def test_ab3dmot_unknown_config_key(self, runner, seq_dir, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("bogus: 1\n")
        res = runner.invoke(
            main,
            track_args(
                seq_dir / "gt" / "manifest.yaml", "ab3dmot", tmp_path / "o",
                ["--config", str(cfg)],
            ),
        )
        assert res.exit_code == 2
        assert "unknown kalman config keys ['bogus']" in res.stderr

    def test_config_must_be_mapping(self, runner, seq_dir, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("- 1\n- 2\n")
        res = runner.invoke(
            main,
            track_args(
                seq_dir / "gt" / "manifest.yaml", "overlap", tmp_path / "o",
                ["--config", str(cfg)],
            ),
        )
        assert res.exit_code == 2
        assert "config must be a mapping" in res.stderr

    def test_lifecycle_full_run(self, runner, corrupt_dir, tmp_path):
        out = tmp_path / "o"
        res = runner.invoke(
            main,
            track_args(
                corrupt_dir / "manifest.yaml", "lifecycle", out,
                ["--proposals", str(corrupt_dir / "proposals.json")],
            ),
        )
        assert res.exit_code == 0, res.stderr
        manifest = load_manifest(out / "manifest.yaml")
        frames = list(load_sequence(manifest))
        assert len(frames) == 4
        for _, g in frames:
            g.validate_labels(manifest.class_table)
        tracks = int(res.output.split("tracks: ")[1].split("\n")[0])
        assert tracks >= 2

    def test_lifecycle_needs_proposals_flag(self, runner, seq_dir, tmp_path):
        res = runner.invoke(
            main,
            track_args(seq_dir / "gt" / "manifest.yaml", "lifecycle", tmp_path / "o"),
        )
        assert res.exit_code == 4
        assert "needs --proposals" in res.stderr

    def test_lifecycle_missing_proposal_file(self, runner, seq_dir, tmp_path):
        res = runner.invoke(
            main,
            track_args(
                seq_dir / "gt" / "manifest.yaml", "lifecycle", tmp_path / "o",
                ["--proposals", str(tmp_path / "nope.json")],
            ),
        )
        assert res.exit_code == 4
        assert "does not exist" in res.stderr

    def test_lifecycle_unscored_proposal(self, runner, seq_dir, tmp_path):
        props = tmp_path / "props.json"
        props.write_text(json.dumps({
            "frames": [{
                "frame_index": 0,
                "proposals": [{
                    "instance_id": 1, "class_id": 3,
                    "origin": "emerging", "voxel_count": 4,
                }],
            }],
        }))
        res = runner.invoke(
            main,
            track_args(
                seq_dir / "gt" / "manifest.yaml", "lifecycle", tmp_path / "o",
                ["--proposals", str(props)],
            ),
        )
        assert res.exit_code == 4
        assert "lacks a score" in res.stderr

    def test_lifecycle_malformed_proposals(self, runner, seq_dir, tmp_path):
        props = tmp_path / "props.json"
        props.write_text('{"frames": 3}')
        res = runner.invoke(
            main,
            track_args(
                seq_dir / "gt" / "manifest.yaml", "lifecycle", tmp_path / "o",
                ["--proposals", str(props)],
            ),
        )
        assert res.exit_code == 2
        assert "expected a top-level 'frames' list" in res.stderr

    def test_unknown_method(self, runner, seq_dir, tmp_path):
        res = runner.invoke(
            main,
            track_args(seq_dir / "gt" / "manifest.yaml", "magic", tmp_path / "o"),
        )
        assert res.exit_code == 2


class TestConsoleScript:
    def test_version(self):
        out = subprocess.run(
            [sys.executable, "-m", "occ4d.cli", "--version"],
            capture_output=True, text=True,
        )
        assert out.returncode == 0
        assert "occ4d" in out.stdout

    def test_installed_entry_point(self):
        out = subprocess.run(["occ4d", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        assert "synth" in out.stdout
        assert "eval" in out.stdout
