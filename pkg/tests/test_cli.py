"""Command-line behavior: exit codes, printed numbers, written artifacts.

Everything runs in-process through cli.main(argv) so exit codes and stdout
are captured without subprocesses.  Printed statistics are recomputed from
the written artifacts by independent code paths in the tests.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from shadowkit.cli import main
from shadowkit.learn import load_checkpoint
from shadowkit.model import clamp_to_limits, default_model_path, load_model
from shadowkit.motion import save_motion
from shadowkit.retarget import (
    default_retarget_map_path,
    load_retarget_map,
    load_target_stream,
    retarget_unclamped,
)
from shadowkit.synth import make_standing, make_walk


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_motion(make_walk(duration=2.0, speed=0.5), d / "walk.mot")
    save_motion(make_standing(duration=2.0), d / "stand.mot")
    return d


def run(*argv):
    return main([str(a) for a in argv])


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


SMALL_SHADOW = [
    "--set", "shadow.num_envs=2", "--set", "shadow.randomize=false",
    "--set", "shadow.policy.width=32", "--set", "shadow.policy.heads=2",
    "--set", "shadow.policy.layers=1", "--set", "shadow.policy.context_length=4",
    "--set", "shadow.ppo.horizon=8", "--set", "shadow.ppo.epochs=1",
    "--set", "shadow.ppo.minibatch_size=16",
]

SMALL_IMITATE = [
    "--set", "imitate.task.n_train=2", "--set", "imitate.task.n_val=2",
    "--set", "imitate.task.steps=60",
    "--set", "imitate.policy.width=32", "--set", "imitate.policy.heads=2",
    "--set", "imitate.policy.layers=1", "--set", "imitate.policy.chunk_size=10",
    "--set", "imitate.policy.feature_dim=8",
]


def train_tiny_shadow(out_dir, iterations=2, seed=1, extra=()):
    return run("train-shadow", "--seed", seed,
               "--set", f"shadow.iterations={iterations}",
               "--set", f"shadow.out_dir={out_dir}", *SMALL_SHADOW, *extra)


# ---------------------------------------------------------------------------
# retarget
# ---------------------------------------------------------------------------

class TestRetarget:
    def test_happy_path_and_printed_stats_match_artifact(self, workdir, capsys):
        out = workdir / "walk.tgt"
        assert run("retarget", workdir / "walk.mot", "--out", out) == 0
        printed = dict(
            line.split(": ") for line in capsys.readouterr().out.splitlines()
        )

        stream = load_target_stream(out)
        assert int(printed["frames"]) == len(stream)
        assert float(printed["rate_hz"]) == stream.rate

        # recount clamping in float64 straight from the motion file
        from shadowkit.motion import load_motion
        seq = load_motion(workdir / "walk.mot")
        model = load_model(default_model_path())
        rmap = load_retarget_map(default_retarget_map_path()).resolve(model)
        raw = retarget_unclamped(seq, rmap, model)
        clamped = clamp_to_limits(model, raw)
        assert math.isclose(float(printed["clamp_rate"]),
                            float(np.mean(raw != clamped)), abs_tol=1e-9)
        # the saved stream is the clamped result, modulo float32 storage
        full = np.concatenate([stream.pose[:, 5:], stream.wrist, stream.hand],
                              axis=1)
        np.testing.assert_allclose(full, clamped, atol=1e-6)

        # velocity percentiles recomputed from the written stream
        vel = np.abs(np.diff(full, axis=0)) * stream.rate
        for pct, key in ((50, "joint_velocity_p50"), (90, "joint_velocity_p90"),
                         (99, "joint_velocity_p99")):
            assert math.isclose(float(printed[key]),
                                float(np.percentile(vel, pct)), abs_tol=1e-5)

    def test_artifact_embeds_config_hash_and_seed(self, workdir):
        out = workdir / "hash.tgt"
        assert run("retarget", workdir / "walk.mot", "--out", out,
                   "--seed", 9) == 0
        meta = load_target_stream(out).meta
        assert len(meta["config_hash"]) == 16
        assert meta["seed"] == 9

    def test_missing_motion_is_exit_2_and_names_path(self, workdir, capsys):
        assert run("retarget", workdir / "nope.mot",
                   "--out", workdir / "x.tgt") == 2
        assert "nope.mot" in capsys.readouterr().err

    def test_map_model_mismatch_is_exit_3(self, workdir, capsys):
        data = yaml.safe_load(Path(default_retarget_map_path()).read_text())
        data["body_map"] = data["body_map"][1:]
        bad = workdir / "badmap.yaml"
        bad.write_text(yaml.safe_dump(data))
        assert run("retarget", workdir / "walk.mot", "--map", bad,
                   "--out", workdir / "x.tgt") == 3
        assert "does not fit model" in capsys.readouterr().err

    def test_unparseable_map_is_exit_2(self, workdir):
        bad = workdir / "notyaml.yaml"
        bad.write_text("body_map: [{source: left_hip, components: oops")
        assert run("retarget", workdir / "walk.mot", "--map", bad,
                   "--out", workdir / "x.tgt") == 2

    def test_unknown_argument_is_exit_2(self, workdir):
        assert run("retarget", workdir / "walk.mot", "--out", "x",
                   "--frobnicate") == 2


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------

class TestFilter:
    def test_report_rows_and_acceptance(self, workdir, capsys):
        report = workdir / "report.jsonl"
        assert run("filter", workdir / "walk.mot", workdir / "stand.mot",
                   "--report", report) == 0
        assert "accepted: 2/2" in capsys.readouterr().out
        rows = read_jsonl(report)
        assert len(rows[0]["config_hash"]) == 16
        assert [r["accepted"] for r in rows[1:]] == [True, True]
        assert {r["name"] for r in rows[1:]} == {"walk", "standing"}

    def test_criteria_override_rejects(self, workdir, capsys):
        report = workdir / "strict.jsonl"
        assert run("filter", workdir / "walk.mot", "--report", report,
                   "--set", "filter.max_root_speed=0.01") == 0
        assert "accepted: 0/1" in capsys.readouterr().out
        row = read_jsonl(report)[1]
        assert not row["accepted"]
        assert any("max_root_speed" in r for r in row["reasons"])

    def test_unknown_criterion_is_exit_2(self, workdir):
        assert run("filter", workdir / "walk.mot",
                   "--report", workdir / "r.jsonl",
                   "--set", "filter.max_sparkle=3") == 2


# ---------------------------------------------------------------------------
# train-shadow
# ---------------------------------------------------------------------------

class TestTrainShadow:
    def test_smoke_writes_one_log_row_per_iteration(self, workdir):
        out = workdir / "shadow"
        assert train_tiny_shadow(out, iterations=2) == 0
        rows = read_jsonl(out / "log.jsonl")
        assert [r["iteration"] for r in rows] == [0, 1]
        for row in rows:
            assert len(row["config_hash"]) == 16
            assert set(row["reward_terms"]) == {
                "xy_vel", "yaw_vel", "joint_pos", "roll_pitch", "energy",
                "feet_contact", "feet_slip", "alive"}
        tensors, meta = load_checkpoint(out / "policy.ckpt")
        assert meta["kind"] == "shadow"
        assert meta["iteration"] == 1
        assert meta["policy"]["width"] == 32
        assert meta["config_hash"] == rows[0]["config_hash"]

    def test_resume_continues_iteration_counter(self, workdir):
        out = workdir / "shadow_resume"
        assert train_tiny_shadow(out, iterations=2) == 0
        assert train_tiny_shadow(out, iterations=2,
                                 extra=["--resume", out / "policy.ckpt"]) == 0
        rows = read_jsonl(out / "log.jsonl")
        assert [r["iteration"] for r in rows] == [0, 1, 2, 3]
        _, meta = load_checkpoint(out / "policy.ckpt")
        assert meta["iteration"] == 3

    def test_two_runs_same_seed_produce_identical_logs(self, workdir):
        a, b = workdir / "det_a", workdir / "det_b"
        assert train_tiny_shadow(a, iterations=2, seed=5) == 0
        assert train_tiny_shadow(b, iterations=2, seed=5) == 0
        rows_a, rows_b = read_jsonl(a / "log.jsonl"), read_jsonl(b / "log.jsonl")
        for ra, rb in zip(rows_a, rows_b):
            del ra["config_hash"], rb["config_hash"]  # paths differ
        assert rows_a == rows_b

    def test_divergence_exits_4_and_keeps_previous_checkpoint(self, workdir,
                                                              capsys):
        out = workdir / "shadow_diverge"
        assert train_tiny_shadow(out, iterations=3,
                                 extra=["--set",
                                        "shadow.ppo.learning_rate=1e22"]) == 4
        assert "diverged" in capsys.readouterr().err
        tensors, meta = load_checkpoint(out / "policy.ckpt")
        assert meta["iteration"] == 0  # from before the divergent update blew up
        assert all(np.isfinite(v).all() for v in tensors.values())

    def test_resume_with_wrong_architecture_is_exit_3(self, workdir):
        out = workdir / "shadow_arch"
        assert train_tiny_shadow(out, iterations=1) == 0
        other = workdir / "shadow_arch2"
        code = run("train-shadow", "--seed", 1,
                   "--set", "shadow.iterations=1",
                   "--set", f"shadow.out_dir={other}",
                   "--set", "shadow.num_envs=2",
                   "--set", "shadow.policy.width=64",
                   "--set", "shadow.policy.heads=2",
                   "--set", "shadow.policy.layers=1",
                   "--set", "shadow.ppo.horizon=8",
                   "--resume", out / "policy.ckpt")
        assert code == 3


# ---------------------------------------------------------------------------
# train-imitate
# ---------------------------------------------------------------------------

class TestTrainImitate:
    def test_smoke_logs_and_checkpoint(self, workdir):
        out = workdir / "imitate"
        assert run("train-imitate", "--seed", 3, *SMALL_IMITATE,
                   "--set", "imitate.epochs=2",
                   "--set", f"imitate.out_dir={out}") == 0
        rows = read_jsonl(out / "log.jsonl")
        assert [r["epoch"] for r in rows] == [0, 1]
        assert all(np.isfinite(r["val_action_mse"]) for r in rows)
        _, meta = load_checkpoint(out / "policy.ckpt")
        assert meta["kind"] == "imitation"
        assert meta["policy"]["chunk_size"] == 10
        assert meta["config_hash"] == rows[0]["config_hash"]

    def test_two_runs_same_seed_identical(self, workdir):
        logs = []
        for name in ("im_a", "im_b"):
            out = workdir / name
            assert run("train-imitate", "--seed", 11, *SMALL_IMITATE,
                       "--set", "imitate.epochs=2",
                       "--set", f"imitate.out_dir={out}") == 0
            rows = read_jsonl(out / "log.jsonl")
            for r in rows:
                del r["config_hash"]
            logs.append(rows)
        assert logs[0] == logs[1]

    def test_divergence_is_exit_4(self, workdir, capsys):
        out = workdir / "im_diverge"
        assert run("train-imitate", "--seed", 3, *SMALL_IMITATE,
                   "--set", "imitate.epochs=2",
                   "--set", "imitate.learning_rate=1e18",
                   "--set", f"imitate.out_dir={out}") == 4
        assert "diverged" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def shadow_ckpt(workdir):
    out = workdir / "shadow_for_eval"
    assert train_tiny_shadow(out, iterations=1) == 0
    return out / "policy.ckpt"


class TestEval:
    def test_zero_episodes_is_an_error(self, shadow_ckpt, workdir):
        assert run("eval", "--policy", shadow_ckpt, "--episodes", 0,
                   "--set", f"eval.out_dir={workdir / 'ev0'}") == 2

    def test_report_matches_trajectory_dump(self, shadow_ckpt, workdir, capsys):
        out = workdir / "ev"
        assert run("eval", "--policy", shadow_ckpt, "--episodes", 2,
                   "--seed", 7, "--set", "eval.max_steps=25",
                   "--set", f"eval.out_dir={out}") == 0
        report = json.loads((out / "report.json").read_text())
        assert report == json.loads(capsys.readouterr().out)

        rows = read_jsonl(out / "trajectories.jsonl")
        header, steps = rows[0], rows[1:]
        assert header["config_hash"] == report["config_hash"]
        assert report["episodes"] == 2
        assert report["steps"] == len(steps)
        assert math.isclose(report["mean_total"],
                            np.mean([s["total"] for s in steps]), rel_tol=1e-12)
        assert math.isclose(report["tracking_error_mean"],
                            np.mean([s["tracking_error"] for s in steps]),
                            rel_tol=1e-12)
        for term, value in report["mean_terms"].items():
            assert math.isclose(
                value, np.mean([s["terms"][term] for s in steps]),
                rel_tol=1e-12)
        fell = {s["episode"]: s["fell"] for s in steps}
        assert report["fall_rate"] == sum(fell.values()) / len(fell)

    def test_same_seed_same_report(self, shadow_ckpt, workdir):
        reports = []
        for name in ("ev_a", "ev_b"):
            out = workdir / name
            assert run("eval", "--policy", shadow_ckpt, "--episodes", 2,
                       "--seed", 7, "--set", "eval.max_steps=25",
                       "--set", f"eval.out_dir={out}") == 0
            report = json.loads((out / "report.json").read_text())
            del report["config_hash"]
            reports.append(report)
        assert reports[0] == reports[1]

    def test_imitation_checkpoint_is_rejected_exit_3(self, workdir):
        im = workdir / "im_for_eval"
        assert run("train-imitate", "--seed", 3, *SMALL_IMITATE,
                   "--set", "imitate.epochs=1",
                   "--set", f"imitate.out_dir={im}") == 0
        assert run("eval", "--policy", im / "policy.ckpt", "--episodes", 1,
                   "--set", f"eval.out_dir={workdir / 'ev_bad'}") == 3


# ---------------------------------------------------------------------------
# deploy
# ---------------------------------------------------------------------------

class TestDeploy:
    def test_smoke_trace_and_query_cadence(self, shadow_ckpt, workdir):
        im = workdir / "im_for_deploy"
        assert run("train-imitate", "--seed", 3, *SMALL_IMITATE,
                   "--set", "imitate.epochs=1",
                   "--set", "imitate.policy.proprio_dim=62",
                   "--set", "imitate.policy.action_dim=33",
                   "--set", f"imitate.out_dir={im}") == 0
        out = workdir / "deploy"
        assert run("deploy", "--shadow", shadow_ckpt,
                   "--hit", im / "policy.ckpt",
                   "--set", "deploy.steps=12",
                   "--set", f"deploy.out_dir={out}") == 0
        rows = read_jsonl(out / "trace.jsonl")
        assert len(rows[0]["config_hash"]) == 16
        steps = rows[1:]
        assert [s["queried"] for s in steps] == [True, False] * (len(steps) // 2)

    def test_incompatible_policies_exit_3(self, shadow_ckpt, workdir):
        im = workdir / "im_narrow"
        assert run("train-imitate", "--seed", 3, *SMALL_IMITATE,
                   "--set", "imitate.epochs=1",
                   "--set", f"imitate.out_dir={im}") == 0  # proprio_dim 32
        assert run("deploy", "--shadow", shadow_ckpt,
                   "--hit", im / "policy.ckpt",
                   "--set", f"deploy.out_dir={workdir / 'dep_bad'}") == 3

    def test_swapped_checkpoints_exit_3(self, shadow_ckpt, workdir):
        assert run("deploy", "--shadow", shadow_ckpt, "--hit", shadow_ckpt,
                   "--set", f"deploy.out_dir={workdir / 'dep_swap'}") == 3


# ---------------------------------------------------------------------------
# config handling shared across commands
# ---------------------------------------------------------------------------

class TestConfigHandling:
    def test_config_file_plus_override(self, workdir, capsys):
        cfg = workdir / "run.yaml"
        cfg.write_text(yaml.safe_dump(
            {"filter": {"max_root_speed": 0.01}}))
        report = workdir / "cfg_report.jsonl"
        assert run("filter", workdir / "walk.mot", "--report", report,
                   "--config", cfg) == 0
        assert "accepted: 0/1" in capsys.readouterr().out
        # the same run with the file value overridden back to permissive
        assert run("filter", workdir / "walk.mot", "--report", report,
                   "--config", cfg, "--set", "filter.max_root_speed=10") == 0
        assert "accepted: 1/1" in capsys.readouterr().out

    def test_missing_config_file_is_exit_2(self, workdir, capsys):
        assert run("filter", workdir / "walk.mot",
                   "--report", workdir / "r.jsonl",
                   "--config", workdir / "ghost.yaml") == 2
        assert "ghost.yaml" in capsys.readouterr().err

    def test_config_hash_depends_on_effective_values(self, workdir):
        out_a, out_b = workdir / "h1.tgt", workdir / "h2.tgt"
        assert run("retarget", workdir / "walk.mot", "--out", out_a,
                   "--seed", 1) == 0
        assert run("retarget", workdir / "walk.mot", "--out", out_b,
                   "--seed", 2) == 0
        ha = load_target_stream(out_a).meta["config_hash"]
        hb = load_target_stream(out_b).meta["config_hash"]
        assert ha != hb

    def test_scientific_notation_override_parses_as_float(self, workdir):
        # PyYAML would leave "1e-3" as a string; the CLI must not
        report = workdir / "sci.jsonl"
        assert run("filter", workdir / "walk.mot", "--report", report,
                   "--set", "filter.max_root_speed=1e-3") == 0
        row = read_jsonl(report)[0]
        assert row["criteria"]["max_root_speed"] == 1e-3

    def test_workers_must_be_positive(self, workdir):
        assert run("filter", workdir / "walk.mot",
                   "--report", workdir / "r.jsonl", "--workers", 0) == 2
