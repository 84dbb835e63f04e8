"""Pipeline command line.

Subcommands tie the library into reproducible experiments:

    retarget       human motion file -> 50Hz whole-body target stream
    filter         screen motion files against quality criteria
    train-shadow   PPO training of the low-level control policy
    train-imitate  supervised training of the chunked imitation policy
    eval           roll out a control policy and report tracking metrics
    deploy         run the stacked 25Hz/50Hz policies and dump a trace

Every command accepts --config (YAML), --seed, --workers, and repeated
--set key.path=value overrides.  Commands are deterministic for a given
config + seed in single-worker mode, and every artifact written embeds the
hash of the fully resolved configuration.

Exit codes: 0 success, 2 bad input (parse errors, missing files, invalid
values), 3 mismatch between artifacts (retarget map vs model, checkpoint vs
network), 4 training divergence (the last good checkpoint is retained).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, load_config
from .dataset import DemoFormatError, FilterCriteria, filter_sequence, load_demonstration
from .model import clamp_to_limits, default_model_path, load_model
from .motion import MotionFormatError, load_motion
from .retarget import (
    RetargetMapError,
    TargetFormatError,
    build_target_stream,
    default_retarget_map_path,
    load_retarget_map,
    load_target_stream,
    retarget_unclamped,
    save_target_stream,
)
from .synth import make_standing, make_walk


class MismatchError(RuntimeError):
    """Artifacts that cannot be used together (exit code 3)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss (exit code 4)."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

SHADOW_DEFAULTS = {
    "iterations": 100,
    "num_envs": 16,
    "randomize": True,
    "out_dir": "runs/shadow",
    "stream": {"kind": "standing", "duration": 4.0, "speed": 0.4},
    "policy": {"context_length": 8, "width": 128, "heads": 4, "layers": 3},
    "ppo": {},
}

IMITATE_DEFAULTS = {
    "epochs": 20,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "out_dir": "runs/imitate",
    "task": {"kind": "latent", "n_train": 8, "n_val": 8, "steps": 80,
             "state_dim": 6, "proprio_dim": 32},
    "policy": {"chunk_size": 50, "feature_dim": 32, "proprio_dim": 32,
               "action_dim": 33, "width": 64, "heads": 4, "layers": 2,
               "feature_loss_weight": 0.5},
}

EVAL_DEFAULTS = {
    "episodes": 4,
    "max_steps": 500,
    "randomize": False,
    "out_dir": "runs/eval",
    "stream": {"kind": "standing", "duration": 4.0, "speed": 0.4},
    "push": None,  # e.g. {"force_newtons": 30, "start_s": 2.0, "duration_s": 0.1}
}

DEPLOY_DEFAULTS = {
    "steps": 200,
    "query_period": 2,
    "feature_seed": 0,
    "out_dir": "runs/deploy",
    "stream": {"kind": "standing", "duration": 8.0, "speed": 0.4},
}


def _seed_of(args, cfg) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


def _load_model_and_map(args, cfg, need_map=True):
    """Model + resolved retarget map; resolve failures are mismatches."""
    model_path = getattr(args, "model", None) or cfg.get("model") or default_model_path()
    model = load_model(model_path)
    if not need_map:
        return model, None, str(model_path)
    map_path = getattr(args, "map", None) or cfg.get("retarget_map") \
        or default_retarget_map_path()
    rmap = load_retarget_map(map_path)
    try:
        resolved = rmap.resolve(model)
    except RetargetMapError as exc:
        raise MismatchError(f"retarget map does not fit model: {exc}") from None
    return model, resolved, str(model_path)


def _stream_from_config(section, resolved, model):
    kind = section.get("kind", "standing")
    if kind == "standing":
        seq = make_standing(duration=float(section.get("duration", 4.0)))
    elif kind == "walk":
        seq = make_walk(duration=float(section.get("duration", 4.0)),
                        speed=float(section.get("speed", 0.4)))
    elif kind == "file":
        path = section.get("path")
        if not path:
            raise ConfigError("stream kind 'file' requires a path")
        return load_target_stream(path)
    else:
        raise ConfigError(f"unknown stream kind {kind!r}")
    return build_target_stream(seq, resolved, model)


def _write_jsonl(path, rows, mode="w"):
    with open(path, mode) as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# retarget / filter
# ---------------------------------------------------------------------------

def cmd_retarget(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    seed = _seed_of(args, cfg)
    model, resolved, model_path = _load_model_and_map(args, cfg)
    seq = load_motion(args.motion)

    stream = build_target_stream(seq, resolved, model)
    raw = retarget_unclamped(seq, resolved, model)
    clamped = clamp_to_limits(model, raw)
    clamp_rate = float(np.mean(clamped != raw))

    full_q = np.concatenate([stream.pose[:, 5:], stream.wrist, stream.hand], axis=1)
    if len(full_q) > 1:
        vel = np.abs(np.diff(full_q, axis=0)) * stream.rate
        p50, p90, p99 = (float(v) for v in np.percentile(vel, [50, 90, 99]))
    else:
        p50 = p90 = p99 = 0.0

    effective = {"command": "retarget", "seed": seed, "motion": str(args.motion),
                 "map": str(args.map or cfg.get("retarget_map") or "default"),
                 "model": model_path, "out": str(args.out)}
    digest = config_hash(effective)
    stream.meta.update({"config_hash": digest, "seed": seed})
    save_target_stream(stream, args.out)

    print(f"frames: {len(stream)}")
    print(f"rate_hz: {stream.rate}")
    print(f"clamp_rate: {clamp_rate:.6f}")
    print(f"joint_velocity_p50: {p50:.6f}")
    print(f"joint_velocity_p90: {p90:.6f}")
    print(f"joint_velocity_p99: {p99:.6f}")
    print(f"wrote: {args.out}")
    return 0


def cmd_filter(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    seed = _seed_of(args, cfg)
    model, resolved, model_path = _load_model_and_map(args, cfg)
    crit_cfg = cfg.section("filter")
    known = set(FilterCriteria.__dataclass_fields__)
    unknown = set(crit_cfg) - known
    if unknown:
        raise ConfigError(f"unknown filter criteria: {sorted(unknown)}")
    criteria = FilterCriteria(**crit_cfg)

    effective = {"command": "filter", "seed": seed, "model": model_path,
                 "criteria": asdict(criteria),
                 "motions": [str(m) for m in args.motions]}
    digest = config_hash(effective)

    rows = [{"config_hash": digest, "seed": seed, "criteria": asdict(criteria)}]
    accepted = 0
    for path in args.motions:
        seq = load_motion(path)
        result = filter_sequence(seq, criteria, resolved, model)
        accepted += int(result.accepted)
        rows.append({"motion": str(path), "name": seq.name,
                     "accepted": result.accepted,
                     "reasons": list(result.reasons)})
    _write_jsonl(args.report, rows)
    print(f"accepted: {accepted}/{len(args.motions)}")
    print(f"report: {args.report}")
    return 0


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def cmd_train_shadow(args) -> int:
    import torch

    from .learn import (
        PPOConfig,
        ShadowPolicy,
        ShadowPolicyConfig,
        TrainingDiverged,
        load_checkpoint,
        save_checkpoint,
        train_shadow,
    )
    from .learn.checkpoint import load_module_tensors, module_tensors
    from .learn.ppo import observe_humanoid
    from .sim import EnvParams, HumanoidEnv, RandomizationRanges
    from .sim.rewards import TERM_NAMES

    cfg = load_config(args.config, args.overrides, args.seed)
    sec = cfg.section("shadow", SHADOW_DEFAULTS)
    seed = _seed_of(args, cfg)
    torch.set_num_threads(max(1, args.workers))
    model, resolved, model_path = _load_model_and_map(args, cfg)
    stream = _stream_from_config(sec["stream"], resolved, model)

    effective = {"command": "train-shadow", "seed": seed, "model": model_path,
                 "shadow": sec}
    digest = config_hash(effective)

    pcfg = ShadowPolicyConfig(proprio_dim=62, target_dim=24, action_dim=19,
                              **sec["policy"])
    torch.manual_seed(seed)
    policy = ShadowPolicy(pcfg)
    start_iteration = 0
    if args.resume:
        tensors, meta = load_checkpoint(args.resume)
        try:
            load_module_tensors(policy, tensors)
        except ValueError as exc:
            raise MismatchError(f"checkpoint does not fit policy: {exc}") from None
        start_iteration = int(meta.get("iteration", -1)) + 1

    env = HumanoidEnv(model, num_envs=int(sec["num_envs"]), auto_reset=True)
    rng = np.random.default_rng(seed)
    randomize = bool(sec["randomize"])
    obs = env.reset(stream,
                    params=None if randomize else EnvParams(),
                    rng=rng,
                    ranges=RandomizationRanges() if randomize else None)

    out_dir = Path(sec["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "log.jsonl"
    ckpt_path = out_dir / "policy.ckpt"
    log_file = open(log_path, "a" if args.resume else "w")

    def on_iteration(metrics, pol):
        row = dict(metrics)
        if "reward_terms" in row:
            row["reward_terms"] = dict(zip(TERM_NAMES, row["reward_terms"]))
        row["config_hash"] = digest
        log_file.write(json.dumps(row, sort_keys=True) + "\n")
        log_file.flush()
        save_checkpoint(ckpt_path, module_tensors(pol),
                        {"kind": "shadow", "iteration": metrics["iteration"],
                         "config_hash": digest, "seed": seed,
                         "policy": asdict(pcfg)})

    ppo_cfg = PPOConfig(**sec["ppo"])
    try:
        history = train_shadow(env, policy, ppo_cfg, int(sec["iterations"]),
                               rng, observe_humanoid, obs,
                               start_iteration=start_iteration,
                               callback=on_iteration)
    except TrainingDiverged as exc:
        log_file.close()
        kept = (f"; last good checkpoint kept at {ckpt_path}"
                if ckpt_path.exists() else "")
        raise DivergenceError(f"{exc} (iteration {exc.iteration}){kept}") from None
    log_file.close()
    last = history[-1] if history else {}
    print(f"iterations: {start_iteration + len(history)}")
    print(f"reward_mean: {last.get('reward_mean', float('nan')):.6f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return 0


def cmd_train_imitate(args) -> int:
    import torch

    from .learn import (
        FeatureOracle,
        ImitationPolicyConfig,
        TrainingDiverged,
        make_latent_task_demos,
        save_checkpoint,
        train_imitation,
    )
    from .learn.checkpoint import module_tensors

    cfg = load_config(args.config, args.overrides, args.seed)
    sec = cfg.section("imitate", IMITATE_DEFAULTS)
    seed = _seed_of(args, cfg)
    torch.set_num_threads(max(1, args.workers))

    effective = {"command": "train-imitate", "seed": seed, "imitate": sec}
    digest = config_hash(effective)
    icfg = ImitationPolicyConfig(**sec["policy"])

    task = sec["task"]
    kind = task.get("kind", "latent")
    if kind == "latent":
        oracle = FeatureOracle(state_dim=int(task["state_dim"]),
                               feature_dim=icfg.feature_dim,
                               seed=int(task.get("feature_seed", 0)))
        rng = np.random.default_rng(seed)
        train_demos = make_latent_task_demos(
            oracle, int(task["n_train"]), int(task["steps"]), rng,
            proprio_dim=icfg.proprio_dim, action_dim=icfg.action_dim)
        val_demos = make_latent_task_demos(
            oracle, int(task["n_val"]), int(task["steps"]), rng,
            proprio_dim=icfg.proprio_dim, action_dim=icfg.action_dim)
    elif kind == "dir":
        train_demos = [load_demonstration(p)
                       for p in sorted(Path(task["train"]).glob("*.demo"))]
        val_demos = [load_demonstration(p)
                     for p in sorted(Path(task["val"]).glob("*.demo"))]
        if not train_demos or not val_demos:
            raise ConfigError("no .demo files found in task train/val dirs")
    else:
        raise ConfigError(f"unknown imitate task kind {kind!r}")

    out_dir = Path(sec["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "log.jsonl"
    ckpt_path = out_dir / "policy.ckpt"
    log_file = open(log_path, "w")

    def on_epoch(row, pol):
        out = dict(row)
        out["config_hash"] = digest
        log_file.write(json.dumps(out, sort_keys=True) + "\n")
        log_file.flush()
        save_checkpoint(ckpt_path, module_tensors(pol),
                        {"kind": "imitation", "epoch": row["epoch"],
                         "config_hash": digest, "seed": seed,
                         "policy": asdict(icfg)})

    try:
        _, history = train_imitation(train_demos, val_demos, icfg, seed=seed,
                                     epochs=int(sec["epochs"]),
                                     batch_size=int(sec["batch_size"]),
                                     learning_rate=float(sec["learning_rate"]),
                                     callback=on_epoch)
    except TrainingDiverged as exc:
        log_file.close()
        kept = (f"; last good checkpoint kept at {ckpt_path}"
                if ckpt_path.exists() else "")
        raise DivergenceError(f"{exc} (epoch {exc.iteration}){kept}") from None
    log_file.close()
    last = history[-1]
    print(f"epochs: {len(history)}")
    print(f"train_action_mse: {last['train_action_mse']:.8f}")
    print(f"val_action_mse: {last['val_action_mse']:.8f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return 0


# ---------------------------------------------------------------------------
# evaluation / deploy
# ---------------------------------------------------------------------------

def _load_shadow_policy(path, dtype=None):
    import torch

    from .learn import ShadowPolicy, ShadowPolicyConfig, load_checkpoint
    from .learn.checkpoint import load_module_tensors

    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "shadow" or "policy" not in meta:
        raise MismatchError(f"{path} is not a control-policy checkpoint")
    policy = ShadowPolicy(ShadowPolicyConfig(**meta["policy"]),
                          dtype=dtype or torch.float32)
    try:
        load_module_tensors(policy, tensors)
    except ValueError as exc:
        raise MismatchError(f"checkpoint does not fit policy: {exc}") from None
    return policy, meta


def _rollout_episode(env, policy, stream, params, rng, max_steps, push=None):
    """Deterministic mean-action rollout of one episode; returns step rows."""
    import torch

    cfgp = policy.config
    obs = env.reset(stream, params=params, rng=rng)
    hist_p = np.zeros((cfgp.context_length, cfgp.proprio_dim), dtype=np.float32)
    hist_t = np.zeros((cfgp.context_length, cfgp.target_dim), dtype=np.float32)
    length = 0
    rows = []
    push_tick = None if push is None else int(round(push["start_s"] / 0.02))
    for t in range(max_steps):
        if push_tick is not None and t == push_tick:
            env.apply_push(np.array([0.0, float(push["force_newtons"]), 0.0]),
                           float(push["duration_s"]))
        target = env.current_target_vector()[0]
        hist_p = np.roll(hist_p, -1, axis=0)
        hist_t = np.roll(hist_t, -1, axis=0)
        hist_p[-1] = obs
        hist_t[-1] = target
        length = min(length + 1, cfgp.context_length)
        with torch.no_grad():
            mean, _, _ = policy.act(torch.as_tensor(hist_p)[None],
                                    torch.as_tensor(hist_t)[None],
                                    torch.as_tensor([length]))
        obs, reward, done, state = env.step(mean[0].numpy())
        rows.append({
            "t": t,
            "time": round((t + 1) * 0.02, 6),
            "terms": {k: v for k, v in reward.as_dict().items() if k != "total"},
            "total": reward.total,
            "tracking_error": float(np.linalg.norm(state.q - target[5:])),
        })
        if done:
            break
    return rows, state


def _recovery_time(rows, push, window=5):
    """Time from push end until the trailing-window joint_pos mean is back
    within 10% of its pre-push mean; None if it never is.

    joint_pos is a penalty (<= 0), so a steady policy sits exactly at its
    pre-push level; demanding 0.9 * pre would require beating the baseline.
    """
    start, dur = push["start_s"], push["duration_s"]
    jp = np.array([r["terms"]["joint_pos"] for r in rows])
    times = np.array([r["time"] for r in rows])
    pre = jp[(times > start - 0.5) & (times <= start)]
    if len(pre) == 0:
        return None
    threshold = pre.mean() - 0.1 * abs(pre.mean())
    end = start + dur
    for i in range(len(rows)):
        if times[i] <= end + window * 0.02:
            continue
        if jp[i - window + 1:i + 1].mean() >= threshold:
            return float(times[i] - end)
    return None


def cmd_eval(args) -> int:
    import torch

    from .sim import EnvParams, HumanoidEnv, check_termination, sample_env_params

    cfg = load_config(args.config, args.overrides, args.seed)
    sec = cfg.section("eval", EVAL_DEFAULTS)
    seed = _seed_of(args, cfg)
    episodes = int(args.episodes if args.episodes is not None else sec["episodes"])
    if episodes <= 0:
        raise ConfigError("eval needs a positive number of episodes")
    torch.set_num_threads(max(1, args.workers))

    model, resolved, model_path = _load_model_and_map(args, cfg)
    stream = _stream_from_config(sec["stream"], resolved, model)
    policy, ckpt_meta = _load_shadow_policy(args.policy)
    push = sec.get("push")

    effective = {"command": "eval", "seed": seed, "model": model_path,
                 "eval": sec, "episodes": episodes,
                 "policy_hash": ckpt_meta.get("config_hash")}
    digest = config_hash(effective)

    out_dir = Path(sec["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    env = HumanoidEnv(model, num_envs=1)

    all_rows = []
    falls = 0
    recovery_times = []
    for e in range(episodes):
        rng = np.random.default_rng([seed, e])
        params = sample_env_params(rng) if sec["randomize"] else EnvParams()
        rows, final_state = _rollout_episode(env, policy, stream, params, rng,
                                             int(sec["max_steps"]), push)
        fell = bool(check_termination(final_state, env.cfg))
        falls += int(fell)
        if push is not None:
            rt = _recovery_time(rows, push)
            if rt is not None:
                recovery_times.append(rt)
        for row in rows:
            row["episode"] = e
            row["fell"] = fell
        all_rows.extend(rows)

    header = {"config_hash": digest, "seed": seed, "episodes": episodes}
    _write_jsonl(out_dir / "trajectories.jsonl", [header] + all_rows)

    term_names = sorted(all_rows[0]["terms"]) if all_rows else []
    report = {
        "episodes": episodes,
        "steps": len(all_rows),
        "fall_rate": falls / episodes,
        "mean_total": float(np.mean([r["total"] for r in all_rows])),
        "mean_terms": {k: float(np.mean([r["terms"][k] for r in all_rows]))
                       for k in term_names},
        "tracking_error_mean": float(np.mean([r["tracking_error"]
                                              for r in all_rows])),
        "config_hash": digest,
        "seed": seed,
    }
    if push is not None:
        report["recovery"] = {
            "times": recovery_times,
            "recovered": len(recovery_times),
            "mean": float(np.mean(recovery_times)) if recovery_times else None,
        }
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True,
                                                    indent=2) + "\n")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_deploy(args) -> int:
    import torch

    from .learn import (
        FeatureOracle,
        ImitationPolicy,
        ImitationPolicyConfig,
        deploy_loop,
        load_checkpoint,
    )
    from .learn.checkpoint import load_module_tensors
    from .sim import EnvParams, HumanoidEnv

    cfg = load_config(args.config, args.overrides, args.seed)
    sec = cfg.section("deploy", DEPLOY_DEFAULTS)
    seed = _seed_of(args, cfg)
    torch.set_num_threads(max(1, args.workers))

    model, resolved, model_path = _load_model_and_map(args, cfg)
    stream = _stream_from_config(sec["stream"], resolved, model)
    shadow, shadow_meta = _load_shadow_policy(args.shadow)

    tensors, meta = load_checkpoint(args.hit)
    if meta.get("kind") != "imitation" or "policy" not in meta:
        raise MismatchError(f"{args.hit} is not an imitation-policy checkpoint")
    icfg = ImitationPolicyConfig(**meta["policy"])
    hit = ImitationPolicy(icfg)
    try:
        load_module_tensors(hit, tensors)
    except ValueError as exc:
        raise MismatchError(f"checkpoint does not fit policy: {exc}") from None
    if icfg.proprio_dim != shadow.config.proprio_dim or icfg.action_dim < 19:
        raise MismatchError(
            f"policies do not stack: imitation proprio_dim={icfg.proprio_dim} "
            f"action_dim={icfg.action_dim}, control proprio_dim="
            f"{shadow.config.proprio_dim}")

    effective = {"command": "deploy", "seed": seed, "model": model_path,
                 "deploy": sec, "shadow_hash": shadow_meta.get("config_hash"),
                 "hit_hash": meta.get("config_hash")}
    digest = config_hash(effective)

    env = HumanoidEnv(model, num_envs=1)
    obs = env.reset(stream, EnvParams(), np.random.default_rng(seed))
    oracle = FeatureOracle(state_dim=19, feature_dim=icfg.feature_dim,
                           seed=int(sec["feature_seed"]))
    trace = deploy_loop(shadow, hit, env, obs, lambda e: oracle(e.state(0).q),
                        n_steps=int(sec["steps"]),
                        query_period=int(sec["query_period"]))

    out_dir = Path(sec["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {"config_hash": digest, "seed": seed}
    _write_jsonl(out_dir / "trace.jsonl", [header] + trace["steps"])
    print(f"steps: {trace['n_env_steps']}")
    print(f"hit_queries: {trace['n_hit_queries']}")
    print(f"mean_reward: {float(np.mean(trace['rewards'])):.6f}")
    print(f"trace: {out_dir / 'trace.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--workers", type=int, default=1,
                   help="compute threads (results are seed-stable at 1)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY.PATH=VALUE", help="override one config field")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shadowkit",
        description="Humanoid teleoperation pipeline: retargeting, control "
                    "policy training, imitation, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retarget", help="motion file -> target stream")
    p.add_argument("motion", help="HPMOT1 motion file")
    p.add_argument("--map", help="retarget map YAML")
    p.add_argument("--model", help="humanoid model YAML")
    p.add_argument("--out", required=True, help="output target stream file")
    _add_common(p)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("filter", help="screen motion files")
    p.add_argument("motions", nargs="+", help="HPMOT1 motion files")
    p.add_argument("--map", help="retarget map YAML")
    p.add_argument("--model", help="humanoid model YAML")
    p.add_argument("--report", required=True, help="output JSONL report")
    _add_common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train-shadow", help="PPO-train the control policy")
    p.add_argument("--model", help="humanoid model YAML")
    p.add_argument("--map", help="retarget map YAML")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_common(p)
    p.set_defaults(func=cmd_train_shadow)

    p = sub.add_parser("train-imitate", help="train the imitation policy")
    _add_common(p)
    p.set_defaults(func=cmd_train_imitate)

    p = sub.add_parser("eval", help="evaluate a control policy")
    p.add_argument("--policy", required=True, help="control policy checkpoint")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--model", help="humanoid model YAML")
    p.add_argument("--map", help="retarget map YAML")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("deploy", help="run the stacked policies")
    p.add_argument("--shadow", required=True, help="control policy checkpoint")
    p.add_argument("--hit", required=True, help="imitation policy checkpoint")
    p.add_argument("--model", help="humanoid model YAML")
    p.add_argument("--map", help="retarget map YAML")
    _add_common(p)
    p.set_defaults(func=cmd_deploy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = getattr(exc, "filename", None) or exc
        print(f"error: file not found: {name}", file=sys.stderr)
        return 2
    except MismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, MotionFormatError, TargetFormatError, DemoFormatError,
            ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
