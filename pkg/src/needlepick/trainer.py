"""Training orchestration: schedule, evaluation, checkpoints, metrics.

The schedule follows the alternating pattern: pre-train on
demonstrations, then interleave environment collection with gradient
updates (updates_per_cycle updates every env_steps_per_cycle steps) and
periodic greedy evaluations.  Metrics land in an append-only
newline-delimited JSON file; checkpoints are versioned torch containers
holding parameters, optimizer state, counters, and RNG states.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from needlepick.agent import Actor, AgentPolicy, Critic, DreamerfDLearner
from needlepick.config import TrainConfig, ablation_config
from needlepick.dsa import make_pipeline, segment_colors
from needlepick.env.actions import ActionCommand, action_one_hot
from needlepick.env.core import NeedlePickEnv, TaskState
from needlepick.env.demos import collect_demonstrations
from needlepick.env.needle import NeedleSpec
from needlepick.errors import ConfigurationError
from needlepick.models import WorldModel
from needlepick.replay import EpisodeRecord, ReplayBuffer, record_from_episode

CHECKPOINT_VERSION = 1


def build_models(config: TrainConfig) -> tuple[WorldModel, Actor, Critic]:
    scalar_dim = 2 if config.obs_pipeline == "downsample" else 0
    world = WorldModel(
        conv_depth=config.conv_depth,
        deter=config.deter,
        hidden=config.hidden,
        stoch_factors=config.stoch_factors,
        stoch_classes=config.stoch_classes,
        mlp_layers=config.mlp_layers,
        mlp_units=config.mlp_units,
        scalar_dim=scalar_dim,
        beta_kl=config.beta_kl,
        kl_balance=config.kl_balance,
        gamma=config.gamma,
    )
    actor = Actor(world.rssm.feat_dim, config.mlp_layers, config.mlp_units)
    critic = Critic(world.rssm.feat_dim, config.mlp_layers, config.mlp_units)
    return world, actor, critic


def build_learner(config: TrainConfig) -> DreamerfDLearner:
    world, actor, critic = build_models(config)
    return DreamerfDLearner(
        world,
        actor,
        critic,
        lr_world=config.lr_world,
        lr_actor=config.lr_actor,
        lr_critic=config.lr_critic,
        adam_eps=config.adam_eps,
        grad_clip=config.grad_clip,
        imagine_horizon=config.imagine_horizon,
        lam=config.lam,
        beta_r=config.beta_r,
        beta_e=config.beta_e,
        beta_bc=config.beta_bc,
    )


def save_checkpoint(path, learner: DreamerfDLearner, config: TrainConfig, step: int, updates: int):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "step": step,
        "updates": updates,
        "world": learner.world.state_dict(),
        "actor": learner.actor.state_dict(),
        "critic": learner.critic.state_dict(),
        "opt_world": learner.opt_world.state_dict(),
        "opt_actor": learner.opt_actor.state_dict(),
        "opt_critic": learner.opt_critic.state_dict(),
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)


def load_checkpoint(path, restore_rng: bool = False) -> tuple[DreamerfDLearner, TrainConfig, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {payload.get('version')}")
    config = TrainConfig.from_dict(payload["config"])
    learner = build_learner(config)
    learner.world.load_state_dict(payload["world"])
    learner.actor.load_state_dict(payload["actor"])
    learner.critic.load_state_dict(payload["critic"])
    learner.opt_world.load_state_dict(payload["opt_world"])
    learner.opt_actor.load_state_dict(payload["opt_actor"])
    learner.opt_critic.load_state_dict(payload["opt_critic"])
    if restore_rng:
        torch.set_rng_state(payload["torch_rng"])
    meta = {"step": payload["step"], "updates": payload["updates"]}
    return learner, config, meta


class MetricsWriter:
    """Append-only newline-delimited JSON records."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._t0 = time.time()

    def write(self, **record):
        record.setdefault("wall_time", round(time.time() - self._t0, 3))
        with self.path.open("a") as f:
            f.write(json.dumps(record) + "\n")


class OnlineRecorder:
    """Accumulates one episode's replay rows as the policy runs it."""

    def __init__(self, first_obs: np.ndarray, first_scalars=None):
        self.obs = [first_obs]
        self.scalars = None if first_scalars is None else [first_scalars]
        self.actions = [np.zeros(9, dtype=np.float32)]
        self.rewards = [0.0]
        self.discounts = [1.0]

    def add(self, action: ActionCommand, reward: float, terminal: bool, obs: np.ndarray, scalars=None):
        self.actions.append(action_one_hot(action))
        self.rewards.append(float(reward))
        self.discounts.append(0.0 if terminal else 1.0)
        self.obs.append(obs)
        if self.scalars is not None:
            self.scalars.append(scalars)

    def finish(self, metadata: dict) -> EpisodeRecord:
        L = len(self.obs)
        is_first = np.zeros(L, dtype=bool)
        is_first[0] = True
        return EpisodeRecord(
            obs=np.stack(self.obs),
            action=np.stack(self.actions),
            reward=np.asarray(self.rewards, dtype=np.float32),
            discount=np.asarray(self.discounts, dtype=np.float32),
            is_first=is_first,
            scalars=np.stack(self.scalars).astype(np.float32) if self.scalars is not None else None,
            metadata=metadata,
        )


@dataclass
class EvalReport:
    success_rate: float
    successes: int
    valid: int
    excluded: int
    episodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "successes": self.successes,
            "valid": self.valid,
            "excluded": self.excluded,
            "episodes": self.episodes,
        }


def run_policy_episode(env, policy: AgentPolicy, pipeline, seed: int):
    """One rollout; returns (record, info dict with success/exclusion)."""
    frame = env.reset(seed=seed)
    pipeline.reset()
    policy.reset()
    provides_scalars = getattr(pipeline, "provides_scalars", False)
    obs = pipeline(frame)
    scal = pipeline.scalars(frame) if provides_scalars else None
    recorder = OnlineRecorder(obs, scal)
    occluded = bool(segment_colors(frame).needle.sum() == 0)
    terminated = False
    while not terminated:
        action = policy.act(obs, scal)
        frame, reward, terminated, state = env.step(action)
        obs = pipeline(frame)
        scal = pipeline.scalars(frame) if provides_scalars else None
        recorder.add(action, reward, terminated, obs, scal)
        occluded = occluded or bool(segment_colors(frame).needle.sum() == 0)
    info = {
        "success": state == TaskState.SUCCESS,
        "length": len(recorder.obs) - 1,
        "excluded": occluded,
        "seed": seed,
    }
    return recorder, info


def evaluate_policy(
    world: WorldModel,
    actor: Actor,
    config: TrainConfig,
    n_rollouts: int,
    seed: int,
    needle_shape: str | None = None,
    noise_level: float | None = None,
) -> EvalReport:
    """Greedy rollouts; fully occluded rollouts are excluded and logged.

    Actions are argmax but the latent is sampled, so the torch RNG is
    seeded (and afterwards restored, to leave the caller's stream
    untouched) to keep evaluations reproducible.  Exclusion mirrors the
    evaluation protocol of dropping rollouts that break the visibility
    assumption (needle completely hidden in some frame); they count in
    neither numerator nor denominator.
    """
    env_config = config.env_config()
    if needle_shape is not None:
        env_config = dataclasses.replace(env_config, needle=NeedleSpec(shape_id=needle_shape))
    if noise_level is not None:
        env_config = dataclasses.replace(env_config, noise_level=noise_level)
    env = NeedlePickEnv(env_config)
    policy = AgentPolicy(world, actor, h_clutch=config.h_clutch, stochastic=False)
    pipeline = make_pipeline(config.obs_pipeline, config.margin_ratio)
    episodes = []
    successes = valid = excluded = 0
    rng_state = torch.get_rng_state()
    torch.manual_seed(seed)
    try:
        for r in range(n_rollouts):
            _, info = run_policy_episode(env, policy, pipeline, seed=seed + r)
            episodes.append(info)
            if info["excluded"]:
                excluded += 1
                continue
            valid += 1
            successes += int(info["success"])
    finally:
        torch.set_rng_state(rng_state)
    rate = successes / valid if valid else 0.0
    return EvalReport(rate, successes, valid, excluded, episodes)


def _mean_report(reports: list[dict]) -> dict:
    if not reports:
        return {}
    keys = reports[0].keys()
    return {k: float(np.mean([r[k] for r in reports])) for k in keys}


def train(config: TrainConfig, out_dir, log=print) -> dict:
    """Full training run; returns paths and the evaluation record stream."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.yaml")
    torch.manual_seed(config.seed)
    sample_rng = np.random.default_rng(config.seed)
    (out / "metrics.ndjson").unlink(missing_ok=True)  # fresh stream per run
    metrics = MetricsWriter(out / "metrics.ndjson")

    env = NeedlePickEnv(config.env_config())
    demo_buffer = ReplayBuffer(capacity_steps=None)
    if config.use_demos:
        demos = collect_demonstrations(env, config.demo_timesteps, seed=config.seed)
        for ep in demos:
            demo_buffer.add_episode(
                record_from_episode(
                    ep, make_pipeline(config.obs_pipeline, config.margin_ratio), source="demo"
                )
            )
        if demo_buffer.num_steps == 0:
            raise ConfigurationError(
                "demo buffer is empty; set use_demos=False (--no-demo) for the baseline"
            )
        log(f"demo buffer: {len(demo_buffer)} episodes, {demo_buffer.num_steps} timesteps")

    learner = build_learner(config)
    policy = AgentPolicy(
        learner.world, learner.actor, h_clutch=config.h_clutch, stochastic=True
    )
    policy_buffer = ReplayBuffer(capacity_steps=config.replay_capacity)
    m, n = config.batch_episodes, config.batch_length

    updates = 0
    if demo_buffer.num_steps:
        reports = []
        for _ in range(config.pretrain_updates):
            batch = demo_buffer.sample_batch(m, n, sample_rng)
            reports.append(learner.combined_update(None, batch))
            updates += 1
        metrics.write(step=0, phase="pretrain", updates=updates, **_mean_report(reports))
        log(f"pretrain: {updates} updates, demo model loss "
            f"{reports[-1]['demo/model_total']:.1f}, bc {reports[-1]['bc']:.3f}")

    eval_records = []
    step = 0
    episode_index = 0
    pipeline = make_pipeline(config.obs_pipeline, config.margin_ratio)
    provides_scalars = getattr(pipeline, "provides_scalars", False)
    recorder = None
    train_successes = []
    cycle_reports = []

    def start_episode():
        nonlocal recorder, obs, scal
        frame = env.reset(seed=config.seed * 9_176 + episode_index)
        pipeline.reset()
        policy.reset()
        obs = pipeline(frame)
        scal = pipeline.scalars(frame) if provides_scalars else None
        recorder = OnlineRecorder(obs, scal)

    obs = scal = None
    start_episode()
    while step < config.total_env_steps:
        action = policy.act(obs, scal)
        frame, reward, terminated, state = env.step(action)
        obs = pipeline(frame)
        scal = pipeline.scalars(frame) if provides_scalars else None
        recorder.add(action, reward, terminated, obs, scal)
        step += 1

        if terminated:
            policy_buffer.add_episode(
                recorder.finish({"source": "policy", "episode": episode_index,
                                 "success": state == TaskState.SUCCESS})
            )
            train_successes.append(int(state == TaskState.SUCCESS))
            episode_index += 1
            start_episode()

        if step % config.env_steps_per_cycle == 0:
            for _ in range(config.updates_per_cycle):
                pb = policy_buffer.sample_batch(m, n, sample_rng) if len(policy_buffer) else None
                db = demo_buffer.sample_batch(m, n, sample_rng) if demo_buffer.num_steps else None
                if pb is None and db is None:
                    break
                cycle_reports.append(learner.combined_update(pb, db))
                updates += 1

        if step % config.eval_every == 0:
            report = evaluate_policy(
                learner.world, learner.actor, config,
                n_rollouts=config.eval_rollouts,
                seed=config.seed * 1_000_003 + step,
            )
            record = {"step": step, **report.to_dict()}
            eval_records.append(record)
            recent = train_successes[-20:]
            metrics.write(
                phase="eval", updates=updates,
                train_success_recent=float(np.mean(recent)) if recent else 0.0,
                **{k: v for k, v in record.items() if k != "episodes"},
            )
            losses = _mean_report(cycle_reports)
            cycle_reports = []
            if losses:
                metrics.write(step=step, phase="train", updates=updates, **losses)
            log(f"step {step}: eval success {report.success_rate:.2f} "
                f"({report.successes}/{report.valid}, {report.excluded} excluded), "
                f"updates {updates}")

        if step % config.checkpoint_every == 0 or step == config.total_env_steps:
            save_checkpoint(out / f"checkpoint_{step:07d}.pt", learner, config, step, updates)
            save_checkpoint(out / "checkpoint_latest.pt", learner, config, step, updates)

    policy_buffer.save(out / "replay_policy")
    demo_buffer.save(out / "replay_demo")
    (out / "eval_records.json").write_text(json.dumps(eval_records, indent=2))
    return {
        "out_dir": str(out),
        "checkpoint": str(out / "checkpoint_latest.pt"),
        "eval_records": eval_records,
        "steps": step,
        "updates": updates,
        "episodes": episode_index,
    }


def evaluate_checkpoint(
    checkpoint_path,
    n_rollouts: int,
    seed: int = 0,
    needle_shape: str | None = None,
    noise_level: float | None = None,
) -> EvalReport:
    learner, config, _ = load_checkpoint(checkpoint_path)
    return evaluate_policy(
        learner.world, learner.actor, config,
        n_rollouts=n_rollouts, seed=seed,
        needle_shape=needle_shape, noise_level=noise_level,
    )


def ablation(base: TrainConfig, variant: str, out_dir, log=print) -> dict:
    config = ablation_config(base, variant)
    result = train(config, out_dir, log=log)
    result["variant"] = variant
    return result
