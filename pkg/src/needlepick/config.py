"""Run configuration: schedule, loss weights, model sizes, env settings.

Two presets: the full-scale profile (paper_profile) and a desk profile
small enough for overnight CPU runs.  Ablation variants each flip
exactly one field of the base config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from needlepick.env.core import EnvConfig
from needlepick.env.needle import NeedleSpec
from needlepick.errors import ConfigurationError


@dataclass
class TrainConfig:
    # schedule
    total_env_steps: int = 140_000
    pretrain_updates: int = 100
    updates_per_cycle: int = 100
    env_steps_per_cycle: int = 50
    eval_every: int = 2_000
    eval_rollouts: int = 20
    demo_timesteps: int = 8_000
    checkpoint_every: int = 20_000
    seed: int = 0
    # loss weights and agent knobs
    beta_kl: float = 1.0
    beta_r: float = 1.0
    beta_e: float = 0.002
    beta_bc: float = 1.0
    h_clutch: int = 6
    margin_ratio: float = 0.3
    gamma: float = 0.99
    lam: float = 0.95
    kl_balance: float = 0.8
    imagine_horizon: int = 15
    # batching and optimization
    batch_episodes: int = 70
    batch_length: int = 10
    lr_world: float = 2e-4
    lr_actor: float = 2e-5
    lr_critic: float = 4e-5
    adam_eps: float = 1e-5
    grad_clip: float = 100.0
    replay_capacity: int = 200_000
    # model sizes
    conv_depth: int = 48
    deter: int = 512
    hidden: int = 512
    stoch_factors: int = 32
    stoch_classes: int = 32
    mlp_layers: int = 4
    mlp_units: int = 400
    # observation pipeline: "dsa" or "downsample"
    obs_pipeline: str = "dsa"
    use_demos: bool = True
    # environment
    needle_shape: str = "standard"
    render_size: int = 600
    noise_level: float = 0.0
    episode_horizon: int = 100

    def __post_init__(self):
        counters = (
            "total_env_steps",
            "pretrain_updates",
            "updates_per_cycle",
            "env_steps_per_cycle",
            "eval_every",
            "batch_episodes",
            "batch_length",
            "imagine_horizon",
        )
        for name in counters:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.eval_rollouts < 0 or self.demo_timesteps < 0 or self.h_clutch < 0:
            raise ConfigurationError("counts must be non-negative")
        if self.obs_pipeline not in ("dsa", "downsample"):
            raise ConfigurationError(f"unknown obs_pipeline {self.obs_pipeline!r}")

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            needle=NeedleSpec(shape_id=self.needle_shape),
            render_size=self.render_size,
            noise_level=self.noise_level,
            horizon=self.episode_horizon,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def paper_profile(**overrides) -> TrainConfig:
    return TrainConfig(**overrides)


def desk_profile(**overrides) -> TrainConfig:
    """CPU-sized profile: shorter run, smaller nets, coarser rendering.

    The schedule trades the full run's breadth for update density: with
    two orders of magnitude fewer env steps, the policy must wring more
    learning out of each demo segment, so the update:step ratio and the
    actor learning rate are higher than the full-size profile's.
    """
    base = dict(
        total_env_steps=20_000,
        pretrain_updates=2_000,
        updates_per_cycle=50,
        eval_rollouts=10,
        checkpoint_every=5_000,
        batch_episodes=32,
        lr_actor=1e-4,
        conv_depth=24,
        deter=256,
        hidden=256,
        mlp_layers=2,
        mlp_units=200,
        render_size=200,
    )
    base.update(overrides)
    return TrainConfig(**base)


# Each ablation flips exactly one field of its base config.
ABLATION_VARIANTS = {
    "no_bc": {"beta_bc": 0.0},
    "no_actor_grad": {"beta_r": 0.0},
    "no_dsa": {"obs_pipeline": "downsample"},
    "no_clutch": {"h_clutch": 0},
}


def ablation_config(base: TrainConfig, variant: str) -> TrainConfig:
    if variant not in ABLATION_VARIANTS:
        raise ConfigurationError(
            f"unknown ablation variant {variant!r}; expected one of {sorted(ABLATION_VARIANTS)}"
        )
    return base.replace(**ABLATION_VARIANTS[variant])


def config_diff(a: TrainConfig, b: TrainConfig) -> dict:
    """Field-by-field differences, as {name: (a_value, b_value)}."""
    out = {}
    for f in dataclasses.fields(TrainConfig):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if va != vb:
            out[f.name] = (va, vb)
    return out
