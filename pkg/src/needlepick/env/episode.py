"""Episode container and lossless on-disk round-trip.

One episode = T environment steps: T+1 rendered frames plus per-step
action, reward, and discount streams.  ``actions[i]`` is the command
taken after frame ``i``; ``rewards[i]`` and ``discounts[i]`` belong to
that transition (discount 0.0 marks the terminal step).  Episodes are
stored one ``.npz`` file each, with metadata (seed, needle config,
source) serialized as JSON inside the archive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Episode:
    frames_rgb: np.ndarray     # (T+1, H, W, 3) uint8
    frames_depth: np.ndarray   # (T+1, H, W) float32
    task_codes: np.ndarray     # (T+1,) int16
    jaw_open: np.ndarray       # (T+1,) bool
    actions: np.ndarray        # (T,) int16, ActionCommand codes (IDLE=9 allowed)
    rewards: np.ndarray        # (T,) float32
    discounts: np.ndarray      # (T,) float32, 1.0 until the terminal step
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.frames_rgb)
        if not (
            len(self.frames_depth) == len(self.task_codes) == len(self.jaw_open) == n
        ):
            raise ValueError("frame stream lengths disagree")
        if not (len(self.actions) == len(self.rewards) == len(self.discounts) == n - 1):
            raise ValueError("step stream lengths must be one less than frame count")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def successful(self) -> bool:
        return len(self) > 0 and bool(self.rewards[-1] == 1.0)


def save_episode(path, episode: Episode):
    np.savez_compressed(
        path,
        frames_rgb=episode.frames_rgb,
        frames_depth=episode.frames_depth,
        task_codes=episode.task_codes,
        jaw_open=episode.jaw_open,
        actions=episode.actions,
        rewards=episode.rewards,
        discounts=episode.discounts,
        metadata=np.frombuffer(json.dumps(episode.metadata).encode(), dtype=np.uint8),
    )


def load_episode(path) -> Episode:
    with np.load(path) as data:
        metadata = json.loads(bytes(data["metadata"]).decode())
        return Episode(
            frames_rgb=data["frames_rgb"],
            frames_depth=data["frames_depth"],
            task_codes=data["task_codes"],
            jaw_open=data["jaw_open"],
            actions=data["actions"],
            rewards=data["rewards"],
            discounts=data["discounts"],
            metadata=metadata,
        )
