"""Dual episodic replay buffers with contiguous-segment sampling.

Policy experience lives in a bounded FIFO buffer (whole-episode
eviction); demonstrations live in an unbounded buffer that never evicts.
Records store the already-preprocessed 64x64x3 observations; rows are
aligned Dreamer-style: row t carries (obs_t, action that LED TO obs_t,
reward received with obs_t, continuation flag, is_first).  Row 0 of an
episode has a zero action, zero reward, and is_first=True; the terminal
flag (discount 0) appears only at the last row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from needlepick.env.actions import ActionCommand, action_one_hot
from needlepick.env.episode import Episode

DEFAULT_POLICY_CAPACITY = 200_000  # timesteps; demo buffer is unbounded


@dataclass
class EpisodeRecord:
    obs: np.ndarray       # (L, 64, 64, 3) uint8
    action: np.ndarray    # (L, 9) float32, zero row where no policy action
    reward: np.ndarray    # (L,) float32
    discount: np.ndarray  # (L,) float32, 0.0 only at the terminal row
    is_first: np.ndarray  # (L,) bool
    scalars: np.ndarray | None = None  # (L, S) float32, downsample pipeline only
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def __len__(self) -> int:
        return len(self.obs)

    def validate(self):
        L = len(self.obs)
        streams = {
            "action": len(self.action),
            "reward": len(self.reward),
            "discount": len(self.discount),
            "is_first": len(self.is_first),
        }
        if self.scalars is not None:
            streams["scalars"] = len(self.scalars)
        bad = {k: v for k, v in streams.items() if v != L}
        if bad:
            raise ValueError(f"stream lengths disagree with obs ({L}): {bad}")
        if L == 0:
            raise ValueError("empty episode record")
        firsts = np.flatnonzero(self.is_first)
        if firsts.tolist() != [0]:
            raise ValueError("is_first must be set exactly at index 0")
        terminal = np.flatnonzero(self.discount == 0.0)
        if terminal.size > 1 or (terminal.size == 1 and terminal[0] != L - 1):
            raise ValueError("terminal flag allowed only at the last index")


def record_from_episode(episode: Episode, pipeline, source: str) -> EpisodeRecord:
    """Preprocess a raw env episode into a replay record.

    ``pipeline`` is a fresh-per-episode observation context (see
    :mod:`needlepick.dsa`); IDLE actions encode as zero one-hots.
    """
    from needlepick.env.core import ObservationFrame  # local import, no cycle

    pipeline.reset()
    L = len(episode) + 1
    obs = np.empty((L, 64, 64, 3), dtype=np.uint8)
    scalars = [] if getattr(pipeline, "provides_scalars", False) else None
    for t in range(L):
        frame = ObservationFrame(
            rgb=episode.frames_rgb[t],
            depth=episode.frames_depth[t],
            task_state_code=int(episode.task_codes[t]),
            jaw_open=bool(episode.jaw_open[t]),
        )
        obs[t] = pipeline(frame)
        if scalars is not None:
            scalars.append(pipeline.scalars(frame))
    action = np.zeros((L, 9), dtype=np.float32)
    for t, a in enumerate(episode.actions):
        action[t + 1] = action_one_hot(ActionCommand(int(a)))
    reward = np.zeros(L, dtype=np.float32)
    reward[1:] = episode.rewards
    discount = np.ones(L, dtype=np.float32)
    discount[1:] = episode.discounts
    is_first = np.zeros(L, dtype=bool)
    is_first[0] = True
    metadata = dict(episode.metadata)
    metadata["source"] = source
    return EpisodeRecord(
        obs=obs,
        action=action,
        reward=reward,
        discount=discount,
        is_first=is_first,
        scalars=np.stack(scalars).astype(np.float32) if scalars is not None else None,
        metadata=metadata,
    )


@dataclass
class SequenceBatch:
    """M segments x N steps of stacked replay rows (+ validity mask)."""

    obs: np.ndarray       # (M, N, 64, 64, 3) uint8
    action: np.ndarray    # (M, N, 9) float32
    reward: np.ndarray    # (M, N) float32
    discount: np.ndarray  # (M, N) float32
    is_first: np.ndarray  # (M, N) bool
    mask: np.ndarray      # (M, N) float32; 0 marks padded rows
    scalars: np.ndarray | None = None  # (M, N, S) float32


class ReplayBuffer:
    """Episodic buffer; FIFO eviction only when a capacity is given."""

    def __init__(self, capacity_steps: int | None = None):
        self.capacity_steps = capacity_steps
        self.episodes: list[EpisodeRecord] = []
        self.total_steps = 0

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def num_steps(self) -> int:
        return self.total_steps

    def add_episode(self, record: EpisodeRecord):
        record.validate()
        self.episodes.append(record)
        self.total_steps += len(record)
        if self.capacity_steps is not None:
            while self.total_steps > self.capacity_steps and len(self.episodes) > 1:
                evicted = self.episodes.pop(0)
                self.total_steps -= len(evicted)

    def sample_batch(self, m: int, n: int, rng: np.random.Generator) -> SequenceBatch:
        """M uniformly chosen (episode, start) pairs, N contiguous steps each.

        Episodes shorter than N are padded by repeating their last row;
        padded rows carry mask 0.
        """
        if not self.episodes:
            raise ValueError("cannot sample from an empty replay buffer")
        with_scalars = self.episodes[0].scalars is not None
        obs = np.empty((m, n, *self.episodes[0].obs.shape[1:]), dtype=np.uint8)
        action = np.zeros((m, n, 9), dtype=np.float32)
        reward = np.zeros((m, n), dtype=np.float32)
        discount = np.ones((m, n), dtype=np.float32)
        is_first = np.zeros((m, n), dtype=bool)
        mask = np.zeros((m, n), dtype=np.float32)
        scalars = (
            np.zeros((m, n, self.episodes[0].scalars.shape[1]), dtype=np.float32)
            if with_scalars
            else None
        )
        ep_indices = rng.integers(0, len(self.episodes), size=m)
        for i, ep_idx in enumerate(ep_indices):
            ep = self.episodes[int(ep_idx)]
            L = len(ep)
            start = int(rng.integers(0, L - n + 1)) if L >= n else 0
            take = min(n, L - start)
            sl = slice(start, start + take)
            obs[i, :take] = ep.obs[sl]
            action[i, :take] = ep.action[sl]
            reward[i, :take] = ep.reward[sl]
            discount[i, :take] = ep.discount[sl]
            is_first[i, :take] = ep.is_first[sl]
            mask[i, :take] = 1.0
            if take < n:  # terminal repetition, masked out of losses
                obs[i, take:] = ep.obs[start + take - 1]
                action[i, take:] = ep.action[start + take - 1]
                reward[i, take:] = ep.reward[start + take - 1]
                discount[i, take:] = ep.discount[start + take - 1]
            if scalars is not None:
                scalars[i, :take] = ep.scalars[sl]
                if take < n:
                    scalars[i, take:] = ep.scalars[start + take - 1]
        is_first[:, 0] = True  # every segment restarts the recurrent state
        return SequenceBatch(obs, action, reward, discount, is_first, mask, scalars)

    # ------------------------------------------------------------------
    # persistence: one npz per episode + an index manifest
    # ------------------------------------------------------------------
    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"capacity_steps": self.capacity_steps, "episodes": []}
        for i, ep in enumerate(self.episodes):
            name = f"episode_{i:06d}.npz"
            arrays = {
                "obs": ep.obs,
                "action": ep.action,
                "reward": ep.reward,
                "discount": ep.discount,
                "is_first": ep.is_first,
                "metadata": np.frombuffer(json.dumps(ep.metadata).encode(), dtype=np.uint8),
            }
            if ep.scalars is not None:
                arrays["scalars"] = ep.scalars
            np.savez_compressed(directory / name, **arrays)
            manifest["episodes"].append({"file": name, "length": len(ep)})
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "ReplayBuffer":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        buffer = cls(capacity_steps=manifest.get("capacity_steps"))
        for entry in manifest["episodes"]:
            with np.load(directory / entry["file"]) as data:
                buffer.add_episode(
                    EpisodeRecord(
                        obs=data["obs"],
                        action=data["action"],
                        reward=data["reward"],
                        discount=data["discount"],
                        is_first=data["is_first"],
                        scalars=data["scalars"] if "scalars" in data.files else None,
                        metadata=json.loads(bytes(data["metadata"]).decode()),
                    )
                )
        return buffer
