"""Actor-critic learned in imagination, plus the deployment policy.

The actor is trained with a Reinforce objective and an entropy bonus on
trajectories imagined by the world model, with an auxiliary behavior
cloning term regressing demonstrated actions.  The critic regresses
lambda-returns.  A combined update applies one gradient step per
network: the world model on policy and demo batches jointly, the actor
on Reinforce + entropy + cloning, the critic on its squared error.

At deployment a virtual clutch holds the gripper idle for the first
H_clutch timesteps of every episode while the recurrent state warms up
on real observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from needlepick.env.actions import ActionCommand, N_POLICY_ACTIONS, action_one_hot
from needlepick.errors import TrainingFault
from needlepick.models.nets import MLP
from needlepick.models.world import WorldModel, masked_mean, prepare_batch


class Actor(nn.Module):
    def __init__(self, feat_dim: int, layers: int = 4, units: int = 400):
        super().__init__()
        self.net = MLP(feat_dim, N_POLICY_ACTIONS, layers, units)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        return self.net(feat)


class Critic(nn.Module):
    def __init__(self, feat_dim: int, layers: int = 4, units: int = 400):
        super().__init__()
        self.net = MLP(feat_dim, 1, layers, units)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        return self.net(feat).squeeze(-1)


def lambda_returns(
    rewards: torch.Tensor,
    discounts: torch.Tensor,
    values: torch.Tensor,
    lam: float,
) -> torch.Tensor:
    """Backward recursion for lambda-returns over the leading time axis.

    V[t] = r[t] + g[t] * ((1-lam) * v[t+1] + lam * V[t+1]), with
    V[-1] = v[-1] as the bootstrap; r[-1] and g[-1] are unused.  All
    three inputs must share the same shape.
    """
    if not (rewards.shape == discounts.shape == values.shape):
        raise ValueError(
            f"sequence shapes differ: r{tuple(rewards.shape)}, "
            f"g{tuple(discounts.shape)}, v{tuple(values.shape)}"
        )
    horizon = rewards.shape[0]
    returns = torch.empty_like(values)
    returns[-1] = values[-1]
    for t in range(horizon - 2, -1, -1):
        returns[t] = rewards[t] + discounts[t] * (
            (1.0 - lam) * values[t + 1] + lam * returns[t + 1]
        )
    return returns


@dataclass
class ImaginedTrajectory:
    """H states rolled from posterior starts with H-1 imagined actions.

    Produced under no_grad: every tensor is graph-free, so losses that
    re-evaluate networks on these states reach only that network's own
    parameters.
    """

    feats: torch.Tensor      # (H, B, feat_dim)
    actions: torch.Tensor    # (H-1, B, n_actions) one-hot
    rewards: torch.Tensor    # (H, B)
    discounts: torch.Tensor  # (H, B)
    values: torch.Tensor     # (H, B)


def imagine(
    world: WorldModel,
    actor: Actor,
    critic: Critic,
    start_h: torch.Tensor,
    start_z: torch.Tensor,
    horizon: int,
    deterministic: bool = False,
) -> ImaginedTrajectory:
    """Roll the prior dynamics for ``horizon`` steps from given starts.

    Alternates actor sampling, the recurrent step, and prior sampling;
    evaluates reward, continuation, and value along the way.  With
    deterministic=True the actor takes argmax and the prior its mode.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    with torch.no_grad():
        h, z = start_h, start_z
        feats = [torch.cat([h, z], dim=-1)]
        actions = []
        for _ in range(horizon - 1):
            logits = actor(feats[-1])
            if deterministic:
                index = logits.argmax(-1)
            else:
                index = torch.multinomial(F.softmax(logits, dim=-1), 1).squeeze(-1)
            a = F.one_hot(index, N_POLICY_ACTIONS).to(h.dtype)
            h = world.rssm.recurrent_step(h, z, a)
            z = world.rssm.sample(
                world.rssm.prior_logits(h), mode="mode" if deterministic else "sample"
            )
            actions.append(a)
            feats.append(torch.cat([h, z], dim=-1))
        feat_seq = torch.stack(feats)
        flat = feat_seq.flatten(0, 1)
        rewards = world.reward_head(flat).squeeze(-1).view(horizon, -1)
        discounts = torch.sigmoid(world.discount_head(flat).squeeze(-1)).view(horizon, -1)
        values = critic(flat).view(horizon, -1)
        action_seq = (
            torch.stack(actions)
            if actions
            else torch.zeros(0, h.shape[0], N_POLICY_ACTIONS, dtype=h.dtype)
        )
    return ImaginedTrajectory(feat_seq, action_seq, rewards, discounts, values)


def critic_loss(critic: Critic, trajectory: ImaginedTrajectory, returns: torch.Tensor) -> torch.Tensor:
    """Half mean squared error of the critic against fixed return targets.

    Targets cover indices 0..H-2; the bootstrap entry is not a target.
    """
    values = critic(trajectory.feats[:-1])
    return 0.5 * ((values - returns[:-1].detach()) ** 2).mean()


def actor_loss(
    actor: Actor,
    trajectory: ImaginedTrajectory,
    returns: torch.Tensor,
    beta_r: float,
    beta_e: float,
) -> torch.Tensor:
    """Reinforce with a detached advantage, minus an entropy bonus."""
    logits = actor(trajectory.feats[:-1])
    log_probs = F.log_softmax(logits, dim=-1)
    log_pi = (log_probs * trajectory.actions).sum(-1)
    advantage = (returns[:-1] - trajectory.values[:-1]).detach()
    entropy = -(log_probs.exp() * log_probs).sum(-1)
    return (-beta_r * log_pi * advantage - beta_e * entropy).mean()


def bc_loss(actor: Actor, states: dict, data: dict, beta_bc: float) -> torch.Tensor:
    """Negative log-likelihood of demonstrated actions under the actor.

    The action stored at row t+1 is the one taken from the state at row
    t, so targets shift by one; rows with no action (segment starts,
    idle placeholders, padding) are excluded via the mask.
    """
    feat = torch.cat([states["h"], states["z"]], dim=-1).detach()
    target = data["action"][:, 1:]
    has_action = target.sum(-1)  # 1 where a real one-hot is stored
    mask = data["mask"][:, 1:] * has_action
    log_probs = F.log_softmax(actor(feat[:, :-1]), dim=-1)
    log_pi = (log_probs * target).sum(-1)
    return beta_bc * masked_mean(-log_pi, mask)


def _select_starts(states: dict, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Flatten posterior states and keep only rows valid under the mask."""
    keep = mask.flatten(0, 1) > 0.5
    h = states["h"].detach().flatten(0, 1)[keep]
    z = states["z"].detach().flatten(0, 1)[keep]
    return h, z


class DreamerfDLearner:
    """Owns the three networks and their optimizers; applies joint updates."""

    def __init__(
        self,
        world: WorldModel,
        actor: Actor,
        critic: Critic,
        lr_world: float = 2e-4,
        lr_actor: float = 2e-5,
        lr_critic: float = 4e-5,
        adam_eps: float = 1e-5,
        grad_clip: float = 100.0,
        imagine_horizon: int = 15,
        lam: float = 0.95,
        beta_r: float = 1.0,
        beta_e: float = 0.002,
        beta_bc: float = 1.0,
    ):
        self.world = world
        self.actor = actor
        self.critic = critic
        self.grad_clip = grad_clip
        self.imagine_horizon = imagine_horizon
        self.lam = lam
        self.beta_r = beta_r
        self.beta_e = beta_e
        self.beta_bc = beta_bc
        self.opt_world = torch.optim.Adam(world.parameters(), lr=lr_world, eps=adam_eps)
        self.opt_actor = torch.optim.Adam(actor.parameters(), lr=lr_actor, eps=adam_eps)
        self.opt_critic = torch.optim.Adam(critic.parameters(), lr=lr_critic, eps=adam_eps)

    def _behavior_losses(self, states: dict, mask: torch.Tensor):
        start_h, start_z = _select_starts(states, mask)
        trajectory = imagine(
            self.world, self.actor, self.critic, start_h, start_z, self.imagine_horizon
        )
        returns = lambda_returns(
            trajectory.rewards, trajectory.discounts, trajectory.values, self.lam
        )
        loss_a = actor_loss(self.actor, trajectory, returns, self.beta_r, self.beta_e)
        loss_c = critic_loss(self.critic, trajectory, returns)
        return loss_a, loss_c

    def combined_update(self, policy_batch=None, demo_batch=None, dtype=torch.float32) -> dict:
        """One gradient step on all networks from up to two replay batches.

        Either batch may be None (demo-only pretraining, or the no-demo
        baseline).  Returns a report of every loss term; the reported
        total is the exact sum of the three named components.
        """
        if policy_batch is None and demo_batch is None:
            raise ValueError("combined_update needs at least one batch")
        zero = torch.zeros((), dtype=dtype)
        report = {}

        prepared, states = {}, {}
        wm_parts = []
        for name, batch in (("policy", policy_batch), ("demo", demo_batch)):
            if batch is None:
                continue
            data = prepare_batch(batch, dtype=dtype)
            st, losses = self.world.observe_sequence(data)
            prepared[name] = data
            states[name] = st
            wm_parts.append(losses["total"])
            for key, value in losses.items():
                report[f"{name}/model_{key}"] = float(value.detach())
        self.opt_world.zero_grad()
        torch.stack(wm_parts).sum().backward()
        nn.utils.clip_grad_norm_(self.world.parameters(), self.grad_clip)
        self.opt_world.step()

        behavior = {}
        for name in prepared:
            loss_a, loss_c = self._behavior_losses(states[name], prepared[name]["mask"])
            behavior[name] = (loss_a, loss_c)
            report[f"{name}/actor"] = float(loss_a.detach())
            report[f"{name}/critic"] = float(loss_c.detach())
        loss_bc = (
            bc_loss(self.actor, states["demo"], prepared["demo"], self.beta_bc)
            if "demo" in prepared
            else zero
        )
        report["bc"] = float(loss_bc.detach())

        actor_total = loss_bc + sum(a for a, _ in behavior.values())
        self.opt_actor.zero_grad()
        actor_total.backward()
        nn.utils.clip_grad_norm_(self.actor.parameters(), self.grad_clip)
        self.opt_actor.step()

        critic_total = sum(c for _, c in behavior.values())
        if torch.is_tensor(critic_total):
            self.opt_critic.zero_grad()
            critic_total.backward()
            nn.utils.clip_grad_norm_(self.critic.parameters(), self.grad_clip)
            self.opt_critic.step()

        def block(name):
            if name not in prepared:
                return 0.0
            return (
                report[f"{name}/model_total"]
                + report[f"{name}/actor"]
                + report[f"{name}/critic"]
            )

        report["loss_dv2"] = block("policy")
        report["loss_demo"] = block("demo")
        report["loss_bc"] = report["bc"]
        report["loss_total"] = report["loss_dv2"] + report["loss_demo"] + report["loss_bc"]
        for key, value in report.items():
            if not np.isfinite(value):
                raise TrainingFault(key, value)
        return report


IDLE_ONE_HOT = np.zeros(N_POLICY_ACTIONS, dtype=np.float32)


@dataclass
class PolicyContext:
    """Recurrent state carried across one episode at deployment."""

    h: torch.Tensor
    z: torch.Tensor
    prev_action: torch.Tensor
    t: int = 0


@dataclass
class ClutchController:
    """Idle for the first h_clutch timesteps, then pass actions through."""

    h_clutch: int = 6

    def apply(self, t: int, action: ActionCommand) -> ActionCommand:
        return ActionCommand.IDLE if t < self.h_clutch else action


class AgentPolicy:
    """Online policy: posterior filtering, actor head, virtual clutch.

    The posterior updates on every observation, including clutch steps,
    so the latent settles while the gripper idles.  The latent is always
    sampled, matching the state distribution the networks are trained
    on; ``stochastic`` only switches action selection between sampling
    (training rollouts) and argmax (evaluation).
    """

    def __init__(self, world: WorldModel, actor: Actor, h_clutch: int = 6, stochastic: bool = False):
        self.world = world
        self.actor = actor
        self.clutch = ClutchController(h_clutch)
        self.stochastic = stochastic
        self.context: PolicyContext | None = None

    def reset(self):
        p = next(self.world.parameters())
        h, z = self.world.rssm.initial(1, like=p)
        self.context = PolicyContext(
            h=h, z=z, prev_action=torch.zeros(1, N_POLICY_ACTIONS, dtype=p.dtype), t=0
        )

    def act(self, observation: np.ndarray, scalars=None) -> ActionCommand:
        if self.context is None:
            raise RuntimeError("call reset() before the first act()")
        ctx = self.context
        with torch.no_grad():
            embed = self.world.encode(observation, scalars)
            h = self.world.rssm.recurrent_step(ctx.h, ctx.z, ctx.prev_action)
            post = self.world.rssm.posterior_logits(h, embed)
            z = self.world.rssm.sample(post, mode="sample")
            logits = self.actor(torch.cat([h, z], dim=-1))
            if self.stochastic:
                index = int(torch.multinomial(F.softmax(logits, dim=-1), 1).item())
            else:
                index = int(logits.argmax(-1).item())
        chosen = ActionCommand(index)
        command = self.clutch.apply(ctx.t, chosen)
        ctx.h = h
        ctx.z = z
        ctx.prev_action = torch.as_tensor(
            action_one_hot(command), dtype=h.dtype
        ).unsqueeze(0)
        ctx.t += 1
        return command
