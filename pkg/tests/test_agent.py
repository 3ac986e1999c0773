"""Imagination rollouts, behavior losses, clutch gating, and the learner."""

import math

import numpy as np
import pytest
import torch

from needlepick.agent import (
    Actor,
    AgentPolicy,
    ClutchController,
    Critic,
    DreamerfDLearner,
    IDLE_ONE_HOT,
    actor_loss,
    bc_loss,
    critic_loss,
    imagine,
    lambda_returns,
)
from needlepick.env.actions import ActionCommand
from needlepick.errors import TrainingFault
from needlepick.models.world import prepare_batch

from oracles import lambda_return_bruteforce
from test_models import make_batch, tiny_world

LN9 = math.log(9.0)


class TestLambdaReturns:
    def test_hand_computed_example(self):
        r = torch.tensor([1.0, 2.0, 3.0])
        g = torch.tensor([0.9, 0.9, 0.9])
        v = torch.tensor([10.0, 20.0, 30.0])
        out = lambda_returns(r, g, v, lam=0.5)
        assert out[2].item() == pytest.approx(30.0)
        assert out[1].item() == pytest.approx(2.0 + 0.9 * (0.5 * 30 + 0.5 * 30))
        assert out[0].item() == pytest.approx(1.0 + 0.9 * (0.5 * 20 + 0.5 * 29.0))

    def test_lambda_one_telescopes(self):
        torch.manual_seed(0)
        r, g, v = torch.randn(6), torch.rand(6), torch.randn(6)
        out = lambda_returns(r, g, v, lam=1.0)
        expected = v[-1]
        for t in range(4, -1, -1):
            expected = r[t] + g[t] * expected
            assert out[t].item() == pytest.approx(expected.item(), rel=1e-6)

    def test_lambda_zero_is_one_step_target(self):
        torch.manual_seed(1)
        r, g, v = torch.randn(5), torch.rand(5), torch.randn(5)
        out = lambda_returns(r, g, v, lam=0.0)
        for t in range(4):
            assert out[t].item() == pytest.approx((r[t] + g[t] * v[t + 1]).item(), rel=1e-6)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 0.95, 1.0])
    def test_matches_nested_sum_oracle(self, lam):
        rng = np.random.default_rng(int(lam * 100))
        r = rng.normal(size=6)
        g = rng.uniform(0.5, 1.0, size=6)
        v = rng.normal(size=6)
        out = lambda_returns(
            torch.tensor(r), torch.tensor(g), torch.tensor(v), lam=lam
        ).numpy()
        ref = lambda_return_bruteforce(r, g, v, lam)
        assert np.max(np.abs(out - ref)) < 1e-9

    def test_batch_axis_supported(self):
        r = torch.zeros(4, 3)
        g = torch.ones(4, 3)
        v = torch.ones(4, 3)
        out = lambda_returns(r, g, v, lam=0.95)
        assert out.shape == (4, 3)
        assert torch.allclose(out, torch.ones(4, 3))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            lambda_returns(torch.zeros(4), torch.zeros(5), torch.zeros(4), 0.95)


def stub_trajectory(horizon=4, batch=3, feat_dim=6, seed=0):
    from needlepick.agent import ImaginedTrajectory

    g = torch.Generator().manual_seed(seed)
    feats = torch.randn(horizon, batch, feat_dim, generator=g)
    actions = torch.nn.functional.one_hot(
        torch.randint(0, 9, (horizon - 1, batch), generator=g), 9
    ).float()
    rewards = torch.randn(horizon, batch, generator=g)
    discounts = torch.rand(horizon, batch, generator=g)
    values = torch.randn(horizon, batch, generator=g)
    return ImaginedTrajectory(feats, actions, rewards, discounts, values)


class ConstantHead(torch.nn.Module):
    """Callable standing in for a critic or actor with a fixed output."""

    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, x):
        return self.fn(x)


class TestCriticLoss:
    def test_zero_when_critic_matches_returns(self):
        traj = stub_trajectory()
        returns = torch.randn(4, 3)
        critic = ConstantHead(lambda feats: returns[: feats.shape[0]])
        assert critic_loss(critic, traj, returns).item() == pytest.approx(0.0)

    def test_constant_offset_gives_half_square(self):
        traj = stub_trajectory()
        returns = torch.randn(4, 3)
        critic = ConstantHead(lambda feats: returns[: feats.shape[0]] + 2.0)
        assert critic_loss(critic, traj, returns).item() == pytest.approx(0.5 * 4.0)

    def test_bootstrap_row_is_not_a_target(self):
        traj = stub_trajectory()
        returns_a = torch.randn(4, 3)
        returns_b = returns_a.clone()
        returns_b[-1] += 100.0  # only the bootstrap differs
        critic = Critic(feat_dim=6, layers=1, units=8)
        la = critic_loss(critic, traj, returns_a).item()
        lb = critic_loss(critic, traj, returns_b).item()
        assert la == pytest.approx(lb)


class TestActorLoss:
    def test_zero_advantage_leaves_pure_entropy_term(self):
        traj = stub_trajectory()
        returns = traj.values.clone()  # advantage == 0 everywhere
        actor = ConstantHead(lambda feats: torch.zeros(*feats.shape[:-1], 9))
        loss = actor_loss(actor, traj, returns, beta_r=1.0, beta_e=0.002)
        assert loss.item() == pytest.approx(-0.002 * LN9, rel=1e-5)

    def test_reinforce_term_scales_with_advantage(self):
        traj = stub_trajectory()
        returns = traj.values + 1.0  # advantage == 1 everywhere
        actor = ConstantHead(lambda feats: torch.zeros(*feats.shape[:-1], 9))
        loss = actor_loss(actor, traj, returns, beta_r=1.0, beta_e=0.0)
        # log pi = -ln 9 under the uniform policy, advantage 1
        assert loss.item() == pytest.approx(LN9, rel=1e-5)

    def test_entropy_of_uniform_policy_is_ln_n(self):
        traj = stub_trajectory()
        returns = traj.values.clone()
        actor = ConstantHead(lambda feats: torch.zeros(*feats.shape[:-1], 9))
        loss = actor_loss(actor, traj, returns, beta_r=0.0, beta_e=1.0)
        assert loss.item() == pytest.approx(-LN9, rel=1e-5)


def stub_states(batch=2, length=5, deter=4, zdim=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    return {
        "h": torch.randn(batch, length, deter, generator=g),
        "z": torch.randn(batch, length, zdim, generator=g),
    }


def stub_demo_data(batch=2, length=5, target_class=0):
    action = torch.zeros(batch, length, 9)
    action[:, 1:, target_class] = 1.0
    return {"action": action, "mask": torch.ones(batch, length)}


class TestBCLoss:
    def test_uniform_actor_scores_ln_n(self):
        states = stub_states()
        data = stub_demo_data()
        actor = ConstantHead(lambda feats: torch.zeros(*feats.shape[:-1], 9))
        assert bc_loss(actor, states, data, beta_bc=1.0).item() == pytest.approx(LN9, rel=1e-5)

    def test_confident_actor_scores_near_zero(self):
        states = stub_states()
        data = stub_demo_data(target_class=2)
        logits = torch.full((9,), -10.0)
        logits[2] = 10.0
        actor = ConstantHead(lambda feats: logits.expand(*feats.shape[:-1], 9))
        assert bc_loss(actor, states, data, beta_bc=1.0).item() < 1e-3

    def test_beta_scales_linearly(self):
        states = stub_states()
        data = stub_demo_data()
        actor = ConstantHead(lambda feats: torch.zeros(*feats.shape[:-1], 9))
        one = bc_loss(actor, states, data, beta_bc=1.0).item()
        two = bc_loss(actor, states, data, beta_bc=2.0).item()
        assert two == pytest.approx(2 * one, rel=1e-6)

    def test_rows_without_stored_action_are_excluded(self):
        states = stub_states()
        data = stub_demo_data(target_class=0)
        data["action"][:, 3] = 0.0  # idle placeholder row
        sharp = torch.full((9,), -10.0)
        sharp[0] = 10.0
        actor = ConstantHead(lambda feats: sharp.expand(*feats.shape[:-1], 9))
        # were row 3 included with a zero target, the mean would shift
        assert bc_loss(actor, states, data, beta_bc=1.0).item() < 1e-3

    def test_masked_rows_are_excluded(self):
        states = stub_states()
        data = stub_demo_data(target_class=1)
        data["mask"][:, 4] = 0.0
        data["action"][:, 4] = 0.0
        data["action"][:, 4, 5] = 1.0  # a wrong action hidden behind the mask
        sharp = torch.full((9,), -10.0)
        sharp[1] = 10.0
        actor = ConstantHead(lambda feats: sharp.expand(*feats.shape[:-1], 9))
        assert bc_loss(actor, states, data, beta_bc=1.0).item() < 1e-3


class TestImagine:
    def setup_method(self):
        torch.manual_seed(5)
        self.world = tiny_world()
        feat_dim = self.world.rssm.feat_dim
        self.actor = Actor(feat_dim, layers=1, units=16)
        self.critic = Critic(feat_dim, layers=1, units=16)
        self.h = torch.randn(4, 32)
        self.z = torch.randn(4, 24)

    def test_shapes(self):
        traj = imagine(self.world, self.actor, self.critic, self.h, self.z, horizon=6)
        assert traj.feats.shape == (6, 4, self.world.rssm.feat_dim)
        assert traj.actions.shape == (5, 4, 9)
        assert traj.rewards.shape == (6, 4)
        assert traj.discounts.shape == (6, 4)
        assert traj.values.shape == (6, 4)

    def test_deterministic_rollouts_repeat(self):
        a = imagine(self.world, self.actor, self.critic, self.h, self.z, 8, deterministic=True)
        b = imagine(self.world, self.actor, self.critic, self.h, self.z, 8, deterministic=True)
        assert torch.equal(a.feats, b.feats)
        assert torch.equal(a.actions, b.actions)
        assert torch.equal(a.values, b.values)

    def test_horizon_one_is_degenerate(self):
        traj = imagine(self.world, self.actor, self.critic, self.h, self.z, horizon=1)
        assert traj.feats.shape[0] == 1
        assert traj.actions.shape[0] == 0
        returns = lambda_returns(traj.rewards, traj.discounts, traj.values, 0.95)
        assert torch.equal(returns, traj.values)

    def test_horizon_below_one_rejected(self):
        with pytest.raises(ValueError):
            imagine(self.world, self.actor, self.critic, self.h, self.z, horizon=0)

    def test_trajectory_is_graph_free(self):
        traj = imagine(self.world, self.actor, self.critic, self.h, self.z, 4)
        for tensor in (traj.feats, traj.actions, traj.rewards, traj.discounts, traj.values):
            assert not tensor.requires_grad


class TestStopGradients:
    def setup_method(self):
        torch.manual_seed(6)
        self.world = tiny_world()
        feat_dim = self.world.rssm.feat_dim
        self.actor = Actor(feat_dim, layers=1, units=16)
        self.critic = Critic(feat_dim, layers=1, units=16)
        h = torch.randn(4, 32)
        z = torch.randn(4, 24)
        self.traj = imagine(self.world, self.actor, self.critic, h, z, 6)
        self.returns = lambda_returns(
            self.traj.rewards, self.traj.discounts, self.traj.values, 0.95
        )

    @staticmethod
    def grads_absent(module):
        return all(p.grad is None or p.grad.abs().sum() == 0 for p in module.parameters())

    def test_critic_loss_touches_only_critic(self):
        critic_loss(self.critic, self.traj, self.returns).backward()
        assert not self.grads_absent(self.critic)
        assert self.grads_absent(self.world)
        assert self.grads_absent(self.actor)

    def test_actor_loss_touches_only_actor(self):
        actor_loss(self.actor, self.traj, self.returns, beta_r=1.0, beta_e=0.002).backward()
        assert not self.grads_absent(self.actor)
        assert self.grads_absent(self.world)
        assert self.grads_absent(self.critic)

    def test_bc_loss_does_not_reach_state_sources(self):
        source = torch.nn.Linear(3, 4)
        x = torch.randn(2, 5, 3)
        states = {"h": source(x), "z": torch.randn(2, 5, 6, requires_grad=True)}
        data = stub_demo_data(batch=2, length=5)
        feat_dim = 4 + 6
        actor = Actor(feat_dim, layers=1, units=8)
        bc_loss(actor, states, data, beta_bc=1.0).backward()
        assert source.weight.grad is None
        assert not self.grads_absent(actor)


class TestClutch:
    def test_controller_boundary(self):
        clutch = ClutchController(h_clutch=6)
        for t in range(6):
            assert clutch.apply(t, ActionCommand.X_POS) is ActionCommand.IDLE
        assert clutch.apply(6, ActionCommand.X_POS) is ActionCommand.X_POS
        assert clutch.apply(7, ActionCommand.JAW_TOGGLE) is ActionCommand.JAW_TOGGLE

    def test_disabled_clutch_is_transparent(self):
        clutch = ClutchController(h_clutch=0)
        assert clutch.apply(0, ActionCommand.Y_NEG) is ActionCommand.Y_NEG

    def test_idle_one_hot_is_zero_vector(self):
        assert IDLE_ONE_HOT.shape == (9,)
        assert IDLE_ONE_HOT.sum() == 0.0

    def test_policy_emits_idle_then_real_commands(self):
        torch.manual_seed(7)
        world = tiny_world()
        actor = Actor(world.rssm.feat_dim, layers=1, units=16)
        policy = AgentPolicy(world, actor, h_clutch=6)
        policy.reset()
        rng = np.random.default_rng(0)
        commands = []
        for _ in range(12):
            obs = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
            commands.append(policy.act(obs))
        assert all(c is ActionCommand.IDLE for c in commands[:6])
        assert all(c is not ActionCommand.IDLE for c in commands[6:])

    def test_act_requires_reset(self):
        world = tiny_world()
        actor = Actor(world.rssm.feat_dim, layers=1, units=16)
        policy = AgentPolicy(world, actor)
        with pytest.raises(RuntimeError):
            policy.act(np.zeros((64, 64, 3), dtype=np.uint8))

    def test_idle_feeds_zero_action_back(self):
        torch.manual_seed(8)
        world = tiny_world()
        actor = Actor(world.rssm.feat_dim, layers=1, units=16)
        policy = AgentPolicy(world, actor, h_clutch=6)
        policy.reset()
        policy.act(np.zeros((64, 64, 3), dtype=np.uint8))
        assert policy.context.prev_action.abs().sum() == 0.0

    def test_posterior_updates_during_clutch(self):
        torch.manual_seed(9)
        world = tiny_world()
        actor = Actor(world.rssm.feat_dim, layers=1, units=16)
        policy = AgentPolicy(world, actor, h_clutch=6)
        policy.reset()
        h0 = policy.context.h.clone()
        policy.act(np.zeros((64, 64, 3), dtype=np.uint8))
        assert not torch.equal(policy.context.h, h0)

    def test_greedy_policy_still_samples_latent(self):
        # the networks only ever see sampled latents in training, so the
        # filter must sample even when action selection is argmax
        world = tiny_world()
        actor = Actor(world.rssm.feat_dim, layers=1, units=16)
        policy = AgentPolicy(world, actor, h_clutch=0, stochastic=False)
        obs = np.full((64, 64, 3), 128, dtype=np.uint8)
        seen = set()
        for seed in range(40):
            torch.manual_seed(seed)
            policy.reset()
            policy.act(obs)
            seen.add(tuple(policy.context.z.flatten().tolist()))
        assert len(seen) > 1
        torch.manual_seed(3)
        policy.reset()
        policy.act(obs)
        za = policy.context.z.clone()
        torch.manual_seed(3)
        policy.reset()
        policy.act(obs)
        assert torch.equal(policy.context.z, za)


class TestLearner:
    def make_learner(self, **kwargs):
        torch.manual_seed(10)
        world = tiny_world()
        actor = Actor(world.rssm.feat_dim, layers=1, units=16)
        critic = Critic(world.rssm.feat_dim, layers=1, units=16)
        defaults = dict(imagine_horizon=4)
        defaults.update(kwargs)
        return DreamerfDLearner(world, actor, critic, **defaults)

    def test_requires_at_least_one_batch(self):
        learner = self.make_learner()
        with pytest.raises(ValueError):
            learner.combined_update(None, None)

    def test_optimizer_learning_rates(self):
        learner = self.make_learner(lr_world=2e-4, lr_actor=2e-5, lr_critic=4e-5, adam_eps=1e-5)
        assert learner.opt_world.param_groups[0]["lr"] == 2e-4
        assert learner.opt_actor.param_groups[0]["lr"] == 2e-5
        assert learner.opt_critic.param_groups[0]["lr"] == 4e-5
        assert learner.opt_world.param_groups[0]["eps"] == 1e-5

    def test_dual_batch_report_bookkeeping(self):
        learner = self.make_learner()
        report = learner.combined_update(make_batch(m=2, n=4, seed=1), make_batch(m=2, n=4, seed=2))
        for key in (
            "policy/model_total", "demo/model_total", "policy/actor", "demo/actor",
            "policy/critic", "demo/critic", "bc", "loss_dv2", "loss_demo",
            "loss_bc", "loss_total",
        ):
            assert key in report
        assert report["loss_total"] == pytest.approx(
            report["loss_dv2"] + report["loss_demo"] + report["loss_bc"]
        )
        assert report["loss_dv2"] == pytest.approx(
            report["policy/model_total"] + report["policy/actor"] + report["policy/critic"]
        )

    def test_demo_only_update(self):
        learner = self.make_learner()
        report = learner.combined_update(None, make_batch(m=2, n=4, seed=3))
        assert report["loss_dv2"] == 0.0
        assert report["bc"] != 0.0

    def test_policy_only_reduces_to_plain_model(self):
        learner = self.make_learner()
        report = learner.combined_update(make_batch(m=2, n=4, seed=4), None)
        assert report["bc"] == 0.0
        assert report["loss_demo"] == 0.0
        assert report["loss_total"] == pytest.approx(report["loss_dv2"])

    def test_parameters_move(self):
        learner = self.make_learner()
        before = [p.detach().clone() for p in learner.world.parameters()]
        learner.combined_update(make_batch(m=2, n=4, seed=5), make_batch(m=2, n=4, seed=6))
        moved = any(
            not torch.equal(a, b)
            for a, b in zip(before, [p.detach() for p in learner.world.parameters()])
        )
        assert moved

    def test_non_finite_report_raises(self):
        learner = self.make_learner()
        learner.critic.net.net[-1].weight.data.fill_(float("nan"))
        with pytest.raises(TrainingFault):
            learner.combined_update(make_batch(m=2, n=4, seed=7), None)
