"""Recurrent state-space model with categorical latents.

The latent state splits into a deterministic recurrent vector h and a
stochastic code z made of independent categorical factors.  Sampling
uses the straight-through estimator: a one-hot sample flows forward
while gradients follow the class probabilities.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def categorical_kl(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """KL(p || q) for stacked categorical factors.

    Inputs are (..., factors, classes) logits; the result sums over
    classes and factors, leaving the leading batch shape.
    """
    if p_logits.shape != q_logits.shape:
        raise ValueError(f"logit shapes differ: {tuple(p_logits.shape)} vs {tuple(q_logits.shape)}")
    p_log = F.log_softmax(p_logits, dim=-1)
    q_log = F.log_softmax(q_logits, dim=-1)
    per_factor = (p_log.exp() * (p_log - q_log)).sum(-1)
    return per_factor.sum(-1)


class RSSM(nn.Module):
    def __init__(
        self,
        action_dim: int = 9,
        embed_dim: int = 1536,
        deter: int = 512,
        hidden: int = 512,
        factors: int = 32,
        classes: int = 32,
        kl_balance: float = 0.8,
        kl_free: float = 0.0,
    ):
        super().__init__()
        self.action_dim = action_dim
        self.deter = deter
        self.factors = factors
        self.classes = classes
        self.z_dim = factors * classes
        self.kl_balance = kl_balance
        self.kl_free = kl_free
        self.pre = nn.Linear(self.z_dim + action_dim, hidden)
        self.cell = nn.GRUCell(hidden, deter)
        self.prior_net = nn.Sequential(
            nn.Linear(deter, hidden), nn.ELU(), nn.Linear(hidden, self.z_dim)
        )
        self.post_net = nn.Sequential(
            nn.Linear(deter + embed_dim, hidden), nn.ELU(), nn.Linear(hidden, self.z_dim)
        )

    @property
    def feat_dim(self) -> int:
        return self.deter + self.z_dim

    def initial(self, batch: int, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Zero (h, z) start state, matching dtype/device of ``like``."""
        h = torch.zeros(batch, self.deter, dtype=like.dtype, device=like.device)
        z = torch.zeros(batch, self.z_dim, dtype=like.dtype, device=like.device)
        return h, z

    def recurrent_step(self, h: torch.Tensor, z: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.deter or z.shape[-1] != self.z_dim or action.shape[-1] != self.action_dim:
            raise ValueError(
                f"state dims (h={h.shape[-1]}, z={z.shape[-1]}, a={action.shape[-1]}) "
                f"do not match ({self.deter}, {self.z_dim}, {self.action_dim})"
            )
        x = F.elu(self.pre(torch.cat([z, action], dim=-1)))
        return self.cell(x, h)

    def prior_logits(self, h: torch.Tensor) -> torch.Tensor:
        return self.prior_net(h).view(*h.shape[:-1], self.factors, self.classes)

    def posterior_logits(self, h: torch.Tensor, embed: torch.Tensor) -> torch.Tensor:
        x = self.post_net(torch.cat([h, embed], dim=-1))
        return x.view(*h.shape[:-1], self.factors, self.classes)

    def sample(self, logits: torch.Tensor, mode: str = "sample") -> torch.Tensor:
        """Draw z from factor logits; returns a flat (..., factors*classes) code.

        mode "sample": straight-through one-hot sample.
        mode "mode":   straight-through argmax one-hot (evaluation).
        mode "soft":   the probabilities themselves; a fully smooth path
                       used by the finite-difference gradient checks.
        """
        probs = F.softmax(logits, dim=-1)
        if mode == "soft":
            return probs.flatten(-2)
        if mode == "mode":
            index = probs.argmax(-1)
        elif mode == "sample":
            index = torch.multinomial(
                probs.reshape(-1, self.classes), 1, replacement=True
            ).view(probs.shape[:-1])
        else:
            raise ValueError(f"unknown sample mode {mode!r}")
        one_hot = F.one_hot(index, self.classes).to(probs.dtype)
        # grouping keeps the forward value an exact one-hot: p - p == 0
        z = one_hot + (probs - probs.detach())
        return z.flatten(-2)

    def kl_loss(self, post_logits: torch.Tensor, prior_logits: torch.Tensor) -> torch.Tensor:
        """Balanced KL(posterior || prior), per batch element.

        Mixes a prior-training term (stop-gradient on the posterior,
        weight kl_balance) with a representation-regularizing term
        (stop-gradient on the prior); both equal the true KL in value so
        the returned number is the actual divergence.
        """
        lhs = categorical_kl(post_logits.detach(), prior_logits)
        rhs = categorical_kl(post_logits, prior_logits.detach())
        value = self.kl_balance * lhs + (1.0 - self.kl_balance) * rhs
        if self.kl_free > 0.0:
            value = torch.clamp(value, min=self.kl_free)
        return value
