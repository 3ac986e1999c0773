"""World model: encoder, RSSM, and predictor heads with the joint loss.

The sequence loss combines image, reward, and continuation
log-likelihoods with a balanced KL between posterior and prior latents.
Images are modeled as unit-variance Gaussians per pixel on values scaled
to [-0.5, 0.5]; rewards as unit-variance Gaussians; continuation as a
Bernoulli whose target is gamma at non-terminal steps and 0 at
termination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from needlepick.errors import TrainingFault
from needlepick.models.nets import MLP, ConvDecoder, ConvEncoder
from needlepick.models.rssm import RSSM

_HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))
# scalar observations are (task state code in 0..3, jaw flag in {0,1})
_SCALAR_SCALE = torch.tensor([3.0, 1.0])


@dataclass
class HeadOutputs:
    image: torch.Tensor     # (B, 3, 64, 64) mean, scaled units
    reward: torch.Tensor    # (B,) mean
    discount: torch.Tensor  # (B,) continuation probability in [0, 1]


def prepare_batch(batch, device="cpu", dtype=torch.float32) -> dict:
    """Convert a replay SequenceBatch to training tensors.

    Images come out channels-first and scaled to [-0.5, 0.5]; scalar
    observations (when present) are normalized to roughly unit range.
    """
    obs = torch.as_tensor(batch.obs, device=device).to(dtype)
    obs = obs.permute(0, 1, 4, 2, 3) / 255.0 - 0.5
    out = {
        "obs": obs,
        "action": torch.as_tensor(batch.action, device=device, dtype=dtype),
        "reward": torch.as_tensor(batch.reward, device=device, dtype=dtype),
        "discount": torch.as_tensor(batch.discount, device=device, dtype=dtype),
        "is_first": torch.as_tensor(
            batch.is_first.astype(np.float32), device=device, dtype=dtype
        ),
        "mask": torch.as_tensor(batch.mask, device=device, dtype=dtype),
        "scalars": None,
    }
    if batch.scalars is not None:
        scal = torch.as_tensor(batch.scalars, device=device, dtype=dtype)
        out["scalars"] = scal / _SCALAR_SCALE.to(device=device, dtype=dtype)
    return out


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return (x * mask).sum() / mask.sum().clamp(min=1.0)


class WorldModel(nn.Module):
    def __init__(
        self,
        action_dim: int = 9,
        conv_depth: int = 48,
        deter: int = 512,
        hidden: int = 512,
        stoch_factors: int = 32,
        stoch_classes: int = 32,
        mlp_layers: int = 4,
        mlp_units: int = 400,
        scalar_dim: int = 0,
        beta_kl: float = 1.0,
        kl_balance: float = 0.8,
        gamma: float = 0.99,
    ):
        super().__init__()
        self.beta_kl = beta_kl
        self.gamma = gamma
        self.encoder = ConvEncoder(conv_depth, scalar_dim=scalar_dim)
        self.rssm = RSSM(
            action_dim=action_dim,
            embed_dim=self.encoder.out_dim,
            deter=deter,
            hidden=hidden,
            factors=stoch_factors,
            classes=stoch_classes,
            kl_balance=kl_balance,
        )
        self.decoder = ConvDecoder(self.rssm.feat_dim, conv_depth)
        self.reward_head = MLP(self.rssm.feat_dim, 1, mlp_layers, mlp_units)
        self.discount_head = MLP(self.rssm.feat_dim, 1, mlp_layers, mlp_units)

    # ------------------------------------------------------------------
    # single-step interfaces
    # ------------------------------------------------------------------
    def encode(self, image, scalars=None) -> torch.Tensor:
        """Embed one (64,64,3) observation (uint8 array or scaled tensor)."""
        if isinstance(image, np.ndarray):
            if image.shape != (64, 64, 3):
                raise ValueError(f"expected (64,64,3) image, got {image.shape}")
            p = next(self.parameters())
            image = torch.as_tensor(image, device=p.device).to(p.dtype)
            image = (image / 255.0 - 0.5).permute(2, 0, 1).unsqueeze(0)
            if scalars is not None:
                scalars = torch.as_tensor(
                    np.asarray(scalars, dtype=np.float32), device=p.device
                ).to(p.dtype).unsqueeze(0)
                scalars = scalars / _SCALAR_SCALE.to(device=p.device, dtype=p.dtype)
        return self.encoder(image, scalars)

    def predict_heads(self, h: torch.Tensor, z: torch.Tensor) -> HeadOutputs:
        feat = torch.cat([h, z], dim=-1)
        return HeadOutputs(
            image=self.decoder(feat),
            reward=self.reward_head(feat).squeeze(-1),
            discount=torch.sigmoid(self.discount_head(feat).squeeze(-1)),
        )

    # ------------------------------------------------------------------
    # sequence learning
    # ------------------------------------------------------------------
    def observe_sequence(self, data: dict, sample_mode: str = "sample"):
        """Roll the RSSM over a prepared batch and compute the joint loss.

        Returns (states, losses): states holds per-step h, z, and both
        logit sets; losses holds the weighted terms, their total, and
        diagnostics.  Rows with mask 0 are excluded from every loss.
        """
        obs, action = data["obs"], data["action"]
        m, n = obs.shape[:2]
        embeds = self.encoder(
            obs.flatten(0, 1),
            data["scalars"].flatten(0, 1) if data["scalars"] is not None else None,
        ).view(m, n, -1)
        h, z = self.rssm.initial(m, like=obs)
        hs, zs, post_logits, prior_logits = [], [], [], []
        for t in range(n):
            keep = (1.0 - data["is_first"][:, t]).unsqueeze(-1)
            h = h * keep
            z = z * keep
            a = action[:, t] * keep
            h = self.rssm.recurrent_step(h, z, a)
            post_t = self.rssm.posterior_logits(h, embeds[:, t])
            z = self.rssm.sample(post_t, mode=sample_mode)
            hs.append(h)
            zs.append(z)
            post_logits.append(post_t)
            prior_logits.append(self.rssm.prior_logits(h))
        states = {
            "h": torch.stack(hs, dim=1),
            "z": torch.stack(zs, dim=1),
            "post_logits": torch.stack(post_logits, dim=1),
            "prior_logits": torch.stack(prior_logits, dim=1),
        }
        feat = torch.cat([states["h"], states["z"]], dim=-1)
        mask = data["mask"]

        image_mean = self.decoder(feat.flatten(0, 1)).view(m, n, 3, 64, 64)
        sq_err = (image_mean - obs) ** 2
        image_nll = (0.5 * sq_err + _HALF_LOG_2PI).sum(dim=(-3, -2, -1))
        loss_image = masked_mean(image_nll, mask)

        reward_mean = self.reward_head(feat).squeeze(-1)
        reward_nll = 0.5 * (reward_mean - data["reward"]) ** 2 + _HALF_LOG_2PI
        loss_reward = masked_mean(reward_nll, mask)

        disc_logit = self.discount_head(feat).squeeze(-1)
        disc_target = self.gamma * data["discount"]
        loss_discount = masked_mean(
            F.binary_cross_entropy_with_logits(disc_logit, disc_target, reduction="none"),
            mask,
        )

        kl_per_step = self.rssm.kl_loss(states["post_logits"], states["prior_logits"])
        loss_kl = self.beta_kl * masked_mean(kl_per_step, mask)

        losses = {
            "image": loss_image,
            "reward": loss_reward,
            "discount": loss_discount,
            "kl": loss_kl,
        }
        losses["total"] = sum(losses.values())
        for name, value in losses.items():
            if not torch.isfinite(value):
                raise TrainingFault(name, float(value.detach()))
        losses["recon_mse"] = masked_mean(sq_err.mean(dim=(-3, -2, -1)), mask).detach()
        losses["kl_value"] = masked_mean(kl_per_step, mask).detach()
        return states, losses
