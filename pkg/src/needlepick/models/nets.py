"""Encoder, decoder, and MLP building blocks.

Plain dtype-agnostic torch modules so the finite-difference test harness
can instantiate them in float64 at tiny widths.
"""

from __future__ import annotations

import torch
from torch import nn


class MLP(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, layers: int = 4, units: int = 400):
        super().__init__()
        seq = []
        d = in_dim
        for _ in range(layers):
            seq += [nn.Linear(d, units), nn.ELU()]
            d = units
        seq.append(nn.Linear(d, out_dim))
        self.net = nn.Sequential(*seq)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ConvEncoder(nn.Module):
    """Four stride-2 convolutions mapping (B,3,64,64) to a flat vector.

    Channel progression d, 2d, 4d, 8d; output dimension 32*d.  An
    optional scalar branch embeds auxiliary inputs and concatenates them
    to the image features (plain-downsample observation variant only).
    """

    def __init__(self, depth: int = 48, scalar_dim: int = 0, scalar_units: int = 32):
        super().__init__()
        self.depth = depth
        self.scalar_dim = scalar_dim
        self.conv = nn.Sequential(
            nn.Conv2d(3, depth, 4, 2), nn.ELU(),
            nn.Conv2d(depth, 2 * depth, 4, 2), nn.ELU(),
            nn.Conv2d(2 * depth, 4 * depth, 4, 2), nn.ELU(),
            nn.Conv2d(4 * depth, 8 * depth, 4, 2), nn.ELU(),
        )
        self.out_dim = 32 * depth
        self.scalar_net = None
        if scalar_dim:
            self.scalar_net = nn.Sequential(
                nn.Linear(scalar_dim, scalar_units), nn.ELU(),
                nn.Linear(scalar_units, scalar_units), nn.ELU(),
            )
            self.out_dim += scalar_units

    def forward(self, image: torch.Tensor, scalars: torch.Tensor | None = None) -> torch.Tensor:
        if image.shape[-3:] != (3, 64, 64):
            raise ValueError(f"expected (...,3,64,64) image, got {tuple(image.shape)}")
        feat = self.conv(image).flatten(1)
        if self.scalar_net is not None:
            if scalars is None:
                raise ValueError("encoder was built with a scalar branch but got no scalars")
            feat = torch.cat([feat, self.scalar_net(scalars)], dim=-1)
        return feat


class ConvDecoder(nn.Module):
    """Transposed-convolutional decoder from a model state to a 64x64x3 mean."""

    def __init__(self, in_dim: int, depth: int = 48):
        super().__init__()
        self.depth = depth
        self.fc = nn.Linear(in_dim, 32 * depth)
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(32 * depth, 4 * depth, 5, 2), nn.ELU(),
            nn.ConvTranspose2d(4 * depth, 2 * depth, 5, 2), nn.ELU(),
            nn.ConvTranspose2d(2 * depth, depth, 6, 2), nn.ELU(),
            nn.ConvTranspose2d(depth, 3, 6, 2),
        )

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        x = self.fc(feat)
        x = x.view(-1, 32 * self.depth, 1, 1)
        return self.deconv(x)
