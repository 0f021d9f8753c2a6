"""Encoder, decoder, critic and toy identity embedder.

All four nets share one scaling rule: the number of resolution stages is
log2(image_size) - 2, so the stacks grow by one stage per doubling of the
image side.  The decoder upsamples with nearest-neighbour resizing
followed by size-maintaining convolutions; there are no transposed
convolutions anywhere.  No normalisation layers are used: critic
gradients are penalised per sample, and every forward pass must be
batch-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

ALLOWED_SIZES = (8, 16, 32, 64, 128, 256, 512)

SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class NetworkConfig:
    image_size: int = 32
    channels: int = 3
    latent_dim: int = 128
    base_width: int = 64
    fr_dim: int = 64

    def __post_init__(self):
        if self.image_size not in ALLOWED_SIZES:
            raise ValueError(f"image_size must be one of {ALLOWED_SIZES}")
        if min(self.channels, self.latent_dim, self.base_width, self.fr_dim) < 1:
            raise ValueError("channels, latent_dim, base_width, fr_dim must be >= 1")

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.image_size)) - 2

    def stage_widths(self):
        # cap at 4x base so deep stacks stay desk-sized
        return [min(self.base_width * 2 ** i, self.base_width * 4)
                for i in range(self.n_stages)]


@dataclass
class EncoderOutput:
    mu: torch.Tensor
    sigma: torch.Tensor


def _check_image(cfg: NetworkConfig, x: torch.Tensor, who: str):
    if x.dim() != 4 or x.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ValueError(
            f"{who}: expected (N, {cfg.channels}, {cfg.image_size}, "
            f"{cfg.image_size}), got {tuple(x.shape)}"
        )


def _check_latent(cfg: NetworkConfig, z: torch.Tensor, who: str):
    if z.dim() != 2 or z.shape[1] != cfg.latent_dim:
        raise ValueError(
            f"{who}: expected (N, {cfg.latent_dim}), got {tuple(z.shape)}"
        )


class Encoder(nn.Module):
    """Maps images to a latent mean and strictly positive scale."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        layers = [nn.Conv2d(cfg.channels, cfg.base_width, 3, 1, 1), nn.LeakyReLU(0.2)]
        prev = cfg.base_width
        for w in widths:
            layers += [nn.Conv2d(prev, w, 3, 2, 1), nn.LeakyReLU(0.2)]
            prev = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev * 4 * 4, 2 * cfg.latent_dim)

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        _check_image(self.cfg, x, "encode")
        h = self.features(x)
        out = self.head(h.reshape(h.shape[0], -1))
        mu, raw = out.chunk(2, dim=1)
        sigma = F.softplus(raw) + SIGMA_FLOOR
        return EncoderOutput(mu=mu, sigma=sigma)

    def encode_mu(self, x: torch.Tensor) -> torch.Tensor:
        """Deterministic latent: the mean path used for reconstruction,
        morphing and optimisation."""
        return self.forward(x).mu


def reparameterize(out: EncoderOutput, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + sigma * eps."""
    if eps.shape != out.mu.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != mu shape {tuple(out.mu.shape)}")
    return out.mu + out.sigma * eps


class Decoder(nn.Module):
    """Maps latents to images in [0, 1] via upsample + convolution."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        widths = list(reversed(cfg.stage_widths()))
        top = widths[0] if widths else cfg.base_width
        self.stem = nn.Linear(cfg.latent_dim, top * 4 * 4)
        self.top_width = top
        blocks = []
        prev = top
        for w in widths[1:] + [cfg.base_width]:
            blocks += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(prev, w, 3, 1, 1), nn.LeakyReLU(0.2)]
            prev = w
        self.blocks = nn.Sequential(*blocks)
        self.to_image = nn.Conv2d(prev, cfg.channels, 3, 1, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        _check_latent(self.cfg, z, "decode")
        h = self.stem(z).reshape(z.shape[0], self.top_width, 4, 4)
        h = self.blocks(h)
        return torch.sigmoid(self.to_image(h))


class Critic(nn.Module):
    """Unbounded score over joint (image, latent) pairs.

    Twice differentiable w.r.t. both inputs, as required by gradient
    penalties that are themselves backpropagated through.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        layers = [nn.Conv2d(cfg.channels, cfg.base_width, 3, 1, 1), nn.LeakyReLU(0.2)]
        prev = cfg.base_width
        for w in widths:
            layers += [nn.Conv2d(prev, w, 3, 2, 1), nn.LeakyReLU(0.2)]
            prev = w
        self.image_branch = nn.Sequential(*layers)
        joint_width = cfg.base_width * 4
        self.latent_branch = nn.Sequential(
            nn.Linear(cfg.latent_dim, joint_width), nn.LeakyReLU(0.2),
            nn.Linear(joint_width, joint_width), nn.LeakyReLU(0.2),
        )
        self.joint = nn.Sequential(
            nn.Linear(prev * 4 * 4 + joint_width, joint_width), nn.LeakyReLU(0.2),
            nn.Linear(joint_width, 1),
        )

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        _check_image(self.cfg, x, "critic_score")
        _check_latent(self.cfg, z, "critic_score")
        if x.shape[0] != z.shape[0]:
            raise ValueError(f"batch mismatch: {x.shape[0]} images vs {z.shape[0]} latents")
        hx = self.image_branch(x).reshape(x.shape[0], -1)
        hz = self.latent_branch(z)
        return self.joint(torch.cat([hx, hz], dim=1)).squeeze(1)


class FrEmbedder(nn.Module):
    """Toy identity embedder: conv stack to a unit-normalised vector."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        layers = [nn.Conv2d(cfg.channels, cfg.base_width, 3, 1, 1), nn.LeakyReLU(0.2)]
        prev = cfg.base_width
        for w in widths:
            layers += [nn.Conv2d(prev, w, 3, 2, 1), nn.LeakyReLU(0.2)]
            prev = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev * 4 * 4, cfg.fr_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_image(self.cfg, x, "fr_embed")
        h = self.features(x)
        e = self.head(h.reshape(h.shape[0], -1))
        return F.normalize(e, p=2, dim=1, eps=1e-12)


def build_all(cfg: NetworkConfig):
    """Fresh encoder/decoder/critic triple for one configuration."""
    return Encoder(cfg), Decoder(cfg), Critic(cfg)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
