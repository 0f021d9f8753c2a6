"""Training and finetuning loss terms.

The adversarial game trains a critic on joint (image, latent) pairs with
gradient penalties enforcing unit input-gradient norm; finetuning adds
pixel, spectral and identity-embedding terms that pull reconstructions
toward their sources and morphs toward worst-case embedding targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .geometry import COSINE_CLAMP

PIXEL = "pixel"
FFL = "ffl"
FR = "fr"
FR_MORPH = "fr_morph"
FR_MORPH_ALPHA = "fr_morph_alpha"
ADVERSARIAL = "adversarial"

GAMMA_ORDER = (PIXEL, FFL, FR, FR_MORPH, FR_MORPH_ALPHA)


@dataclass(frozen=True)
class LossWeights:
    """Gradient-penalty weight plus the five finetuning term weights."""

    lambda_gp: float = 10.0
    gamma: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if len(self.gamma) != 5:
            raise ValueError(f"gamma must have 5 entries, got {len(self.gamma)}")
        if self.lambda_gp < 0 or any(g < 0 for g in self.gamma):
            raise ValueError("loss weights must be nonnegative")

    def gamma_for(self, term: str) -> float:
        return self.gamma[GAMMA_ORDER.index(term)]


@dataclass
class LossReport:
    """Raw per-term values and the weighted total actually optimised."""

    terms: dict
    total: float

    def weighted_sum(self, w: LossWeights) -> float:
        s = self.terms.get(ADVERSARIAL, 0.0)
        for name in GAMMA_ORDER:
            if name in self.terms:
                s += w.gamma_for(name) * self.terms[name]
        return s


def _check_finite(name, *values):
    for v in values:
        if isinstance(v, torch.Tensor):
            if not torch.isfinite(v).all():
                raise ValueError(f"{name}: non-finite input")
        elif not math.isfinite(v):
            raise ValueError(f"{name}: non-finite input")


def critic_loss(s_fake, s_real, r_x, r_z, w: LossWeights):
    """s_fake - s_real + lambda * (R_x + R_z)."""
    _check_finite("critic_loss", s_fake, s_real, r_x, r_z)
    return s_fake - s_real + w.lambda_gp * (r_x + r_z)


def generator_adv_loss(s_fake, s_real):
    """|s_real - s_fake|: the generator pair shrinks the critic gap."""
    _check_finite("generator_adv_loss", s_fake, s_real)
    return abs(s_real - s_fake)


def gradient_penalty(critic, x_hat: torch.Tensor, z_hat: torch.Tensor,
                     wrt: str) -> torch.Tensor:
    """Squared deviation of the critic's input-gradient norm from 1.

    Evaluated at the given (already interpolated) points.  The result is
    built with create_graph=True, so it is itself differentiable with
    respect to the critic's parameters.
    """
    if wrt not in ("x", "z"):
        raise ValueError(f"wrt must be 'x' or 'z', got {wrt!r}")
    x = x_hat.detach().requires_grad_(True)
    z = z_hat.detach().requires_grad_(True)
    scores = critic(x, z)
    target = x if wrt == "x" else z
    grads = torch.autograd.grad(
        outputs=scores.sum(), inputs=target, create_graph=True
    )[0]
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def joint_gradient_penalty(critic, x_hat: torch.Tensor, z_hat: torch.Tensor):
    """Both penalties from one critic evaluation.

    Returns (r_x, r_z, mean_norm_x, mean_norm_z); the penalties carry the
    double-backprop graph, the mean norms are detached diagnostics.
    """
    x = x_hat.detach().requires_grad_(True)
    z = z_hat.detach().requires_grad_(True)
    scores = critic(x, z)
    gx, gz = torch.autograd.grad(outputs=scores.sum(), inputs=[x, z],
                                 create_graph=True)
    nx = gx.reshape(gx.shape[0], -1).norm(2, dim=1)
    nz = gz.reshape(gz.shape[0], -1).norm(2, dim=1)
    r_x = ((nx - 1.0) ** 2).mean()
    r_z = ((nz - 1.0) ** 2).mean()
    return r_x, r_z, float(nx.detach().mean()), float(nz.detach().mean())


def interpolate_pairs(x_real, x_fake, z_real, z_fake, generator=None):
    """Per-sample convex combinations of real and fake joint pairs.

    One interpolation coefficient per sample, shared by the image and
    latent component of the pair.
    """
    eps = torch.rand(x_real.shape[0], device=x_real.device, dtype=x_real.dtype,
                     generator=generator)
    ex = eps.view(-1, *([1] * (x_real.dim() - 1)))
    ez = eps.view(-1, *([1] * (z_real.dim() - 1)))
    x_hat = ex * x_real + (1.0 - ex) * x_fake
    z_hat = ez * z_real + (1.0 - ez) * z_fake
    return x_hat, z_hat


def pixel_loss(x: torch.Tensor, x_recon: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements and the batch."""
    if x.shape != x_recon.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_recon.shape)}")
    return ((x - x_recon) ** 2).mean()


def focal_frequency_loss(x: torch.Tensor, x_recon: torch.Tensor) -> torch.Tensor:
    """Frequency-space reconstruction error, re-weighted toward the
    frequencies currently worst reconstructed.

    Per image: w = |F(x_recon) - F(x)| normalised by its per-image
    maximum, detached from the graph; the loss is the mean of
    w * |F(x_recon) - F(x)|^2 over frequencies, channels and batch.
    """
    if x.shape != x_recon.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_recon.shape)}")
    diff = torch.fft.fft2(x_recon, norm="ortho") - torch.fft.fft2(x, norm="ortho")
    mag2 = diff.real ** 2 + diff.imag ** 2
    mag = torch.sqrt(mag2 + 0.0)
    flat_max = mag.reshape(mag.shape[0], -1).max(dim=1).values
    denom = torch.where(flat_max > 0, flat_max, torch.ones_like(flat_max))
    weight = (mag / denom.view(-1, *([1] * (mag.dim() - 1)))).detach()
    return (weight * mag2).mean()


def angular_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-row angle between unit embeddings, cosine clamped for finite
    gradients."""
    cos = (a * b).sum(dim=-1)
    cos = cos.clamp(-1.0 + COSINE_CLAMP, 1.0 - COSINE_CLAMP)
    return torch.arccos(cos)


def fr_recon_loss(fr, x: torch.Tensor, x_recon: torch.Tensor) -> torch.Tensor:
    """Mean angular distance between embeddings of originals and
    reconstructions."""
    return angular_distance(fr(x_recon), fr(x)).mean()


def fr_morph_alpha_loss(fr, x_morph: torch.Tensor, y_target: torch.Tensor) -> torch.Tensor:
    """Mean angular distance between morph embeddings and their
    worst-case targets."""
    y = y_target if isinstance(y_target, torch.Tensor) else torch.as_tensor(y_target)
    if y.dim() == 1:
        y = y.unsqueeze(0)
    return angular_distance(fr(x_morph), y.to(x_morph.dtype)).mean()


def weighted_total(terms: dict, w: LossWeights):
    """adversarial + sum of gamma_i * term_i, preserving tensor-ness for
    backprop."""
    total = terms.get(ADVERSARIAL, 0.0)
    for name in GAMMA_ORDER:
        if name in terms:
            total = total + w.gamma_for(name) * terms[name]
    return total


def combined_generator_loss(terms: dict, w: LossWeights) -> LossReport:
    """Weighted total as a LossReport of plain scalars."""
    for name, value in terms.items():
        _check_finite(f"combined_generator_loss[{name}]", value)
    scalars = {k: (float(v.detach()) if isinstance(v, torch.Tensor) else float(v))
               for k, v in terms.items()}
    return LossReport(terms=scalars, total=weighted_total(scalars, w))


