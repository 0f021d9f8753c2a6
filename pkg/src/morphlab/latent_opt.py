"""Two-phase latent optimisation toward worst-case embeddings.

Phase 1 inverts each source image to a faithful latent (pixel plus
embedding reconstruction); phase 2 starts from the latent midpoint and
steers the decoded morph's embedding toward the worst-case target of
each recognition backend.  The generator is pluggable: anything exposing
encode/decode callables over the same latent space can fill the role,
including pretrained generators that were never trained jointly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import worst_case_angular
from .losses import angular_distance


@dataclass
class GeneratorBackend:
    """Differentiable decode (and encode init) over one latent space."""

    encode_fn: callable        # (N, C, H, W) float tensor -> (N, latent_dim)
    decode_fn: callable        # (N, latent_dim) -> (N, C, H, W) in [0, 1]
    latent_dim: int
    descriptor: str = "generator"

    @classmethod
    def from_models(cls, encoder, decoder, descriptor="trained-autoencoder"):
        return cls(encode_fn=lambda x: encoder(x).mu, decode_fn=decoder,
                   latent_dim=decoder.cfg.latent_dim, descriptor=descriptor)


@dataclass(frozen=True)
class OptimizationConfig:
    steps_phase1: int = 150
    steps_phase2: int = 150
    adam_alpha: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    # (backend_id, weight) pairs; unlisted backends get weight 1
    fr_weights: tuple = ()
    # relative weighting of the two phase-1 terms
    image_weight: float = 1.0
    embed_weight: float = 1.0
    early_stop: float = 1e-8

    def __post_init__(self):
        if self.steps_phase1 < 0 or self.steps_phase2 < 0:
            raise ValueError("step counts must be >= 0")
        if any(w <= 0 for _, w in self.fr_weights):
            raise ValueError("fr weights must be positive")

    def weight_for(self, backend_id: str) -> float:
        for bid, w in self.fr_weights:
            if bid == backend_id:
                return float(w)
        return 1.0


@dataclass
class MorphResult:
    image: np.ndarray                 # (H, W, C) float in [0, 1]
    z1: np.ndarray
    z2: np.ndarray
    z_morph: np.ndarray
    trajectories: dict                # phase name -> list of step records
    target_distances: dict            # backend id -> {"initial", "final"}
    steps: dict                       # phase name -> step count


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    x = np.asarray(image, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


def _run_adam(z0: torch.Tensor, loss_fn, steps: int, cfg: OptimizationConfig):
    """Adam descent on a latent; returns (best latent, trajectory).

    The trajectory records each evaluated loss; the returned latent is
    the best iterate seen, so the final loss never exceeds the initial
    one.
    """
    z = z0.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([z], lr=cfg.adam_alpha,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))
    trajectory = []
    best = None
    for _ in range(steps):
        opt.zero_grad()
        record = loss_fn(z, build_graph=True)
        total_tensor = record.pop("total_tensor")
        trajectory.append(record)
        if best is None or record["total"] < best[0]:
            best = (record["total"], z.detach().clone())
        if record["total"] < cfg.early_stop:
            break
        total_tensor.backward()
        opt.step()
    with torch.no_grad():
        record = loss_fn(z)
    trajectory.append(record)
    if best is None or record["total"] < best[0]:
        best = (record["total"], z.detach().clone())
    return best[1], trajectory


def _phase1_loss(backend, fr_set, x, embeddings, weights, cfg):
    def loss_fn(z, build_graph=False):
        recon = backend.decode_fn(z)
        image_term = ((x - recon) ** 2).sum()
        total = cfg.image_weight * image_term
        record = {"image": float(image_term.detach())}
        for fr, target, w in zip(fr_set, embeddings, weights):
            term = ((target - fr.embed_tensor(recon)) ** 2).sum()
            record[f"embed:{fr.id}"] = float(term.detach())
            total = total + w * cfg.embed_weight * term
        record["total"] = float(total.detach())
        if build_graph:
            record["total_tensor"] = total
        return record
    return loss_fn


def _phase2_loss(backend, fr_set, targets, weights):
    def loss_fn(z, build_graph=False):
        morph = backend.decode_fn(z)
        total = None
        record = {}
        for fr, target, w in zip(fr_set, targets, weights):
            term = ((target - fr.embed_tensor(morph)) ** 2).sum()
            record[f"embed:{fr.id}"] = float(term.detach())
            total = w * term if total is None else total + w * term
        record["total"] = float(total.detach())
        if build_graph:
            record["total_tensor"] = total
        return record
    return loss_fn


def optimize_phase1(backend: GeneratorBackend, fr_set, image, cfg: OptimizationConfig):
    """Invert one image: pixel term plus per-backend embedding terms.

    Returns (latent, trajectory); the latent starts at encode_fn(image).
    """
    x = _to_tensor(image)
    weights = [cfg.weight_for(fr.id) for fr in fr_set]
    with torch.no_grad():
        z0 = backend.encode_fn(x)
        embeddings = [fr.embed_tensor(x) for fr in fr_set]
    loss_fn = _phase1_loss(backend, fr_set, x, embeddings, weights, cfg)
    return _run_adam(z0, loss_fn, cfg.steps_phase1, cfg)


def optimize_phase2(backend: GeneratorBackend, fr_set, z1: torch.Tensor,
                    z2: torch.Tensor, targets, cfg: OptimizationConfig):
    """Steer the midpoint latent toward per-backend worst-case targets.

    targets are unit embedding rows aligned with fr_set.
    """
    for fr, tgt in zip(fr_set, targets):
        if tgt.shape[-1] != fr.dim:
            raise ValueError(
                f"target dim {tgt.shape[-1]} != backend {fr.id} dim {fr.dim}")
    z0 = (z1 + z2) / 2.0
    weights = [cfg.weight_for(fr.id) for fr in fr_set]
    loss_fn = _phase2_loss(backend, fr_set, targets, weights)
    return _run_adam(z0, loss_fn, cfg.steps_phase2, cfg)


def generate_morph(backend: GeneratorBackend, fr_set, image1, image2,
                   cfg: OptimizationConfig) -> MorphResult:
    """Both phases end to end for one image pair."""
    x1, x2 = _to_tensor(image1), _to_tensor(image2)
    z1, traj1a = optimize_phase1(backend, fr_set, image1, cfg)
    z2, traj1b = optimize_phase1(backend, fr_set, image2, cfg)
    targets = []
    with torch.no_grad():
        for fr in fr_set:
            y1 = fr.embed_tensor(x1)[0].numpy().astype(np.float64)
            y2 = fr.embed_tensor(x2)[0].numpy().astype(np.float64)
            star = worst_case_angular(y1, y2).values
            targets.append(torch.from_numpy(star).float().unsqueeze(0))
    z_morph, traj2 = optimize_phase2(backend, fr_set, z1, z2, targets, cfg)
    with torch.no_grad():
        morph = backend.decode_fn(z_morph)
        initial = backend.decode_fn((z1 + z2) / 2.0)
        distances = {}
        for fr, target in zip(fr_set, targets):
            d0 = float(angular_distance(fr.embed_tensor(initial), target)[0])
            d1 = float(angular_distance(fr.embed_tensor(morph), target)[0])
            distances[fr.id] = {"initial": d0, "final": d1}
    return MorphResult(
        image=morph[0].numpy().transpose(1, 2, 0),
        z1=z1[0].numpy(), z2=z2[0].numpy(), z_morph=z_morph[0].numpy(),
        trajectories={"phase1_a": traj1a, "phase1_b": traj1b, "phase2": traj2},
        target_distances=distances,
        steps={"phase1": cfg.steps_phase1, "phase2": cfg.steps_phase2},
    )


def trend_nonincreasing(values, window: int = 10) -> bool:
    """Whether a loss trajectory trends downward: means of consecutive
    non-overlapping windows never increase (tiny float slack allowed).

    Adam is not per-step monotone, so the trend is judged on window
    means, not raw steps.
    """
    values = np.asarray([v["total"] if isinstance(v, dict) else v for v in values],
                        dtype=np.float64)
    if values.size <= window:
        return bool(values[-1] <= values[0] * (1 + 1e-9) + 1e-12)
    n_windows = values.size // window
    means = values[:n_windows * window].reshape(n_windows, window).mean(axis=1)
    return bool(np.all(means[1:] <= means[:-1] * (1 + 1e-9) + 1e-12))


def morph_metadata(pair_id: str, result: MorphResult) -> dict:
    """One JSON-lines record for a generated morph."""
    return {
        "pair_id": pair_id,
        "target_distances": result.target_distances,
        "steps": result.steps,
        "final_losses": {
            phase: traj[-1]["total"]
            for phase, traj in result.trajectories.items()
        },
    }
