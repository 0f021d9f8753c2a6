"""Recognition backends: embedding, threshold calibration, toy training.

A backend bundles an embedding function, a score function and (once
calibrated) a decision threshold.  Desk-scale backends are small conv
embedders trained from scratch with a cosine-margin identity objective;
the classification head is discarded after training and only the
embedding trunk ships.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .geometry import ANGULAR, Embedding, ScoreFunction, ScoreKind, score
from .nets import FrEmbedder, NetworkConfig

ROLE_WHITE_BOX = "white-box"
ROLE_BLACK_BOX = "black-box"


@dataclass
class ScoreSet:
    """Genuine and impostor dissimilarity scores for calibration."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        for name, arr in (("genuine", self.genuine), ("impostor", self.impostor)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} scores contain non-finite values")
            if arr.size and arr.min() < 0:
                raise ValueError(f"{name} dissimilarity scores must be nonnegative")


def fmr_at(scores: ScoreSet, t: float) -> float:
    """False match rate under the strict d < t rule."""
    return float(np.mean(scores.impostor < t))


def fnmr_at(scores: ScoreSet, t: float) -> float:
    """False non-match rate under the strict d < t rule."""
    return float(np.mean(scores.genuine >= t))


def calibrate_threshold(scores: ScoreSet, fmr_bound: float = 0.001) -> float:
    """Pick t with minimal FNMR subject to FMR(t) < fmr_bound.

    Candidates are the observed score values plus epsilon-offsets on each
    side, so every distinct (FMR, FNMR) regime of the strict d < t rule
    is visited; ties go to the larger threshold.
    """
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise ValueError("calibration needs nonempty genuine and impostor lists")
    if not 0.0 < fmr_bound < 1.0:
        raise ValueError(f"fmr_bound must lie in (0, 1), got {fmr_bound}")
    observed = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    eps = 1e-9 * max(1.0, float(observed.max() - observed.min()))
    candidates = np.unique(np.concatenate([
        observed - eps, observed, observed + eps
    ]))
    best = None
    for t in candidates:
        if fmr_at(scores, t) >= fmr_bound:
            continue
        key = (fnmr_at(scores, t), -t)
        if best is None or key < best[0]:
            best = (key, t)
    if best is None:
        raise ValueError("no admissible threshold: FMR bound unattainable")
    return float(best[1])


@dataclass
class FrBackend:
    """Uniform wrapper over one recognition system."""

    id: str
    net: FrEmbedder
    score_fn: ScoreFunction = field(default_factory=lambda: ANGULAR)
    threshold: float | None = None
    role: str = ROLE_BLACK_BOX
    net_config: NetworkConfig | None = None

    @property
    def dim(self) -> int:
        return self.net.cfg.fr_dim

    def embed_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable embedding of an NCHW float batch."""
        return self.net(x)

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        """Embed (N, H, W, C) float images; returns (N, D) unit rows."""
        if images.ndim == 3:
            images = images[None]
        x = torch.from_numpy(np.ascontiguousarray(
            images.transpose(0, 3, 1, 2), dtype=np.float32))
        with torch.no_grad():
            e = self.net(x)
        return e.numpy().astype(np.float64)

    def embedding_of(self, image: np.ndarray) -> Embedding:
        return Embedding(self.embed_images(image[None])[0], normalized=True)

    def distance(self, a, b) -> float:
        return score(self.score_fn, a, b)

    def require_threshold(self) -> float:
        if self.threshold is None:
            raise ValueError(f"backend {self.id!r} is not calibrated")
        return self.threshold


def pair_scores(backend: FrBackend, images: np.ndarray, labels: np.ndarray,
                seed: int = 0, max_genuine: int = 20000,
                max_impostor: int = 50000) -> ScoreSet:
    """Genuine/impostor dissimilarities on a labeled image set.

    All same-identity pairs (capped) and a fixed-seed random sample of
    cross-identity pairs.
    """
    emb = backend.embed_images(images)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    genuine, impostor = [], []
    n = len(labels)
    same = [np.nonzero(labels == ident)[0] for ident in np.unique(labels)]
    for idx in same:
        for i in range(len(idx)):
            for j in range(i + 1, len(idx)):
                genuine.append((idx[i], idx[j]))
    if len(genuine) > max_genuine:
        pick = rng.choice(len(genuine), size=max_genuine, replace=False)
        genuine = [genuine[k] for k in pick]
    count = 0
    while count < max_impostor:
        i, j = rng.integers(0, n, 2)
        if labels[i] != labels[j]:
            impostor.append((i, j))
            count += 1
    def dists(pairs):
        a = emb[[p[0] for p in pairs]]
        b = emb[[p[1] for p in pairs]]
        cos = np.clip(np.sum(a * b, axis=1), -1 + 1e-7, 1 - 1e-7)
        if backend.score_fn.kind is ScoreKind.EUCLIDEAN_DISSIMILARITY:
            return np.linalg.norm(a - b, axis=1)
        return np.arccos(cos)
    return ScoreSet(genuine=dists(genuine), impostor=dists(impostor))


def equal_error_rate(scores: ScoreSet) -> float:
    """EER of the strict d < t rule, swept over observed scores."""
    observed = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    eps = 1e-9 * max(1.0, float(observed.max() - observed.min()))
    candidates = np.concatenate([observed, observed + eps])
    best = min(candidates, key=lambda t: abs(fmr_at(scores, t) - fnmr_at(scores, t)))
    return (fmr_at(scores, best) + fnmr_at(scores, best)) / 2.0


@dataclass(frozen=True)
class ToyFrConfig:
    embed_dim: int = 64
    base_width: int = 32
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    margin: float = 0.2
    logit_scale: float = 16.0
    seed: int = 0


def train_toy_fr(images: np.ndarray, labels: np.ndarray, image_size: int,
                 config: ToyFrConfig, backend_id: str,
                 role: str = ROLE_BLACK_BOX) -> FrBackend:
    """Train an embedder with a cosine-margin identity objective.

    The margin head is dropped afterwards; the returned backend carries
    only the embedding trunk.
    """
    labels = np.asarray(labels)
    n_ids = int(labels.max()) + 1
    if n_ids < 10:
        raise ValueError(f"need at least 10 identities, got {n_ids}")
    torch.manual_seed(config.seed)
    net_cfg = NetworkConfig(image_size=image_size, channels=images.shape[-1],
                            latent_dim=8, base_width=config.base_width,
                            fr_dim=config.embed_dim)
    net = FrEmbedder(net_cfg)
    head = torch.nn.Parameter(torch.randn(n_ids, config.embed_dim) * 0.05)
    opt = torch.optim.Adam(list(net.parameters()) + [head], lr=config.lr)

    x_all = torch.from_numpy(np.ascontiguousarray(
        images.transpose(0, 3, 1, 2), dtype=np.float32))
    y_all = torch.from_numpy(labels.astype(np.int64))
    rng = np.random.default_rng(config.seed)
    n = len(labels)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = x_all[idx], y_all[idx]
            emb = net(x)
            w = F.normalize(head, p=2, dim=1)
            cos = emb @ w.t()
            margin = torch.zeros_like(cos)
            margin[torch.arange(len(y)), y] = config.margin
            loss = F.cross_entropy(config.logit_scale * (cos - margin), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return FrBackend(id=backend_id, net=net, role=role, net_config=net_cfg)


def save_backend(backend: FrBackend, path):
    cfg = backend.net.cfg
    config = {
        "id": backend.id,
        "metric": backend.score_fn.kind.value,
        "threshold": backend.threshold,
        "role": backend.role,
        "net": {
            "image_size": cfg.image_size, "channels": cfg.channels,
            "latent_dim": cfg.latent_dim, "base_width": cfg.base_width,
            "fr_dim": cfg.fr_dim,
        },
    }
    ckpt.save_checkpoint(path, config, ckpt.modules_to_records({"fr": backend.net}))


def load_backend(path) -> FrBackend:
    config, params = ckpt.load_checkpoint(path)
    net_cfg = NetworkConfig(**config["net"])
    net = FrEmbedder(net_cfg)
    ckpt.load_into_modules(params, {"fr": net})
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return FrBackend(
        id=config["id"], net=net,
        score_fn=ScoreFunction(ScoreKind(config["metric"])),
        threshold=config["threshold"], role=config["role"], net_config=net_cfg,
    )


def save_registry(path, backends: list, checkpoint_paths: list):
    """Backend registry: id, checkpoint path, metric, threshold, role."""
    entries = [
        {
            "id": b.id,
            "checkpoint": str(p),
            "metric": b.score_fn.kind.value,
            "threshold": b.threshold,
            "role": b.role,
        }
        for b, p in zip(backends, checkpoint_paths)
    ]
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True))


def load_registry(path) -> list:
    entries = json.loads(Path(path).read_text())
    out = []
    for e in entries:
        backend = load_backend(e["checkpoint"])
        backend.threshold = e["threshold"]
        backend.role = e["role"]
        out.append(backend)
    return out
