"""Synthetic identity imagery, morph-pair protocols and colour transfer.

Identities are procedural face-like sprites: an oval on a background with
eyes, nose, mouth and a hair band, all parameterised per identity.
Samples of one identity share its parameter vector and differ by bounded
jitter (shift, scale, brightness, pixel noise), so a small embedder can
learn to separate identities while within-identity variation stays
realistic enough to calibrate against.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Embedding

_EDGE_SOFTNESS = 0.8  # in pixels, for anti-aliased sprite edges


@dataclass
class SyntheticIdentitySpec:
    """Deterministic appearance parameters for one identity."""

    identity: int
    seed: int
    params: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.params is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.identity]))
            self.params = np.array([
                *rng.uniform(0.20, 0.80, 3),     # 0:3   background colour
                *rng.uniform(0.45, 0.95, 3),     # 3:6   face colour
                rng.uniform(0.22, 0.34),         # 6     face rx
                rng.uniform(0.26, 0.40),         # 7     face ry
                rng.uniform(0.38, 0.50),         # 8     eye height
                rng.uniform(0.10, 0.18),         # 9     eye separation
                rng.uniform(0.030, 0.065),       # 10    eye radius
                *rng.uniform(0.05, 0.35, 3),     # 11:14 eye colour
                rng.uniform(0.62, 0.75),         # 14    mouth height
                rng.uniform(0.06, 0.16),         # 15    mouth half-width
                rng.uniform(0.015, 0.050),       # 16    mouth half-height
                *rng.uniform(0.10, 0.50, 3),     # 17:20 mouth colour
                rng.uniform(0.05, 0.12),         # 20    nose length
                rng.uniform(0.012, 0.035),       # 21    nose half-width
                rng.uniform(0.06, 0.20),         # 22    hair band height
                *rng.uniform(0.00, 0.60, 3),     # 23:26 hair colour
            ], dtype=np.float64)


def _ellipse_mask(xx, yy, cx, cy, rx, ry, soft):
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return np.clip((1.0 - d) / soft + 0.5, 0.0, 1.0)


def _box_mask(xx, yy, x0, x1, y0, y1, soft):
    mx = np.clip((xx - x0) / soft + 0.5, 0, 1) * np.clip((x1 - xx) / soft + 0.5, 0, 1)
    my = np.clip((yy - y0) / soft + 0.5, 0, 1) * np.clip((y1 - yy) / soft + 0.5, 0, 1)
    return mx * my


def render_sprite(params: np.ndarray, size: int, jitter=None) -> np.ndarray:
    """Rasterise one sprite as a (size, size, 3) float image in [0, 1].

    jitter is (dx, dy, scale, brightness, noise_seed); omit for the
    canonical pose.
    """
    dx, dy, scale, brightness, noise_seed = jitter if jitter is not None else (0, 0, 1, 0, -1)
    p = params
    axis = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(axis, axis)
    # jitter moves the sprite, not the canvas
    xx = (xx - 0.5 - dx) / scale + 0.5
    yy = (yy - 0.5 - dy) / scale + 0.5
    soft = _EDGE_SOFTNESS / size

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = p[0:3]

    hair = _box_mask(xx, yy, 0.08, 0.92, 0.04, 0.04 + p[22], soft)
    img = img * (1 - hair[..., None]) + hair[..., None] * p[23:26]

    face = _ellipse_mask(xx, yy, 0.5, 0.54, p[6], p[7], soft)
    img = img * (1 - face[..., None]) + face[..., None] * p[3:6]

    for side in (-1.0, 1.0):
        eye = _ellipse_mask(xx, yy, 0.5 + side * p[9], p[8], p[10], p[10], soft)
        img = img * (1 - eye[..., None]) + eye[..., None] * p[11:14]

    nose_col = p[3:6] * 0.75
    nose = _box_mask(xx, yy, 0.5 - p[21], 0.5 + p[21], 0.52, 0.52 + p[20], soft)
    img = img * (1 - nose[..., None]) + nose[..., None] * nose_col

    mouth = _ellipse_mask(xx, yy, 0.5, p[14], p[15], p[16], soft)
    img = img * (1 - mouth[..., None]) + mouth[..., None] * p[17:20]

    img = img + brightness
    if noise_seed >= 0:
        noise_rng = np.random.default_rng(int(noise_seed))
        img = img + noise_rng.normal(0.0, 0.01, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class SyntheticDataset:
    images: np.ndarray           # (N, S, S, 3) float32 in [0, 1]
    labels: np.ndarray           # (N,) int identity indices
    image_size: int
    seed: int
    n_identities: int
    samples_per_identity: int

    def indices_for(self, identity: int) -> np.ndarray:
        return np.nonzero(self.labels == identity)[0]

    def holdout_split(self, holdout_per_identity: int):
        """Deterministic split: the last k samples of each identity are
        held out."""
        train, held = [], []
        for ident in range(self.n_identities):
            idx = self.indices_for(ident)
            train.extend(idx[:-holdout_per_identity])
            held.extend(idx[-holdout_per_identity:])
        return np.array(train), np.array(held)


def generate_synthetic_dataset(n_identities: int, samples_per_identity: int,
                               seed: int, image_size: int = 32) -> SyntheticDataset:
    """Deterministic procedural identity dataset."""
    if n_identities < 10:
        raise ValueError(f"need at least 10 identities, got {n_identities}")
    if samples_per_identity < 1:
        raise ValueError("samples_per_identity must be >= 1")
    images = np.empty((n_identities * samples_per_identity, image_size, image_size, 3),
                      dtype=np.float32)
    labels = np.empty(n_identities * samples_per_identity, dtype=np.int64)
    k = 0
    for ident in range(n_identities):
        spec = SyntheticIdentitySpec(identity=ident, seed=seed)
        jrng = np.random.default_rng(np.random.SeedSequence([seed, ident, 997]))
        for _ in range(samples_per_identity):
            jitter = (
                jrng.uniform(-0.03, 0.03),
                jrng.uniform(-0.03, 0.03),
                jrng.uniform(0.94, 1.06),
                jrng.uniform(-0.06, 0.06),
                int(jrng.integers(0, 2 ** 31)),
            )
            images[k] = render_sprite(spec.params, image_size, jitter)
            labels[k] = ident
            k += 1
    return SyntheticDataset(images=images, labels=labels, image_size=image_size,
                            seed=seed, n_identities=n_identities,
                            samples_per_identity=samples_per_identity)


def save_image_png(path, img: np.ndarray):
    arr = np.clip(np.asarray(img, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_dataset(ds: SyntheticDataset, out_dir):
    """Write images/{identity}/{sample}.png plus labels.csv."""
    out_dir = Path(out_dir)
    rows = []
    for ident in range(ds.n_identities):
        ident_dir = out_dir / "images" / f"{ident:04d}"
        ident_dir.mkdir(parents=True, exist_ok=True)
        for j, idx in enumerate(ds.indices_for(ident)):
            rel = f"images/{ident:04d}/{j:04d}.png"
            save_image_png(out_dir / rel, ds.images[idx])
            rows.append((idx, ident, rel))
    with (out_dir / "labels.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "identity", "path"])
        writer.writerows(rows)
    meta = {
        "image_size": ds.image_size,
        "seed": ds.seed,
        "n_identities": ds.n_identities,
        "samples_per_identity": ds.samples_per_identity,
    }
    (out_dir / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_dataset(in_dir) -> SyntheticDataset:
    in_dir = Path(in_dir)
    meta = json.loads((in_dir / "dataset.json").read_text())
    with (in_dir / "labels.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(int(r[0]), int(r[1]), r[2]) for r in reader]
    rows.sort()
    images = np.stack([load_image_png(in_dir / rel) for _, _, rel in rows])
    labels = np.array([ident for _, ident, _ in rows], dtype=np.int64)
    return SyntheticDataset(images=images, labels=labels,
                            image_size=meta["image_size"], seed=meta["seed"],
                            n_identities=meta["n_identities"],
                            samples_per_identity=meta["samples_per_identity"])


@dataclass
class PairEntry:
    pair_id: str
    identity_a: int
    identity_b: int
    image_a: int
    image_b: int
    probe_a: int
    probe_b: int


@dataclass
class MorphProtocol:
    entries: list

    def __post_init__(self):
        for e in self.entries:
            if e.identity_a == e.identity_b:
                raise ValueError(f"{e.pair_id}: identity paired with itself")
            if e.image_a == e.probe_a or e.image_b == e.probe_b:
                raise ValueError(f"{e.pair_id}: probe equals morph source")

    def __len__(self):
        return len(self.entries)


def mean_identity_embeddings(dataset: SyntheticDataset, fr) -> np.ndarray:
    """Normalised per-identity average of image embeddings."""
    means = np.empty((dataset.n_identities, fr.dim), dtype=np.float64)
    for ident in range(dataset.n_identities):
        embs = fr.embed_images(dataset.images[dataset.indices_for(ident)])
        m = embs.mean(axis=0)
        means[ident] = m / np.linalg.norm(m)
    return means


def select_pairs(dataset: SyntheticDataset, fr, n_pairs: int, seed: int,
                 top_fraction: float = 0.10,
                 probe_fraction: float = 0.30) -> MorphProtocol:
    """Build a morph protocol from the most-similar identity pairs.

    Identity pairs are ranked by cosine similarity of their mean
    embeddings; image pairs are drawn from the top fraction with a fixed
    seed.  Per identity, a probe pool disjoint from the morph-source pool
    supplies the evaluation probes.
    """
    if dataset.n_identities < 2:
        raise ValueError("need at least 2 identities to build pairs")
    if n_pairs == 0:
        return MorphProtocol(entries=[])
    means = mean_identity_embeddings(dataset, fr)
    sims = means @ means.T
    ids = dataset.n_identities
    ranked = sorted(((sims[a, b], a, b) for a in range(ids) for b in range(a + 1, ids)),
                    reverse=True)
    keep = max(1, round(top_fraction * len(ranked)))
    top = [(a, b) for _, a, b in ranked[:keep]]

    rng = np.random.default_rng(seed)
    sources, probes = {}, {}
    for ident in range(ids):
        idx = dataset.indices_for(ident).copy()
        rng.shuffle(idx)
        n_probe = max(1, int(round(probe_fraction * len(idx))))
        if n_probe >= len(idx):
            raise ValueError(f"identity {ident} has too few samples for a probe pool")
        probes[ident] = idx[:n_probe]
        sources[ident] = idx[n_probe:]

    entries = []
    for k in range(n_pairs):
        a, b = top[k % len(top)]
        entries.append(PairEntry(
            pair_id=f"pair{k:05d}",
            identity_a=a, identity_b=b,
            image_a=int(rng.choice(sources[a])),
            image_b=int(rng.choice(sources[b])),
            probe_a=int(rng.choice(probes[a])),
            probe_b=int(rng.choice(probes[b])),
        ))
    return MorphProtocol(entries=entries)


def write_protocol(protocol: MorphProtocol, path):
    """Protocol as JSON lines, one object per pair."""
    with Path(path).open("w") as fh:
        for e in protocol.entries:
            fh.write(json.dumps({
                "pair_id": e.pair_id,
                "identity_a": e.identity_a, "identity_b": e.identity_b,
                "image_a": e.image_a, "image_b": e.image_b,
                "probe_a": e.probe_a, "probe_b": e.probe_b,
            }, sort_keys=True) + "\n")


def read_protocol(path) -> MorphProtocol:
    entries = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                entries.append(PairEntry(**d))
    return MorphProtocol(entries=entries)


def compute_channel_stats(images: np.ndarray) -> dict:
    """Per-channel mean/std over a stack of images."""
    flat = images.reshape(-1, images.shape[-1])
    return {str(c): {"mean": float(flat[:, c].mean()), "std": float(flat[:, c].std())}
            for c in range(images.shape[-1])}


def colour_correct(x: np.ndarray, reference_stats: dict) -> np.ndarray:
    """Match per-channel mean/std to the reference, then clip to [0, 1]."""
    eps = 1e-6
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[-1]):
        ref = reference_stats[str(c)]
        chan = np.asarray(x[..., c], dtype=np.float64)
        mu, sd = float(chan.mean()), float(chan.std())
        out[..., c] = (chan - mu) / max(sd, eps) * ref["std"] + ref["mean"]
    return np.clip(out, 0.0, 1.0).astype(x.dtype)
