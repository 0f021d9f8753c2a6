"""Morphing attack detection baselines.

S-MAD: local binary pattern histograms over a cell grid, classified by a
deterministic linear max-margin model (hinge loss, L2 regularisation,
full-batch subgradient descent).  D-MAD: the difference between the
suspect's and a trusted probe's recognition embeddings, fed to the same
classifier.  Higher decision scores mean more morph-like.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# neighbours clockwise from top-left; bit i is set when neighbour i >= centre
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1),
                    (1, 1), (1, 0), (1, -1), (0, -1))
CONVENTION = "neighbor_ge_center_clockwise_from_top_left"

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _uniform_table() -> np.ndarray:
    """Map each 8-bit code to a 59-bin index: 58 uniform patterns in
    ascending order, everything else in the last bin."""
    table = np.empty(256, dtype=np.int64)
    uniform = []
    for c in range(256):
        rotated = ((c << 1) | (c >> 7)) & 0xFF
        transitions = bin(c ^ rotated).count("1")
        if transitions <= 2:
            uniform.append(c)
    index = {c: i for i, c in enumerate(uniform)}
    for c in range(256):
        table[c] = index.get(c, len(uniform))
    return table


_UNIFORM_TABLE = _uniform_table()


@dataclass(frozen=True)
class LbpConfig:
    grid: tuple = (4, 4)
    bins: int = 256          # 256 plain codes or 59 uniform bins

    def __post_init__(self):
        if self.bins not in (256, 59):
            raise ValueError("bins must be 256 (plain) or 59 (uniform)")

    @property
    def feature_length(self) -> int:
        return self.grid[0] * self.grid[1] * self.bins


@dataclass
class LbpFeature:
    vector: np.ndarray
    config: LbpConfig


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Fixed-luma conversion; single-channel input passes through."""
    if image.ndim == 2:
        return np.asarray(image, dtype=np.float64)
    return np.asarray(image, dtype=np.float64) @ LUMA_WEIGHTS


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """8-neighbour radius-1 codes; ties set the bit; border excluded."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 3 or g.shape[1] < 3:
        raise ValueError(f"need a 2-D image of at least 3x3, got {g.shape}")
    center = g[1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.uint8)
    h, w = center.shape
    for bit, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        neighbor = g[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        codes |= ((neighbor >= center).astype(np.uint8) << bit)
    return codes


def lbp_features(image: np.ndarray, config: LbpConfig = LbpConfig()) -> LbpFeature:
    """Concatenated per-cell code histograms over the grid.

    Each cell histogram sums to the number of code pixels in the cell.
    """
    gray = to_grayscale(image)
    rows, cols = config.grid
    if gray.shape[0] < rows + 2 or gray.shape[1] < cols + 2:
        raise ValueError(
            f"image {gray.shape} too small for a {rows}x{cols} grid")
    codes = lbp_codes(gray)
    if config.bins == 59:
        codes = _UNIFORM_TABLE[codes]
    hists = []
    for band in np.array_split(codes, rows, axis=0):
        for cell in np.array_split(band, cols, axis=1):
            hists.append(np.bincount(cell.ravel(), minlength=config.bins))
    return LbpFeature(vector=np.concatenate(hists).astype(np.float64),
                      config=config)


def smad_features(images: np.ndarray, config: LbpConfig = LbpConfig()) -> np.ndarray:
    return np.stack([lbp_features(img, config).vector for img in images])


@dataclass
class LinearHingeClassifier:
    """Deterministic linear max-margin classifier.

    Full-batch subgradient descent on the L2-regularised hinge loss from
    a zero init, on standardised features.  Scores are signed margins,
    higher = more morph-like.
    """

    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    lbp_config: LbpConfig | None = None

    def scores(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return x @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.scores(features) >= 0).astype(np.int64)

    def save(self, path):
        body = {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "convention": CONVENTION,
        }
        if self.lbp_config is not None:
            body["lbp"] = {"grid": list(self.lbp_config.grid),
                           "bins": self.lbp_config.bins}
        Path(path).write_text(json.dumps(body, sort_keys=True))

    @classmethod
    def load(cls, path):
        body = json.loads(Path(path).read_text())
        lbp_cfg = None
        if "lbp" in body:
            lbp_cfg = LbpConfig(grid=tuple(body["lbp"]["grid"]),
                                bins=body["lbp"]["bins"])
        return cls(
            weights=np.asarray(body["weights"], dtype=np.float64),
            bias=float(body["bias"]),
            feature_mean=np.asarray(body["feature_mean"], dtype=np.float64),
            feature_scale=np.asarray(body["feature_scale"], dtype=np.float64),
            lbp_config=lbp_cfg,
        )


def train_linear_hinge(features: np.ndarray, labels: np.ndarray,
                       reg: float = 1e-4, iterations: int = 2000,
                       lbp_config: LbpConfig | None = None) -> LinearHingeClassifier:
    """labels: 0 = bona fide, 1 = morph/attack."""
    x = np.asarray(features, dtype=np.float64)
    y_raw = np.asarray(labels)
    classes = np.unique(y_raw)
    if classes.size < 2:
        raise ValueError("training set must contain both classes")
    y = np.where(y_raw > 0, 1.0, -1.0)

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    xs = (x - mean) / scale

    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(1, iterations + 1):
        margins = y * (xs @ w + b)
        active = margins < 1.0
        grad_w = reg * w - (y[active, None] * xs[active]).sum(axis=0) / n
        grad_b = -(y[active]).sum() / n
        lr = 1.0 / (reg * t)
        w -= lr * grad_w
        b -= lr * grad_b
    return LinearHingeClassifier(weights=w, bias=b, feature_mean=mean,
                                 feature_scale=scale, lbp_config=lbp_config)


def smad_train(features: np.ndarray, labels: np.ndarray,
               lbp_config: LbpConfig = LbpConfig(), **kwargs) -> LinearHingeClassifier:
    return train_linear_hinge(features, labels, lbp_config=lbp_config, **kwargs)


@dataclass
class MadScores:
    """Detector outputs split by ground truth."""

    bona_fide: np.ndarray
    attack: np.ndarray


def dmad_features(fr, suspects: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Per-pair difference of unit embeddings: phi(suspect) - phi(probe)."""
    if suspects.ndim == 3:
        suspects = suspects[None]
        probes = probes[None]
    return fr.embed_images(suspects) - fr.embed_images(probes)


def mad_evaluate(classifier: LinearHingeClassifier, features: np.ndarray,
                 labels: np.ndarray) -> MadScores:
    """Score a labeled test set; feeds bpcer_at_apcer / det_points."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("empty test set")
    s = classifier.scores(features)
    return MadScores(bona_fide=s[labels == 0], attack=s[labels == 1])
