"""Embedding-space geometry: score functions and worst-case targets.

A morph of two identities is judged by how close its recognition embedding
sits to *both* source embeddings.  The hardest point any morph could reach
is the one minimising the worse of the two scores; for Euclidean
dissimilarity that is the midpoint of the segment, for angular metrics it
is the normalised sum (the angle bisector on the unit sphere).  These
closed forms, plus the score functions themselves, live here as pure
numpy functions so they can serve both as optimisation targets and as
evaluation oracles.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

# Keeps arccos gradients finite when these formulas are mirrored in
# differentiable code paths.
COSINE_CLAMP = 1e-7

UNIT_NORM_TOL = 1e-6


class DegenerateInputError(ValueError):
    """Raised when a worst-case target is not uniquely defined."""


class NormalizationWarning(UserWarning):
    """Emitted when an angular operation silently normalises its inputs."""


class ScoreKind(enum.Enum):
    EUCLIDEAN_DISSIMILARITY = "euclidean_dissimilarity"
    ANGULAR_DISSIMILARITY = "angular_dissimilarity"
    COSINE_SIMILARITY = "cosine_similarity"


class ScoreOrientation(enum.Enum):
    DISSIMILARITY = "dissimilarity"
    SIMILARITY = "similarity"


_ORIENTATION = {
    ScoreKind.EUCLIDEAN_DISSIMILARITY: ScoreOrientation.DISSIMILARITY,
    ScoreKind.ANGULAR_DISSIMILARITY: ScoreOrientation.DISSIMILARITY,
    ScoreKind.COSINE_SIMILARITY: ScoreOrientation.SIMILARITY,
}


@dataclass(frozen=True)
class ScoreFunction:
    """A comparison metric over embeddings plus its orientation."""

    kind: ScoreKind
    orientation: ScoreOrientation = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ScoreKind(self.kind))
        expected = _ORIENTATION[self.kind]
        if self.orientation is None:
            object.__setattr__(self, "orientation", expected)
        elif self.orientation != expected:
            raise ValueError(
                f"orientation {self.orientation} inconsistent with kind {self.kind}"
            )


EUCLIDEAN = ScoreFunction(ScoreKind.EUCLIDEAN_DISSIMILARITY)
ANGULAR = ScoreFunction(ScoreKind.ANGULAR_DISSIMILARITY)
COSINE = ScoreFunction(ScoreKind.COSINE_SIMILARITY)


@dataclass
class Embedding:
    """A recognition-space vector, optionally flagged as unit-normalised."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite entries")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) >= UNIT_NORM_TOL:
                raise ValueError(f"normalized flag set but ||values|| = {norm}")

    @property
    def dim(self) -> int:
        return self.values.size

    @classmethod
    def unit(cls, values) -> "Embedding":
        """Construct a unit-normalised embedding from any nonzero vector."""
        v = np.asarray(values, dtype=np.float64).ravel()
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DegenerateInputError("cannot normalise the zero vector")
        return cls(v / norm, normalized=True)


def as_embedding(x) -> Embedding:
    return x if isinstance(x, Embedding) else Embedding(x)


def _check_same_dim(a: Embedding, b: Embedding):
    if a.dim != b.dim:
        raise ValueError(f"embedding dimension mismatch: {a.dim} vs {b.dim}")


def _unit_values(e: Embedding, context: str) -> np.ndarray:
    norm = float(np.linalg.norm(e.values))
    if norm == 0.0:
        raise DegenerateInputError(f"{context}: zero vector has no direction")
    if abs(norm - 1.0) < UNIT_NORM_TOL:
        return e.values
    warnings.warn(
        f"{context}: input not unit-normalised (norm={norm:.6g}); normalising",
        NormalizationWarning,
        stacklevel=3,
    )
    return e.values / norm


def clamped_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between a and b, clamped away from +-1."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine undefined for zero vectors")
    c = float(np.dot(a, b) / (na * nb))
    return min(max(c, -1.0 + COSINE_CLAMP), 1.0 - COSINE_CLAMP)


def score(f: ScoreFunction, a, b) -> float:
    """Evaluate a score function on a pair of embeddings.

    Cosine inputs are clamped to [-1 + 1e-7, 1 - 1e-7] before any arccos,
    so angular scores of identical vectors bottom out near 4.5e-4 rather
    than exactly zero.
    """
    a = as_embedding(a)
    b = as_embedding(b)
    _check_same_dim(a, b)
    if f.kind is ScoreKind.EUCLIDEAN_DISSIMILARITY:
        return float(np.linalg.norm(a.values - b.values))
    c = clamped_cosine(a.values, b.values)
    if f.kind is ScoreKind.COSINE_SIMILARITY:
        return c
    return float(np.arccos(c))


def worst_case_euclidean(y1, y2) -> Embedding:
    """Midpoint of two embeddings: the point minimising the larger
    Euclidean distance to either."""
    y1 = as_embedding(y1)
    y2 = as_embedding(y2)
    _check_same_dim(y1, y2)
    return Embedding((y1.values + y2.values) / 2.0)


def worst_case_alpha(y1, y2, alpha: float) -> Embedding:
    """Normalised convex combination of two unit embeddings.

    alpha = 0.5 is the angle bisector; alpha = 1 returns y1 itself.  The
    weighted sum must be nonzero, otherwise the direction is undefined.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    y1 = as_embedding(y1)
    y2 = as_embedding(y2)
    _check_same_dim(y1, y2)
    u1 = _unit_values(y1, "worst_case_alpha")
    u2 = _unit_values(y2, "worst_case_alpha")
    s = alpha * u1 + (1.0 - alpha) * u2
    norm = float(np.linalg.norm(s))
    if norm < 1e-9:
        raise DegenerateInputError(
            "weighted sum is (numerically) zero; worst-case direction undefined"
        )
    return Embedding(s / norm, normalized=True)


def worst_case_angular(y1, y2) -> Embedding:
    """Angle bisector of two unit embeddings: the point maximising the
    smaller cosine similarity to either.

    Antipodal inputs are rejected: every direction in the orthogonal plane
    would tie, so no unique bisector exists.
    """
    try:
        return worst_case_alpha(y1, y2, 0.5)
    except DegenerateInputError:
        raise DegenerateInputError(
            "antipodal inputs have no unique bisector"
        ) from None
