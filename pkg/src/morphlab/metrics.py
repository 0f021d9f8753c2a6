"""Vulnerability metrics: match rates, worst-case bounds, DET data.

All rates here are exact counting quantities; every function can be
cross-checked by brute-force enumeration over the same inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (Embedding, ScoreKind, score, worst_case_angular,
                       worst_case_euclidean)


@dataclass
class MorphScoreTable:
    """Per-morph dissimilarities to a probe of each contributing identity."""

    morph_ids: list
    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        self.d1 = np.asarray(self.d1, dtype=np.float64).ravel()
        self.d2 = np.asarray(self.d2, dtype=np.float64).ravel()
        if not (len(self.morph_ids) == self.d1.size == self.d2.size):
            raise ValueError("morph_ids, d1, d2 must have equal length")
        if self.d1.size and not (np.all(np.isfinite(self.d1)) and np.all(np.isfinite(self.d2))):
            raise ValueError("score table contains non-finite values")

    def __len__(self):
        return self.d1.size

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["morph_id", "d1", "d2"])
            for mid, a, b in zip(self.morph_ids, self.d1, self.d2):
                writer.writerow([mid, repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path):
        ids, d1, d2 = [], [], []
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["morph_id", "d1", "d2"]:
                raise ValueError(f"unexpected score table header: {header}")
            for row in reader:
                ids.append(row[0])
                d1.append(float(row[1]))
                d2.append(float(row[2]))
        return cls(morph_ids=ids, d1=np.array(d1), d2=np.array(d2))


def mmpmr(table: MorphScoreTable, t: float) -> float:
    """Fraction of morphs matching both identities: max(d1, d2) < t."""
    if len(table) == 0:
        raise ValueError("MMPMR undefined on an empty score table")
    return float(np.mean(np.maximum(table.d1, table.d2) < t))


def worst_case_bound(probes1, probes2, fr) -> tuple:
    """Upper bound on morph success computed from bona fide probes only.

    For each probe pair the worst-case embedding is scored against both
    probes and passed through the same max(d1, d2) < t rule used for real
    morphs.  Returns (per-pair match indicators, aggregate rate).
    """
    t = fr.require_threshold()
    angular_kind = fr.score_fn.kind is not ScoreKind.EUCLIDEAN_DISSIMILARITY
    indicators = []
    for p1, p2 in zip(probes1, probes2):
        p1 = p1 if isinstance(p1, Embedding) else Embedding(p1)
        p2 = p2 if isinstance(p2, Embedding) else Embedding(p2)
        target = worst_case_angular(p1, p2) if angular_kind else worst_case_euclidean(p1, p2)
        d1 = score(fr.score_fn, target, p1)
        d2 = score(fr.score_fn, target, p2)
        indicators.append(max(d1, d2) < t)
    indicators = np.asarray(indicators, dtype=bool)
    if indicators.size == 0:
        raise ValueError("worst_case_bound needs at least one probe pair")
    return indicators, float(indicators.mean())


def det_points(genuine, impostor) -> np.ndarray:
    """DET data for the strict d < t rule.

    Rows (t, rate_low, rate_high) at every distinct observed score plus
    one point past the maximum, where rate_low is the fraction of
    impostor scores below t (false matches) and rate_high the fraction of
    genuine scores at or above t (false non-matches).  For detector
    scores, pass bona fide as `genuine` and attacks as `impostor` to read
    the rows as (t, APCER, BPCER).
    """
    genuine = np.asarray(genuine, dtype=np.float64).ravel()
    impostor = np.asarray(impostor, dtype=np.float64).ravel()
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("det_points needs both score classes nonempty")
    observed = np.unique(np.concatenate([genuine, impostor]))
    eps = 1e-9 * max(1.0, float(observed.max() - observed.min()))
    thresholds = np.concatenate([observed, [observed.max() + eps]])
    rows = np.empty((thresholds.size, 3), dtype=np.float64)
    for i, t in enumerate(thresholds):
        rows[i] = (t, np.mean(impostor < t), np.mean(genuine >= t))
    return rows


def bpcer_at_apcer(bona_fide, attacks, apcer_bound: float) -> float:
    """Minimal BPCER over thresholds whose APCER does not exceed the bound.

    Detector convention: higher score means more attack-like; a sample is
    flagged when its score is >= the threshold.
    """
    bona_fide = np.asarray(bona_fide, dtype=np.float64).ravel()
    attacks = np.asarray(attacks, dtype=np.float64).ravel()
    if bona_fide.size == 0 or attacks.size == 0:
        raise ValueError("bpcer_at_apcer needs both score classes nonempty")
    if not 0.0 <= apcer_bound <= 1.0:
        raise ValueError(f"apcer_bound must lie in [0, 1], got {apcer_bound}")
    observed = np.unique(np.concatenate([bona_fide, attacks]))
    eps = 1e-9 * max(1.0, float(observed.max() - observed.min()))
    thresholds = np.concatenate([observed - eps, observed, observed + eps])
    best = None
    for t in thresholds:
        apcer = np.mean(attacks < t)
        if apcer <= apcer_bound:
            bpcer = float(np.mean(bona_fide >= t))
            if best is None or bpcer < best:
                best = bpcer
    return best


def write_mmpmr_report(path, rows):
    """rows: (backend_id, morph_set, threshold, mmpmr)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["backend", "morph_set", "threshold", "mmpmr"])
        for backend, morph_set, t, value in rows:
            writer.writerow([backend, morph_set, repr(float(t)), repr(float(value))])


def write_det_csv(path, points: np.ndarray, rate_names=("fmr", "fnmr")):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", rate_names[0], rate_names[1]])
        for t, r1, r2 in points:
            writer.writerow([repr(float(t)), repr(float(r1)), repr(float(r2))])


def write_bounds_csv(path, rows):
    """rows: (backend_id, pair_id, matched)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["backend", "pair_id", "matched"])
        for backend, pair_id, matched in rows:
            writer.writerow([backend, pair_id, int(matched)])
