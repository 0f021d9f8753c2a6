import numpy as np
import pytest

from morphlab import geometry as g
from morphlab.metrics import (MorphScoreTable, bpcer_at_apcer, det_points,
                              mmpmr, worst_case_bound)


def make_table(d1, d2):
    return MorphScoreTable(morph_ids=[f"m{i}" for i in range(len(d1))],
                           d1=np.asarray(d1), d2=np.asarray(d2))


class TestMmpmr:
    def test_worked_example(self):
        table = make_table([0.3, 0.6, 0.45], [0.4, 0.2, 0.49])
        assert mmpmr(table, 0.5) == pytest.approx(2 / 3)

    def test_all_match(self):
        table = make_table([0.1, 0.2], [0.3, 0.1])
        assert mmpmr(table, 0.5) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            mmpmr(make_table([], []), 0.5)

    def test_counting_oracle_and_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = rng.integers(1, 40)
            d1, d2 = rng.random(n), rng.random(n)
            table = make_table(d1, d2)
            ts = np.sort(rng.random(5))
            values = []
            for t in ts:
                count = sum(1 for a, b in zip(d1, d2) if max(a, b) < t)
                assert mmpmr(table, t) == count / n
                values.append(mmpmr(table, t))
            assert all(a <= b for a, b in zip(values, values[1:]))

    def test_csv_roundtrip(self, tmp_path):
        table = make_table([0.3, 0.6], [0.4, 0.2])
        table.to_csv(tmp_path / "t.csv")
        loaded = MorphScoreTable.from_csv(tmp_path / "t.csv")
        assert loaded.morph_ids == table.morph_ids
        assert np.array_equal(loaded.d1, table.d1)
        assert np.array_equal(loaded.d2, table.d2)


class StubBackend:
    def __init__(self, threshold, kind=g.ScoreKind.ANGULAR_DISSIMILARITY):
        self.score_fn = g.ScoreFunction(kind)
        self.threshold = threshold
        self.id = "stub"

    def require_threshold(self):
        if self.threshold is None:
            raise ValueError("stub is not calibrated")
        return self.threshold


def unit(v):
    return g.Embedding.unit(v)


class TestWorstCaseBound:
    def test_half_angle_geometry(self):
        # probes 60 degrees apart: the best any morph can do is 30 degrees
        theta = np.pi / 3
        p1 = unit([1.0, 0.0])
        p2 = unit([np.cos(theta), np.sin(theta)])
        ind, rate = worst_case_bound([p1], [p2], StubBackend(theta / 2 + 0.01))
        assert ind.tolist() == [True] and rate == 1.0
        ind, rate = worst_case_bound([p1], [p2], StubBackend(theta / 2 - 0.01))
        assert ind.tolist() == [False] and rate == 0.0

    def test_antipodal_propagates(self):
        with pytest.raises(g.DegenerateInputError):
            worst_case_bound([unit([1, 0])], [unit([-1, 0])], StubBackend(0.5))

    def test_uncalibrated_rejected(self):
        with pytest.raises(ValueError, match="calibrated"):
            worst_case_bound([unit([1, 0])], [unit([0, 1])], StubBackend(None))

    def test_dominates_every_morph_embedding(self):
        # per pair: indicator of the bound >= indicator of any actual morph
        rng = np.random.default_rng(1)
        backend = StubBackend(None)
        for _ in range(200):
            d = int(rng.integers(2, 16))
            p1 = rng.standard_normal(d)
            p2 = rng.standard_normal(d)
            p1 /= np.linalg.norm(p1)
            p2 /= np.linalg.norm(p2)
            if p1 @ p2 < -0.99:
                continue
            backend.threshold = float(rng.random() * np.pi)
            morph = rng.standard_normal(d)
            morph /= np.linalg.norm(morph)
            ind, _ = worst_case_bound([unit(p1)], [unit(p2)], backend)
            dm1 = g.score(g.ANGULAR, g.Embedding(morph), g.Embedding(p1))
            dm2 = g.score(g.ANGULAR, g.Embedding(morph), g.Embedding(p2))
            morph_match = max(dm1, dm2) < backend.threshold
            assert ind[0] >= morph_match

    def test_euclidean_metric_uses_midpoint(self):
        backend = StubBackend(2.51, kind=g.ScoreKind.EUCLIDEAN_DISSIMILARITY)
        p1 = g.Embedding([0.0, 0.0])
        p2 = g.Embedding([3.0, 4.0])
        ind, _ = worst_case_bound([p1], [p2], backend)
        assert ind.tolist() == [True]
        backend.threshold = 2.49
        ind, _ = worst_case_bound([p1], [p2], backend)
        assert ind.tolist() == [False]


class TestDetPoints:
    def test_counting_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            genuine = rng.random(rng.integers(2, 50))
            impostor = rng.random(rng.integers(2, 50))
            points = det_points(genuine, impostor)
            for t, fmr, fnmr in points:
                assert fmr == np.mean(impostor < t)
                assert fnmr == np.mean(genuine >= t)

    def test_endpoints_span(self):
        rng = np.random.default_rng(3)
        points = det_points(rng.random(20), rng.random(30))
        assert (points[0, 1], points[0, 2]) == (0.0, 1.0)
        assert (points[-1, 1], points[-1, 2]) == (1.0, 0.0)

    def test_perfect_separation_has_zero_zero(self):
        points = det_points([0.1, 0.2], [0.8, 0.9])
        assert any(r1 == 0.0 and r2 == 0.0 for _, r1, r2 in points)

    def test_identical_distributions_follow_chance_line(self):
        scores = np.array([0.1, 0.3, 0.5, 0.7])
        points = det_points(scores, scores)
        for _, r1, r2 in points:
            assert r1 + r2 == pytest.approx(1.0)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            det_points([], [0.5])


class TestBpcerAtApcer:
    def test_separable(self):
        # attacks score above bona fides: perfect detector
        for bound in (0.01, 0.05, 0.5):
            assert bpcer_at_apcer([0.1, 0.2], [0.8, 0.9], bound) == 0.0

    def test_identical_distributions_boundary(self):
        rng = np.random.default_rng(4)
        scores = rng.random(100)
        assert bpcer_at_apcer(scores, scores, 0.05) == pytest.approx(1 - 0.05)
        assert bpcer_at_apcer(scores, scores, 0.10) == pytest.approx(1 - 0.10)

    def test_accept_all_threshold_at_bound_one(self):
        rng = np.random.default_rng(5)
        assert bpcer_at_apcer(rng.random(20), rng.random(20), 1.0) == 0.0

    def test_counting_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            bona = rng.random(rng.integers(2, 40))
            att = rng.random(rng.integers(2, 40)) + rng.random() * 0.5
            bound = float(rng.choice([0.05, 0.1, 0.3]))
            got = bpcer_at_apcer(bona, att, bound)
            # brute force over a dense threshold grid
            cands = np.unique(np.concatenate([bona, att]))
            cands = np.concatenate([cands - 1e-9, cands, cands + 1e-9])
            feasible = [np.mean(bona >= t) for t in cands
                        if np.mean(att < t) <= bound]
            assert got == pytest.approx(min(feasible))

    def test_empty_class_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            bpcer_at_apcer([], [0.5], 0.1)
