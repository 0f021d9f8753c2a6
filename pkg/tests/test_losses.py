import numpy as np
import pytest
import torch

from morphlab import geometry as g
from morphlab import losses as L


class TestCriticLoss:
    def test_arithmetic(self):
        w = L.LossWeights()
        assert L.critic_loss(2, 5, 0.01, 0.04, w) == pytest.approx(-2.5)
        assert L.critic_loss(0, 0, 1, 1, w) == pytest.approx(20.0)
        assert L.critic_loss(3, 3, 0, 0, w) == 0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            L.critic_loss(float("nan"), 0, 0, 0, L.LossWeights())


class TestGeneratorAdvLoss:
    def test_values_and_symmetry(self):
        assert L.generator_adv_loss(2, 5) == 3
        assert L.generator_adv_loss(5, 2) == 3
        assert L.generator_adv_loss(1.25, 1.25) == 0


class TestLossWeights:
    def test_defaults(self):
        w = L.LossWeights()
        assert w.lambda_gp == 10.0 and w.gamma == (1.0,) * 5

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            L.LossWeights(gamma=(1, 1, -1, 1, 1))
        with pytest.raises(ValueError):
            L.LossWeights(lambda_gp=-1)


class LinearFirstPixelCritic:
    """C(x, z) = a * x[0, 0, 0]; input-gradient norm is exactly |a|."""

    def __init__(self, a):
        self.a = a

    def __call__(self, x, z):
        return self.a * x.reshape(x.shape[0], -1)[:, 0]


class TestGradientPenalty:
    def test_unit_slope_zero_penalty(self):
        x = torch.rand(4, 3, 8, 8)
        z = torch.randn(4, 16)
        assert float(L.gradient_penalty(LinearFirstPixelCritic(1.0), x, z, "x")) == 0.0

    def test_slope_three(self):
        x = torch.rand(4, 3, 8, 8)
        z = torch.randn(4, 16)
        assert float(L.gradient_penalty(LinearFirstPixelCritic(3.0), x, z, "x")) == pytest.approx(4.0)

    def test_matches_finite_difference_norm(self):
        # two-layer critic; oracle recomputes the input-gradient norm by
        # central differences on every coordinate
        torch.manual_seed(0)
        lin1 = torch.nn.Linear(12, 8).double()
        lin2 = torch.nn.Linear(8, 1).double()

        def critic(x, z):
            h = torch.cat([x.reshape(x.shape[0], -1), z], dim=1)
            return lin2(torch.tanh(lin1(h))).squeeze(1)

        x = torch.rand(2, 8, dtype=torch.float64)
        z = torch.randn(2, 4, dtype=torch.float64)
        penalty = float(L.gradient_penalty(critic, x, z, "x").detach())

        h = 1e-6
        norms = []
        for i in range(x.shape[0]):
            grad = np.zeros(8)
            for j in range(8):
                xp, xm = x.clone(), x.clone()
                xp[i, j] += h
                xm[i, j] -= h
                with torch.no_grad():
                    grad[j] = float((critic(xp, z)[i] - critic(xm, z)[i]) / (2 * h))
            norms.append(np.linalg.norm(grad))
        expected = float(np.mean((np.array(norms) - 1.0) ** 2))
        assert penalty == pytest.approx(expected, abs=1e-4)

    def test_wrt_validated(self):
        with pytest.raises(ValueError, match="wrt"):
            L.gradient_penalty(LinearFirstPixelCritic(1.0), torch.rand(2, 1, 4, 4),
                               torch.randn(2, 4), "y")

    def test_differentiable_wrt_critic_params(self):
        torch.manual_seed(1)
        lin = torch.nn.Linear(8, 1)

        def critic(x, z):
            return lin(x.reshape(x.shape[0], -1)).squeeze(1)

        penalty = L.gradient_penalty(critic, torch.rand(3, 8), torch.randn(3, 2), "x")
        grads = torch.autograd.grad(penalty, lin.weight)
        assert torch.isfinite(grads[0]).all()


class TestPixelLoss:
    def test_identical(self):
        x = torch.rand(2, 3, 8, 8)
        assert float(L.pixel_loss(x, x)) == 0.0

    def test_constant_offset(self):
        x = torch.full((2, 3, 8, 8), 0.4, dtype=torch.float64)
        assert float(L.pixel_loss(x, x + 0.1)) == pytest.approx(0.01, rel=1e-9)

    def test_direct_summation_oracle(self):
        rng = np.random.default_rng(6)
        a = rng.random((3, 2, 5, 5))
        b = rng.random((3, 2, 5, 5))
        expected = float(((a - b) ** 2).sum() / a.size)
        got = float(L.pixel_loss(torch.from_numpy(a), torch.from_numpy(b)))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            L.pixel_loss(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 4, 4))


def ffl_oracle(x: np.ndarray, r: np.ndarray) -> float:
    """Direct DFT evaluation of the spectrum-weighted loss (no FFT)."""
    n, c, hh, ww = x.shape
    u = np.arange(hh)
    v = np.arange(ww)
    # explicit orthonormal DFT matrices
    fy = np.exp(-2j * np.pi * np.outer(u, u) / hh) / np.sqrt(hh)
    fx = np.exp(-2j * np.pi * np.outer(v, v) / ww) / np.sqrt(ww)
    total = 0.0
    for i in range(n):
        diffs = np.empty((c, hh, ww))
        for k in range(c):
            fr = fy @ r[i, k] @ fx.T
            fo = fy @ x[i, k] @ fx.T
            diffs[k] = np.abs(fr - fo)
        m = diffs.max()
        w = diffs / m if m > 0 else np.zeros_like(diffs)
        total += float((w * diffs ** 2).mean())
    return total / n


class TestFocalFrequencyLoss:
    def test_identical_images(self):
        x = torch.rand(2, 3, 8, 8)
        assert float(L.focal_frequency_loss(x, x)) == 0.0

    def test_single_pixel_delta_matches_dft_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.random((1, 1, 8, 8))
        r = x.copy()
        r[0, 0, 3, 5] += 0.25
        got = float(L.focal_frequency_loss(torch.from_numpy(x), torch.from_numpy(r)))
        assert got == pytest.approx(ffl_oracle(x, r), abs=1e-6)

    def test_random_pairs_match_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            x = rng.random((2, 3, 8, 8))
            r = rng.random((2, 3, 8, 8))
            got = float(L.focal_frequency_loss(torch.from_numpy(x), torch.from_numpy(r)))
            assert got == pytest.approx(ffl_oracle(x, r), rel=1e-10)

    def test_residual_scaling_is_quadratic(self):
        # the weight is normalised per image, so it is scale-invariant and
        # doubling the residual quadruples the loss
        rng = np.random.default_rng(9)
        x = rng.random((1, 3, 8, 8))
        delta = rng.random((1, 3, 8, 8)) * 0.1
        l1 = float(L.focal_frequency_loss(torch.from_numpy(x), torch.from_numpy(x + delta)))
        l2 = float(L.focal_frequency_loss(torch.from_numpy(x), torch.from_numpy(x + 2 * delta)))
        assert l2 == pytest.approx(4.0 * l1, rel=1e-9)
        assert l2 == pytest.approx(ffl_oracle(x, x + 2 * delta), rel=1e-9)

    def test_weight_detached_from_graph(self):
        x = torch.rand(1, 1, 8, 8)
        r = torch.rand(1, 1, 8, 8, requires_grad=True)
        loss = L.focal_frequency_loss(x, r)
        grad = torch.autograd.grad(loss, r)[0]
        assert torch.isfinite(grad).all()


def unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestFrLosses:
    def _fr(self, mapping):
        def fr(x):
            rows = [torch.as_tensor(mapping[round(float(row.reshape(-1)[0]), 6)],
                                    dtype=torch.float64) for row in x]
            return torch.stack(rows)
        return fr

    def test_recon_identical_is_near_zero(self):
        e = [1.0, 0.0]
        fr = self._fr({0.5: e})
        x = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
        assert float(L.fr_recon_loss(fr, x, x)) < 1e-3

    def test_recon_orthogonal_is_half_pi(self):
        fr = self._fr({0.25: [1.0, 0.0], 0.75: [0.0, 1.0]})
        x = torch.full((1, 1, 2, 2), 0.25, dtype=torch.float64)
        r = torch.full((1, 1, 2, 2), 0.75, dtype=torch.float64)
        assert float(L.fr_recon_loss(fr, x, r)) == pytest.approx(np.pi / 2, abs=1e-6)

    def test_recon_batch_is_mean_of_singles(self):
        rng = np.random.default_rng(10)
        emb = unit_rows(rng, 4, 8)
        keys = [0.1, 0.2, 0.3, 0.4]
        fr = self._fr(dict(zip(keys, emb)))
        xs = [torch.full((1, 1, 2, 2), k, dtype=torch.float64) for k in keys]
        singles = [float(L.fr_recon_loss(fr, xs[i], xs[(i + 1) % 4])) for i in (0, 2)]
        batch = float(L.fr_recon_loss(fr, torch.cat([xs[0], xs[2]]),
                                      torch.cat([xs[1], xs[3]])))
        assert batch == pytest.approx(np.mean(singles), rel=1e-12)

    def test_morph_loss_composes_with_score(self):
        rng = np.random.default_rng(11)
        emb = unit_rows(rng, 1, 8)[0]
        target = unit_rows(rng, 1, 8)[0]
        fr = self._fr({0.5: emb})
        x = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
        got = float(L.fr_morph_alpha_loss(fr, x, torch.from_numpy(target)))
        expected = g.score(g.ANGULAR, g.Embedding(emb), g.Embedding(target))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_morph_loss_zero_and_orthogonal(self):
        e = np.array([0.0, 1.0])
        fr = self._fr({0.5: e})
        x = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
        assert float(L.fr_morph_alpha_loss(fr, x, torch.from_numpy(e))) < 1e-3
        assert float(L.fr_morph_alpha_loss(
            fr, x, torch.tensor([1.0, 0.0], dtype=torch.float64))) == pytest.approx(
                np.pi / 2, abs=1e-6)


class TestCombinedLoss:
    def test_zero_gammas_leave_adversarial(self):
        w = L.LossWeights(gamma=(0, 0, 0, 0, 0))
        report = L.combined_generator_loss(
            {L.ADVERSARIAL: 1.5, L.PIXEL: 99.0, L.FFL: 2.0}, w)
        assert report.total == 1.5

    def test_all_ones(self):
        w = L.LossWeights()
        terms = {L.ADVERSARIAL: 0.0, L.PIXEL: 1.0, L.FFL: 1.0, L.FR: 1.0,
                 L.FR_MORPH: 1.0, L.FR_MORPH_ALPHA: 1.0}
        assert L.combined_generator_loss(terms, w).total == 5.0

    def test_dot_product_oracle(self):
        rng = np.random.default_rng(12)
        gammas = tuple(rng.random(5))
        values = rng.random(6)
        w = L.LossWeights(gamma=gammas)
        terms = dict(zip((L.ADVERSARIAL,) + L.GAMMA_ORDER, values))
        expected = values[0] + float(np.dot(gammas, values[1:]))
        report = L.combined_generator_loss(terms, w)
        assert report.total == pytest.approx(expected, rel=1e-12)

    def test_report_total_reconstruction_invariant(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            w = L.LossWeights(gamma=tuple(rng.random(5)))
            terms = dict(zip((L.ADVERSARIAL,) + L.GAMMA_ORDER, rng.random(6)))
            report = L.combined_generator_loss(terms, w)
            assert report.total == pytest.approx(report.weighted_sum(w), rel=1e-9)

    def test_tensor_terms_preserved_for_backprop(self):
        t = torch.tensor(2.0, requires_grad=True)
        total = L.weighted_total({L.ADVERSARIAL: t, L.PIXEL: t * 2}, L.LossWeights())
        total.backward()
        assert t.grad is not None
