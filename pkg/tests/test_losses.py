import math

import numpy as np
import pytest
from scipy import integrate

from privtune import (
    AdapterState,
    BackboneSpec,
    ConfigError,
    GradientDistStats,
    LossConfig,
    NumericError,
    ProjectionSpec,
    UsageError,
    batch_gradient_stats,
    composite_loss,
    gradient_kl,
    reg_grad,
    reg_term,
    task_loss,
)


def gaussian_kl_by_quadrature(v, w):
    """Numerically integrate KL(N(0, v+w) || N(0, v)) as an independent check."""
    def integrand(x):
        p_hat = math.exp(-x * x / (2 * (v + w))) / math.sqrt(2 * math.pi * (v + w))
        log_ratio = (math.log(v / (v + w)) / 2) + x * x / 2 * (1 / v - 1 / (v + w))
        return p_hat * log_ratio

    value, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12)
    return value


class TestTaskLoss:
    def test_uniform_softmax(self):
        logits = np.zeros((3, 2))
        assert task_loss(logits, [0, 1, 0]) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_saturated_correct_prediction(self):
        assert task_loss(np.array([[30.0, -30.0]]), [0]) <= 1e-12

    def test_empty_batch_rejected(self):
        with pytest.raises(UsageError):
            task_loss(np.zeros((0, 2)), [])

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            task_loss(np.zeros((1, 2)), [2])

    def test_mean_over_batch(self):
        logits = np.array([[0.0, 0.0], [10.0, -10.0]])
        expected = (math.log(2.0) + task_loss(logits[1:2], [0])) / 2.0
        assert task_loss(logits, [0, 0]) == pytest.approx(expected, rel=1e-12)


def adapter_with_worked_factors():
    # r=1 factors B=(1,2)^T, A=(3,4) on the first 2x2 target
    spec = BackboneSpec(2, 2, 1, (2,))
    proj = ProjectionSpec(1, heads_trainable=True)
    adapter = AdapterState(spec, proj)
    adapter.a1[:] = [[3.0, 4.0]]
    adapter.b1[:] = [[1.0], [2.0]]
    return adapter


class TestRegTerm:
    def test_zero_adapter(self):
        spec = BackboneSpec(3, 4, 1, (2,))
        assert reg_term(AdapterState(spec, ProjectionSpec(1))) == 0.0

    def test_worked_frobenius(self):
        assert reg_term(adapter_with_worked_factors()) == 125.0

    def test_head_block_quadratic_homogeneity(self):
        spec = BackboneSpec(3, 4, 1, (2,))
        adapter = AdapterState(spec, ProjectionSpec(1))
        adapter.head_w[0][:] = 0.5
        adapter.head_b[0][:] = -0.25
        base = reg_term(adapter)
        adapter.head_w[0][:] *= 2.0
        adapter.head_b[0][:] *= 2.0
        assert reg_term(adapter) == pytest.approx(4.0 * base, rel=1e-12)

    def test_reparameterization_invariance(self):
        spec = BackboneSpec(4, 5, 1, (3,))
        proj = ProjectionSpec(2)
        rng = np.random.default_rng(1)
        adapter = AdapterState(spec, proj, rng.standard_normal(proj.subspace_dim(spec)))
        base = reg_term(adapter)
        for c in (2.0, -0.5, 7.0):
            scaled = adapter.copy()
            scaled.a1[:] = c * adapter.a1
            scaled.b1[:] = adapter.b1 / c
            scaled.a2[:] = c * adapter.a2
            scaled.b2[:] = adapter.b2 / c
            assert reg_term(scaled) == pytest.approx(base, rel=1e-12)

    def test_reg_grad_matches_finite_differences(self):
        spec = BackboneSpec(3, 4, 2, (2, 3))
        proj = ProjectionSpec(2)
        rng = np.random.default_rng(2)
        u = 0.3 * rng.standard_normal(proj.subspace_dim(spec))
        adapter = AdapterState(spec, proj, u)
        grad = reg_grad(adapter)
        eps = 1e-6
        for j in range(0, adapter.dim, 7):
            probe = adapter.copy()
            probe.u[j] += eps
            up = reg_term(probe)
            probe.u[j] -= 2 * eps
            down = reg_term(probe)
            assert grad[j] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-7)


class TestGradientKl:
    def stats(self, var, batch_size=2):
        var = np.asarray(var, dtype=np.float64)
        return GradientDistStats(np.zeros_like(var), var, batch_size, 0)

    def test_sigma_zero_exactly_zero(self):
        estimate = gradient_kl(self.stats([1.0, 2.0]), 0.0, 1.0, 1.0)
        assert estimate.value == 0.0

    def test_worked_single_coordinate(self):
        # v = 1, w = 1: 0.5 * (1 - ln 2)
        estimate = gradient_kl(self.stats([1.0]), 1.0, 2.0, 1.0, v_floor=1e-12)
        assert estimate.value == pytest.approx(0.5 * (1.0 - math.log(2.0)), rel=1e-12)
        assert estimate.value == pytest.approx(0.153426, abs=1e-6)

    def test_all_degenerate_coordinates(self):
        estimate = gradient_kl(self.stats(np.zeros(5)), 1.0, 1.0, 1.0)
        assert estimate.value == 0.0
        assert estimate.degenerate_count == 5
        assert estimate.coordinates_used == 0

    def test_closed_form_matches_quadrature(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = float(10.0 ** rng.uniform(-3, 2))
            w = float(10.0 ** rng.uniform(-3, 2))
            sigma, c, b = 1.0, math.sqrt(w) , 1  # w = sigma^2 c^2 / (alpha b^2)
            estimate = gradient_kl(self.stats([v], batch_size=b), sigma, c, 1.0)
            assert estimate.value == pytest.approx(gaussian_kl_by_quadrature(v, w), abs=1e-8)

    def test_non_negative_and_zero_iff_no_noise(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = 10.0 ** rng.uniform(-6, 3, size=4)
            estimate = gradient_kl(self.stats(v), float(rng.uniform(0.01, 3)), 1.0, 1.0)
            assert estimate.value > 0.0

    def test_monotone_in_sigma_and_alpha(self):
        stats = self.stats([0.5, 1.0, 2.0], batch_size=4)
        by_sigma = [gradient_kl(stats, s, 1.0, 1.0).value for s in (0.5, 1.0, 2.0, 4.0)]
        assert all(a < b for a, b in zip(by_sigma, by_sigma[1:]))
        by_alpha = [gradient_kl(stats, 1.0, 1.0, a).value for a in (1.0, 0.5, 0.25)]
        assert all(a < b for a, b in zip(by_alpha, by_alpha[1:]))

    def test_negative_variance_rejected(self):
        with pytest.raises(NumericError):
            gradient_kl(self.stats([-1.0]), 1.0, 1.0, 1.0)


class TestBatchStats:
    def test_fixed_order_moments(self):
        clipped = [np.array([1.0, 0.0]), np.array([3.0, 2.0])]
        stats = batch_gradient_stats(clipped, 0)
        np.testing.assert_array_equal(stats.mean, [2.0, 1.0])
        np.testing.assert_array_equal(stats.var, [1.0, 1.0])
        assert not stats.degenerate

    def test_single_sample_degenerate(self):
        stats = batch_gradient_stats([np.array([1.0])], 0)
        assert stats.degenerate

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            batch_gradient_stats([], 0)


class TestCompositeLoss:
    def test_degenerate_weights(self):
        adapter = adapter_with_worked_factors()
        stats = GradientDistStats(np.zeros(1), np.ones(1), 2, 0)
        out = composite_loss(0.7, adapter, stats, LossConfig(0.0, 0.0), 1.0, 1.0, 1.0)
        assert out.total == 0.7
        assert out.reg == 0.0 and out.kl == 0.0

    def test_worked_total(self):
        # L_task=0.5, reg=125 (lambda1=0.01), KL=0.153426 (lambda2=2)
        adapter = adapter_with_worked_factors()
        stats = GradientDistStats(np.zeros(1), np.ones(1), 2, 0)
        out = composite_loss(0.5, adapter, stats, LossConfig(0.01, 2.0),
                             sigma=1.0, clip_c=2.0, alpha_k=1.0)
        assert out.reg == pytest.approx(1.25, rel=1e-12)
        assert out.kl == pytest.approx(2.0 * 0.5 * (1.0 - math.log(2.0)), rel=1e-12)
        assert out.total == pytest.approx(2.056852, abs=1e-5)

    def test_decomposition_sums_bit_exactly(self):
        rng = np.random.default_rng(5)
        adapter = adapter_with_worked_factors()
        for _ in range(20):
            stats = GradientDistStats(np.zeros(3), rng.uniform(0.1, 2.0, 3), 4, 0)
            out = composite_loss(float(rng.uniform(0, 2)), adapter, stats,
                                 LossConfig(0.3, 1.7), 0.8, 1.0, 0.5)
            assert out.total == out.task + out.reg + out.kl

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(-0.1, 0.0)
        with pytest.raises(ConfigError):
            LossConfig(0.0, -1.0)
