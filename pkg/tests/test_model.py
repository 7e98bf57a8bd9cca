import numpy as np
import pytest

from privtune import (
    AdapterState,
    BackboneSpec,
    ConfigError,
    FrozenParams,
    InstructionRecord,
    ProjectionSpec,
    ShapeError,
    finite_diff_grad,
    forward,
    init_adapter,
    init_backbone,
    per_sample_grad,
    project_update,
    sample_loss,
    trainable_fraction,
)


def small_model(d=3, h=4, r=2, classes=(3,), seed=0, heads_trainable=True):
    spec = BackboneSpec(d, h, len(classes), classes, init_seed=seed)
    proj = ProjectionSpec(r, heads_trainable=heads_trainable)
    return spec, proj, init_backbone(spec)


def sample_valid_model(rng, trial):
    """Random small geometry respecting m < |theta|."""
    while True:
        d = int(rng.integers(2, 6))
        h = int(rng.integers(3, 8))
        r = int(rng.integers(1, 3))
        k = int(rng.integers(1, 4))
        classes = tuple(int(rng.integers(2, 5)) for _ in range(k))
        spec = BackboneSpec(d, h, k, classes, init_seed=trial)
        proj = ProjectionSpec(r, heads_trainable=bool(rng.integers(0, 2)))
        if proj.subspace_dim(spec) < spec.total_params:
            return spec, proj


class TestBackboneSpec:
    def test_worked_param_count(self):
        spec = BackboneSpec(64, 128, 3, (4, 4, 4))
        assert spec.total_params == 26380

    def test_invalid_dims_rejected(self):
        with pytest.raises(ConfigError):
            BackboneSpec(0, 4, 1, (2,))
        with pytest.raises(ConfigError):
            BackboneSpec(3, 0, 1, (2,))
        with pytest.raises(ConfigError):
            BackboneSpec(3, 4, 1, (1,))
        with pytest.raises(ConfigError):
            BackboneSpec(3, 4, 2, (2,))

    def test_init_deterministic(self):
        spec = BackboneSpec(5, 6, 2, (2, 3), init_seed=77)
        assert init_backbone(spec).checksum() == init_backbone(spec).checksum()

    def test_init_seed_changes_params(self):
        a = init_backbone(BackboneSpec(5, 6, 2, (2, 3), init_seed=1))
        b = init_backbone(BackboneSpec(5, 6, 2, (2, 3), init_seed=2))
        assert a.checksum() != b.checksum()

    def test_frozen_params_immutable(self):
        frozen = init_backbone(BackboneSpec(3, 4, 1, (2,)))
        with pytest.raises(ValueError):
            frozen.w1[0, 0] = 1.0

    def test_param_count_matches_arrays(self):
        spec = BackboneSpec(64, 128, 3, (4, 4, 4))
        assert init_backbone(spec).num_params == spec.total_params


class TestProjection:
    def test_worked_subspace_dim(self):
        spec = BackboneSpec(64, 128, 3, (4, 4, 4))
        proj = ProjectionSpec(4, heads_trainable=True)
        assert proj.subspace_dim(spec) == 3340
        assert trainable_fraction(spec, proj) == pytest.approx(3340 / 26380)

    def test_rank_zero_rejected(self):
        with pytest.raises(ConfigError):
            ProjectionSpec(0)

    def test_subspace_must_stay_small(self):
        spec = BackboneSpec(2, 2, 1, (2,))
        proj = ProjectionSpec(8)
        with pytest.raises(ConfigError):
            AdapterState(spec, proj)

    def test_zero_update_is_identity(self):
        spec, proj, frozen = small_model()
        theta = project_update(frozen, AdapterState(spec, proj))
        assert np.array_equal(theta.w1, frozen.w1)
        assert np.array_equal(theta.w2, frozen.w2)
        for (hw, hb), (fw, fb) in zip(theta.heads, frozen.heads):
            assert np.array_equal(hw, fw)
            assert np.array_equal(hb, fb)

    def test_outer_product_delta(self):
        # r=1 on a 2x2 target: B=(1,2)^T, A=(3,4) -> [[3,4],[6,8]]
        spec = BackboneSpec(2, 2, 1, (2,))
        proj = ProjectionSpec(1, heads_trainable=True)
        zeros = FrozenParams(
            spec,
            np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2),
            ((np.zeros((2, 2)), np.zeros(2)),),
        )
        adapter = AdapterState(spec, proj)
        adapter.a1[:] = [[3.0, 4.0]]
        adapter.b1[:] = [[1.0], [2.0]]
        theta = project_update(zeros, adapter)
        assert np.array_equal(theta.w1, [[3.0, 4.0], [6.0, 8.0]])

    def test_wrong_length_u_rejected(self):
        spec, proj, _ = small_model()
        m = proj.subspace_dim(spec)
        with pytest.raises(ShapeError):
            AdapterState(spec, proj, np.zeros(m + 1))

    def test_subspace_locality(self):
        # coordinates outside the targeted matrices never move
        spec, proj, frozen = small_model(heads_trainable=False)
        adapter = init_adapter(spec, proj, seed=4)
        adapter.u[:] = np.linspace(-1, 1, adapter.dim)
        theta = project_update(frozen, adapter)
        assert np.array_equal(theta.b1, frozen.b1)
        assert np.array_equal(theta.b2, frozen.b2)
        for (hw, hb), (fw, fb) in zip(theta.heads, frozen.heads):
            assert np.array_equal(hw, fw)
            assert np.array_equal(hb, fb)

    def test_head_block_additive_and_lowrank_near_linear(self):
        spec, proj, frozen = small_model(classes=(3, 2))
        rng = np.random.default_rng(0)
        u1 = rng.standard_normal(proj.subspace_dim(spec))
        u2 = rng.standard_normal(proj.subspace_dim(spec))
        t_sum = project_update(frozen, AdapterState(spec, proj, u1 + u2))
        t1 = project_update(frozen, AdapterState(spec, proj, u1))
        t2 = project_update(frozen, AdapterState(spec, proj, u2))
        for k in range(2):
            np.testing.assert_allclose(
                t_sum.heads[k][0] - frozen.heads[k][0],
                (t1.heads[k][0] - frozen.heads[k][0]) + (t2.heads[k][0] - frozen.heads[k][0]),
                atol=1e-12,
            )
        # low-rank blocks are bilinear: P(u+d) - P(u) scales ~linearly for small d
        base = AdapterState(spec, proj, u1)
        direction = rng.standard_normal(u1.size)
        deltas = []
        for eps in (1e-4, 5e-5):
            probe = AdapterState(spec, proj, u1 + eps * direction)
            diff = project_update(frozen, probe).w1 - project_update(frozen, base).w1
            deltas.append(np.linalg.norm(diff))
        assert deltas[0] / deltas[1] == pytest.approx(2.0, rel=0.05)


class TestForward:
    def test_zero_everything_gives_zero_logits(self):
        spec = BackboneSpec(3, 4, 2, (2, 3))
        zeros = FrozenParams(
            spec,
            np.zeros((4, 3)), np.zeros(4), np.zeros((4, 4)), np.zeros(4),
            ((np.zeros((2, 4)), np.zeros(2)), (np.zeros((3, 4)), np.zeros(3))),
        )
        theta = project_update(zeros, AdapterState(spec, ProjectionSpec(1)))
        assert np.array_equal(forward(theta, np.zeros(3), 0), np.zeros(2))
        assert np.array_equal(forward(theta, np.ones(3), 1), np.zeros(3))

    def test_logit_shape_contract(self):
        spec, proj, frozen = small_model(classes=(3, 5))
        theta = project_update(frozen, init_adapter(spec, proj, 0))
        x = np.ones(3)
        assert forward(theta, x, 0).shape == (3,)
        assert forward(theta, x, 1).shape == (5,)

    def test_task_out_of_range(self):
        spec, proj, frozen = small_model()
        theta = project_update(frozen, AdapterState(spec, proj))
        with pytest.raises(IndexError):
            forward(theta, np.zeros(3), 1)

    def test_non_finite_input_rejected(self):
        spec, proj, frozen = small_model()
        theta = project_update(frozen, AdapterState(spec, proj))
        with pytest.raises(ValueError):
            forward(theta, np.array([1.0, np.nan, 0.0]), 0)


class TestGradients:
    def test_matches_finite_differences_on_random_models(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            spec, proj = sample_valid_model(rng, trial)
            frozen = init_backbone(spec)
            adapter = init_adapter(spec, proj, seed=trial)
            adapter.u += 0.05 * rng.standard_normal(adapter.dim)
            theta = project_update(frozen, adapter)
            k = int(rng.integers(0, spec.num_tasks))
            rec = InstructionRecord(
                k, int(rng.integers(0, spec.classes_per_task[k])),
                rng.standard_normal(spec.input_dim), 0,
            )
            g = per_sample_grad(theta, rec).g
            fd = finite_diff_grad(theta, rec, 1e-5)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-5

    def test_identical_records_identical_gradients(self):
        spec, proj, frozen = small_model()
        theta = project_update(frozen, init_adapter(spec, proj, 1))
        rec = InstructionRecord(0, 1, np.array([0.3, -0.2, 0.9]), 1)
        g1 = per_sample_grad(theta, rec).g
        g2 = per_sample_grad(theta, rec).g
        assert np.array_equal(g1, g2)

    def test_saturated_correct_prediction_has_tiny_gradient(self):
        # a huge correct-class head bias drives softmax to one-hot
        spec, proj, frozen = small_model(classes=(3,))
        adapter = AdapterState(spec, proj)
        adapter.head_b[0][1] = 40.0
        theta = project_update(frozen, adapter)
        rec = InstructionRecord(0, 1, np.array([0.1, 0.2, -0.1]), 1)
        g = per_sample_grad(theta, rec).g
        fd = finite_diff_grad(theta, rec, 1e-5)
        assert np.linalg.norm(g) <= 1e-6
        assert np.linalg.norm(fd) <= 1e-3  # fd resolution floor near zero loss

    def test_uniform_softmax_head_bias_gradient(self):
        # all-zero weights: logits are zero, so the head-bias gradient is
        # the uniform softmax minus the one-hot target
        spec = BackboneSpec(3, 4, 1, (4,))
        proj = ProjectionSpec(1)
        zeros = FrozenParams(
            spec,
            np.zeros((4, 3)), np.zeros(4), np.zeros((4, 4)), np.zeros(4),
            ((np.zeros((4, 4)), np.zeros(4)),),
        )
        theta = project_update(zeros, AdapterState(spec, proj))
        rec = InstructionRecord(0, 2, np.array([1.0, -0.5, 2.0]), 2)
        g = per_sample_grad(theta, rec).g
        head_bias = AdapterState(spec, proj, g).head_b[0]
        np.testing.assert_allclose(head_bias, [0.25, 0.25, -0.75, 0.25], atol=1e-12)
        fd = finite_diff_grad(theta, rec, 1e-5)
        fd_bias = AdapterState(spec, proj, fd).head_b[0]
        np.testing.assert_allclose(fd_bias, [0.25, 0.25, -0.75, 0.25], atol=1e-8)

    def test_finite_diff_step_validation(self):
        spec, proj, frozen = small_model()
        theta = project_update(frozen, AdapterState(spec, proj))
        rec = InstructionRecord(0, 0, np.zeros(3), 0)
        with pytest.raises(ConfigError):
            finite_diff_grad(theta, rec, 0.0)
        with pytest.raises(ConfigError):
            finite_diff_grad(theta, rec, -1e-5)

    def test_sample_loss_label_range(self):
        spec, proj, frozen = small_model(classes=(2,))
        theta = project_update(frozen, AdapterState(spec, proj))
        with pytest.raises(ValueError):
            sample_loss(theta, InstructionRecord(0, 5, np.zeros(3), 5))


class TestTrainableFraction:
    def test_worked_fraction(self):
        spec = BackboneSpec(64, 128, 3, (4, 4, 4))
        frac = trainable_fraction(spec, ProjectionSpec(4, heads_trainable=True))
        assert frac == pytest.approx(0.1266, abs=5e-4)

    def test_table_regime_config_exists(self):
        spec = BackboneSpec(256, 512, 3, (4, 4, 4))
        proj = ProjectionSpec(2, heads_trainable=False)
        assert proj.subspace_dim(spec) == 2 * 768 + 2 * 1024
        frac = trainable_fraction(spec, proj)
        assert 0.004 <= frac <= 0.01
