import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from privtune import (
    ConfigError,
    Dataset,
    DatasetManifest,
    InstructionRecord,
    TrainConfig,
    UsageError,
    build_dataset,
    evaluate,
    init_adapter,
    metrics_to_csv,
    nearest_center_accuracy,
    per_sample_grad,
    privatize_batch,
    project_update,
    train,
)
from privtune.model import BackboneSpec, ProjectionSpec, init_backbone
from privtune.rng import derive_key
from privtune.training import TrainAbort


def small_manifest(seed=11, zeta=0.3):
    return DatasetManifest(
        num_tasks=2, input_dim=8, classes_per_task=(3, 3),
        n_train=(90, 90), n_eval=(30, 30),
        zeta=zeta, center_scale=2.0, seed=seed,
    )


def small_config(**overrides):
    defaults = dict(learning_rate=0.1, batch_size=10, steps=60, clip_c=1e6,
                    sigma=0.0, alpha=(1.0, 1.0), eval_every=20, seed=3)
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def dataset():
    ds, _ = build_dataset(small_manifest())
    return ds


class TestTrainLoop:
    def test_deterministic_metrics_csv(self, dataset):
        a = train(small_config(), dataset)
        b = train(small_config(), dataset)
        assert metrics_to_csv(a.metrics, 2) == metrics_to_csv(b.metrics, 2)
        assert np.array_equal(a.adapter.u, b.adapter.u)

    def test_zero_steps_identity_run(self, dataset):
        result = train(small_config(steps=0), dataset)
        assert result.metrics == []
        fresh = init_adapter(result.backbone_spec, result.projection,
                             derive_key(small_config().seed, "adapter"))
        assert np.array_equal(result.adapter.u, fresh.u)
        # empty-ledger conversion is finite for sigma > 0
        no_steps = train(small_config(steps=0, sigma=1.0), dataset)
        assert no_steps.privacy_report.overall_eps < 0.1

    def test_learns_separable_data(self, dataset):
        result = train(small_config(steps=300), dataset)
        baseline = nearest_center_accuracy(dataset.train, dataset.eval, 2)
        assert result.metrics[-1].acc_macro >= baseline - 0.05

    def test_frozen_backbone_checksum_constant(self, dataset):
        config = small_config()
        result = train(config, dataset)
        spec = result.backbone_spec
        assert init_backbone(spec).checksum() == result.frozen_checksum

    def test_eps_monotone_and_finite_with_noise(self, dataset):
        result = train(small_config(sigma=1.0, clip_c=0.5, steps=60), dataset)
        eps = [row.eps_overall for row in result.metrics]
        assert all(math.isfinite(e) for e in eps)
        assert all(b >= a for a, b in zip(eps, eps[1:]))

    def test_sigma_zero_reports_inf(self, dataset):
        result = train(small_config(steps=20), dataset)
        assert all(math.isinf(row.eps_overall) for row in result.metrics)
        assert math.isinf(result.privacy_report.overall_eps)

    def test_oversized_batch_rejected(self, dataset):
        with pytest.raises(ConfigError):
            train(small_config(batch_size=91), dataset)

    def test_alpha_arity_checked(self, dataset):
        with pytest.raises(ConfigError):
            train(small_config(alpha=(1.0,)), dataset)

    def test_decomposition_total_is_sum(self, dataset):
        result = train(small_config(lambda1=0.01, lambda2=0.5, sigma=0.5,
                                    clip_c=1.0, steps=40), dataset)
        for row in result.metrics:
            assert row.loss_total == row.loss_task + row.loss_reg + row.loss_kl

    def test_final_step_always_logged(self, dataset):
        result = train(small_config(steps=30, eval_every=20), dataset)
        assert [row.step for row in result.metrics] == [20, 30]

    def test_controller_raises_clip_threshold(self, dataset):
        # a tiny ceiling forces growth every step; reaching it needs noise
        quiet = train(small_config(sigma=1.0, clip_c=1.0, steps=5,
                                   controller=0.0), dataset)
        active = train(small_config(sigma=1.0, clip_c=1.0, steps=5,
                                    controller=1e-9), dataset)
        assert not np.array_equal(quiet.adapter.u, active.adapter.u)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_abort_on_divergence_names_step(self, dataset):
        # an absurd learning rate overflows u within a few steps; the abort
        # carries the step index instead of silently clamping
        with pytest.raises(TrainAbort) as err:
            train(small_config(learning_rate=1e305, steps=6, eval_every=1), dataset)
        assert 0 <= err.value.step < 6


class TestScheduleIndependence:
    def test_parallel_gradient_map_matches_serial(self, dataset):
        spec = BackboneSpec(8, 16, 2, (3, 3), init_seed=5)
        proj = ProjectionSpec(2)
        frozen = init_backbone(spec)
        adapter = init_adapter(spec, proj, seed=9)
        theta = project_update(frozen, adapter)
        batch = dataset.train[:32]

        serial = [per_sample_grad(theta, rec, i) for i, rec in enumerate(batch)]
        with ThreadPoolExecutor(max_workers=8) as pool:
            parallel = list(pool.map(
                lambda pair: per_sample_grad(theta, pair[1], pair[0]),
                enumerate(batch),
            ))
        for a, b in zip(serial, parallel):
            assert a.g.tobytes() == b.g.tobytes()

        batch0 = [g for g in serial if g.task_id == 0]
        key = derive_key(0, "noise", 0, 0)
        out_serial = privatize_batch(batch0, 0, 1.0, 1.0, 1.0, key=key)
        out_parallel = privatize_batch([g for g in parallel if g.task_id == 0],
                                       0, 1.0, 1.0, 1.0, key=key)
        assert out_serial.g_hat.tobytes() == out_parallel.g_hat.tobytes()


class TestEvaluate:
    def make_theta(self):
        spec = BackboneSpec(4, 6, 2, (3, 2), init_seed=1)
        frozen = init_backbone(spec)
        return project_update(frozen, init_adapter(spec, ProjectionSpec(1), 0))

    def test_all_correct(self):
        theta = self.make_theta()
        records = []
        for k, c in ((0, 3), (1, 2)):
            for _ in range(4):
                x = np.random.default_rng(len(records)).standard_normal(4)
                from privtune.model import forward
                label = int(np.argmax(forward(theta, x, k)))
                records.append(InstructionRecord(k, label, x, label))
        per_task, macro = evaluate(theta, records)
        assert per_task == (1.0, 1.0) and macro == 1.0

    def test_macro_is_unweighted_mean(self):
        theta = self.make_theta()
        from privtune.model import forward
        records = []
        rng = np.random.default_rng(0)
        # task 0: 4/5 correct, task 1: 3/5 correct
        for k, correct_n in ((0, 4), (1, 3)):
            for i in range(5):
                x = rng.standard_normal(4)
                pred = int(np.argmax(forward(theta, x, k)))
                label = pred if i < correct_n else (pred + 1) % (3 if k == 0 else 2)
                records.append(InstructionRecord(k, label, x, label))
        per_task, macro = evaluate(theta, records)
        assert per_task == (0.8, 0.6)
        assert macro == pytest.approx(0.7)

    def test_tie_breaks_to_lowest_class(self):
        spec = BackboneSpec(2, 3, 1, (4,))
        zeros = np.zeros
        from privtune.model import FrozenParams
        frozen = FrozenParams(spec, zeros((3, 2)), zeros(3), zeros((3, 3)),
                              zeros(3), ((zeros((4, 3)), zeros(4)),))
        theta = project_update(frozen, init_adapter(spec, ProjectionSpec(1), 0))
        rec_hit = InstructionRecord(0, 0, np.ones(2), 0)
        rec_miss = InstructionRecord(0, 3, np.ones(2), 3)
        assert evaluate(theta, [rec_hit])[1] == 1.0
        assert evaluate(theta, [rec_miss])[1] == 0.0

    def test_empty_task_rejected(self):
        theta = self.make_theta()
        records = [InstructionRecord(0, 0, np.zeros(4), 0)]
        with pytest.raises(UsageError):
            evaluate(theta, records)
