import csv
import io
import json

import numpy as np
import pytest

from avsparse.errors import InvalidInput
from avsparse.masking import MaskSchedule
from avsparse.selection import InfoBatchConfig, SelectionConfig
from avsparse.simulator import (
    PipelineConfig,
    SelectionTrainer,
    SyntheticDatasetSpec,
    ToyModel,
    generate_dataset,
    planted_hard_recall,
    random_subset,
    run_retention_experiment,
    select_subset,
    train,
)

SMALL = SyntheticDatasetSpec(n_samples=120, n_test=80, seed=3)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SMALL)


class TestDataset:
    def test_no_hard(self):
        ds = generate_dataset(SyntheticDatasetSpec(n_samples=50, n_test=10, hard_fraction=0.0))
        assert not ds.hard.any()

    def test_hard_count(self):
        ds = generate_dataset(SyntheticDatasetSpec(n_samples=100, n_test=10, hard_fraction=0.2))
        assert ds.hard.sum() == 20

    def test_deterministic(self):
        a, b = generate_dataset(SMALL), generate_dataset(SMALL)
        for name in ("tokens", "labels", "hard", "test_tokens", "test_labels", "query"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_shapes(self, small):
        assert small.tokens.shape == (120, 32, 16)
        assert small.query.shape == (4, 16)
        assert small.spec.n_visual + small.spec.n_audio == 32

    @pytest.mark.parametrize(
        "kwargs", [{"n_samples": 0}, {"n_classes": 1}, {"n_classes": 0}, {"hard_fraction": 1.5}, {"seed": -1}]
    )
    def test_degenerate(self, kwargs):
        with pytest.raises(InvalidInput):
            SyntheticDatasetSpec(**kwargs)

    def test_hard_samples_have_higher_loss(self, small):
        rep = SelectionTrainer(small, None, 0)
        losses = rep(-1)
        assert losses[small.hard].mean() > losses[~small.hard].mean()


class TestToyModel:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(5, 3)), rng.integers(0, 4, size=5)
        f = rng.uniform(0.5, 2.0, size=5)
        m = ToyModel(3, 4)
        m.weight = rng.normal(size=(3, 4))
        m.bias = rng.normal(size=4)

        def objective(w, b):
            t = ToyModel(3, 4)
            t.weight, t.bias = w, b
            return float(np.mean(f * t.losses(x, y)))

        w0, b0 = m.weight.copy(), m.bias.copy()
        m.sgd_step(x, y, f, lr=1.0)
        grad_w, grad_b = w0 - m.weight, b0 - m.bias
        h = 1e-6
        for i in range(3):
            for j in range(4):
                e = np.zeros_like(w0)
                e[i, j] = h
                num = (objective(w0 + e, b0) - objective(w0 - e, b0)) / (2 * h)
                assert grad_w[i, j] == pytest.approx(num, abs=1e-7)
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            num = (objective(w0, b0 + e) - objective(w0, b0 - e)) / (2 * h)
            assert grad_b[j] == pytest.approx(num, abs=1e-7)

    def test_losses_finite_for_extreme_logits(self):
        m = ToyModel(2, 3)
        m.weight = np.array([[1e4, -1e4, 0.0], [0.0, 0.0, 0.0]])
        losses = m.losses(np.array([[1.0, 0.0]]), np.array([1]))
        assert np.all(np.isfinite(losses))


class TestAccounting:
    def test_dense_proxy(self, small):
        rep = train(small, PipelineConfig.dense(), 4, 0)
        assert rep.compute_proxy == 4 * 120 * 32
        assert rep.encoder_tokens == rep.compute_proxy
        assert rep.samples_processed == 4 * 120
        assert rep.gradient_steps == 4 * 4  # ceil(120 / 32) batches per epoch

    def test_masking_only_saves_ten_percent(self, small):
        dense = train(small, PipelineConfig.dense(), 15, 0)
        masked = train(small, PipelineConfig(0.5, MaskSchedule(3)), 15, 0)
        # 3 of 15 epochs at half the tokens
        assert dense.compute_proxy - masked.compute_proxy == 3 * 120 * 16
        assert masked.compute_proxy / dense.compute_proxy == pytest.approx(0.9, abs=0)

    def test_full_config_is_cheaper(self, small):
        dense = train(small, PipelineConfig.dense(), 15, 0)
        sparse = train(small, PipelineConfig.full(15), 15, 0)
        assert sparse.compute_proxy < dense.compute_proxy
        assert sparse.encoder_tokens < dense.encoder_tokens
        assert sparse.compute_proxy <= sparse.encoder_tokens
        assert 0.0 <= sparse.final_accuracy <= 1.0

    def test_epoch_tokens_sum_to_proxy(self, small):
        rep = train(small, PipelineConfig.full(6), 6, 1)
        assert sum(rep.epoch_tokens) == rep.compute_proxy
        assert len(rep.epoch_accuracy) == len(rep.epoch_train_loss) == 6

    def test_infobatch_prunes_samples(self, small):
        rep = train(small, PipelineConfig(infobatch=InfoBatchConfig(0.5, 0.875, 8)), 8, 0)
        assert rep.samples_processed < 8 * 120
        # annealed final epoch sees everything
        assert rep.epoch_tokens[-1] == 120 * 32

    def test_dense_run_is_bit_reproducible(self, small):
        a = train(small, PipelineConfig.dense(), 5, 9)
        b = train(small, PipelineConfig.dense(), 5, 9)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_sparse_run_is_reproducible(self, small):
        a = train(small, PipelineConfig.full(4), 4, 2)
        b = train(small, PipelineConfig.full(4), 4, 2)
        assert a.to_json() == b.to_json()

    def test_epoch_mismatch_with_infobatch(self, small):
        with pytest.raises(InvalidInput):
            train(small, PipelineConfig.full(15), 10, 0)


class TestRetention:
    def test_full_subset_retains_everything(self, small):
        rep = run_retention_experiment(small, range(len(small)), 5, 0)
        assert rep.extra["retention_ratio"] == 1.0
        assert rep.extra["above_chance_retention"] == 1.0
        assert rep.planted_hard_recall == 1.0

    def test_empty_subset(self, small):
        with pytest.raises(InvalidInput):
            run_retention_experiment(small, [], 5, 0)

    def test_out_of_range_subset(self, small):
        with pytest.raises(InvalidInput):
            run_retention_experiment(small, [0, 500], 5, 0)

    def test_key_subset_and_control_are_reported(self, small):
        cfg = SelectionConfig(6, 3, 0.618, 30)
        ks = select_subset(small, cfg, 0)
        assert len(ks.indices) == 30
        rep = run_retention_experiment(small, ks, 6, 0)
        ctl = run_retention_experiment(small, random_subset(len(small), 30, 0), 6, 0)
        for r in (rep, ctl):
            assert 0 <= r.planted_hard_recall <= 1
            assert r.extra["subset_fraction"] == 0.25
            assert r.extra["full_accuracy"] == ctl.extra["full_accuracy"]
        assert rep.planted_hard_recall == planted_hard_recall(small, ks.indices)

    def test_selection_is_deterministic(self, small):
        cfg = SelectionConfig(4, 2, 0.618, 20)
        assert select_subset(small, cfg, 5).indices == select_subset(small, cfg, 5).indices


class TestReportSerialisation:
    def test_json_excludes_timing_by_default(self, small):
        rep = train(small, PipelineConfig.dense(), 2, 0)
        assert "wall_clock_s" not in rep.to_json()
        assert rep.to_json(include_timing=True)["wall_clock_s"] >= 0

    def test_csv(self, small):
        rep = train(small, PipelineConfig.dense(), 3, 0)
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
        assert int(rows[-1]["cumulative_tokens"]) == rep.compute_proxy
        assert float(rows[-1]["accuracy"]) == rep.final_accuracy
