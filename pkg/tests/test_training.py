import numpy as np
import pytest

from gazeattn.synthetic import class_signatures, generate_synthetic_task, train_test_split
from gazeattn.toy_model import FROZEN, TRAINABLE, ModelConfig, init_params
from gazeattn.training import TrainConfig, TrainingDivergedError, train, write_loss_trace


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_task(num_classes=3, grid=8, samples=48, seed=2)


class TestSynthetic:
    def test_shapes_and_balance(self):
        ds = generate_synthetic_task(num_classes=4, samples=40, seed=0)
        assert ds.images.shape == (40, 8, 8, 3)
        assert np.bincount(ds.labels).tolist() == [10, 10, 10, 10]
        np.testing.assert_allclose(ds.densities.sum(axis=(1, 2)), 1.0, atol=1e-12)
        assert ds.images.min() >= 0 and ds.images.max() <= 1
        assert all(len(f) == 16 for f in ds.fixations)

    def test_deterministic(self):
        a = generate_synthetic_task(samples=10, seed=3)
        b = generate_synthetic_task(samples=10, seed=3)
        np.testing.assert_array_equal(a.images, b.images)
        assert [f.points.tolist() for f in a.fixations] == [f.points.tolist() for f in b.fixations]

    def test_gaze_peaks_on_informative_patch(self):
        ds = generate_synthetic_task(samples=20, seed=1)
        for d, m in zip(ds.densities, ds.masks):
            assert m.ravel()[np.argmax(d)]

    def test_signatures_distinct(self, rng):
        sigs = class_signatures(6, 3, 3, rng)
        assert len({s.tobytes() for s in sigs}) == 6

    def test_split(self):
        ds = generate_synthetic_task(samples=640, seed=0)
        tr, te = train_test_split(ds)
        assert (len(tr), len(te)) == (512, 128)
        assert tr.ids[-1] == "syn00511" and te.ids[0] == "syn00512"

    def test_majority_class_near_chance(self):
        ds = generate_synthetic_task(num_classes=4, samples=640, seed=0)
        tr, te = train_test_split(ds)
        assert np.bincount(tr.labels).tolist() == [128] * 4 and np.bincount(te.labels).tolist() == [32] * 4
        majority = np.argmax(np.bincount(tr.labels))
        assert abs(np.mean(te.labels == majority) - 1 / 4) <= 0.05

    def test_grid_too_small(self):
        with pytest.raises(RuntimeError):
            generate_synthetic_task(grid=4, patch=3, samples=2)


class TestTrain:
    def test_loss_decreases(self, small):
        res = train(small, TrainConfig(baseline="softmax", steps=40, batch_size=16))
        assert res.final_loss < res.initial_loss
        assert len(res.loss_trace) == 40
        assert res.params.trained_steps == 40

    def test_zero_lr_params_unchanged(self, small):
        p0 = init_params(ModelConfig(grid=8, in_channels=3, num_classes=3), 1)
        res = train(small, TrainConfig(baseline="softmax", steps=3, learning_rate=0.0), params=p0)
        for k, t in p0.tensors().items():
            np.testing.assert_array_equal(getattr(res.params, k), t)

    def test_frozen_untouched(self, small):
        cfg = ModelConfig(grid=8, in_channels=3, num_classes=3)
        p0 = init_params(cfg, 0)
        res = train(small, TrainConfig(baseline="sigmoid", steps=5), params=p0)
        for k in FROZEN:
            np.testing.assert_array_equal(getattr(res.params, k), getattr(p0, k))
        assert any(not np.array_equal(getattr(res.params, k), getattr(p0, k)) for k in TRAINABLE)

    def test_zero_lr_full_batch_trace_constant(self, small):
        res = train(small, TrainConfig(baseline="supervised", steps=4, learning_rate=0.0, batch_size=len(small)))
        totals = [row[1] for row in res.loss_trace]
        assert totals == [totals[0]] * 4
        assert res.final_loss == res.initial_loss

    def test_deterministic(self, small):
        a = train(small, TrainConfig(baseline="human", steps=10, seed=4))
        b = train(small, TrainConfig(baseline="human", steps=10, seed=4))
        assert a.loss_trace == b.loss_trace

    def test_plain_gd(self, small):
        res = train(small, TrainConfig(baseline="activation_posthoc", steps=10, optimizer="plain_gd", learning_rate=1e-3))
        assert res.final_loss < res.initial_loss

    def test_supervised_trace_has_kl(self, small):
        res = train(small, TrainConfig(baseline="supervised", steps=3))
        assert all(row[3] > 0 for row in res.loss_trace)

    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_divergence_detected(self, small):
        bad = small.subset(range(len(small)))
        bad.images[0, 0, 0, 0] = np.inf
        with pytest.raises(TrainingDivergedError, match="step"):
            train(bad, TrainConfig(baseline="softmax", steps=5, batch_size=len(bad)))

    def test_epoch_metrics(self, small):
        res = train(small, TrainConfig(baseline="softmax", steps=7, batch_size=16))
        # 48 samples / 16 per batch: epoch boundaries after steps 3 and 6, plus the final record
        assert [e["step"] for e in res.epoch_metrics] == [3, 6, 7]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="sgd")
        with pytest.raises(ValueError):
            TrainConfig(steps=0)
        with pytest.raises(ValueError):
            TrainConfig(baseline="nope")
        with pytest.raises(ValueError):
            TrainConfig(classifier_lr_scale=0)

    def test_rates(self):
        r = TrainConfig(learning_rate=0.01, classifier_lr_scale=10).rates()
        assert r["cls_w"] == pytest.approx(0.1) and r["attn1_w"] == 0.01

    def test_write_trace(self, tmp_path):
        write_loss_trace([(1, 0.5, 0.25, 0.0)], tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text() == "step,total_loss,ce_loss,kl_loss\n1,0.5,0.25,0.0\n"

    def test_empty_dataset(self, small):
        with pytest.raises(ValueError):
            train(small.subset([]), TrainConfig())
