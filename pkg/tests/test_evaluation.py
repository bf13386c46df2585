import numpy as np
import pytest

from ddta.attacks import AttackConfig, verify_result
from ddta.datasets import LabeledDataset, one_hot, synthetic_digits
from ddta.distillation import TrainingHyperparameters, train_hard
from ddta.evaluation import (EvaluationError, accuracy, confidence,
                             robustness, sensitivity_profile)
from ddta.network import ArchitectureSpec, build_model

TINY = ArchitectureSpec((16, 16, 1), (4, 4, 8, 8), (16, 16), 10)


def biased_model(cls: int, scale: float = 60.0):
    """Constant predictor: zero weights, final bias pushed toward ``cls``."""
    m = build_model(TINY, seed=0)
    for p in m.params:
        p.data[:] = 0.0
    m.params[-1].data[cls] = np.float32(scale)
    return m


def noise_dataset(rng, n=50, cls=None):
    images = rng.random((n, 16, 16, 1), dtype=np.float32)
    labels = (np.full(n, cls) if cls is not None
              else rng.integers(0, 10, n))
    return LabeledDataset(images, one_hot(labels), "hard", "test")


class TestAccuracy:
    def test_chance_level_for_random_model(self, rng):
        m = build_model(TINY, seed=123)
        # balanced labels, random inputs: argmax is as good as chance
        data = noise_dataset(rng, n=1000)
        data.labels = one_hot(np.tile(np.arange(10), 100))
        acc = accuracy(m, data)
        assert abs(acc - 0.1) < 0.02

    def test_empty_dataset_rejected(self):
        empty = LabeledDataset(np.zeros((0, 16, 16, 1), dtype=np.float32),
                               np.zeros((0, 10), dtype=np.float32), "hard", "test")
        with pytest.raises(EvaluationError, match="empty"):
            accuracy(build_model(TINY, 0), empty)

    def test_train_split_rejected(self, rng):
        data = noise_dataset(rng)
        data.split = "train"
        with pytest.raises(EvaluationError, match="test"):
            accuracy(build_model(TINY, 0), data)


class TestConfidence:
    def test_perfect_one_hot_predictor_scores_one(self, rng):
        m = biased_model(cls=4)
        data = noise_dataset(rng, cls=4)
        assert confidence(m, data) == pytest.approx(1.0, abs=1e-6)
        assert accuracy(m, data) == 1.0

    def test_always_wrong_scores_zero(self, rng):
        m = biased_model(cls=4)
        data = noise_dataset(rng, cls=5)
        assert confidence(m, data) == 0.0

    def test_bounded_by_accuracy(self):
        train, test = synthetic_digits(400, 200, seed=31)
        crop = lambda ds, split: LabeledDataset(
            ds.images[:, 6:22, 6:22, :], ds.labels, "hard", split)
        m = train_hard(TINY, crop(train, "train"),
                       TrainingHyperparameters(epochs=2, seed=0))
        test16 = crop(test, "test")
        assert confidence(m, test16) <= accuracy(m, test16)


class TestSensitivity:
    def test_constant_model_all_near_zero(self, rng):
        m = biased_model(cls=0, scale=0.0)
        data = noise_dataset(rng, n=20)
        prof = sensitivity_profile(m, data, 1.0)
        assert prof.near_zero_proportion == 1.0
        assert not prof.per_sample_mean_abs.any()

    def test_infinite_threshold_saturates(self, rng):
        m = build_model(TINY, seed=1)
        data = noise_dataset(rng, n=10)
        prof = sensitivity_profile(m, data, 1.0, threshold=np.inf)
        assert prof.near_zero_proportion == 1.0

    def test_monotone_in_threshold(self, rng):
        m = build_model(TINY, seed=2)
        data = noise_dataset(rng, n=30)
        props = [sensitivity_profile(m, data, 1.0, threshold=t).near_zero_proportion
                 for t in (1e-12, 1e-6, 1e-3, 1e-1, np.inf)]
        assert all(a <= b for a, b in zip(props, props[1:]))

    def test_temperature_contract(self, rng):
        m = build_model(TINY, seed=2)
        m.temperature = 5.0
        data = noise_dataset(rng, n=5)
        with pytest.raises(EvaluationError, match="positive"):
            sensitivity_profile(m, data, -1.0)
        with pytest.raises(EvaluationError, match="training temperature"):
            sensitivity_profile(m, data, 1.0)
        prof = sensitivity_profile(m, data, 5.0)
        assert prof.temperature == 5.0

    def test_sample_count_limits_work(self, rng):
        m = build_model(TINY, seed=2)
        data = noise_dataset(rng, n=30)
        prof = sensitivity_profile(m, data, 1.0, sample_count=7)
        assert len(prof.per_sample_mean_abs) == 7


class Affine2D:
    def __init__(self):
        import ddta.tensor as T
        self.W = T.Tensor(np.array([[10.0, 0.0], [0.0, 0.0]], dtype=np.float32))
        self.b = T.Tensor(np.array([-5.0, 0.0], dtype=np.float32))
        self.n_classes = 2

    def build_logits(self, tape, x):
        import ddta.tensor as T
        n = x.shape[0]
        flat = T.reshape(tape, x, (n, x.size // n))
        return T.add(tape, T.matmul(tape, flat, self.W), self.b)


def grid_dataset():
    # 100 points away from the x1=0.5 boundary, labelled by the model's rule
    x1 = np.linspace(0.08, 0.92, 10)
    x2 = np.linspace(0.1, 0.9, 10)
    pts = np.array([[a, b] for a in x1 for b in x2], dtype=np.float32)
    labels = (pts[:, 0] <= 0.5).astype(np.int64)  # class 1 iff x1 <= 0.5
    return LabeledDataset(pts.reshape(-1, 1, 2, 1), one_hot(labels, 2),
                          "hard", "test"), pts


class TestRobustness:
    def test_untargeted_only(self, rng):
        data = noise_dataset(rng, n=5)
        cfg = AttackConfig(mode="targeted")
        with pytest.raises(EvaluationError, match="untargeted"):
            robustness(build_model(TINY, 0), data, cfg, 2)

    def test_sample_count_bounds(self, rng):
        data = noise_dataset(rng, n=5)
        with pytest.raises(EvaluationError, match="5"):
            robustness(build_model(TINY, 0), data, AttackConfig(), 100)

    def test_constant_model_has_undefined_mean(self):
        import ddta.tensor as T

        class Constant:
            n_classes = 2

            def build_logits(self, tape, x):
                n = x.shape[0]
                flat = T.reshape(tape, x, (n, x.size // n))
                w = T.Tensor(np.zeros((flat.size // n, 2), dtype=np.float32))
                return T.add(tape, T.matmul(tape, flat, w),
                             T.Tensor(np.array([5.0, 0.0], dtype=np.float32)))

        pts = np.full((4, 1, 2, 1), 0.5, dtype=np.float32)
        data = LabeledDataset(pts, one_hot(np.zeros(4, dtype=np.int64), 2),
                              "hard", "test")
        cfg = AttackConfig(max_iterations=50, c_threshold=0.1)
        report = robustness(Constant(), data, cfg, 3)
        assert report.success_rate == 0.0
        assert report.mean_pert is None and report.mean_undefined
        assert report.failed_count == 3

    def test_grid_matches_analytic_mean_distance(self):
        data, pts = grid_dataset()
        model = Affine2D()
        cfg = AttackConfig(max_iterations=300, initial_c=1e-2, c_threshold=8.0,
                           seed=0)
        report = robustness(model, data, cfg, 100, workers=2)
        assert report.success_rate == 1.0
        analytic = np.abs(pts[:, 0] - 0.5).mean()
        assert abs(report.mean_pert - analytic) / analytic < 0.10
        # internal consistency: max >= mean >= min, every result re-verifies
        sizes = [s for s in report.per_sample_sizes if s is not None]
        assert max(sizes) >= report.mean_pert >= min(sizes)
        assert report.max_pert == max(sizes)
        for res in report.results:
            x = data.images[res.sample_index]
            assert verify_result(model, x, res)

    def test_worker_pool_matches_serial(self):
        data, _ = grid_dataset()
        model = Affine2D()
        cfg = AttackConfig(max_iterations=120, initial_c=1e-2, c_threshold=4.0)
        serial = robustness(model, data, cfg, 6, workers=1)
        parallel = robustness(model, data, cfg, 6, workers=2)
        assert serial.per_sample_sizes == parallel.per_sample_sizes
        assert serial.sample_indices == parallel.sample_indices
