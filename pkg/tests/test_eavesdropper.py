"""Classifier dataset, forward pass, training determinism and capacity."""

import numpy as np
import pytest

from rfevade import eavesdropper as eav
from rfevade.eavesdropper import (
    CLASS_ORDER,
    ClassifierModel,
    EavesdropperError,
    LabeledWindow,
    accuracy,
    classify,
    generate_dataset,
    train_classifier,
)

RNG = np.random.default_rng(11)


class TestDataset:
    def test_balanced_and_shaped(self):
        data = generate_dataset(20, rng=np.random.default_rng(1))
        assert len(data) == 100
        labels = np.array([w.label for w in data])
        assert all((labels == k).sum() == 20 for k in range(5))
        for w in data:
            assert w.iq.shape == (2, 256)
            assert np.isfinite(w.iq).all()
            assert 0.0 <= w.es_n0_db <= 20.0

    def test_class_order_covers_all_schemes(self):
        assert CLASS_ORDER == ["bpsk", "qpsk", "psk8", "qam16", "qam64"]

    def test_deterministic_for_seed(self):
        a = generate_dataset(3, rng=np.random.default_rng(9))
        b = generate_dataset(3, rng=np.random.default_rng(9))
        for wa, wb in zip(a, b):
            assert np.array_equal(wa.iq, wb.iq)


class TestForward:
    def test_probabilities_sum_to_one(self):
        model = ClassifierModel(np.random.default_rng(2))
        x = RNG.standard_normal((50, 2, 256))
        probs = classify(model, x)
        assert probs.shape == (50, 5)
        assert probs.min() >= 0.0
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_untrained_near_uniform(self):
        model = ClassifierModel(np.random.default_rng(2))
        probs = classify(model, RNG.standard_normal((2, 256)))
        assert probs.max() - probs.min() < 0.2

    def test_pure_function_of_input(self):
        model = ClassifierModel(np.random.default_rng(3))
        x = RNG.standard_normal((2, 256))
        assert np.array_equal(classify(model, x), classify(model, x))

    def test_scale_invariant_normalization(self):
        model = ClassifierModel(np.random.default_rng(3))
        x = RNG.standard_normal((2, 256))
        assert np.allclose(classify(model, x), classify(model, 10 * x), atol=1e-9)

    def test_wrong_shape_rejected(self):
        model = ClassifierModel(np.random.default_rng(3))
        with pytest.raises(EavesdropperError):
            classify(model, RNG.standard_normal((2, 128)))


class TestTraining:
    def test_overfit_small_set(self):
        data = generate_dataset(10, snr_range=(15.0, 20.0), rng=np.random.default_rng(4))
        losses = []
        model = train_classifier(
            data, epochs=120, batch_size=25, lr=3e-3, rng=np.random.default_rng(4),
            log=lambda ep, l: losses.append(l),
        )
        assert accuracy(model, data) == 1.0
        # loss trend: last quarter strictly below first quarter on average
        q = len(losses) // 4
        assert np.mean(losses[-q:]) < np.mean(losses[:q])

    def test_bit_reproducible_for_seed(self):
        data = generate_dataset(4, rng=np.random.default_rng(5))
        m1 = train_classifier(data, epochs=2, batch_size=10, rng=np.random.default_rng(6))
        m2 = train_classifier(data, epochs=2, batch_size=10, rng=np.random.default_rng(6))
        assert m1.param_hash() == m2.param_hash()

    def test_trained_model_is_frozen(self):
        data = generate_dataset(2, rng=np.random.default_rng(7))
        model = train_classifier(data, epochs=1, batch_size=10, rng=np.random.default_rng(7))
        assert not any(p.requires_grad for p in model.parameters())

    def test_empty_dataset_rejected(self):
        with pytest.raises(EavesdropperError):
            train_classifier([])


class TestAccuracy:
    def _windows(self, labels):
        return [LabeledWindow(RNG.standard_normal((2, 256)), l, 10.0) for l in labels]

    def test_all_correct_and_all_wrong(self):
        model = ClassifierModel(np.random.default_rng(8))
        wins = self._windows([0] * 10)
        probs = classify(model, np.stack([w.iq for w in wins]))
        majority = int(np.bincount(probs.argmax(axis=1)).argmax())
        right = [LabeledWindow(w.iq, int(p.argmax()), 10.0) for w, p in zip(wins, probs)]
        assert accuracy(model, right) == 1.0
        wrong = [LabeledWindow(w.iq, (int(p.argmax()) + 1) % 5, 10.0) for w, p in zip(wins, probs)]
        assert accuracy(model, wrong) == 0.0
        del majority

    def test_empty_rejected(self):
        model = ClassifierModel(np.random.default_rng(8))
        with pytest.raises(EavesdropperError):
            accuracy(model, [])


def test_checkpoint_round_trip(tmp_path):
    model = ClassifierModel(np.random.default_rng(12))
    path = str(tmp_path / "clf.bin")
    model.save(path, manifest_path=path + ".json", seed=12)
    loaded = ClassifierModel.load(path)
    assert loaded.param_hash() == model.param_hash()
    x = RNG.standard_normal((3, 2, 256))
    assert np.array_equal(classify(model, x), classify(loaded, x))
