"""Classifier training/freezing and head-mode semantics."""

import numpy as np
import pytest

from nppr import tensor as T
from nppr.datasets import make_blobs
from nppr.models import (DependencyMode, GmmHead, HeadConfig, Temperatures,
                         extract_features, train_classifier)
from nppr.tensor import Tensor


@pytest.fixture(scope="module")
def blob_classifier():
    ds = make_blobs(d=2, classes=2, n=200, seed=0, separation=4.0)
    clf = train_classifier(ds.x, ds.y, epochs=200, seed=0, hidden=(16,), lr=1e-2)
    return clf, ds


class TestClassifier:
    def test_separable_blobs_hit_accuracy(self, blob_classifier):
        clf, _ = blob_classifier
        assert clf.train_accuracy >= 0.99

    def test_constant_labels_trivial(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 3))
        y = np.zeros(50, dtype=int)
        clf = train_classifier(x, y, epochs=20, seed=0, hidden=(8,))
        assert clf.accuracy(x, y) == 1.0

    def test_ten_class_blobs(self):
        ds = make_blobs(d=16, classes=10, n=600, seed=3, separation=6.0)
        clf = train_classifier(ds.x, ds.y, epochs=150, seed=1, hidden=(32,), lr=1e-2)
        assert clf.train_accuracy >= 0.95

    def test_frozen_weights_bit_identical_after_grad_flow(self, blob_classifier):
        clf, ds = blob_classifier
        snapshot = clf.state()
        x = Tensor(ds.x[:8], requires_grad=True)
        loss = T.reduce_mean(clf.logits(x))
        loss.backward()
        assert x.grad is not None  # gradients still flow to inputs
        for name, arr in clf.state().items():
            np.testing.assert_array_equal(arr, snapshot[name])
        assert all(p.grad is None for p in clf.params())

    def test_below_threshold_reported_not_fatal(self, caplog):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(80, 2))
        y = rng.integers(0, 2, size=80)  # unlearnable noise labels
        with caplog.at_level("WARNING"):
            clf = train_classifier(x, y, epochs=2, seed=0, hidden=(4,),
                                   accuracy_threshold=0.999)
        assert clf.train_accuracy is not None
        assert any("below threshold" in r.message for r in caplog.records)

    def test_wrong_input_shape_rejected(self, blob_classifier):
        clf, _ = blob_classifier
        with pytest.raises(ValueError, match="expected"):
            clf.logits(Tensor(np.ones((4, 5))))


class TestFeatures:
    def test_zero_input_zero_bias_gives_zero(self):
        ds = make_blobs(d=3, classes=2, n=40, seed=0, separation=4.0)
        clf = train_classifier(ds.x, ds.y, epochs=1, seed=0, hidden=(6,))
        for b in clf.biases:
            b.data = np.zeros_like(b.data)
        feats = extract_features(clf, Tensor(np.zeros((2, 3))))
        np.testing.assert_array_equal(feats.data, np.zeros((2, 6)))

    def test_shape_contract(self, blob_classifier):
        clf, ds = blob_classifier
        feats = extract_features(clf, Tensor(ds.x[:7]))
        assert feats.shape == (7, clf.feature_hook.feature_dim)

    def test_deterministic(self, blob_classifier):
        clf, ds = blob_classifier
        a = extract_features(clf, Tensor(ds.x[:5])).data
        b = extract_features(clf, Tensor(ds.x[:5])).data
        np.testing.assert_array_equal(a, b)


def _head(mode, K=3, latent=2, seed=0, **kw):
    cfg = HeadConfig(mode=mode, K=K, latent_dim=latent, hidden_dim=8,
                     label_emb_dim=4, **kw)
    feature_dim = 5 if cfg.mode.conditions_on_features else None
    classes = 4 if cfg.mode.conditions_on_labels else None
    return GmmHead(cfg, feature_dim=feature_dim, num_classes=classes, seed=seed)


class TestHeads:
    def test_independent_rows_identical(self):
        head = _head(DependencyMode.INDEPENDENT)
        params = head.forward(batch_size=5)
        for field in (params.pi_logits, params.means, params.chol):
            for row in field.data[1:]:
                np.testing.assert_array_equal(row, field.data[0])

    def test_independent_needs_batch_size(self):
        head = _head(DependencyMode.INDEPENDENT)
        with pytest.raises(ValueError, match="batch_size"):
            head.forward()

    def test_label_same_label_same_pi(self):
        head = _head(DependencyMode.LABEL)
        # Break the symmetric init so the check is non-trivial.
        head._named["head.pi_w"].data = np.random.default_rng(0).normal(size=(4, 3))
        params = head.forward(labels=np.array([2, 2, 1]))
        np.testing.assert_array_equal(params.pi_logits.data[0], params.pi_logits.data[1])
        assert not np.array_equal(params.pi_logits.data[0], params.pi_logits.data[2])

    def test_label_means_are_global(self):
        head = _head(DependencyMode.LABEL)
        params = head.forward(labels=np.array([0, 3]))
        np.testing.assert_array_equal(params.means.data[0], params.means.data[1])
        np.testing.assert_array_equal(params.chol.data[0], params.chol.data[1])

    def test_joint_same_label_different_input(self):
        head = _head(DependencyMode.JOINT)
        head._named["head.mu_w"].data = np.random.default_rng(1).normal(size=(8, 3 * 2))
        rng = np.random.default_rng(2)
        feats = Tensor(rng.normal(size=(2, 5)))
        params = head.forward(features=feats, labels=np.array([1, 1]))
        np.testing.assert_array_equal(params.pi_logits.data[0], params.pi_logits.data[1])
        assert not np.array_equal(params.means.data[0], params.means.data[1])

    def test_input_mode_invariant_to_labels(self):
        head = _head(DependencyMode.INPUT)
        feats = Tensor(np.random.default_rng(3).normal(size=(4, 5)))
        a = head.forward(features=feats)
        b = head.forward(features=feats, labels=np.array([3, 2, 1, 0]))
        np.testing.assert_array_equal(a.pi_logits.data, b.pi_logits.data)

    def test_missing_conditioning_rejected(self):
        with pytest.raises(ValueError, match="input"):
            _head(DependencyMode.INPUT).forward(labels=np.array([0]))
        with pytest.raises(ValueError, match="label"):
            _head(DependencyMode.LABEL).forward()

    def test_embedding_rows_unit_norm(self):
        head = _head(DependencyMode.LABEL, label_emb_normalized=True)
        emb = head._embedding().data
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-9)

    def test_chol_structure(self):
        head = _head(DependencyMode.INPUT, K=2, latent=3)
        head._named["head.chol_w"].data = np.random.default_rng(4).normal(size=(8, 2 * 9))
        feats = Tensor(np.random.default_rng(5).normal(size=(3, 5)))
        chol = head.forward(features=feats).chol.data
        upper = np.triu(chol, k=1)
        np.testing.assert_array_equal(upper, np.zeros_like(upper))
        diags = chol[:, :, np.arange(3), np.arange(3)]
        assert np.all(diags > 0)

    def test_symmetric_init(self):
        for mode in DependencyMode:
            head = _head(mode, K=4, latent=2)
            kwargs = {}
            if mode.conditions_on_features:
                kwargs["features"] = Tensor(np.random.default_rng(6).normal(size=(3, 5)))
            if mode.conditions_on_labels:
                kwargs["labels"] = np.array([0, 1, 2])
            params = head.forward(batch_size=3, **kwargs)
            pi = params.pi()
            np.testing.assert_allclose(pi, 0.25, atol=1e-12)
            np.testing.assert_allclose(params.means.data, 0.0, atol=1e-12)

    def test_temperature_divisors_change_outputs(self):
        head = _head(DependencyMode.INDEPENDENT, K=2, latent=2)
        head._named["head.pi0"].data = np.array([2.0, -2.0])
        hot = head.forward(batch_size=1, temps=Temperatures(T_pi=4.0))
        cold = head.forward(batch_size=1, temps=Temperatures(T_pi=1.0))
        np.testing.assert_allclose(hot.pi_logits.data, cold.pi_logits.data / 4.0)

    def test_k_guard(self):
        with pytest.raises(ValueError, match="K"):
            HeadConfig(mode=DependencyMode.INDEPENDENT, K=0)
