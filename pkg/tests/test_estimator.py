"""Scikit-learn style estimator wrapper."""

import numpy as np
import pytest
from sklearn.base import clone

from gcanet.estimator import GCANetLocalizer, check_images, check_masks
from gcanet.synth import DatasetSpec, dataset_build, load_split


@pytest.fixture(scope="module")
def tiny_arrays(tmp_path_factory):
    out = tmp_path_factory.mktemp("estdata")
    manifests = dataset_build(DatasetSpec(train=10, val=0, test=0, seed=6), out)
    X, y, _ = load_split(manifests["train"])
    return X, y


@pytest.fixture(scope="module")
def fitted(tiny_arrays, tmp_path_factory):
    X, y = tiny_arrays
    est = GCANetLocalizer(stage_channels=(4, 6, 8, 10, 12), max_epochs=2,
                          work_dir=str(tmp_path_factory.mktemp("estrun")))
    return est.fit(X, y), X, y


class TestInputValidation:
    def test_bad_channel_count(self):
        with pytest.raises(ValueError):
            check_images(np.zeros((2, 4, 64, 64)))

    def test_non_multiple_of_32(self):
        with pytest.raises(ValueError):
            check_images(np.zeros((1, 3, 48, 64)))

    def test_out_of_range_values(self):
        with pytest.raises(ValueError):
            check_images(np.full((1, 3, 32, 32), 2.0))

    def test_single_image_promoted_to_batch(self):
        X = check_images(np.zeros((3, 32, 32)))
        assert X.shape == (1, 3, 32, 32)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ValueError):
            check_masks(np.zeros((2, 1, 32, 32)), 2, (64, 64))

    def test_mask_must_be_binary(self):
        with pytest.raises(ValueError):
            check_masks(np.full((1, 1, 32, 32), 0.5), 1, (32, 32))


class TestSklearnProtocol:
    def test_get_params_roundtrip(self):
        est = GCANetLocalizer(lr=0.01, bottleneck_ratio=8)
        params = est.get_params()
        assert params["lr"] == 0.01 and params["bottleneck_ratio"] == 8
        est2 = GCANetLocalizer(**params)
        assert est2.get_params() == params

    def test_set_params(self):
        est = GCANetLocalizer()
        est.set_params(max_epochs=3, seed=7)
        assert est.max_epochs == 3 and est.seed == 7

    def test_clone(self):
        est = GCANetLocalizer(lr=0.005)
        assert clone(est).lr == 0.005

    def test_predict_before_fit_raises(self):
        with pytest.raises(RuntimeError):
            GCANetLocalizer().predict(np.zeros((1, 3, 32, 32)))


class TestFitPredict:
    def test_fit_returns_self_and_sets_attributes(self, fitted):
        est, _, _ = fitted
        assert hasattr(est, "model_") and hasattr(est, "history_")
        assert len(est.history_) == 2

    def test_predict_proba_shape_and_range(self, fitted):
        est, X, _ = fitted
        maps = est.predict_proba(X[:3])
        assert maps.shape == (3, 1, 64, 64)
        assert maps.min() >= 0 and maps.max() <= 1

    def test_predict_is_thresholded_proba(self, fitted):
        est, X, _ = fitted
        maps = est.predict_proba(X[:2])
        masks = est.predict(X[:2])
        assert np.array_equal(masks, (maps >= est.threshold).astype(np.uint8))

    def test_predict_image_proba(self, fitted):
        est, X, _ = fitted
        probs = est.predict_image_proba(X[:4])
        assert probs.shape == (4,)
        assert np.all((probs >= 0) & (probs <= 1))

    def test_score_is_mean_pixel_auc(self, fitted):
        est, X, y = fitted
        score = est.score(X, y)
        assert 0.0 <= score <= 1.0

    def test_fit_requires_multiple_samples(self, tiny_arrays):
        X, y = tiny_arrays
        est = GCANetLocalizer(stage_channels=(4, 6, 8, 10, 12))
        with pytest.raises(ValueError):
            est.fit(X[:1], y[:1])
