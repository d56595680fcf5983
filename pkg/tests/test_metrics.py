"""Evaluation metrics against brute-force and sklearn oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score, roc_auc_score

from gcanet.metrics import (evaluate_set, fpr_neglog, image_f1, pixel_auc,
                            pixel_f1)


def brute_force_auc(scores, labels):
    """O(n_pos * n_neg) pairwise comparison oracle with half-credit ties."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (len(pos) * len(neg))


class TestPixelAuc:
    def test_reference_fixture(self):
        # one discordant pair out of four -> 0.75
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        labels = np.array([0, 0, 1, 1])
        assert pixel_auc(scores, labels) == pytest.approx(0.75, abs=1e-12)

    def test_perfect_separation(self):
        assert pixel_auc(np.array([0.1, 0.2, 0.8, 0.9]),
                         np.array([0, 0, 1, 1])) == 1.0

    def test_inverted_separation(self):
        assert pixel_auc(np.array([0.9, 0.8, 0.1, 0.2]),
                         np.array([0, 0, 1, 1])) == 0.0

    def test_all_tied_is_half(self):
        assert pixel_auc(np.full(6, 0.5),
                         np.array([0, 1, 0, 1, 0, 1])) == pytest.approx(0.5)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            pixel_auc(np.array([0.1, 0.2]), np.array([1, 1]))
        with pytest.raises(ValueError):
            pixel_auc(np.array([0.1, 0.2]), np.array([0, 0]))

    def test_against_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            scores = rng.integers(0, 5, n).astype(float) / 4  # heavy ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            assert pixel_auc(scores, labels) == pytest.approx(
                brute_force_auc(scores, labels), abs=1e-12)

    def test_against_sklearn(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            scores = rng.random(100)
            labels = rng.integers(0, 2, 100)
            if labels.min() == labels.max():
                continue
            assert pixel_auc(scores, labels) == pytest.approx(
                roc_auc_score(labels, scores), abs=1e-12)


class TestF1:
    def test_empty_vs_empty_is_one(self):
        z = np.zeros((1, 4, 4))
        assert pixel_f1(z, z) == 1.0

    def test_empty_prediction_vs_nonempty_truth_is_zero(self):
        pred = np.zeros((1, 4, 4))
        truth = np.ones((1, 4, 4))
        assert pixel_f1(pred, truth) == 0.0

    def test_against_sklearn(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            pred = rng.random(64)
            truth = rng.integers(0, 2, 64)
            if truth.max() == 0 and (pred >= 0.5).sum() == 0:
                continue
            assert pixel_f1(pred, truth) == pytest.approx(
                f1_score(truth, pred >= 0.5), abs=1e-12)

    def test_image_level(self):
        probs = np.array([0.9, 0.2, 0.7, 0.4])
        labels = np.array([1, 0, 1, 1])
        # pred = [1,0,1,0]: tp=2 fp=0 fn=1 -> 2*2/(4+0+1)
        assert image_f1(probs, labels) == pytest.approx(0.8)


class TestFprNeglog:
    def test_no_false_positives_floored_at_one_pixel(self):
        pred = np.zeros((1, 10, 10))
        mask = np.zeros((1, 10, 10))
        fpr, neglog = fpr_neglog(pred, mask)
        assert fpr == 0.0
        assert neglog == pytest.approx(-math.log(1 / 100))

    def test_counts_only_negatives_predicted_positive(self):
        pred = np.zeros((1, 4, 4))
        pred[0, 0, :2] = 1.0  # two positives
        mask = np.zeros((1, 4, 4))
        mask[0, 0, 0] = 1.0  # one is a true positive
        fpr, neglog = fpr_neglog(pred, mask)
        assert fpr == pytest.approx(1 / 16)
        assert neglog == pytest.approx(-math.log(1 / 16))

    def test_log10_base(self):
        pred = np.ones((1, 10, 10)) * 0.9
        mask = np.zeros((1, 10, 10))
        fpr, neglog = fpr_neglog(pred, mask, base="10")
        assert fpr == 1.0
        assert neglog == pytest.approx(0.0)


class TestEvaluateSet:
    def test_per_image_auc_skips_single_class_images(self):
        maps = np.stack([np.full((1, 4, 4), 0.1), np.zeros((1, 4, 4))])
        maps[1, 0, 0, 0] = 0.9
        masks = np.zeros((2, 1, 4, 4))
        masks[1, 0, 0, 0] = 1.0  # only image 1 has both classes
        rep = evaluate_set(maps, masks)
        assert rep.pixel_auc == 1.0

    def test_no_valid_images_yields_none_with_note(self):
        maps = np.random.default_rng(3).random((2, 1, 4, 4))
        masks = np.zeros((2, 1, 4, 4))
        rep = evaluate_set(maps, masks)
        assert rep.pixel_auc is None
        assert rep.pixel_auc_note is not None

    def test_pooled_mode(self):
        rng = np.random.default_rng(4)
        maps = rng.random((3, 1, 8, 8))
        masks = (rng.random((3, 1, 8, 8)) > 0.7).astype(np.float32)
        rep = evaluate_set(maps, masks, auc_mode="pooled")
        assert rep.pixel_auc == pytest.approx(
            roc_auc_score(masks.reshape(-1), maps.reshape(-1)), abs=1e-12)

    def test_report_json_roundtrip(self):
        import json
        rng = np.random.default_rng(5)
        maps = rng.random((2, 1, 8, 8))
        masks = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float32)
        rep = evaluate_set(maps, masks, np.array([0.9, 0.1]), np.array([1, 0]))
        d = json.loads(rep.to_json())
        assert d["n_images"] == 2 and d["image_f1"] == 1.0


@given(seed=st.integers(0, 100_000), n=st.integers(4, 60))
@settings(max_examples=60, deadline=None)
def test_auc_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.random(n), 1)  # coarse grid forces ties
    labels = rng.integers(0, 2, n)
    if labels.min() == labels.max():
        return
    assert pixel_auc(scores, labels) == pytest.approx(
        brute_force_auc(scores, labels), abs=1e-12)


@given(seed=st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(30)
    labels = rng.integers(0, 2, 30)
    if labels.min() == labels.max():
        return
    a = pixel_auc(scores, labels)
    b = pixel_auc(np.exp(3 * scores), labels)
    assert a == pytest.approx(b, abs=1e-12)


@given(seed=st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_auc_complement_under_label_flip(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(25)
    labels = rng.integers(0, 2, 25)
    if labels.min() == labels.max():
        return
    assert pixel_auc(scores, labels) + pixel_auc(scores, 1 - labels) == \
        pytest.approx(1.0, abs=1e-12)
