"""Training objective: BCE, soft-Dice, focal losses and their weighted
combination."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcanet.autodiff import Tensor, gradcheck
from gcanet.losses import (LossConfig, bce_loss, combined_loss, dice_loss,
                           focal_loss)


class TestConfigValidation:
    def test_negative_weight(self):
        with pytest.raises(ValueError):
            LossConfig(w_d=-1.0)

    def test_bad_variant(self):
        with pytest.raises(ValueError):
            LossConfig(focal_variant="huber")

    def test_bad_combo(self):
        with pytest.raises(ValueError):
            LossConfig(combo="dice_only")

    def test_defaults(self):
        cfg = LossConfig()
        assert (cfg.w_c, cfg.w_d, cfg.w_f) == (1.0, 1.10, 1.15)
        assert cfg.gamma == 2.0 and cfg.eps == 1e-7


class TestBce:
    def test_perfect_prediction_near_zero(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert bce_loss(Tensor(y), y).item() < 1e-5

    def test_scalar_oracle(self):
        # hand-computed: -(y ln p + (1-y) ln(1-p)) averaged
        p = np.array([0.9, 0.2, 0.6])
        y = np.array([1.0, 0.0, 1.0])
        expect = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert bce_loss(Tensor(p), y).item() == pytest.approx(expect, abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor(np.zeros(3)), np.zeros(4))

    def test_clamp_prevents_infinity(self):
        val = bce_loss(Tensor(np.array([0.0])), np.array([1.0])).item()
        assert np.isfinite(val)
        assert val == pytest.approx(-np.log(1e-7), rel=1e-5)


class TestDice:
    def test_perfect_overlap_near_zero(self):
        g = np.ones((1, 1, 10, 10))
        assert dice_loss(Tensor(g), g).item() == pytest.approx(0.0, abs=1e-8)

    def test_zero_prediction_against_100_positive_pixels(self):
        # -log((0 + eps) / (100 + eps)) with eps=1e-7 -> ln(1e9) = 20.723...
        pred = np.zeros((1, 1, 20, 20))
        mask = np.zeros((1, 1, 20, 20))
        mask[0, 0, :10, :10] = 1.0
        val = dice_loss(Tensor(pred), mask).item()
        assert val == pytest.approx(20.723, abs=1e-3)

    def test_oracle_random_fixture(self):
        rng = np.random.default_rng(0)
        p = rng.random((1, 1, 8, 8))
        g = (rng.random((1, 1, 8, 8)) > 0.5).astype(float)
        eps = 1e-7
        expect = -np.log((2 * (p * g).sum() + eps) / (p.sum() + g.sum() + eps))
        assert dice_loss(Tensor(p), g).item() == pytest.approx(expect, abs=1e-7)

    def test_empty_vs_empty_is_zero(self):
        z = np.zeros((1, 1, 4, 4))
        assert dice_loss(Tensor(z), z).item() == pytest.approx(0.0, abs=1e-8)


class TestFocal:
    def test_gamma_zero_equals_bce(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0.1, 0.9, (1, 1, 6, 6))
        g = (rng.random((1, 1, 6, 6)) > 0.5).astype(float)
        fl = focal_loss(Tensor(p), g, gamma=0.0, variant="plain").item()
        bce = bce_loss(Tensor(p), g).item()
        assert fl == pytest.approx(bce, abs=1e-7)

    def test_plain_oracle(self):
        p = np.array([0.9, 0.3])
        y = np.array([1.0, 0.0])
        p_t = np.array([0.9, 0.7])
        expect = np.mean((1 - p_t) ** 2 * -np.log(p_t))
        got = focal_loss(Tensor(p), y, gamma=2.0, variant="plain").item()
        assert got == pytest.approx(expect, abs=1e-7)

    def test_reduced_variant_skips_hard_examples(self):
        # below the threshold the modulating factor is not applied
        p = np.array([0.3])  # p_t = 0.3 < 0.5
        y = np.array([1.0])
        reduced = focal_loss(Tensor(p), y, variant="reduced").item()
        assert reduced == pytest.approx(-np.log(0.3), abs=1e-6)

    def test_reduced_variant_modulates_easy_examples(self):
        p = np.array([0.9])  # p_t = 0.9 > 0.5
        y = np.array([1.0])
        reduced = focal_loss(Tensor(p), y, variant="reduced").item()
        plain = focal_loss(Tensor(p), y, variant="plain").item()
        assert reduced == pytest.approx(plain, abs=1e-9)

    def test_easy_examples_down_weighted(self):
        easy = focal_loss(Tensor(np.array([0.95])), np.array([1.0]),
                          variant="plain").item()
        bce = bce_loss(Tensor(np.array([0.95])), np.array([1.0])).item()
        assert easy < bce


class TestCombined:
    def test_weighted_sum_of_components(self):
        rng = np.random.default_rng(2)
        pm = rng.uniform(0.1, 0.9, (2, 1, 8, 8))
        mask = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
        cp = np.array([0.8, 0.3])
        lbl = np.array([1.0, 0.0])
        cfg = LossConfig()
        total, comps = combined_loss(Tensor(cp), lbl, Tensor(pm), mask, cfg)
        expect = (cfg.w_c * comps["cls"] + cfg.w_d * comps["dice"]
                  + cfg.w_f * comps["focal"])
        assert total.item() == pytest.approx(expect, rel=1e-6)

    def test_combo_dsc_only(self):
        rng = np.random.default_rng(3)
        pm = rng.uniform(0.1, 0.9, (1, 1, 4, 4))
        mask = (rng.random((1, 1, 4, 4)) > 0.5).astype(float)
        cfg = LossConfig(combo="dsc")
        total, comps = combined_loss(Tensor(np.array([0.5])), np.array([1.0]),
                                     Tensor(pm), mask, cfg)
        assert total.item() == pytest.approx(cfg.w_d * comps["dice"], rel=1e-6)

    def test_combo_bce_matches_pixel_bce(self):
        rng = np.random.default_rng(4)
        pm = rng.uniform(0.1, 0.9, (1, 1, 4, 4))
        mask = (rng.random((1, 1, 4, 4)) > 0.5).astype(float)
        total, _ = combined_loss(Tensor(np.array([0.5])), np.array([1.0]),
                                 Tensor(pm), mask, LossConfig(combo="bce"))
        assert total.item() == pytest.approx(
            bce_loss(Tensor(pm), mask).item(), rel=1e-6)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_loss_gradients_match_numeric(seed):
    rng = np.random.default_rng(seed)
    p = Tensor(rng.uniform(0.05, 0.95, (1, 1, 4, 4)), requires_grad=True,
               dtype=np.float64)
    mask = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)
    assert gradcheck(lambda p: dice_loss(p, mask), [p]) < 1e-6
    assert gradcheck(lambda p: bce_loss(p, mask), [p]) < 1e-6
    assert gradcheck(lambda p: focal_loss(p, mask, variant="plain"), [p]) < 1e-6


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.0, 1.0, (1, 1, 5, 5))
    g = (rng.random((1, 1, 5, 5)) > 0.5).astype(float)
    assert bce_loss(Tensor(p), g).item() >= 0
    assert dice_loss(Tensor(p), g).item() >= -1e-7
    assert focal_loss(Tensor(p), g).item() >= 0
