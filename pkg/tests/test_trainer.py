"""Optimizer, scheduler, checkpointing, and the training loop on tiny data."""

import numpy as np
import pytest

from gcanet.autodiff import Tensor
from gcanet.checkpoint import load_checkpoint, save_checkpoint
from gcanet.synth import DatasetSpec, dataset_build
from gcanet.train import (AdamOptimizer, PlateauScheduler, TrainConfig,
                          _ablation_variants, default_distortion_grid,
                          evaluate, load_model, train)


def tiny_config(**overrides):
    overrides.setdefault("max_epochs", 2)
    cfg = TrainConfig.toy(**overrides)
    cfg.network.stage_channels = (4, 6, 8, 10, 12)
    return cfg


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    return dataset_build(DatasetSpec(train=8, val=4, test=4, seed=3), out)


class TestAdam:
    def test_matches_scalar_reference_loop(self):
        # independent per-element reference implementation of Adam with
        # bias correction and decoupled weight decay
        rng = np.random.default_rng(0)
        theta = rng.standard_normal(5).astype(np.float64)
        p = Tensor(theta.copy(), requires_grad=True)
        opt = AdamOptimizer({"p": p}, lr=0.01, weight_decay=0.02)

        ref = theta.copy()
        m = np.zeros(5)
        v = np.zeros(5)
        for t in range(1, 6):
            g = rng.standard_normal(5)
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.9**t)
            vhat = v / (1 - 0.999**t)
            ref -= 0.01 * (mhat / (np.sqrt(vhat) + 1e-8) + 0.02 * ref)
            assert np.allclose(p.data, ref, atol=1e-12)

    def test_nonfinite_gradient_skips_parameter(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = AdamOptimizer({"p": p}, lr=0.1)
        p.grad = np.array([1.0, np.nan, 1.0])
        opt.step()
        assert np.array_equal(p.data, np.ones(3))
        assert opt.skipped_steps == 1

    def test_state_roundtrip(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = AdamOptimizer({"p": p}, lr=0.1)
        p.grad = np.array([0.5, -0.5, 1.0])
        opt.step()
        state = {k: v.copy() for k, v in opt.state_arrays().items()}
        opt2 = AdamOptimizer({"p": Tensor(np.ones(3), requires_grad=True)}, lr=0.1)
        opt2.load_state_arrays(state)
        assert np.array_equal(opt2.m["p"], opt.m["p"])
        assert np.array_equal(opt2.v["p"], opt.v["p"])


class TestPlateauScheduler:
    def test_decays_after_patience_stale_epochs(self):
        s = PlateauScheduler(1.0, factor=0.5, patience=2, threshold=1e-4)
        assert s.step(1.0) == 1.0   # new best
        assert s.step(1.0) == 1.0   # stale 1
        assert s.step(1.0) == 0.5   # stale 2 -> decay
        assert s.step(1.0) == 0.5   # counter reset

    def test_relative_threshold(self):
        s = PlateauScheduler(1.0, factor=0.5, patience=1, threshold=0.01)
        s.step(1.0)
        # 0.995 is less than 1% better -> counts as stale
        assert s.step(0.995) == 0.5

    def test_improvement_resets_counter(self):
        s = PlateauScheduler(1.0, factor=0.5, patience=2)
        s.step(3.0)
        s.step(3.0)
        s.step(2.0)  # improvement
        assert s.step(2.0) == 1.0  # only stale 1 again

    def test_state_roundtrip(self):
        s = PlateauScheduler(1.0, patience=3)
        s.step(2.0)
        s.step(2.0)
        s2 = PlateauScheduler(1.0, patience=3)
        s2.load_state(s.state())
        assert (s2.lr, s2.best, s2.stale) == (s.lr, s.best, s.stale)


class TestCheckpointFormat:
    def test_roundtrip_bitexact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
            "b.bias": rng.standard_normal(7),
            "c.count": np.arange(5, dtype=np.int64),
        }
        meta = {"epoch": 3, "note": "x", "nested": {"lr": 1e-3}}
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, arrays, meta)
        arrays2, meta2 = load_checkpoint(path)
        assert meta2 == meta
        assert set(arrays2) == set(arrays)
        for k in arrays:
            assert arrays2[k].dtype == arrays[k].dtype
            assert np.array_equal(arrays2[k], arrays[k])

    def test_rejects_non_checkpoint_file(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_checkpoint(bad)

    def test_save_is_deterministic(self, tmp_path):
        arrays = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
        save_checkpoint(tmp_path / "a.ckpt", arrays, {"k": 1})
        save_checkpoint(tmp_path / "b.ckpt", arrays, {"k": 1})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


class TestTrainLoop:
    def test_two_epochs_produce_history_and_checkpoints(self, tiny_data, tmp_path):
        result = train(tiny_data["train"], tiny_data["val"], tiny_config(),
                       tmp_path / "run")
        assert len(result.history) == 2
        assert result.best_path.exists() and result.last_path.exists()
        assert result.loss_log_path.exists()
        header = result.loss_log_path.read_text().splitlines()[0]
        assert header == "step,cls,dice,focal,total"

    def test_rerun_bit_identical(self, tiny_data, tmp_path):
        r1 = train(tiny_data["train"], tiny_data["val"], tiny_config(),
                   tmp_path / "a")
        r2 = train(tiny_data["train"], tiny_data["val"], tiny_config(),
                   tmp_path / "b")
        assert r1.last_path.read_bytes() == r2.last_path.read_bytes()
        assert r1.loss_log_path.read_text() == r2.loss_log_path.read_text()

    def test_resume_matches_uninterrupted(self, tiny_data, tmp_path):
        full = train(tiny_data["train"], tiny_data["val"], tiny_config(),
                     tmp_path / "full")
        part = train(tiny_data["train"], tiny_data["val"], tiny_config(max_epochs=1),
                     tmp_path / "part")
        resumed = train(tiny_data["train"], tiny_data["val"], tiny_config(),
                        tmp_path / "part", resume=part.last_path)
        full_arrays, full_meta = load_checkpoint(full.last_path)
        res_arrays, res_meta = load_checkpoint(resumed.last_path)
        assert full_meta["history"] == res_meta["history"]
        for k in full_arrays:
            assert np.array_equal(full_arrays[k], res_arrays[k]), k

    def test_empty_training_set_rejected(self, tiny_data, tmp_path):
        import numpy as np
        empty = (np.zeros((0, 3, 64, 64), np.float32),
                 np.zeros((0, 1, 64, 64), np.float32), np.zeros(0, np.float32))
        with pytest.raises(ValueError):
            train(empty, tiny_data["val"], tiny_config(), tmp_path / "e")

    def test_bayar_constraint_holds_after_training(self, tiny_data, tmp_path):
        result = train(tiny_data["train"], tiny_data["val"], tiny_config(),
                       tmp_path / "run")
        model, _, _ = load_model(result.best_path)
        w = model.frontend.bayar.weight.data
        mask = np.ones((5, 5), dtype=bool)
        mask[2, 2] = False
        assert np.allclose(w[:, :, 2, 2], -1.0, atol=1e-6)
        assert np.allclose(w[:, :, mask].sum(axis=-1), 1.0, atol=1e-4)

    def test_load_model_restores_config(self, tiny_data, tmp_path):
        cfg = tiny_config()
        result = train(tiny_data["train"], tiny_data["val"], cfg, tmp_path / "run")
        model, _, meta = load_model(result.best_path)
        assert tuple(meta["train_config"]["network"]["stage_channels"]) == \
            (4, 6, 8, 10, 12)
        pm, cp = model.predict(np.zeros((1, 3, 64, 64), np.float32))
        assert pm.shape == (1, 1, 64, 64) and cp.shape == (1,)


class TestEvaluateAndSweep:
    def test_distortion_grid_has_nine_entries(self):
        grid = default_distortion_grid()
        assert len(grid) == 9
        kinds = [g.kind for g in grid]
        assert kinds.count("gaussian_blur") == 3
        assert kinds.count("jpeg") == 3
        assert kinds.count("gaussian_noise") == 3

    def test_sweep_rows_include_baseline(self, tiny_data, tmp_path):
        result = train(tiny_data["train"], tiny_data["val"], tiny_config(max_epochs=1),
                       tmp_path / "run")
        model, _, _ = load_model(result.best_path)
        grid = default_distortion_grid()[:2]
        report, rows = evaluate(model, tiny_data["test"], distortions=grid)
        assert len(rows) == 3
        assert rows[0]["distortion"] == "none"
        assert rows[0]["auc"] == report.pixel_auc


class TestAblationVariants:
    def test_gca_vs_baseline_pair(self):
        pairs = _ablation_variants("gca_vs_baseline", TrainConfig.toy())
        assert [name for name, _ in pairs] == ["gca", "baseline"]
        assert pairs[0][1].network.gca.placement == "all_decoder"
        assert pairs[1][1].network.gca.placement == "none"

    def test_ratio_axis(self):
        variants = _ablation_variants("bottleneck_ratio", TrainConfig.toy())
        assert [cfg.network.gca.ratio for _, cfg in variants] == [4, 8, 16, 32]

    def test_placement_axis_covers_policies(self):
        variants = _ablation_variants("placement", TrainConfig.toy())
        assert {cfg.network.gca.placement for _, cfg in variants} == \
            {"all_decoder", "end_nodes", "intermediates", "top_nodes"}

    def test_loss_combo_axis(self):
        variants = _ablation_variants("loss_combo", TrainConfig.toy())
        assert {cfg.loss.combo for _, cfg in variants} == \
            {"bce", "dsc", "dsc+fl", "cls+dsc+fl"}

    def test_unknown_axis_rejected(self):
        with pytest.raises(ValueError):
            _ablation_variants("activation", TrainConfig.toy())

    def test_variants_do_not_mutate_base(self):
        base = TrainConfig.toy()
        _ablation_variants("gca_vs_baseline", base)
        assert base.network.gca.placement == "all_decoder"
