"""Training loop (Adam + plateau scheduling + early stopping), evaluation,
robustness sweeps, and the ablation runner."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autodiff import no_grad
from .gca import GcaConfig
from .losses import LossConfig, combined_loss
from .metrics import evaluate_set, pixel_auc
from .network import GCANet, NetworkConfig
from .synth import AugmentConfig, DistortionSpec, augment, Sample, distort, load_split


@dataclass
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.25
    plateau_patience: int = 5
    plateau_threshold: float = 1e-4  # relative improvement
    max_epochs: int = 60
    early_stop_patience: int = 20
    batch_size: int = 8
    seed: int = 0
    augment_prob: float = 0.5  # 0 disables augmentation
    deterministic: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    @classmethod
    def toy(cls, seed: int = 0, **overrides) -> "TrainConfig":
        """Desk-scale profile: small widths, higher lr, 26 epochs.

        The paper-scale recipe (lr 1e-5, 60 epochs) targets a pretrained
        backbone and is far too slow from random init on a CPU.
        """
        defaults = dict(
            lr=1e-3,
            max_epochs=26,
            early_stop_patience=26,
            plateau_patience=4,
            batch_size=8,
            seed=seed,
            network=NetworkConfig(
                stage_channels=(8, 16, 24, 32, 48),
                blocks_per_stage=2,
                seed=seed,
            ),
        )
        defaults.update(overrides)
        return cls(**defaults)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "network" in d:
            d["network"] = NetworkConfig.from_dict(d["network"])
        return cls(**d)


class AdamOptimizer:
    """Adam with bias correction and decoupled weight decay.

    Non-finite gradients skip that parameter's update (counted in
    ``skipped_steps``)."""

    def __init__(self, params: dict, lr, weight_decay=0.0,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.skipped_steps = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if not np.isfinite(g).all():
                self.skipped_steps += 1
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for k in self.m:
            self.m[k][...] = arrays[f"adam.m.{k}"]
            self.v[k][...] = arrays[f"adam.v.{k}"]


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` epochs without relative
    improvement of the monitored value. Never increases lr."""

    def __init__(self, lr, factor=0.25, patience=5, threshold=1e-4):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.stale = 0

    def step(self, value: float) -> float:
        if value < self.best * (1.0 - self.threshold):
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr

    def state(self) -> dict:
        return {"lr": self.lr, "best": self.best, "stale": self.stale}

    def load_state(self, s: dict):
        self.lr = s["lr"]
        self.best = s["best"] if s["best"] is not None else math.inf
        self.stale = s["stale"]


@dataclass
class TrainResult:
    history: list
    best_path: Path
    last_path: Path
    loss_log_path: Path
    stopped_early: bool


def _resolve_split(source):
    """Accept either a manifest path or an (images, masks, labels) tuple."""
    if isinstance(source, tuple):
        return source
    return load_split(source)


def _forward_loss(model, images, masks, labels, loss_cfg):
    prob_map, class_prob = model(images)
    return combined_loss(class_prob, labels, prob_map, masks, loss_cfg)


def predict_batched(model: GCANet, images: np.ndarray, batch_size: int = 16):
    maps, probs = [], []
    for i in range(0, len(images), batch_size):
        pm, cp = model.predict(images[i : i + batch_size])
        maps.append(pm)
        probs.append(cp)
    return np.concatenate(maps), np.concatenate(probs)


def _validate(model, images, masks, labels, loss_cfg, batch_size):
    with no_grad():
        total, n = 0.0, 0
        for i in range(0, len(images), batch_size):
            sl = slice(i, i + batch_size)
            _, comps = _forward_loss(model, images[sl], masks[sl], labels[sl], loss_cfg)
            total += comps["total"] * (min(len(images), i + batch_size) - i)
            n += min(len(images), i + batch_size) - i
    pm, cp = predict_batched(model, images, batch_size)
    aucs = []
    for i in range(len(images)):
        try:
            aucs.append(pixel_auc(pm[i].reshape(-1), masks[i].reshape(-1) > 0.5))
        except ValueError:
            continue
    auc = float(np.mean(aucs)) if aucs else 0.5
    return total / max(n, 1), auc


def _trainer_state(epoch, sched, history, best_auc, best_epoch, stale, rng, config):
    return {
        "epoch": epoch,
        "scheduler": sched.state(),
        "history": history,
        "best_val_auc": best_auc,
        "best_epoch": best_epoch,
        "early_stop_stale": stale,
        "rng_state": rng.bit_generator.state,
        "train_config": config.to_dict(),
    }


def _save(path, model, opt, meta):
    arrays = model.state_arrays()
    arrays.update(opt.state_arrays())
    ckpt.save_checkpoint(path, arrays, meta)


def load_model(path) -> tuple[GCANet, dict, dict]:
    """Rebuild a model from a checkpoint; returns (model, arrays, meta)."""
    arrays, meta = ckpt.load_checkpoint(path)
    config = TrainConfig.from_dict(meta["train_config"])
    model = GCANet(config.network)
    model.load_state_arrays(
        {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    )
    return model, arrays, meta


def train(train_manifest, val_manifest, config: TrainConfig, out_dir,
          resume: str | None = None, quiet: bool = True) -> TrainResult:
    """Train to convergence; retains the best-validation-AUC checkpoint.

    Deterministic per seed: reruns give identical loss curves, and a
    mid-run checkpoint reloads to the identical continuation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_images, train_masks, train_labels = _resolve_split(train_manifest)
    val_images, val_masks, val_labels = _resolve_split(val_manifest)
    if len(train_images) == 0:
        raise ValueError("empty training dataset")

    model = GCANet(config.network)
    opt = AdamOptimizer(
        dict(model.named_parameters()), config.lr, config.weight_decay,
        config.beta1, config.beta2, config.adam_eps,
    )
    sched = PlateauScheduler(
        config.lr, config.plateau_factor, config.plateau_patience,
        config.plateau_threshold,
    )
    rng = np.random.default_rng(config.seed)
    history: list = []
    best_auc = -1.0
    best_epoch = -1
    best_val_loss = math.inf
    stale = 0
    start_epoch = 0

    if resume is not None:
        arrays, meta = ckpt.load_checkpoint(resume)
        model.load_state_arrays(
            {k: v for k, v in arrays.items() if not k.startswith("adam.")}
        )
        opt.load_state_arrays(arrays)
        opt.t = meta["adam_t"]
        sched.load_state(meta["scheduler"])
        opt.lr = sched.lr
        history = meta["history"]
        best_auc = meta["best_val_auc"]
        best_epoch = meta["best_epoch"]
        best_val_loss = meta.get("best_val_loss", math.inf)
        stale = meta["early_stop_stale"]
        rng.bit_generator.state = meta["rng_state"]
        start_epoch = meta["epoch"] + 1

    best_path = out / "best.ckpt"
    last_path = out / "last.ckpt"
    loss_log = out / "loss_log.csv"
    log_mode = "a" if resume is not None else "w"
    aug_cfg = AugmentConfig(
        p_flip=config.augment_prob, p_rotate=config.augment_prob,
        p_blur=0.6 * config.augment_prob,
    )

    stopped_early = False
    with open(loss_log, log_mode, newline="") as logf:
        writer = csv.writer(logf)
        if log_mode == "w":
            writer.writerow(["step", "cls", "dice", "focal", "total"])
        step = start_epoch * math.ceil(len(train_images) / config.batch_size)
        for epoch in range(start_epoch, config.max_epochs):
            t0 = time.time()
            perm = rng.permutation(len(train_images))
            epoch_total = 0.0
            for i in range(0, len(perm), config.batch_size):
                idx = perm[i : i + config.batch_size]
                images = train_images[idx]
                masks = train_masks[idx]
                labels = train_labels[idx]
                if config.augment_prob > 0:
                    auged_i, auged_m = [], []
                    for b in range(len(idx)):
                        s = augment(
                            Sample(images[b], masks[b], int(labels[b]),
                                   provenance={}),
                            seed=int(rng.integers(2**31)), config=aug_cfg,
                        )
                        auged_i.append(s.image)
                        auged_m.append(s.mask)
                    images = np.stack(auged_i)
                    masks = np.stack(auged_m)
                model.zero_grad()
                total, comps = _forward_loss(model, images, masks, labels, config.loss)
                if not np.isfinite(comps["total"]):
                    raise RuntimeError(
                        f"non-finite training loss at epoch {epoch} step {step}: {comps}"
                    )
                total.backward()
                opt.lr = sched.lr
                opt.step()
                model.project_constraints()
                writer.writerow([step, comps["cls"], comps["dice"],
                                 comps["focal"], comps["total"]])
                epoch_total += comps["total"] * len(idx)
                step += 1

            val_loss, val_auc = _validate(
                model, val_images, val_masks, val_labels, config.loss,
                config.batch_size,
            )
            val_loss = float(val_loss)
            val_auc = float(val_auc)
            train_loss = float(epoch_total / len(train_images))
            lr_after = sched.step(val_loss)
            entry = {
                "epoch": epoch, "train_loss": train_loss,
                "val_loss": val_loss, "val_auc": val_auc, "lr": lr_after,
            }
            history.append(entry)
            if not quiet:
                print(
                    f"epoch {epoch:3d} train {train_loss:.4f} "
                    f"val {val_loss:.4f} auc {val_auc:.4f} lr {lr_after:.2e} "
                    f"({time.time() - t0:.1f}s)"
                )

            improved_auc = val_auc > best_auc
            if improved_auc:
                best_auc = val_auc
                best_epoch = epoch
            # early stopping monitors validation loss like the scheduler
            if val_loss < best_val_loss * (1.0 - config.plateau_threshold):
                best_val_loss = val_loss
                stale = 0
            else:
                stale += 1

            meta = _trainer_state(epoch, sched, history, best_auc, best_epoch,
                                  stale, rng, config)
            meta["best_val_loss"] = best_val_loss
            meta["adam_t"] = opt.t
            _save(last_path, model, opt, meta)
            if improved_auc:
                _save(best_path, model, opt, meta)
            if stale >= config.early_stop_patience:
                stopped_early = True
                break

    return TrainResult(history, best_path, last_path, loss_log, stopped_early)


# -- evaluation ------------------------------------------------------------

def evaluate(model: GCANet, manifest, distortions: list[DistortionSpec] | None = None,
             threshold: float = 0.5, batch_size: int = 16,
             auc_mode: str = "per_image"):
    """Metrics on a split, optionally with a distortion sweep.

    Returns (MetricsReport, sweep_rows); sweep rows include a baseline
    (no distortion) row plus one row per (kind, parameter)."""
    images, masks, labels = _resolve_split(manifest)
    pm, cp = predict_batched(model, images, batch_size)
    report = evaluate_set(pm, masks, cp, labels, threshold, auc_mode)
    rows = []
    if distortions is not None:
        rows.append({
            "distortion": "none", "parameter": 0.0,
            "auc": report.pixel_auc, "f1": report.pixel_f1,
        })
        for spec in distortions:
            degraded = np.stack(
                [distort(img, spec, seed=i) for i, img in enumerate(images)]
            )
            dpm, dcp = predict_batched(model, degraded, batch_size)
            drep = evaluate_set(dpm, masks, dcp, labels, threshold, auc_mode)
            rows.append({
                "distortion": spec.kind, "parameter": spec.parameter,
                "auc": drep.pixel_auc, "f1": drep.pixel_f1,
            })
    return report, rows


def default_distortion_grid() -> list[DistortionSpec]:
    grid = []
    grid += [DistortionSpec("gaussian_blur", k) for k in (3, 5, 7)]
    grid += [DistortionSpec("jpeg", q) for q in (95, 85, 75)]
    grid += [DistortionSpec("gaussian_noise", s) for s in (0.01, 0.03, 0.05)]
    return grid


# -- ablations -------------------------------------------------------------

ABLATION_AXES = ("gca_vs_baseline", "bottleneck_ratio", "placement",
                 "transform_variant", "loss_combo")


def _ablation_variants(axis: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    def with_gca(**kw):
        cfg = TrainConfig.from_dict(base.to_dict())
        cfg.network.gca = GcaConfig(**{**asdict(base.network.gca), **kw})
        return cfg

    if axis == "gca_vs_baseline":
        return [("gca", with_gca(placement="all_decoder")),
                ("baseline", with_gca(placement="none"))]
    if axis == "bottleneck_ratio":
        return [(f"ratio_{r}", with_gca(ratio=r)) for r in (4, 8, 16, 32)]
    if axis == "placement":
        return [(p, with_gca(placement=p))
                for p in ("all_decoder", "end_nodes", "intermediates", "top_nodes")]
    if axis == "transform_variant":
        return [(v, with_gca(transform_variant=v))
                for v in ("plain_1x1", "bottleneck_ln_relu")]
    if axis == "loss_combo":
        out = []
        for combo in ("bce", "dsc", "dsc+fl", "cls+dsc+fl"):
            cfg = TrainConfig.from_dict(base.to_dict())
            cfg.loss.combo = combo
            out.append((combo.replace("+", "_"), cfg))
        return out
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def ablate(axis: str, seeds, train_manifest, val_manifest, test_manifest,
           base: TrainConfig, out_dir, quiet: bool = True):
    """Train every variant of an axis on identical data per seed.

    Returns (per_run_rows, summary_rows) with mean +/- sd of test pixel
    AUC and F1 per variant."""
    out = Path(out_dir)
    rows = []
    for seed in seeds:
        for name, cfg in _ablation_variants(axis, base):
            cfg.seed = seed
            cfg.network.seed = seed
            run_dir = out / f"{axis}_{name}_seed{seed}"
            result = train(train_manifest, val_manifest, cfg, run_dir, quiet=quiet)
            model, _, _ = load_model(result.best_path)
            report, _ = evaluate(model, test_manifest)
            rows.append({
                "axis": axis, "variant": name, "seed": seed,
                "auc": report.pixel_auc, "f1": report.pixel_f1,
            })
    summary = []
    for name in dict.fromkeys(r["variant"] for r in rows):
        sub = [r for r in rows if r["variant"] == name]
        aucs = [r["auc"] for r in sub if r["auc"] is not None]
        f1s = [r["f1"] for r in sub]
        summary.append({
            "axis": axis, "variant": name, "n": len(sub),
            "auc_mean": float(np.mean(aucs)) if aucs else None,
            "auc_sd": float(np.std(aucs)) if aucs else None,
            "f1_mean": float(np.mean(f1s)),
            "f1_sd": float(np.std(f1s)),
        })
    return rows, summary
