"""Finite-difference verification suites for every differentiable
operation and for the full network."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .losses import bce_loss, dice_loss, focal_loss
from .network import GCANet, NetworkConfig


def _rand(rng, shape):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _projector(rng, shape):
    """Fixed random linear functional; makes the scalar objective sensitive
    to every output coordinate. Drawn once per trial, not per evaluation."""
    w = ad.Tensor(rng.standard_normal(shape), dtype=np.float64)
    return lambda t: ad.tsum(ad.mul(t, w))


def op_suites(rng: np.random.Generator) -> dict:
    """One gradcheck closure per operation; each draws fresh tensors."""

    def conv():
        x = _rand(rng, (2, 3, 5, 5))
        w = _rand(rng, (4, 3, 3, 3))
        b = _rand(rng, (4,))
        proj = _projector(rng, (2, 4, 5, 5))
        return ad.gradcheck(
            lambda x, w, b: proj(ad.conv2d(x, w, b, stride=1, pad=1)),
            [x, w, b],
        )

    def conv_strided():
        x = _rand(rng, (1, 2, 6, 6))
        w = _rand(rng, (3, 2, 3, 3))
        b = _rand(rng, (3,))
        proj = _projector(rng, (1, 3, 3, 3))
        return ad.gradcheck(
            lambda x, w, b: proj(ad.conv2d(x, w, b, stride=2, pad=1)),
            [x, w, b],
        )

    def relu():
        x = _rand(rng, (3, 4))
        # keep away from the kink
        x.data[np.abs(x.data) < 0.05] += 0.1
        proj = _projector(rng, x.shape)
        return ad.gradcheck(lambda x: proj(ad.relu(x)), [x])

    def sigmoid():
        x = _rand(rng, (3, 4))
        proj = _projector(rng, x.shape)
        return ad.gradcheck(lambda x: proj(ad.sigmoid(x)), [x])

    def layer_norm():
        x = _rand(rng, (2, 6, 1, 1))
        proj = _projector(rng, x.shape)
        return ad.gradcheck(lambda x: proj(ad.layer_norm(x)), [x])

    def softmax():
        x = _rand(rng, (1, 1, 3, 4))
        proj = _projector(rng, x.shape)
        return ad.gradcheck(lambda x: proj(ad.softmax_positions(x)), [x])

    def reductions():
        x = _rand(rng, (2, 3, 4, 4))
        e1 = ad.gradcheck(lambda x: ad.reduce(x, "sum") * 0.3, [x])
        e2 = ad.gradcheck(lambda x: ad.reduce(x, "mean") * 2.0, [x])
        proj = _projector(rng, (2, 3, 1, 1))
        e3 = ad.gradcheck(
            lambda x: proj(ad.reduce(x, "global_avg_pool")), [x]
        )
        return max(e1, e2, e3)

    def upsample():
        x = _rand(rng, (1, 2, 3, 4))
        proj = _projector(rng, (1, 2, 6, 8))
        return ad.gradcheck(
            lambda x: proj(ad.upsample_bilinear2x(x)), [x]
        )

    def concat():
        a = _rand(rng, (1, 2, 3, 3))
        b = _rand(rng, (1, 3, 3, 3))
        proj = _projector(rng, (1, 5, 3, 3))
        return ad.gradcheck(
            lambda a, b: proj(ad.concat_channels([a, b])), [a, b]
        )

    def broadcast_add():
        x = _rand(rng, (1, 3, 4, 4))
        v = _rand(rng, (1, 3, 1, 1))
        proj = _projector(rng, x.shape)
        return ad.gradcheck(
            lambda x, v: proj(ad.broadcast_add(x, v)), [x, v]
        )

    def mul_broadcast():
        x = _rand(rng, (1, 3, 4, 4))
        g = _rand(rng, (1, 1, 4, 4))
        proj = _projector(rng, x.shape)
        return ad.gradcheck(lambda x, g: proj(ad.mul(g, x)), [x, g])

    def losses():
        p = ad.Tensor(rng.uniform(0.05, 0.95, (1, 1, 4, 4)),
                      requires_grad=True, dtype=np.float64)
        mask = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)
        e1 = ad.gradcheck(lambda p: bce_loss(p, mask), [p])
        e2 = ad.gradcheck(lambda p: dice_loss(p, mask), [p])
        e3 = ad.gradcheck(lambda p: focal_loss(p, mask, variant="plain"), [p])
        return max(e1, e2, e3)

    return {
        "conv2d": conv,
        "conv2d_strided": conv_strided,
        "relu": relu,
        "sigmoid": sigmoid,
        "layer_norm": layer_norm,
        "softmax_positions": softmax,
        "reductions": reductions,
        "upsample": upsample,
        "concat_channels": concat,
        "broadcast_add": broadcast_add,
        "mul_broadcast": mul_broadcast,
        "losses": losses,
    }


def run_op_suite(trials: int = 100, seed: int = 0, tol: float = 1e-6) -> dict:
    """Run every per-op gradcheck ``trials`` times; returns max error per op."""
    results = {}
    for name, fn in op_suites(np.random.default_rng(seed)).items():
        worst = 0.0
        for _ in range(trials):
            worst = max(worst, fn())
        results[name] = worst
    bad = {k: v for k, v in results.items() if v > tol}
    if bad:
        raise AssertionError(f"op gradcheck failures (tol {tol:g}): {bad}")
    return results


def full_network_gradcheck(seed: int = 0, n_coords: int = 20, tol: float = 1e-3,
                           h: float = 1e-5) -> float:
    """Sampled finite-difference check of every-parameter gradients through
    the complete network at 64-bit."""
    rng = np.random.default_rng(seed)
    config = NetworkConfig(stage_channels=(4, 6, 8, 10, 12), blocks_per_stage=2,
                           seed=seed)
    model = GCANet(config, dtype=np.float64)
    images = rng.random((1, 3, 32, 32))
    mask = (rng.random((1, 1, 32, 32)) > 0.7).astype(np.float64)
    label = np.array([1.0])

    def loss_value():
        prob_map, class_prob = model(images)
        return (
            bce_loss(class_prob, label)
            + dice_loss(prob_map, mask)
            + focal_loss(prob_map, mask, variant="plain")
        )

    model.zero_grad()
    loss_value().backward()
    params = list(model.named_parameters())
    analytic = {name: p.grad.copy() for name, p in params}

    worst = 0.0
    for _ in range(n_coords):
        name, p = params[rng.integers(len(params))]
        idx = int(rng.integers(p.size))
        flat = p.data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        fp = loss_value().item()
        flat[idx] = orig - h
        fm = loss_value().item()
        flat[idx] = orig
        num = (fp - fm) / (2 * h)
        ana = analytic[name].reshape(-1)[idx]
        err = abs(ana - num) / max(1.0, abs(ana), abs(num))
        worst = max(worst, err)
    if worst > tol:
        raise AssertionError(
            f"full-network gradcheck failed: max relative error {worst:.3e} > {tol:g}"
        )
    return worst


def run_all(trials: int = 100, seed: int = 0) -> dict:
    results = run_op_suite(trials=trials, seed=seed)
    results["full_network"] = full_network_gradcheck(seed=seed)
    return results
