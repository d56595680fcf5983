"""Five-stage encoder and the image-level classification head."""

import numpy as np
import pytest

from gcanet.autodiff import ShapeError, Tensor
from gcanet.encoder import Encoder, EncoderConfig


@pytest.fixture(scope="module")
def encoder():
    return Encoder(EncoderConfig(stage_channels=(4, 6, 8, 10, 12), in_channels=3),
                   np.random.default_rng(0))


def test_config_requires_five_stages():
    with pytest.raises(ValueError):
        EncoderConfig(stage_channels=(4, 6, 8))


def test_stage_pyramid_shapes(encoder):
    x = Tensor(np.zeros((2, 3, 64, 64), dtype=np.float32))
    feats = encoder(x)
    assert len(feats) == 5
    sizes = [32, 16, 8, 4, 2]
    for f, c, s in zip(feats, (4, 6, 8, 10, 12), sizes):
        assert f.shape == (2, c, s, s)


def test_rejects_non_multiple_of_32(encoder):
    with pytest.raises(ShapeError):
        encoder(Tensor(np.zeros((1, 3, 48, 64), dtype=np.float32)))


def test_classify_in_unit_interval(encoder):
    feats = encoder(Tensor(np.random.default_rng(1)
                           .standard_normal((3, 3, 32, 32)).astype(np.float32)))
    probs = encoder.classify(feats[-1]).data
    assert probs.shape == (3,)
    assert np.all((probs > 0) & (probs < 1))


def test_class_logit_is_linear_in_pooled_features(encoder):
    # head = GAP -> 1x1 conv: doubling the deepest feature map doubles the
    # logit minus bias
    f = Tensor(np.random.default_rng(2).standard_normal((1, 12, 2, 2))
               .astype(np.float32))
    f2 = Tensor(2 * f.data)
    b = encoder.head.bias.data[0]
    l1 = encoder.class_logit(f).data[0] - b
    l2 = encoder.class_logit(f2).data[0] - b
    assert np.allclose(l2, 2 * l1, atol=1e-5)


def test_blocks_per_stage_controls_depth():
    enc = Encoder(EncoderConfig(stage_channels=(4, 6, 8, 10, 12),
                                blocks_per_stage=3, in_channels=3),
                  np.random.default_rng(0))
    assert all(len(s.refine) == 2 for s in enc.stages)
