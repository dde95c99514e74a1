import numpy as np
import pytest

from triplestream.exceptions import ConfigError, ShapeError
from triplestream.model import (
    ModelConfig,
    check_compatible,
    classify,
    embed,
    encode_stream,
    fuse,
    init_params,
)

TINY = dict(num_classes=4, input_channels=(2, 1, 2), encoding_dim=5, conv_channels=(3,))


def _identity_fuse(params, n):
    params["fuse.fc.weight"] = np.eye(n)
    return params


def test_init_deterministic_and_zero_biases():
    config = ModelConfig(**TINY)
    a, b = init_params(config, 7), init_params(config, 7)
    assert a.equals(b)
    assert not a.equals(init_params(config, 8))
    for name, value in a.items():
        if name.endswith(".bias"):
            assert np.all(value == 0), name


def test_glorot_mean_within_three_standard_errors():
    params = init_params(ModelConfig(conv_channels=(8, 16), encoding_dim=128), 0)
    w = params["enc0.fc.weight"]
    assert w.shape == (128, 16)
    bound = np.sqrt(6 / (16 + 128))
    se = bound / np.sqrt(3) / np.sqrt(w.size)
    assert abs(w.mean()) <= 3 * se
    assert np.abs(w).max() <= bound


def test_zero_input_gives_zero_encoding():
    config = ModelConfig(**TINY)
    out = encode_stream(np.zeros((2, 3, 4, 4)), init_params(config, 0), 0, config)
    np.testing.assert_array_equal(out, np.zeros(5))


@pytest.mark.parametrize("frames", [(2, 3, 3), (4, 4, 4), (1, 5, 2)])
def test_encoding_length(frames):
    config = ModelConfig(**TINY)
    x = np.random.default_rng(0).normal(size=(3, 1) + frames)
    assert encode_stream(x, init_params(config, 0), 1, config).shape == (3, 5)


def test_encoder_positive_homogeneity():
    config = ModelConfig(**TINY)
    params = init_params(config, 3)
    x = np.random.default_rng(1).normal(size=(2, 4, 4, 4))
    np.testing.assert_allclose(encode_stream(2 * x, params, 0, config),
                               2 * encode_stream(x, params, 0, config), atol=1e-12)


def test_encoder_rejects_wrong_channels():
    config = ModelConfig(**TINY)
    with pytest.raises(ShapeError):
        encode_stream(np.zeros((3, 4, 4, 4)), init_params(config, 0), 0, config)


def test_avg_of_identical_vectors():
    config = ModelConfig(**TINY, fusion_method="avg")
    params = _identity_fuse(init_params(config, 0), 5)
    v = np.random.default_rng(2).normal(size=5)
    np.testing.assert_allclose(fuse([v, v, v], params, config), v, atol=1e-15)


def test_elem_axis_aligned():
    config = ModelConfig(num_classes=2, input_channels=(1, 1, 1), encoding_dim=2, conv_channels=(1,),
                         fusion_method="elem")
    params = _identity_fuse(init_params(config, 0), 2)
    out = fuse([np.array([2.0, 0.0]), np.array([1.0, 0.0]), np.array([4.0, 0.0])], params, config)
    np.testing.assert_allclose(out, [1.0, 0.0])


def test_avg_permutation_invariant_conv_not():
    rng = np.random.default_rng(4)
    enc = [rng.normal(size=(3, 5)) for _ in range(3)]
    perm = [enc[2], enc[0], enc[1]]
    avg = ModelConfig(**TINY, fusion_method="avg")
    p = init_params(avg, 0)
    np.testing.assert_allclose(fuse(enc, p, avg), fuse(perm, p, avg), atol=1e-12)
    conv = ModelConfig(**TINY, fusion_method="conv")
    p = init_params(conv, 0)
    assert not np.allclose(fuse(enc, p, conv), fuse(perm, p, conv))


def test_conv_fusion_shape():
    config = ModelConfig(**TINY, fusion_method="conv", embedding_dim=6)
    enc = [np.ones((2, 5))] * 3
    assert fuse(enc, init_params(config, 0), config).shape == (2, 6)


def test_classify_zero_and_length():
    config = ModelConfig(**TINY)
    params = init_params(config, 0)
    np.testing.assert_array_equal(classify(np.zeros(5), params), np.zeros(4))


def test_classify_is_affine():
    config = ModelConfig(**TINY)
    params = init_params(config, 0)
    params["head.bias"] = np.arange(4.0)
    rng = np.random.default_rng(5)
    for _ in range(10):
        a, b = rng.normal(size=5), rng.normal(size=5)
        np.testing.assert_allclose(classify(a + b, params),
                                   classify(a, params) + classify(b, params) - params["head.bias"],
                                   atol=1e-12)


def test_embed_batches_agree():
    config = ModelConfig(**TINY)
    params = init_params(config, 0)
    rng = np.random.default_rng(6)
    streams = [rng.normal(size=(7, c, 3, 3, 3)) for c in (2, 1, 2)]
    np.testing.assert_allclose(embed(streams, params, config, batch_size=3),
                               embed(streams, params, config, batch_size=64), atol=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(fusion_method="max")
    with pytest.raises(ConfigError):
        ModelConfig(fusion_method="none")
    with pytest.raises(ConfigError):
        ModelConfig(kernel=(2, 3, 3))


def test_check_compatible():
    config = ModelConfig(**TINY)
    check_compatible(config, (2, 1, 2))
    with pytest.raises(ShapeError):
        check_compatible(config, (3, 2, 3))
