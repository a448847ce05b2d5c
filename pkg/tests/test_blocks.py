import numpy as np
import pytest

from leyolo.blocks import BottleneckConfig, conv_bn_silu, inverted_bottleneck
from leyolo.errors import ConfigError, ShapeError
from leyolo.tensor_ops import ConvWeights


def bn_weights(kernel, beta=None):
    out = kernel.shape[0]
    return ConvWeights(kernel=kernel, bn_gamma=np.ones(out), bn_beta=np.zeros(out) if beta is None else beta,
                       bn_mean=np.zeros(out), bn_var=np.ones(out), bn_eps=0.0)


def random_weights(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return {p: bn_weights(rng.standard_normal(s).astype(np.float32) * 0.2) for p, s in cfg.param_shapes().items()}


def test_pw_free_strided_block():
    cfg = BottleneckConfig(16, 16, 16, kernel=3, stride=2, use_first_pw=False)
    trace = []
    y = inverted_bottleneck(np.ones((1, 16, 160, 160), np.float32), cfg, random_weights(cfg), trace=trace)
    assert y.shape == (1, 16, 80, 80)
    assert len(trace) == 2 and cfg.case == "c"


def test_expanding_block():
    cfg = BottleneckConfig(16, 96, 32, kernel=3, stride=2)
    trace = []
    x = np.random.default_rng(1).standard_normal((1, 16, 32, 32)).astype(np.float32)
    assert inverted_bottleneck(x, cfg, random_weights(cfg), name="b", trace=trace).shape == (1, 32, 16, 16)
    assert trace == ["b.expand", "b.dw", "b.project"]


def test_case_b_equals_case_a_formula_with_identity_weights():
    c = 8
    dw = np.zeros((c, 1, 3, 3), np.float32)
    dw[:, 0, 1, 1] = 1
    eye = np.eye(c, dtype=np.float32)[:, :, None, None]
    weights = {"expand": bn_weights(eye), "dw": bn_weights(dw), "project": bn_weights(eye)}
    x = np.random.default_rng(3).standard_normal((1, c, 6, 6)).astype(np.float32)
    b = inverted_bottleneck(x, BottleneckConfig(c, c, c), weights)
    # same chain spelled out: project(silu(dw(silu(expand(x)))))
    s = x * (1 / (1 + np.exp(-x)))
    s = s * (1 / (1 + np.exp(-s)))
    np.testing.assert_allclose(b, s, rtol=1e-6, atol=1e-7)


def test_residual_with_zero_weights_is_identity():
    cfg = BottleneckConfig(8, 24, 8, residual=True)
    zeros = {p: bn_weights(np.zeros(s, np.float32)) for p, s in cfg.param_shapes().items()}
    x = np.random.default_rng(4).standard_normal((1, 8, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(inverted_bottleneck(x, cfg, zeros), x)


def test_config_invariants():
    assert BottleneckConfig(96, 576, 96).violations() == []
    rules = lambda cfg: [r for r, _ in cfg.violations()]  # noqa: E731
    assert rules(BottleneckConfig(16, 200, 32)) == ["ratio-6"]
    assert rules(BottleneckConfig(16, 32, 16, use_first_pw=False)) == ["pw-free"]
    assert rules(BottleneckConfig(16, 32, 32, stride=2, residual=True)) == ["residual"]
    assert "kernel" in rules(BottleneckConfig(16, 32, 16, kernel=4))
    with pytest.raises(ConfigError):
        BottleneckConfig(16, 8, 16).check()


def test_param_shapes_match_closed_form():
    cfg = BottleneckConfig(32, 96, 32, kernel=5)
    n = sum(int(np.prod(s)) for s in cfg.param_shapes().values())
    assert n == 32 * 96 + 25 * 96 + 96 * 32


def test_shape_mismatches_are_named():
    cfg = BottleneckConfig(8, 16, 8)
    w = random_weights(cfg)
    with pytest.raises(ShapeError, match=r"\[blk\]"):
        inverted_bottleneck(np.zeros((1, 4, 4, 4), np.float32), cfg, w, name="blk")
    w["dw"] = bn_weights(np.zeros((16, 1, 5, 5), np.float32))
    with pytest.raises(ShapeError):
        inverted_bottleneck(np.zeros((1, 8, 4, 4), np.float32), cfg, w)


def test_conv_bn_silu_zero_weights_give_zero():
    w = bn_weights(np.zeros((16, 3, 3, 3), np.float32))
    y = conv_bn_silu(np.ones((1, 3, 64, 64), np.float32), w, stride=2)
    assert y.shape == (1, 16, 32, 32) and not y.any()
