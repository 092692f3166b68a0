"""Finite-difference probes of every registered gradient.

Small fast instances here; the full 20-instance sweep at acceptance
tolerance runs in test_acceptance.py.
"""

import numpy as np
import pytest
from helpers import assert_gradients_match, weighted_scalar

from mmbseg.engine import (
    ConvSpec,
    RunningStats,
    add,
    batchnorm2d,
    concat_channels,
    conv2d,
    depthwise_conv2d,
    leaf,
    mul,
    relu6,
    resize_bilinear,
    smul,
    softmax_cross_entropy,
    sum_all,
)
from mmbseg.engine.gradcheck import directional_check


def test_conv2d_grad(rng):
    def make(r):
        x = leaf(r.standard_normal((2, 3, 6, 6)).astype(np.float32))
        w = leaf((r.standard_normal((5, 3, 3, 3)) * 0.5).astype(np.float32))
        wt = leaf(r.standard_normal((2, 5, 3, 3)).astype(np.float32))
        spec = ConvSpec(3, 5, kernel=3, stride=2, padding=1)
        return lambda: weighted_scalar(conv2d(x, w, None, spec), wt), [x, w]

    assert_gradients_match(make, rng, instances=3)


def test_conv2d_bias_grad(rng):
    def make(r):
        x = leaf(r.standard_normal((1, 2, 5, 5)).astype(np.float32))
        w = leaf(r.standard_normal((4, 2, 1, 1)).astype(np.float32))
        b = leaf(r.standard_normal(4).astype(np.float32))
        wt = leaf(r.standard_normal((1, 4, 5, 5)).astype(np.float32))
        spec = ConvSpec(2, 4, kernel=1, has_bias=True)
        return lambda: weighted_scalar(conv2d(x, w, b, spec), wt), [x, w, b]

    assert_gradients_match(make, rng, instances=3)


def test_depthwise_grad(rng):
    def make(r):
        c = 4
        x = leaf(r.standard_normal((2, c, 6, 6)).astype(np.float32))
        w = leaf(r.standard_normal((c, 1, 3, 3)).astype(np.float32))
        wt = leaf(r.standard_normal((2, c, 3, 3)).astype(np.float32))
        spec = ConvSpec(c, c, kernel=3, stride=2, padding=1, groups=c)
        return lambda: weighted_scalar(depthwise_conv2d(x, w, spec), wt), [x, w]

    assert_gradients_match(make, rng, instances=3)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_grad(rng, training):
    def make(r):
        c = 3
        x = leaf(r.standard_normal((4, c, 5, 5)).astype(np.float32))
        g = leaf((1 + 0.1 * r.standard_normal(c)).astype(np.float32))
        b = leaf(r.standard_normal(c).astype(np.float32))
        st = RunningStats(c)
        if not training:
            warm = leaf(r.standard_normal((4, c, 5, 5)).astype(np.float32))
            batchnorm2d(warm, g, b, st, training=True)
        wt = leaf(r.standard_normal((4, c, 5, 5)).astype(np.float32))
        return (
            lambda: weighted_scalar(batchnorm2d(x, g, b, st, training=training), wt),
            [x, g, b],
        )

    assert_gradients_match(make, rng, instances=3)


def test_relu6_grad(rng):
    def make(r):
        x = leaf(r.standard_normal((1, 3, 4, 4)).astype(np.float32))
        wt = leaf(r.standard_normal(x.shape).astype(np.float32))
        return lambda: weighted_scalar(relu6(x), wt), [x]

    assert_gradients_match(make, rng, instances=3)


def test_resize_grad(rng):
    def make(r):
        x = leaf(r.standard_normal((1, 2, 4, 5)).astype(np.float32))
        wt = leaf(r.standard_normal((1, 2, 7, 3)).astype(np.float32))
        return lambda: weighted_scalar(resize_bilinear(x, 7, 3), wt), [x]

    assert_gradients_match(make, rng, instances=3)


def test_add_concat_grad(rng):
    def make(r):
        a = leaf(r.standard_normal((1, 2, 3, 3)).astype(np.float32))
        b = leaf(r.standard_normal((1, 2, 3, 3)).astype(np.float32))
        c = leaf(r.standard_normal((1, 3, 3, 3)).astype(np.float32))
        wt = leaf(r.standard_normal((1, 5, 3, 3)).astype(np.float32))
        return (
            lambda: weighted_scalar(concat_channels([add(a, b), c]), wt),
            [a, b, c],
        )

    assert_gradients_match(make, rng, instances=3)


def test_cross_entropy_grad(rng):
    def make(r):
        logits = leaf(r.standard_normal((2, 5, 4, 4)).astype(np.float32))
        labels = r.integers(0, 5, (2, 4, 4)).astype(np.int64)
        labels[0, 0, 0] = 255
        return lambda: softmax_cross_entropy(logits, labels), [logits]

    assert_gradients_match(make, rng, instances=3)


def test_smul_grad(rng):
    def make(r):
        x = leaf(r.standard_normal((3, 3)).astype(np.float32))
        return lambda: smul(sum_all(mul(x, x)), 0.5), [x]

    assert_gradients_match(make, rng, instances=3)


def test_float64_mode_tightens(rng):
    """The float64 path exists to shrink FD error by orders of magnitude."""
    x = leaf(rng.standard_normal((2, 3, 6, 6)))
    w = leaf(rng.standard_normal((5, 3, 3, 3)))
    wt = leaf(rng.standard_normal((2, 5, 6, 6)))
    assert x.dtype == np.float64
    spec = ConvSpec(3, 5, kernel=3, stride=1, padding=1)
    res = directional_check(
        lambda: weighted_scalar(conv2d(x, w, None, spec), wt), [x, w], h=1e-5, rng=rng
    )
    assert res.rel_error < 1e-8
