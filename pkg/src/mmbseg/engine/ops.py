"""Differentiable operations over DiffValues.

Every op validates its inputs, computes the forward value, and registers
a closure that maps the output gradient to parent contributions.
Convention for those closures: a contribution is either freshly
allocated or a view of the incoming gradient `g` (never a view of a
saved forward array); `backward` copies g-aliases before accumulating.

Float32 is the working precision. Ops preserve the input dtype, so a
float64 computation (used to tighten gradient checks) is simply a
float64 graph end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EmptyLossError,
    UninitializedStatsError,
)
from . import convolution as cv
from . import flags
from .autodiff import DiffValue
from .flags import guard_finite

IGNORE_INDEX = 255


# ---------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a conv layer; validated on construction."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be positive: {self}")
        if self.kernel not in (1, 3):
            raise ConfigError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"in/out channels ({self.in_channels}/{self.out_channels}) "
                f"not divisible by groups ({self.groups})"
            )

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel,
            self.kernel,
        )

    @property
    def weight_count(self) -> int:
        return self.kernel * self.kernel * self.in_channels * self.out_channels // self.groups

    @property
    def param_count(self) -> int:
        return self.weight_count + (self.out_channels if self.has_bias else 0)


def _require_rank4(name: str, v: DiffValue) -> None:
    if v.value.ndim != 4:
        raise DimensionError("rank", 4, v.value.ndim, name)


def conv2d(x: DiffValue, w: DiffValue, b: DiffValue | None, spec: ConvSpec) -> DiffValue:
    """Grouped 2D cross-correlation, forward and backward recorded."""
    _require_rank4("conv2d input", x)
    if x.value.shape[1] != spec.in_channels:
        raise DimensionError("channels", spec.in_channels, x.value.shape[1], "conv2d input")
    if w.value.shape != spec.weight_shape:
        raise DimensionError("weight", spec.weight_shape, w.value.shape, "conv2d")
    if spec.has_bias != (b is not None):
        raise ConfigError("bias tensor presence disagrees with spec.has_bias")
    if b is not None and b.value.shape != (spec.out_channels,):
        raise DimensionError("bias", (spec.out_channels,), b.value.shape, "conv2d")
    if x.dtype != w.dtype or (b is not None and b.dtype != x.dtype):
        raise ContractError(f"conv2d dtype mismatch: x {x.dtype}, w {w.dtype}")

    y = cv.conv2d_forward(x.value, w.value, spec.stride, spec.padding, spec.groups)
    if b is not None:
        y = y + b.value[None, :, None, None]
    guard_finite("conv2d", y)

    def grad_fn(g):
        dx, dw = cv.conv2d_backward(x.value, w.value, g, spec.stride, spec.padding, spec.groups)
        out = [(x, dx), (w, dw)]
        if b is not None:
            out.append((b, g.sum(axis=(0, 2, 3))))
        return out

    parents = (x, w) if b is None else (x, w, b)
    return DiffValue(y, parents, grad_fn)


def depthwise_conv2d(x: DiffValue, w: DiffValue, spec: ConvSpec) -> DiffValue:
    """Per-channel 3x3 convolution: output channel c sees only input channel c."""
    _require_rank4("depthwise input", x)
    c = x.value.shape[1]
    if not spec.is_depthwise or spec.groups != c:
        raise ConfigError(
            f"depthwise needs groups == in == out == C ({c}), got "
            f"groups={spec.groups}, in={spec.in_channels}, out={spec.out_channels}"
        )
    if spec.kernel != 3:
        raise ConfigError(f"depthwise stage uses a 3x3 kernel, got {spec.kernel}")
    return conv2d(x, w, None, spec)


# ---------------------------------------------------------------------------
# batch normalization


class RunningStats:
    """Exponential moving average of per-channel mean/variance."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.count = 0

    @property
    def initialized(self) -> bool:
        return self.count > 0

    def state_arrays(self):
        return {
            "running_mean": self.mean,
            "running_var": self.var,
            "count": np.array([self.count], dtype=np.float32),
        }

    def load_state_arrays(self, arrays):
        self.mean = np.asarray(arrays["running_mean"], dtype=self.mean.dtype)
        self.var = np.asarray(arrays["running_var"], dtype=self.var.dtype)
        self.count = int(arrays["count"][0])


def batchnorm2d(
    x: DiffValue,
    gamma: DiffValue,
    beta: DiffValue,
    stats: RunningStats,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> DiffValue:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with batch statistics (biased variance) and
    updates the running stats with an exponential moving average (the
    running variance uses the unbiased estimate). Eval mode normalizes
    with the running stats and fails loudly if none were ever recorded.
    """
    _require_rank4("batchnorm input", x)
    n, c, h, w = x.value.shape
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise DimensionError("channels", c, gamma.value.shape, "batchnorm gamma/beta")

    if training:
        m = n * h * w
        if m < 2:
            raise ConfigError(f"train-mode batchnorm needs N*H*W >= 2, got {m}")
        # statistics accumulate in float64: keeps the forward numerically
        # smooth enough for finite-difference checks at float32
        mu64 = x.value.mean(axis=(0, 2, 3), dtype=np.float64)
        var64 = x.value.var(axis=(0, 2, 3), dtype=np.float64)
        stats.mean = ((1.0 - momentum) * stats.mean + momentum * mu64).astype(stats.mean.dtype)
        unbiased = var64 * (m / (m - 1))
        stats.var = ((1.0 - momentum) * stats.var + momentum * unbiased).astype(stats.var.dtype)
        stats.count += 1
        mu = mu64.astype(x.dtype)
        inv_std = (1.0 / np.sqrt(var64 + eps)).astype(x.dtype)
    else:
        if not stats.initialized:
            raise UninitializedStatsError(
                "eval-mode batchnorm before any train-mode update or loaded stats"
            )
        mu = stats.mean.astype(x.dtype)
        inv_std = (1.0 / np.sqrt(stats.var.astype(np.float64) + eps)).astype(x.dtype)

    xhat = (x.value - mu[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma.value[None, :, None, None] * xhat + beta.value[None, :, None, None]
    guard_finite("batchnorm2d", y)

    if training:

        def grad_fn(g):
            m_ = n * h * w
            xh = (x.value - mu[None, :, None, None]) * inv_std[None, :, None, None]
            dbeta = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
            dgamma = (g * xh).sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
            dxhat = g * gamma.value[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
            s2 = (dxhat * xh).sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
            dx = (
                dxhat - (s1[None, :, None, None] + xh * s2[None, :, None, None]) / m_
            ) * inv_std[None, :, None, None]
            return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    else:

        def grad_fn(g):
            xh = (x.value - mu[None, :, None, None]) * inv_std[None, :, None, None]
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xh).sum(axis=(0, 2, 3))
            dx = g * (gamma.value * inv_std)[None, :, None, None]
            return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return DiffValue(y, (x, gamma, beta), grad_fn)


# ---------------------------------------------------------------------------
# elementwise / structural


def relu6(x: DiffValue) -> DiffValue:
    y = np.minimum(np.maximum(x.value, 0), x.dtype.type(6))
    guard_finite("relu6", y)
    if flags.kink_watch_active() and x.value.size:
        flags.report_kink_distance(
            float(np.minimum(np.abs(x.value), np.abs(x.value - 6)).min())
        )

    def grad_fn(g):
        mask = (x.value > 0) & (x.value < 6)
        return [(x, g * mask)]

    return DiffValue(y, (x,), grad_fn)


def add(x: DiffValue, y: DiffValue) -> DiffValue:
    if x.value.shape != y.value.shape:
        raise DimensionError("shape", x.value.shape, y.value.shape, "add")
    out = x.value + y.value
    guard_finite("add", out)

    def grad_fn(g):
        return [(x, g), (y, g)]

    return DiffValue(out, (x, y), grad_fn)


def concat_channels(xs: list[DiffValue]) -> DiffValue:
    if not xs:
        raise ContractError("concat_channels needs at least one input")
    first = xs[0].value.shape
    for v in xs[1:]:
        s = v.value.shape
        if len(s) != 4 or (s[0], s[2], s[3]) != (first[0], first[2], first[3]):
            raise DimensionError("N/H/W", (first[0], first[2], first[3]), (s[0],) + s[2:], "concat")
    out = np.concatenate([v.value for v in xs], axis=1)
    splits = np.cumsum([v.value.shape[1] for v in xs])[:-1]

    def grad_fn(g):
        pieces = np.split(g, splits, axis=1)
        return list(zip(xs, pieces))

    return DiffValue(out, tuple(xs), grad_fn)


def mul(x: DiffValue, y: DiffValue) -> DiffValue:
    if x.value.shape != y.value.shape:
        raise DimensionError("shape", x.value.shape, y.value.shape, "mul")
    out = x.value * y.value

    def grad_fn(g):
        return [(x, g * y.value), (y, g * x.value)]

    return DiffValue(out, (x, y), grad_fn)


def smul(x: DiffValue, c: float) -> DiffValue:
    c = x.dtype.type(c)
    out = x.value * c

    def grad_fn(g):
        return [(x, g * c)]

    return DiffValue(out, (x,), grad_fn)


def sum_all(x: DiffValue) -> DiffValue:
    out = np.asarray(x.value.sum(dtype=np.float64), dtype=x.dtype)

    def grad_fn(g):
        return [(x, np.broadcast_to(g, x.value.shape))]

    return DiffValue(out, (x,), grad_fn)


def mean_all(x: DiffValue) -> DiffValue:
    return smul(sum_all(x), 1.0 / x.value.size)


# ---------------------------------------------------------------------------
# bilinear resize (half-pixel centers, edge clamp)

_matrix_cache: dict[tuple[int, int, str], np.ndarray] = {}


def resize_axis_matrix(n_in: int, n_out: int, dtype=np.float32) -> np.ndarray:
    """(n_out, n_in) interpolation matrix for one axis.

    Output center i samples source coordinate (i + 0.5) * n_in/n_out - 0.5,
    clamped to [0, n_in - 1]; weights go to the two straddling cells.
    """
    key = (n_in, n_out, np.dtype(dtype).str)
    hit = _matrix_cache.get(key)
    if hit is not None:
        return hit
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - w1)
    np.add.at(mat, (rows, i1), w1)
    mat = mat.astype(dtype)
    _matrix_cache[key] = mat
    return mat


def nearest_axis_indices(n_in: int, n_out: int) -> np.ndarray:
    """Nearest-neighbor source index per output cell, same center convention."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(np.rint(src), 0, n_in - 1).astype(np.int64)


def resize_bilinear_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-array bilinear resize over the trailing two axes."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize target must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    ah = resize_axis_matrix(h, out_h, x.dtype)
    aw = resize_axis_matrix(w, out_w, x.dtype)
    return np.matmul(np.matmul(ah, x), aw.T)


def resize_bilinear(x: DiffValue, out_h: int, out_w: int) -> DiffValue:
    """Differentiable bilinear resize of an NCHW tensor."""
    _require_rank4("resize input", x)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize target must be >= 1, got {out_h}x{out_w}")
    h, w = x.value.shape[2:]
    if (h, w) == (out_h, out_w):
        # Identity: bit-exact passthrough.
        def grad_id(g):
            return [(x, g)]

        return DiffValue(x.value, (x,), grad_id)

    ah = resize_axis_matrix(h, out_h, x.dtype)
    aw = resize_axis_matrix(w, out_w, x.dtype)
    y = np.matmul(np.matmul(ah, x.value), aw.T)
    guard_finite("resize_bilinear", y)

    def grad_fn(g):
        return [(x, np.matmul(np.matmul(ah.T, g), aw))]

    return DiffValue(y, (x,), grad_fn)


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(
    logits: DiffValue, labels: np.ndarray, ignore_index: int = IGNORE_INDEX
) -> DiffValue:
    """Mean per-pixel cross entropy over non-ignored pixels.

    Log-sum-exp stabilized; ignored pixels contribute neither loss nor
    gradient. Raises EmptyLossError when every pixel is ignored.
    """
    _require_rank4("logits", logits)
    n, k, h, w = logits.value.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise DimensionError("labels", (n, h, w), labels.shape, "softmax_cross_entropy")
    if labels.dtype.kind not in "iu":
        raise ContractError(f"labels must be integers, got {labels.dtype}")

    valid = labels != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyLossError("every pixel carries the ignore label; loss is undefined")
    bad = valid & (labels >= k)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise DataError(
            f"label {int(labels[tuple(idx)])} out of range [0,{k}) at pixel {tuple(idx)}"
        )

    z = logits.value
    m = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - m).sum(axis=1, keepdims=True)) + m  # (n,1,h,w)
    safe_labels = np.where(valid, labels, 0).astype(np.int64)
    picked = np.take_along_axis(z, safe_labels[:, None], axis=1)[:, 0]
    per_pixel = lse[:, 0] - picked
    loss = np.asarray((per_pixel * valid).sum(dtype=np.float64) / n_valid, dtype=logits.dtype)
    guard_finite("softmax_cross_entropy", loss)

    def grad_fn(g):
        p = np.exp(z - lse)
        picked_p = np.take_along_axis(p, safe_labels[:, None], axis=1)
        np.put_along_axis(p, safe_labels[:, None], picked_p - 1.0, axis=1)
        p *= valid[:, None] * (g / n_valid)
        return [(logits, p)]

    return DiffValue(loss, (logits,), grad_fn)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain-array class probabilities over axis 1 (inference helper)."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)
