"""Raw 2D cross-correlation kernels on plain numpy arrays.

Three code paths, all NCHW:

* generic grouped path: im2col (strided view -> one big copy) followed by
  a single batched GEMM per call;
* 1x1/groups=1 fast path: pure reshape + GEMM, no im2col buffer;
* depthwise path (one channel per group in and out): accumulation over
  the k*k kernel offsets, which beats per-group GEMMs by a wide margin.

`conv2d_reference` is the direct nested-loop implementation kept as the
independent oracle for all of the above. Convolution here means
cross-correlation (no kernel flip), the usual deep-learning convention.

Gradient arrays returned by the backward functions are freshly
allocated; callers may accumulate into them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ConfigError


def out_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def output_hw(h: int, w: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    ho = out_extent(h, kernel, stride, padding)
    wo = out_extent(w, kernel, stride, padding)
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"zero-sized conv output: input {h}x{w}, kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    return ho, wo


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _grouped_cols(xp: np.ndarray, g: int, cg: int, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """im2col for grouped conv: one copy into (g, cg*k*k, n*ho*wo)."""
    n = xp.shape[0]
    sn, sc, sh, sw = xp.strides
    v7 = as_strided(
        xp,
        shape=(n, g, cg, k, k, ho, wo),
        strides=(sn, sc * cg, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    t = v7.transpose(1, 2, 3, 4, 0, 5, 6)  # (g, cg, k, k, n, ho, wo)
    return t.reshape(g, cg * k * k, n * ho * wo)


def _is_depthwise(cin: int, cout: int, groups: int) -> bool:
    return groups == cin and groups == cout


def conv2d_forward(x, w, stride, padding, groups):
    """Cross-correlate x (N,Cin,H,W) with w (Cout,Cin/groups,k,k)."""
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho, wo = output_hw(h, wd, k, stride, padding)

    if _is_depthwise(cin, cout, groups):
        return _depthwise_forward(x, w, stride, padding, ho, wo)

    if k == 1 and groups == 1 and padding == 0:
        xs = x[:, :, ::stride, ::stride]
        if stride > 1:
            xs = np.ascontiguousarray(xs)
        y = np.matmul(w.reshape(cout, cin), xs.reshape(n, cin, ho * wo))
        return y.reshape(n, cout, ho, wo)

    g = groups
    xp = _pad(x, padding)
    cols = _grouped_cols(xp, g, cg, k, stride, ho, wo)
    wg = w.reshape(g, cout // g, cg * k * k)
    y = np.matmul(wg, cols)  # (g, cout/g, n*ho*wo)
    y = y.reshape(g, cout // g, n, ho, wo).transpose(2, 0, 1, 3, 4)
    return np.ascontiguousarray(y).reshape(n, cout, ho, wo)


def _depthwise_forward(x, w, stride, padding, ho, wo):
    n, c = x.shape[:2]
    k = w.shape[2]
    xp = _pad(x, padding)
    y = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            sl = xp[:, :, kh : kh + ho * stride : stride, kw : kw + wo * stride : stride]
            y += sl * w[:, 0, kh, kw][None, :, None, None]
    return y


def conv2d_backward(x, w, dy, stride, padding, groups):
    """Gradients (dx, dw) of conv2d_forward. Recomputes im2col from x."""
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho, wo = dy.shape[2:]

    if _is_depthwise(cin, cout, groups):
        return _depthwise_backward(x, w, dy, stride, padding)

    if k == 1 and groups == 1 and padding == 0:
        xs = x[:, :, ::stride, ::stride]
        if stride > 1:
            xs = np.ascontiguousarray(xs)
        xs2 = xs.reshape(n, cin, ho * wo)
        dy2 = dy.reshape(n, cout, ho * wo)
        dw = np.matmul(dy2, xs2.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        dxs = np.matmul(w.reshape(cout, cin).T, dy2)
        if stride == 1:
            return np.ascontiguousarray(dxs.reshape(n, cin, ho, wo)), dw
        dx = np.zeros_like(x)
        dx[:, :, ::stride, ::stride] = dxs.reshape(n, cin, ho, wo)
        return dx, dw

    g = groups
    xp = _pad(x, padding)
    cols = _grouped_cols(xp, g, cg, k, stride, ho, wo)
    dy_g = dy.reshape(n, g, cout // g, ho, wo).transpose(1, 2, 0, 3, 4)
    dy_g = np.ascontiguousarray(dy_g).reshape(g, cout // g, n * ho * wo)

    dw = np.matmul(dy_g, cols.transpose(0, 2, 1)).reshape(w.shape)

    wg = w.reshape(g, cout // g, cg * k * k)
    dcols = np.matmul(wg.transpose(0, 2, 1), dy_g)  # (g, cg*k*k, n*ho*wo)
    dcols = dcols.reshape(g, cg, k, k, n, ho, wo)

    hp, wp = xp.shape[2:]
    dxp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
    dxp_g = dxp.reshape(n, g, cg, hp, wp)
    for kh in range(k):
        for kw in range(k):
            contrib = dcols[:, :, kh, kw].transpose(2, 0, 1, 3, 4)  # (n, g, cg, ho, wo)
            dxp_g[:, :, :, kh : kh + ho * stride : stride, kw : kw + wo * stride : stride] += contrib
    if padding:
        dx = np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + wd])
    else:
        dx = dxp
    return dx, dw


def _depthwise_backward(x, w, dy, stride, padding):
    n, c, h, wd = x.shape
    k = w.shape[2]
    ho, wo = dy.shape[2:]
    xp = _pad(x, padding)
    hp, wp = xp.shape[2:]
    dw = np.zeros_like(w)
    dxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            sl = xp[:, :, kh : kh + ho * stride : stride, kw : kw + wo * stride : stride]
            dw[:, 0, kh, kw] = (sl * dy).sum(axis=(0, 2, 3))
            dxp[:, :, kh : kh + ho * stride : stride, kw : kw + wo * stride : stride] += (
                dy * w[:, 0, kh, kw][None, :, None, None]
            )
    if padding:
        dx = np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + wd])
    else:
        dx = dxp
    return dx, dw


def conv2d_reference(x, w, stride, padding, groups):
    """Direct nested-loop cross-correlation. Slow; the oracle path."""
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho, wo = output_hw(h, wd, k, stride, padding)
    xp = _pad(x, padding)
    y = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    cout_g = cout // groups
    for ni in range(n):
        for co in range(cout):
            gi = co // cout_g
            c0 = gi * cg
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, c0 : c0 + cg, i * stride : i * stride + k, j * stride : j * stride + k]
                    y[ni, co, i, j] = float(np.dot(w[co].ravel(), patch.ravel()))
    return y
