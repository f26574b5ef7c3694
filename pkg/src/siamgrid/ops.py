"""Differentiable neural-network operations on the tape engine.

Convolution is im2col + one large GEMM per call; its input gradient is
reassembled with a k*k slice loop rather than a scatter, which keeps the
whole backward pass inside BLAS / vectorized numpy.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .autodiff import (
    DTYPE,
    ContractError,
    DimensionError,
    Tensor,
    _accum,
    _record,
)

_DIAGNOSTICS: Counter = Counter()


def diagnostics() -> dict:
    """Counts of soft numeric events (e.g. epsilon-clamped norms)."""
    return dict(_DIAGNOSTICS)


def reset_diagnostics():
    _DIAGNOSTICS.clear()


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """out[n,o] = sum_i x[n,i] * weight[o,i] (+ bias[o])."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input {x.shape} incompatible with weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"linear: bias {bias.shape} incompatible with weight {weight.shape}"
        )
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data
    out = Tensor(out_data)

    def backward_fn(g):
        _accum(x, g @ weight.data)
        _accum(weight, g.T @ x.data)
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, backward_fn)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Standard cross-correlation of NCHW input with FCkk kernels."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, weight {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise DimensionError(f"conv2d: input channels {c} != weight channels {cw}")
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if stride < 1:
        raise ContractError(f"conv2d: stride must be >= 1, got {stride}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {k}x{k} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1

    if padding > 0:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=DTYPE)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]

    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (n, c, ho, wo, k, k)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * k * k
    )
    w_mat = weight.data.reshape(f, -1)
    out = Tensor((cols @ w_mat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward_fn(g):
        g_flat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
        _accum(weight, (g_flat.T @ cols).reshape(weight.shape))
        if x.requires_grad:
            dcols = (g_flat @ w_mat).reshape(n, ho, wo, c, k, k)
            dcols = np.ascontiguousarray(dcols.transpose(0, 3, 4, 5, 1, 2))
            dxp = np.zeros((n, c, hp, wp), dtype=DTYPE)
            for ki in range(k):
                for kj in range(k):
                    dxp[
                        :, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride
                    ] += dcols[:, :, ki, kj]
            if padding > 0:
                dxp = dxp[:, :, padding : padding + h, padding : padding + w]
            _accum(x, dxp)

    return _record(out, (x, weight), backward_fn)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over 2-D (N,C) or 4-D (N,C,H,W) input.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running buffers in place; eval mode uses the running statistics.
    """
    if x.ndim == 2:
        axes, shape_c = (0,), (1, -1)
    elif x.ndim == 4:
        axes, shape_c = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise DimensionError(f"batchnorm: expected 2-D or 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: gamma/beta must have shape ({c},)")
    g_b = gamma.data.reshape(shape_c)
    b_b = beta.data.reshape(shape_c)

    if training:
        if x.shape[0] < 2:
            raise ContractError(
                f"batchnorm: degenerate batch of size {x.shape[0]} in train mode"
            )
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        running_mean *= DTYPE(1.0 - momentum)
        running_mean += DTYPE(momentum) * mean.reshape(-1)
        running_var *= DTYPE(1.0 - momentum)
        running_var += DTYPE(momentum) * var.reshape(-1)
    else:
        mean = running_mean.reshape(shape_c)
        var = running_var.reshape(shape_c)

    inv = 1.0 / np.sqrt(var + DTYPE(eps))
    xhat = (x.data - mean) * inv
    out = Tensor(g_b * xhat + b_b)

    def backward_fn(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g_b
            if training:
                dx = inv * (
                    dxhat
                    - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
                )
            else:
                dx = dxhat * inv
            _accum(x, dx.astype(DTYPE, copy=False))

    return _record(out, (x, gamma, beta), backward_fn)


def max_pool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Spatial max over k*k windows; gradient routes to the argmax cell only."""
    n, c, h, w = x.shape
    if k > h or k > w:
        raise DimensionError(f"max_pool2d: window {k} larger than input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1

    if k == stride and h % k == 0 and w % k == 0:
        v = np.ascontiguousarray(
            x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
        ).reshape(n, c, ho, wo, k * k)
        idx = v.argmax(axis=-1)
        out = Tensor(np.take_along_axis(v, idx[..., None], axis=-1)[..., 0])

        def backward_fn(g):
            dv = np.zeros((n, c, ho, wo, k * k), dtype=DTYPE)
            np.put_along_axis(dv, idx[..., None], g[..., None], axis=-1)
            dx = dv.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
            _accum(x, np.ascontiguousarray(dx).reshape(n, c, h, w))

        return _record(out, (x,), backward_fn)

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride].reshape(n, c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])

    def backward_fn(g):
        ai, aj = np.unravel_index(idx, (k, k))
        rows = np.arange(ho)[None, None, :, None] * stride + ai
        cols = np.arange(wo)[None, None, None, :] * stride + aj
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        flat = ((nn * c + cc) * h + rows) * w + cols
        dx = np.zeros(n * c * h * w, dtype=DTYPE)
        np.add.at(dx, flat.reshape(-1), g.reshape(-1))
        _accum(x, dx.reshape(n, c, h, w))

    return _record(out, (x,), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: (N,C,H,W) -> (N,C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))

    def backward_fn(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / DTYPE(h * w), x.shape))

    return _record(out, (x,), backward_fn)


L2_EPS = 1e-12


def l2_normalize(x: Tensor) -> Tensor:
    """Divide each row by its Euclidean norm (epsilon-clamped near zero)."""
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize: expected 2-D input, got {x.shape}")
    norm = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=1))
    clamped = norm <= L2_EPS
    n_clamped = int(clamped.sum())
    if n_clamped:
        _DIAGNOSTICS["l2_normalize_clamped_rows"] += n_clamped
    denom = np.maximum(norm, L2_EPS).astype(DTYPE)[:, None]
    out = Tensor(x.data / denom)

    def backward_fn(g):
        # d/dx_j (x_j / n) = g_j / n - x_j * (x . g) / n^3. Clamped rows are
        # zero vectors whose direction is undefined; their subgradient is 0
        # (the literal 1/eps slope would be ~1e12 and destroy training).
        dot = (x.data * g).sum(axis=1, keepdims=True)
        dx = g / denom - out.data * dot / (denom * denom)
        if n_clamped:
            dx[clamped] = 0.0
        _accum(x, dx)

    return _record(out, (x,), backward_fn)
