"""Neural-network operations over the autodiff tensor type.

Convolution is an explicit cross-correlation: the kernel is slid over the
padded input without flipping. Reductions and expansions that the losses
need are exposed as named operations instead of general broadcasting; the
only implicit broadcasts in the package are bias addition and per-channel
affine scaling.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, ShapeError, StateError
from .tensor import Tensor, _needs_grad


def _check_rank(x: Tensor, rank: int, op: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op}: expected rank-{rank} input, got shape {x.shape}")


# -- convolution ---------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate NCHW input with an (out, in, kh, kw) kernel.

    Supports the kernel sizes and strides the models need (1x1 and 3x3,
    stride 1 or 2) and validates output dimensions are integral.
    """
    _check_rank(x, 4, "conv2d")
    _check_rank(weight, 4, "conv2d weight")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d: kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be non-negative, got {padding}")
    if cin != cin_w:
        raise ShapeError(
            f"conv2d: input channel axis 1 has {cin} channels, weight expects {cin_w}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match ({cout},)")
    if h + 2 * padding < kh:
        raise ShapeError(
            f"conv2d: height axis 2 ({h} + 2*{padding}) smaller than kernel {kh}"
        )
    if w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: width axis 3 ({w} + 2*{padding}) smaller than kernel {kw}"
        )
    # Strided output size uses the standard floor rule; input rows past the
    # last full stride receive zero gradient because no patch reads them.
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    out_data = np.zeros((n, cout, ho, wo), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * (ho - 1) + 1:stride,
                       j:j + stride * (wo - 1) + 1:stride]
            # (n, ho, wo, cout) <- (n, cin, ho, wo) . (cout, cin)
            out_data += np.tensordot(patch, weight.data[:, :, i, j],
                                     axes=([1], [1])).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    out = Tensor(out_data)

    parents = (x, weight) if bias is None else (x, weight, bias)
    if _needs_grad(*parents):
        xp_saved, wdata = xp, weight.data

        def backward(g):
            if x.requires_grad:
                gxp = np.zeros_like(xp_saved)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                            j:j + stride * (wo - 1) + 1:stride] += np.tensordot(
                                g, wdata[:, :, i, j], axes=([1], [0])
                            ).transpose(0, 3, 1, 2)
                if padding:
                    gxp = gxp[:, :, padding:padding + h, padding:padding + w]
                x._accum_grad(gxp)
            if weight.requires_grad:
                gw = np.zeros_like(wdata)
                for i in range(kh):
                    for j in range(kw):
                        patch = xp_saved[:, :, i:i + stride * (ho - 1) + 1:stride,
                                         j:j + stride * (wo - 1) + 1:stride]
                        gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                weight._accum_grad(gw)
            if bias is not None and bias.requires_grad:
                bias._accum_grad(g.sum(axis=(0, 2, 3)))

        out._attach(parents, backward)
    return out


# -- normalization -------------------------------------------------------------


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_stats: tuple[np.ndarray, np.ndarray] | None,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over (N, H, W) per channel with affine parameters.

    In training mode the batch is normalized by its own biased moments and
    ``running_stats`` (a pair of per-channel arrays) is updated in place by
    an exponential moving average. In eval mode the running statistics are
    required and used as constants.
    """
    _check_rank(x, 4, "batchnorm2d")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batchnorm2d: affine shapes {gamma.shape}/{beta.shape} do not match ({c},)"
        )
    if training:
        mu = channel_mean(x)
        xc = x - expand_channel(mu, x.shape)
        var = channel_mean(xc * xc)
        if running_stats is not None:
            rmean, rvar = running_stats
            rmean *= 1.0 - momentum
            rmean += momentum * mu.data
            rvar *= 1.0 - momentum
            rvar += momentum * var.data
        denom = (var + eps).sqrt()
        xhat = xc / expand_channel(denom, x.shape)
    else:
        if running_stats is None:
            raise StateError(
                "batchnorm2d: eval mode requires initialized running statistics"
            )
        rmean, rvar = running_stats
        scale = 1.0 / np.sqrt(rvar + eps)
        xhat = (x - expand_channel(Tensor(rmean.astype(x.data.dtype)), x.shape)) \
            * expand_channel(Tensor(scale.astype(x.data.dtype)), x.shape)
    return xhat * expand_channel(gamma, x.shape) + expand_channel(beta, x.shape)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly zero is taken as zero."""
    out = Tensor(np.maximum(x.data, 0))
    if _needs_grad(x):
        mask = x.data > 0

        def backward(g):
            x._accum_grad(g * mask)

        out._attach((x,), backward)
    return out


# -- reductions and expansions ---------------------------------------------------


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (N, C, H, W) -> (N, C)."""
    _check_rank(x, 4, "spatial_mean")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    if _needs_grad(x):
        inv = 1.0 / (h * w)

        def backward(g):
            x._accum_grad(np.broadcast_to(g[:, :, None, None] * inv, x.data.shape))

        out._attach((x,), backward)
    return out


def avg_pool_global(x: Tensor) -> Tensor:
    """Global average pooling, (N, C, H, W) -> (N, C)."""
    return spatial_mean(x)


def channel_mean(x: Tensor) -> Tensor:
    """Mean over batch and spatial axes: (N, C, H, W) -> (C,)."""
    _check_rank(x, 4, "channel_mean")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(0, 2, 3)))
    if _needs_grad(x):
        inv = 1.0 / (n * h * w)

        def backward(g):
            x._accum_grad(np.broadcast_to(g[None, :, None, None] * inv, x.data.shape))

        out._attach((x,), backward)
    return out


def sum_over_channels(x: Tensor) -> Tensor:
    """Sum over the channel axis: (N, C, H, W) -> (N, H, W)."""
    _check_rank(x, 4, "sum_over_channels")
    out = Tensor(x.data.sum(axis=1))
    if _needs_grad(x):

        def backward(g):
            x._accum_grad(np.broadcast_to(g[:, None, :, :], x.data.shape))

        out._attach((x,), backward)
    return out


def row_sum(x: Tensor) -> Tensor:
    """Sum over the last axis of a matrix: (N, D) -> (N,)."""
    _check_rank(x, 2, "row_sum")
    out = Tensor(x.data.sum(axis=1))
    if _needs_grad(x):

        def backward(g):
            x._accum_grad(np.broadcast_to(g[:, None], x.data.shape))

        out._attach((x,), backward)
    return out


def expand_spatial(t: Tensor, shape) -> Tensor:
    """Per-sample per-channel values (N, C) broadcast to (N, C, H, W)."""
    _check_rank(t, 2, "expand_spatial")
    if len(shape) != 4 or shape[:2] != t.shape:
        raise ShapeError(f"expand_spatial: cannot expand {t.shape} to {tuple(shape)}")
    out = Tensor(np.broadcast_to(t.data[:, :, None, None], shape))
    if _needs_grad(t):

        def backward(g):
            t._accum_grad(g.sum(axis=(2, 3)))

        out._attach((t,), backward)
    return out


def expand_channel(t: Tensor, shape) -> Tensor:
    """Per-channel values (C,) broadcast to (N, C, H, W)."""
    _check_rank(t, 1, "expand_channel")
    if len(shape) != 4 or shape[1] != t.shape[0]:
        raise ShapeError(f"expand_channel: cannot expand {t.shape} to {tuple(shape)}")
    out = Tensor(np.broadcast_to(t.data[None, :, None, None], shape))
    if _needs_grad(t):

        def backward(g):
            t._accum_grad(g.sum(axis=(0, 2, 3)))

        out._attach((t,), backward)
    return out


def expand_row(t: Tensor, shape) -> Tensor:
    """Per-sample values (N,) broadcast to (N, D)."""
    _check_rank(t, 1, "expand_row")
    if len(shape) != 2 or shape[0] != t.shape[0]:
        raise ShapeError(f"expand_row: cannot expand {t.shape} to {tuple(shape)}")
    out = Tensor(np.broadcast_to(t.data[:, None], shape))
    if _needs_grad(t):

        def backward(g):
            t._accum_grad(g.sum(axis=1))

        out._attach((t,), backward)
    return out


# -- dense layer and classifier heads -------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map (N, D) @ (K, D)^T + (K,)."""
    _check_rank(x, 2, "linear")
    _check_rank(weight, 2, "linear weight")
    n, d = x.shape
    k, d_w = weight.shape
    if d != d_w:
        raise ShapeError(f"linear: input axis 1 has {d} features, weight expects {d_w}")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match ({k},)")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    out = Tensor(out_data)
    parents = (x, weight) if bias is None else (x, weight, bias)
    if _needs_grad(*parents):
        xdata, wdata = x.data, weight.data

        def backward(g):
            if x.requires_grad:
                x._accum_grad(g @ wdata)
            if weight.requires_grad:
                weight._accum_grad(g.T @ xdata)
            if bias is not None and bias.requires_grad:
                bias._accum_grad(g.sum(axis=0))

        out._attach(parents, backward)
    return out


def _log_softmax_data(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of (N, K) logits, numerically stabilized."""
    _check_rank(x, 2, "softmax")
    p = np.exp(_log_softmax_data(x.data))
    out = Tensor(p)
    if _needs_grad(x):

        def backward(g):
            inner = (g * p).sum(axis=1, keepdims=True)
            x._accum_grad(p * (g - inner))

        out._attach((x,), backward)
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of (N, K) logits."""
    _check_rank(x, 2, "log_softmax")
    ls = _log_softmax_data(x.data)
    out = Tensor(ls)
    if _needs_grad(x):
        p = np.exp(ls)

        def backward(g):
            x._accum_grad(g - p * g.sum(axis=1, keepdims=True))

        out._attach((x,), backward)
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under the logits."""
    _check_rank(logits, 2, "cross_entropy")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(
            f"cross_entropy: labels shape {labels.shape} does not match batch ({n},)"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError("cross_entropy: labels must be integers")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise InputError(f"cross_entropy: label {bad} outside [0, {k})")
    ls = _log_softmax_data(logits.data)
    rows = np.arange(n)
    out = Tensor(-(ls[rows, labels]).mean())
    if _needs_grad(logits):
        p = np.exp(ls)

        def backward(g):
            gl = p.copy()
            gl[rows, labels] -= 1.0
            logits._accum_grad(gl * (g / n))

        out._attach((logits,), backward)
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Squared error summed over non-batch axes, then averaged over axis 0."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: operand shapes differ, {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"mse: mixed precision {a.dtype} vs {b.dtype}")
    d = a.data - b.data
    n = a.shape[0] if a.ndim >= 1 else 1
    out = Tensor((d * d).sum() / n)
    if _needs_grad(a, b):

        def backward(g):
            gd = d * (2.0 * g / n)
            if a.requires_grad:
                a._accum_grad(gd)
            if b.requires_grad:
                b._accum_grad(-gd)

        out._attach((a, b), backward)
    return out
