"""Differentiable tensor operations: exactly the set the network needs.

Layout conventions follow the usual deep-learning ones: volumes are
[N, C, D, H, W], convolution kernels [O, C, k, k, k], fully connected
weights [F, G]. Convolution is lowered to one GEMM per call via an
im2col view and computes in the storage dtype (the float64 mode used by
gradient checking runs the same kernels end to end in float64). The
long, cancellation-prone reductions that are cheap relative to the
GEMMs (softmax normalization, mse, spatial means, bias/fully-connected
sums) always accumulate in float64. Padding is zero-padding only.

Every op takes an optional ``tape``; with a tape and at least one tracked
input it records a node whose backward rule pushes cotangents to the
tracked inputs only.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tape import Tape, Tensor
from .validation import ValidationError

__all__ = [
    "conv3d",
    "maxpool3d",
    "linear",
    "relu",
    "softmax",
    "mse_loss",
    "add",
    "global_avg_pool",
    "stack",
    "mix_heads",
]

_ACC = np.float64  # accumulation dtype for all reductions


def _require_tensors(op: str, **named):
    for name, value in named.items():
        if not isinstance(value, Tensor):
            raise ValidationError(f"{op}: {name} must be a Tensor, got {type(value).__name__}")


def _require_same_dtype(op: str, *tensors: Tensor):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ValidationError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


def _require_index(op: str, name: str, value, minimum: int):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"{op}: {name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{op}: {name} must be >= {minimum}, got {value}")


def _finish(tape: Optional[Tape], op: str, inputs: tuple, out: np.ndarray, make_backward):
    """Record the op when a tape is active and any input is tracked."""
    if tape is not None and any(t.node_id is not None for t in inputs):
        return tape.record(op, inputs, out, make_backward())
    return Tensor(out, dtype=out.dtype)


# ---------------------------------------------------------------------------
# 3-D convolution


def _im2col(xp: np.ndarray, k: int, stride: int, out_dims) -> np.ndarray:
    """Lower padded input [N,C,Dp,Hp,Wp] to a [C*k^3, N*L] patch matrix
    (one strided copy, keeping the storage dtype)."""
    N, C = xp.shape[:2]
    Do, Ho, Wo = out_dims
    sN, sC, sD, sH, sW = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(C, k, k, k, N, Do, Ho, Wo),
        strides=(sC, sD, sH, sW, sN, stride * sD, stride * sH, stride * sW),
        writeable=False,
    )
    return np.ascontiguousarray(patches).reshape(C * k * k * k, N * Do * Ho * Wo)


def conv3d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 0,
    tape: Optional[Tape] = None,
) -> Tensor:
    """3-D convolution of [N,C,D,H,W] with [O,C,k,k,k] kernels plus bias."""
    _require_tensors("conv3d", x=x, kernel=kernel, bias=bias)
    _require_same_dtype("conv3d", x, kernel, bias)
    _require_index("conv3d", "stride", stride, 1)
    _require_index("conv3d", "padding", padding, 0)
    if x.data.ndim != 5:
        raise ValidationError(f"conv3d: input must be [N,C,D,H,W], got shape {x.shape}")
    if kernel.data.ndim != 5 or len({kernel.shape[2], kernel.shape[3], kernel.shape[4]}) != 1:
        raise ValidationError(f"conv3d: kernel must be [O,C,k,k,k] cubic, got shape {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ValidationError(
            f"conv3d: channel mismatch between input shape {x.shape} "
            f"and kernel shape {kernel.shape}"
        )
    O, k = kernel.shape[0], kernel.shape[2]
    if bias.shape != (O,):
        raise ValidationError(f"conv3d: bias shape {bias.shape} does not match {O} output channels")
    N, C, D, H, W = x.shape
    spatial = []
    for extent in (D, H, W):
        padded = extent + 2 * padding
        if k > padded:
            raise ValidationError(
                f"conv3d: kernel size {k} exceeds padded input extent {padded}"
            )
        spatial.append((padded - k) // stride + 1)
    Do, Ho, Wo = spatial
    st_dtype = x.dtype

    if padding:
        pw = ((0, 0), (0, 0), (padding, padding), (padding, padding), (padding, padding))
        xp = np.pad(x.data, pw)
    else:
        xp = x.data
    col = _im2col(xp, k, stride, (Do, Ho, Wo))  # [CK, N*L]
    w2 = kernel.data.reshape(O, -1)
    y2 = w2 @ col
    y2 += bias.data[:, None]
    y = np.ascontiguousarray(y2.reshape(O, N, Do, Ho, Wo).swapaxes(0, 1))

    def make_backward():
        x_id, k_id, b_id = x.node_id, kernel.node_id, bias.node_id
        padded_shape = xp.shape
        saved_col = col

        def backward(grad_out, accumulate):
            g2 = np.ascontiguousarray(grad_out.swapaxes(0, 1)).reshape(O, -1)
            if k_id is not None:
                dw = g2 @ saved_col.T
                accumulate(k_id, dw.reshape(kernel.shape))
            if b_id is not None:
                # bias gradient is a long reduction: accumulate in float64
                accumulate(b_id, g2.sum(axis=1, dtype=_ACC).astype(st_dtype))
            if x_id is not None:
                dcol = w2.T @ g2
                dxp = np.zeros(padded_shape, dtype=st_dtype)
                dcol_r = dcol.reshape(C, k, k, k, N, Do, Ho, Wo)
                for a in range(k):
                    for b in range(k):
                        for c in range(k):
                            dxp[
                                :,
                                :,
                                a : a + stride * Do : stride,
                                b : b + stride * Ho : stride,
                                c : c + stride * Wo : stride,
                            ] += dcol_r[:, a, b, c].swapaxes(0, 1)
                if padding:
                    dxp = dxp[
                        :,
                        :,
                        padding : padding + D,
                        padding : padding + H,
                        padding : padding + W,
                    ]
                accumulate(x_id, np.ascontiguousarray(dxp))

        return backward

    return _finish(tape, "conv3d", (x, kernel, bias), y, make_backward)


# ---------------------------------------------------------------------------
# Pooling


def _pool_window_views(xd, k, stride, out_dims):
    """The k^3 strided slices of xd covering each pooling window position,
    in window-flat (lexicographic) order."""
    Do, Ho, Wo = out_dims
    views = []
    for a in range(k):
        for b in range(k):
            for c in range(k):
                views.append(
                    xd[
                        :,
                        :,
                        a : a + stride * Do : stride,
                        b : b + stride * Ho : stride,
                        c : c + stride * Wo : stride,
                    ]
                )
    return views


def maxpool3d(x: Tensor, k: int, stride: int, tape: Optional[Tape] = None) -> Tensor:
    """Max over k^3 windows; backward routes gradient to the argmax only
    (ties go to the first position in window order)."""
    _require_tensors("maxpool3d", x=x)
    _require_index("maxpool3d", "k", k, 1)
    _require_index("maxpool3d", "stride", stride, 1)
    if x.data.ndim != 5:
        raise ValidationError(f"maxpool3d: input must be [N,C,D,H,W], got shape {x.shape}")
    N, C, D, H, W = x.shape
    if k > min(D, H, W):
        raise ValidationError(
            f"maxpool3d: window {k}^3 is larger than input extents {(D, H, W)}"
        )
    Do = (D - k) // stride + 1
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    out_dims = (Do, Ho, Wo)

    views = _pool_window_views(x.data, k, stride, out_dims)
    y = views[0].copy()
    for view in views[1:]:
        np.maximum(y, view, out=y)

    def make_backward():
        x_id = x.node_id

        def backward(grad_out, accumulate):
            if x_id is None:
                return
            dx = np.zeros((N, C, D, H, W), dtype=x.dtype)
            remaining = np.ones(grad_out.shape, dtype=bool)
            dx_views = _pool_window_views(dx, k, stride, out_dims)
            for view, dview in zip(views, dx_views):
                hit = (view == y) & remaining
                dview += grad_out * hit
                remaining &= ~hit
                if not remaining.any():
                    break
            accumulate(x_id, dx)

        return backward

    return _finish(tape, "maxpool3d", (x,), y, make_backward)


def global_avg_pool(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean over the spatial axes: [N,C,D,H,W] -> [N,C]."""
    _require_tensors("global_avg_pool", x=x)
    if x.data.ndim != 5:
        raise ValidationError(f"global_avg_pool: input must be [N,C,D,H,W], got shape {x.shape}")
    n_vox = int(np.prod(x.shape[2:]))
    y = x.data.mean(axis=(2, 3, 4), dtype=_ACC).astype(x.dtype)

    def make_backward():
        x_id = x.node_id
        shape = x.shape

        def backward(grad_out, accumulate):
            scaled = grad_out / n_vox
            accumulate(x_id, np.broadcast_to(scaled[:, :, None, None, None], shape))

        return backward

    return _finish(tape, "global_avg_pool", (x,), y, make_backward)


# ---------------------------------------------------------------------------
# Dense, activation, loss


def linear(x: Tensor, weight: Tensor, bias: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Affine map [N,F] @ [F,G] + [G]."""
    _require_tensors("linear", x=x, weight=weight, bias=bias)
    _require_same_dtype("linear", x, weight, bias)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValidationError(
            f"linear: expected 2-D input and weight, got {x.shape} and {weight.shape}"
        )
    if x.shape[1] != weight.shape[0]:
        raise ValidationError(
            f"linear: inner dimension mismatch between input {x.shape} and weight {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise ValidationError(
            f"linear: bias shape {bias.shape} does not match weight {weight.shape}"
        )
    st_dtype = x.dtype
    x64 = x.data.astype(_ACC, copy=False)
    w64 = weight.data.astype(_ACC, copy=False)
    y = (x64 @ w64 + bias.data.astype(_ACC, copy=False)[None, :]).astype(st_dtype)

    def make_backward():
        x_id, w_id, b_id = x.node_id, weight.node_id, bias.node_id

        def backward(grad_out, accumulate):
            g64 = grad_out.astype(_ACC, copy=False)
            if x_id is not None:
                accumulate(x_id, (g64 @ w64.T).astype(st_dtype))
            if w_id is not None:
                accumulate(w_id, (x64.T @ g64).astype(st_dtype))
            if b_id is not None:
                accumulate(b_id, g64.sum(axis=0).astype(st_dtype))

        return backward

    return _finish(tape, "linear", (x, weight, bias), y, make_backward)


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _require_tensors("relu", x=x)
    y = np.maximum(x.data, 0)

    def make_backward():
        x_id = x.node_id
        mask = x.data > 0

        def backward(grad_out, accumulate):
            accumulate(x_id, grad_out * mask)

        return backward

    return _finish(tape, "relu", (x,), y, make_backward)


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _require_tensors("add", a=a, b=b)
    _require_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ValidationError(f"add: shape mismatch {a.shape} vs {b.shape}")
    y = a.data + b.data

    def make_backward():
        a_id, b_id = a.node_id, b.node_id

        def backward(grad_out, accumulate):
            accumulate(a_id, grad_out)
            accumulate(b_id, grad_out)

        return backward

    return _finish(tape, "add", (a, b), y, make_backward)


def softmax(x: Tensor, axis: int, tape: Optional[Tape] = None) -> Tensor:
    """Softmax along ``axis``; output is strictly positive and sums to 1."""
    _require_tensors("softmax", x=x)
    ndim = x.data.ndim
    if not isinstance(axis, (int, np.integer)) or not -ndim <= axis < ndim:
        raise ValidationError(f"softmax: axis {axis!r} invalid for shape {x.shape}")
    axis = axis % ndim
    shifted = x.data.astype(_ACC, copy=False)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y64 = e / e.sum(axis=axis, keepdims=True)
    y = y64.astype(x.dtype)

    def make_backward():
        x_id = x.node_id

        def backward(grad_out, accumulate):
            g64 = grad_out.astype(_ACC, copy=False)
            inner = (g64 * y64).sum(axis=axis, keepdims=True)
            accumulate(x_id, (y64 * (g64 - inner)).astype(x.dtype))

        return backward

    return _finish(tape, "softmax", (x,), y, make_backward)


def mse_loss(pred: Tensor, target: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean squared error over all elements, as a scalar tensor."""
    _require_tensors("mse_loss", pred=pred, target=target)
    _require_same_dtype("mse_loss", pred, target)
    if pred.shape != target.shape:
        raise ValidationError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data.astype(_ACC, copy=False) - target.data.astype(_ACC, copy=False)
    loss = np.asarray((diff * diff).mean(), dtype=pred.dtype)

    def make_backward():
        p_id, t_id = pred.node_id, target.node_id
        scale = 2.0 / diff.size

        def backward(grad_out, accumulate):
            d = (float(grad_out) * scale) * diff
            if p_id is not None:
                accumulate(p_id, d.astype(pred.dtype))
            if t_id is not None:
                accumulate(t_id, (-d).astype(pred.dtype))

        return backward

    return _finish(tape, "mse_loss", (pred, target), loss, make_backward)


# ---------------------------------------------------------------------------
# Head plumbing


def stack(tensors: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    if not tensors:
        raise ValidationError("stack: need at least one tensor")
    for i, t in enumerate(tensors):
        _require_tensors("stack", **{f"tensors[{i}]": t})
    _require_same_dtype("stack", *tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) > 1:
        raise ValidationError(f"stack: mismatched shapes {sorted(shapes)}")
    y = np.stack([t.data for t in tensors], axis=0)

    def make_backward():
        ids = [t.node_id for t in tensors]

        def backward(grad_out, accumulate):
            for i, node_id in enumerate(ids):
                if node_id is not None:
                    accumulate(node_id, grad_out[i])

        return backward

    return _finish(tape, "stack", tuple(tensors), y, make_backward)


def mix_heads(heads: Tensor, weights: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Per-measurement convex mix of head outputs.

    heads [H,N,M] and simplex weights [H,M] (each column already sums
    to 1) produce out[n,m] = sum_h weights[h,m] * heads[h,n,m].
    """
    _require_tensors("mix_heads", heads=heads, weights=weights)
    _require_same_dtype("mix_heads", heads, weights)
    if heads.data.ndim != 3 or weights.data.ndim != 2:
        raise ValidationError(
            f"mix_heads: expected heads [H,N,M] and weights [H,M], got {heads.shape} and {weights.shape}"
        )
    if heads.shape[0] != weights.shape[0] or heads.shape[2] != weights.shape[1]:
        raise ValidationError(
            f"mix_heads: heads {heads.shape} incompatible with weights {weights.shape}"
        )
    h64 = heads.data.astype(_ACC, copy=False)
    w64 = weights.data.astype(_ACC, copy=False)
    y = np.einsum("hm,hnm->nm", w64, h64).astype(heads.dtype)

    def make_backward():
        h_id, w_id = heads.node_id, weights.node_id

        def backward(grad_out, accumulate):
            g64 = grad_out.astype(_ACC, copy=False)
            if h_id is not None:
                accumulate(h_id, (w64[:, None, :] * g64).astype(heads.dtype))
            if w_id is not None:
                accumulate(w_id, np.einsum("hnm,nm->hm", h64, g64).astype(heads.dtype))

        return backward

    return _finish(tape, "mix_heads", (heads, weights), y, make_backward)
