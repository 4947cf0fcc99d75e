"""Differentiable operations over voxseg.tensor.Tensor.

Convolution kernels reduce in float64 and round once to float32 storage, so
sums are reproducible regardless of how the GEMM backend tiles its loops.
The 3x3x3 stride-1 convolution runs one GEMM per kernel offset against the
contiguous zero-padded volume and accumulates shifted windows of the result;
this avoids materializing im2col patch copies, which dominate runtime for
the small channel counts used here.  Interpolation is expressed as three
per-axis matrix products so forward and backward share one code path.
"""

import numpy as np
from scipy.linalg.blas import dgemm
from scipy.special import expit

from .errors import ContractViolation, NumericDivergence
from .tensor import Tensor, as_tensor

BCE_EPS = 1e-7
_upscale_matrix_cache = {}


def _require(cond, msg):
    if not cond:
        raise ContractViolation(msg)


def _check_finite(arr, op_name):
    if not np.isfinite(arr).all():
        raise NumericDivergence(f"non-finite values produced by {op_name}")


# ---------------------------------------------------------------------------
# elementwise / reduction primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require(a.shape == b.shape or a.size == 1 or b.size == 1,
             "add requires equal shapes or a scalar operand")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g if a.shape == out.shape else g.sum())
        if b.requires_grad:
            b.accumulate_grad(g if b.shape == out.shape else g.sum())

    return Tensor._from_op(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require(a.shape == b.shape or a.size == 1 or b.size == 1,
             "mul requires equal shapes or a scalar operand")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            a.accumulate_grad(ga if a.shape == out.shape else ga.sum())
        if b.requires_grad:
            gb = g * a.data
            b.accumulate_grad(gb if b.shape == out.shape else gb.sum())

    return Tensor._from_op(out, (a, b), backward)


def log(x):
    x = as_tensor(x)
    out = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g / x.data)

    return Tensor._from_op(out, (x,), backward)


def clamp(x, lo, hi):
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(inside, g, np.float32(0.0)))

    return Tensor._from_op(out, (x,), backward)


def tsum(x):
    x = as_tensor(x)
    out = np.float32(x.data.sum(dtype=np.float64))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(np.float32(g), x.shape))

    return Tensor._from_op(out, (x,), backward)


def mean(x):
    x = as_tensor(x)
    out = np.float32(x.data.mean(dtype=np.float64))
    inv = np.float32(1.0 / x.size)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(np.float32(g) * inv, x.shape))

    return Tensor._from_op(out, (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return Tensor._from_op(out, (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * out * (1.0 - out))

    return Tensor._from_op(out, (x,), backward)


def leaky_relu(x, alpha=0.01):
    x = as_tensor(x)
    _require(0.0 < alpha < 1.0, "leaky_relu alpha must lie in (0, 1)")
    pos = x.data >= 0  # sub-gradient at exactly 0 follows the positive branch
    a32 = np.float32(alpha)
    out = np.where(pos, x.data, a32 * x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, a32 * g))

    return Tensor._from_op(out, (x,), backward)


def concat_channels(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require(a.data.ndim == b.data.ndim and a.data.ndim >= 2,
             "concat_channels requires equal-rank inputs with a channel axis")
    _require(a.shape[0] == b.shape[0] and a.shape[2:] == b.shape[2:],
             "concat_channels requires matching batch and spatial extents")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:])

    return Tensor._from_op(out, (a, b), backward)


def bce_loss(pred, target):
    """Mean voxelwise binary cross entropy, probabilities clamped to
    [BCE_EPS, 1-BCE_EPS] before the logs."""
    pred, target = as_tensor(pred), as_tensor(target)
    _require(pred.shape == target.shape, "bce_loss requires equal shapes")
    t = target.data
    _require(bool(((t == 0) | (t == 1)).all()), "bce_loss target must be binary")
    # clamp in float64: the bounds are finer than float32 resolution near 1
    p64 = np.clip(pred.data.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)
    t64 = t.astype(np.float64)
    val = -(t64 * np.log(p64) + (1.0 - t64) * np.log1p(-p64)).mean()
    out = np.float32(val)

    def backward(g):
        if pred.requires_grad:
            gp = (p64 - t64) / (p64 * (1.0 - p64)) / p64.size
            gp *= np.float64(g)
            pred.accumulate_grad(np.where(inside, gp, 0.0).astype(np.float32))

    return Tensor._from_op(out, (pred, target), backward)


# ---------------------------------------------------------------------------
# convolution


# kernel offsets in iteration order; flat shifts assume a one-voxel border
_OFFSETS = [(kd, kh, kw) for kd in range(3) for kh in range(3) for kw in range(3)]


def _pad_cl(x):
    """Zero-pad one voxel per side; channels-last float64 staging."""
    n, c, d, h, w = x.shape
    buf = np.zeros((n, d + 2, h + 2, w + 2, c))
    buf[:, 1:-1, 1:-1, 1:-1, :] = np.moveaxis(x, 1, -1)
    return buf


def _weight_offsets(w):
    w64 = w.astype(np.float64)
    return [np.ascontiguousarray(w64[:, :, kd, kh, kw]) for kd, kh, kw in _OFFSETS]


def _flat_shifts(ph, pw):
    return [(kd - 1) * ph * pw + (kh - 1) * pw + (kw - 1) for kd, kh, kw in _OFFSETS]


def _accum_gemm(a, b, c):
    """c += b @ a on C-order float64 arrays, in place via BLAS."""
    dgemm(1.0, a.T, b.T, 1.0, c.T, trans_a=1, overwrite_c=1)


def _conv_fwd(x, w, b, stride):
    n, c, d, h, wd = x.shape
    f = w.shape[0]
    xp = _pad_cl(x)
    ws = _weight_offsets(w)
    pd, ph, pw = d + 2, h + 2, wd + 2
    if stride == 1:
        # one GEMM per kernel offset, accumulated straight into a padded
        # output staging; flat-index shifts equal spatial shifts except at
        # block borders, which only ever touch the cropped padding ring
        M = n * pd * ph * pw
        x2 = xp.reshape(M, c)
        o2 = np.zeros((M, f))
        for wo, s in zip(ws, _flat_shifts(ph, pw)):
            a0, a1 = max(0, -s), M - max(0, s)
            _accum_gemm(wo, x2[a0 + s:a1 + s], o2[a0:a1])
        o2 += b.astype(np.float64)
        out = o2.reshape(n, pd, ph, pw, f)[:, 1:-1, 1:-1, 1:-1, :]
        cache = x2
    else:
        od, oh, ow = (d - 1) // 2 + 1, (h - 1) // 2 + 1, (wd - 1) // 2 + 1
        M = n * od * oh * ow
        o2 = np.zeros((M, f))
        for wo, (kd, kh, kw) in zip(ws, _OFFSETS):
            p2 = np.ascontiguousarray(
                xp[:, kd:kd + 2 * od - 1:2, kh:kh + 2 * oh - 1:2, kw:kw + 2 * ow - 1:2, :]
            ).reshape(M, c)
            _accum_gemm(wo, p2, o2)
        o2 += b.astype(np.float64)
        out = o2.reshape(n, od, oh, ow, f)
        cache = xp
    return np.ascontiguousarray(np.moveaxis(out, -1, 1), dtype=np.float32), cache


def _embed_grad_cl(g, stride):
    """Output grad as flat channels-last float64 rows, zero-bordered for stride 1."""
    n, f, d, h, w = g.shape
    if stride == 1:
        g2 = np.zeros((n, d + 2, h + 2, w + 2, f))
        g2[:, 1:-1, 1:-1, 1:-1, :] = np.moveaxis(g, 1, -1)
        return g2.reshape(-1, f)
    return np.ascontiguousarray(np.moveaxis(g, 1, -1), dtype=np.float64).reshape(-1, f)


def _conv_grad_input(w, g2, in_shape, out_shape, n, stride):
    f, c = w.shape[:2]
    d, h, wd = in_shape
    pd, ph, pw = d + 2, h + 2, wd + 2
    ws = _weight_offsets(w)
    if stride == 1:
        # mirror of the forward shifts; g2's zero border absorbs wrap terms
        M = g2.shape[0]
        gi2 = np.zeros((M, c))
        for wo, s in zip(ws, _flat_shifts(ph, pw)):
            b0, b1 = max(0, s), M - max(0, -s)
            dgemm(1.0, wo.T, g2[b0 - s:b1 - s].T, 1.0, gi2[b0:b1].T, overwrite_c=1)
        gi = gi2.reshape(n, pd, ph, pw, c)[:, 1:-1, 1:-1, 1:-1, :]
    else:
        od, oh, ow = out_shape
        g5 = g2.reshape(n, od, oh, ow, f)
        gip = np.zeros((n, pd, ph, pw, c))
        for wo, (kd, kh, kw) in zip(ws, _OFFSETS):
            t = np.matmul(g5, wo)
            gip[:, kd:kd + 2 * od - 1:2, kh:kh + 2 * oh - 1:2, kw:kw + 2 * ow - 1:2, :] += t
        gi = gip[:, 1:-1, 1:-1, 1:-1, :]
    return np.ascontiguousarray(np.moveaxis(gi, -1, 1), dtype=np.float32)


def _conv_grad_weight(cache, g2, out_shape, n, f, c, ph, pw, stride):
    gw = np.empty((f, c, 3, 3, 3))
    if stride == 1:
        x2 = cache
        M = x2.shape[0]
        for (kd, kh, kw), s in zip(_OFFSETS, _flat_shifts(ph, pw)):
            a0, a1 = max(0, -s), M - max(0, s)
            gw[:, :, kd, kh, kw] = np.matmul(g2[a0:a1].T, x2[a0 + s:a1 + s])
    else:
        od, oh, ow = out_shape
        xp = cache
        for kd, kh, kw in _OFFSETS:
            p2 = np.ascontiguousarray(
                xp[:, kd:kd + 2 * od - 1:2, kh:kh + 2 * oh - 1:2, kw:kw + 2 * ow - 1:2, :]
            ).reshape(-1, c)
            gw[:, :, kd, kh, kw] = np.matmul(g2.T, p2)
    gb = g2.sum(axis=0)
    return gw.astype(np.float32), gb.astype(np.float32)


def conv3d(x, weight, bias, stride=1, padding=1):
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require(x.data.ndim == 5, "conv3d input must be [N,C,D,H,W]")
    _require(weight.data.ndim == 5 and weight.shape[2:] == (3, 3, 3),
             "conv3d kernels must be 3x3x3")
    _require(weight.shape[1] == x.shape[1],
             f"conv3d channel mismatch: input {x.shape[1]}, weight {weight.shape[1]}")
    _require(bias.shape == (weight.shape[0],), "conv3d bias must have one value per filter")
    _require(stride in (1, 2), "conv3d stride must be 1 or 2")
    _require(padding == 1, "conv3d padding is fixed at 1")

    with np.errstate(over="ignore", invalid="ignore"):
        out, cache = _conv_fwd(x.data, weight.data, bias.data, stride)
    _check_finite(out, "conv3d")
    n = x.shape[0]
    f, c = weight.shape[:2]
    in_shape = x.shape[2:]
    out_shape = out.shape[2:]
    ph, pw = in_shape[1] + 2, in_shape[2] + 2

    def backward(g):
        g2 = _embed_grad_cl(g, stride)
        if x.requires_grad:
            x.accumulate_grad(
                _conv_grad_input(weight.data, g2, in_shape, out_shape, n, stride))
        if weight.requires_grad or bias.requires_grad:
            gw, gb = _conv_grad_weight(cache, g2, out_shape, n, f, c, ph, pw, stride)
            if weight.requires_grad:
                weight.accumulate_grad(gw)
            if bias.requires_grad:
                bias.accumulate_grad(gb)

    return Tensor._from_op(out, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# trilinear upscaling


def _axis_matrix(n_in, factor):
    key = (n_in, factor)
    m = _upscale_matrix_cache.get(key)
    if m is None:
        n_out = n_in * factor
        m = np.zeros((n_out, n_in), np.float64)
        for i in range(n_out):
            s = i * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
            i0 = int(np.floor(s))
            i1 = min(i0 + 1, n_in - 1)
            f = s - i0
            m[i, i0] += 1.0 - f
            m[i, i1] += f
        _upscale_matrix_cache[key] = m
    return m


def _apply_axis(arr, m, axis):
    moved = np.moveaxis(arr, axis, -1)
    return np.moveaxis(moved @ m.T, -1, axis)


def trilinear_upscale(x, factor):
    """Separable align-corners linear interpolation by an integer factor."""
    x = as_tensor(x)
    _require(x.data.ndim == 5, "trilinear_upscale input must be [N,C,D,H,W]")
    _require(factor in (1, 2, 4, 16), "upscale factor must be one of {1, 2, 4, 16}")
    if factor == 1:
        out = x.data

        def backward_id(g):
            if x.requires_grad:
                x.accumulate_grad(g)

        return Tensor._from_op(out.copy(), (x,), backward_id)

    mats = [_axis_matrix(x.shape[2 + a], factor) for a in range(3)]
    y = x.data.astype(np.float64)
    for a, m in enumerate(mats):
        y = _apply_axis(y, m, 2 + a)
    out = y.astype(np.float32)

    def backward(g):
        if x.requires_grad:
            gy = g.astype(np.float64)
            for a, m in enumerate(mats):
                gy = _apply_axis(gy, m.T, 2 + a)
            x.accumulate_grad(gy.astype(np.float32))

    return Tensor._from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm(x, gamma, beta, running_mean, running_var, mode,
               momentum=0.9, eps=1e-5):
    """Per-channel normalization over batch and spatial axes.

    Train mode uses batch statistics (population variance) and updates the
    running buffers in place: r <- momentum * r + (1 - momentum) * batch.
    Infer mode normalizes by the stored running statistics; gradients still
    flow through input, gamma and beta in both modes.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _require(mode in ("train", "infer"), "batch_norm mode must be 'train' or 'infer'")
    _require(x.data.ndim >= 2, "batch_norm input must have a channel axis")
    c = x.shape[1]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             "batch_norm gamma/beta must be per-channel vectors")
    axes = (0,) + tuple(range(2, x.data.ndim))
    m = x.size // c

    if mode == "train":
        _require(m >= 2, "batch_norm train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.astype(np.float64).var(axis=axes)
        running_mean[:] = momentum * running_mean.astype(np.float64) + (1.0 - momentum) * mu
        running_var[:] = momentum * running_var.astype(np.float64) + (1.0 - momentum) * var
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)

    invstd = 1.0 / np.sqrt(var + eps)
    shape = (1, c) + (1,) * (x.data.ndim - 2)
    invstd32 = invstd.astype(np.float32).reshape(shape)
    xhat = (x.data - mu.astype(np.float32).reshape(shape)) * invstd32
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes, dtype=np.float64).astype(np.float32))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes, dtype=np.float64).astype(np.float32))
        if x.requires_grad:
            gg = g * gamma.data.reshape(shape)
            if mode == "train":
                mean_gg = gg.mean(axis=axes, dtype=np.float64).astype(np.float32).reshape(shape)
                mean_gx = (gg * xhat).mean(axis=axes, dtype=np.float64).astype(np.float32).reshape(shape)
                gx = invstd32 * (gg - mean_gg - xhat * mean_gx)
            else:
                gx = invstd32 * gg
            x.accumulate_grad(gx)

    return Tensor._from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# discriminator head pieces


def global_avg_pool(x):
    """Mean over the spatial axes: [N,C,D,H,W] -> [N,C]."""
    x = as_tensor(x)
    _require(x.data.ndim == 5, "global_avg_pool input must be [N,C,D,H,W]")
    spatial = x.data.shape[2:]
    count = int(np.prod(spatial))
    out = x.data.mean(axis=(2, 3, 4), dtype=np.float64).astype(np.float32)

    def backward(g):
        if x.requires_grad:
            gx = (g / np.float32(count))[:, :, None, None, None]
            x.accumulate_grad(np.broadcast_to(gx, x.shape))

    return Tensor._from_op(out, (x,), backward)


def linear(x, weight, bias):
    """Affine map [N,K] @ [K,M] + [M]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require(x.data.ndim == 2 and weight.data.ndim == 2, "linear expects 2-D input and weight")
    _require(x.shape[1] == weight.shape[0], "linear shape mismatch")
    _require(bias.shape == (weight.shape[1],), "linear bias mismatch")
    out = (x.data.astype(np.float64) @ weight.data.astype(np.float64)
           + bias.data.astype(np.float64)).astype(np.float32)

    def backward(g):
        g64 = g.astype(np.float64)
        if x.requires_grad:
            x.accumulate_grad(g64 @ weight.data.astype(np.float64).T)
        if weight.requires_grad:
            weight.accumulate_grad(x.data.astype(np.float64).T @ g64)
        if bias.requires_grad:
            bias.accumulate_grad(g64.sum(axis=0))

    return Tensor._from_op(out, (x, weight, bias), backward)
