"""Dense float64 layer kernel: convolution, pooling, activations, MSE loss,
SGD, and a finite-difference gradient checker.

Feature maps use the (channels, height, width) layout. Every function is
pure: arguments are never mutated and each call returns fresh arrays. All
arithmetic is 64-bit; there is no autodiff graph -- each layer exposes an
explicit backward function instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ParameterError, ShapeError, TrainingError

Array = np.ndarray

# Smallest/largest values sigmoid may emit, keeping the output inside the
# open interval (0, 1) even when the input saturates in float64.
_SIG_LO = 1e-300
_SIG_HI = float(np.nextafter(1.0, 0.0))


def _f64(x) -> Array:
    return np.ascontiguousarray(x, dtype=np.float64)


def conv2d_out_shape(in_hw, kernel_hw, stride: int, padding: int) -> tuple[int, int]:
    """Output (height, width) of a 2-D cross-correlation."""
    h = (in_hw[0] + 2 * padding - kernel_hw[0]) // stride + 1
    w = (in_hw[1] + 2 * padding - kernel_hw[1]) // stride + 1
    return h, w


def _check_conv_args(x: Array, kernels: Array, stride: int, padding: int) -> None:
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(
            f"conv2d expects input (C,H,W) and kernels (K,C,kh,kw), "
            f"got {x.shape} and {kernels.shape}"
        )
    if kernels.shape[1] != x.shape[0]:
        raise ShapeError(
            f"kernel channels {kernels.shape[1]} != input channels {x.shape[0]}"
        )
    if stride < 1 or int(stride) != stride:
        raise ParameterError(f"stride must be a positive integer, got {stride}")
    if padding < 0 or int(padding) != padding:
        raise ParameterError(f"padding must be a non-negative integer, got {padding}")
    kh, kw = kernels.shape[2], kernels.shape[3]
    if kh > x.shape[1] + 2 * padding or kw > x.shape[2] + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{x.shape[1] + 2 * padding}x{x.shape[2] + 2 * padding}"
        )


def _im2col(x: Array, kh: int, kw: int, stride: int, padding: int):
    """Unfold (C,H,W) into a (C*kh*kw, out_h*out_w) column matrix."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    c, hp, wp = x.shape
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    s0, s1, s2 = x.strides
    windows = as_strided(
        x,
        shape=(c, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, stride * s1, stride * s2),
    )
    cols = windows.reshape(c * kh * kw, out_h * out_w)  # copies
    return cols, out_h, out_w


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: int = 0) -> Array:
    """Cross-correlate (C,H,W) input with (K,C,kh,kw) kernels plus bias.

    Returns a (K, out_h, out_w) map where
    out_h = floor((H + 2*padding - kh) / stride) + 1 and likewise for width.
    No kernel flip is applied (cross-correlation convention).
    """
    x, kernels, bias = _f64(x), _f64(kernels), _f64(bias)
    _check_conv_args(x, kernels, stride, padding)
    k = kernels.shape[0]
    if bias.shape != (k,):
        raise ShapeError(f"bias shape {bias.shape} != ({k},)")
    cols, out_h, out_w = _im2col(x, kernels.shape[2], kernels.shape[3], stride, padding)
    out = kernels.reshape(k, -1) @ cols + bias[:, None]
    return out.reshape(k, out_h, out_w)


def conv2d_backward(x, kernels, upstream, stride: int = 1, padding: int = 0):
    """Gradients of conv2d_forward w.r.t. input, kernels and bias.

    `upstream` must match the forward output shape exactly.
    """
    x, kernels, upstream = _f64(x), _f64(kernels), _f64(upstream)
    _check_conv_args(x, kernels, stride, padding)
    k, _, kh, kw = kernels.shape
    out_h, out_w = conv2d_out_shape(x.shape[1:], (kh, kw), stride, padding)
    if upstream.shape != (k, out_h, out_w):
        raise ShapeError(
            f"upstream shape {upstream.shape} != forward output ({k},{out_h},{out_w})"
        )
    cols, _, _ = _im2col(x, kh, kw, stride, padding)
    dy = upstream.reshape(k, -1)
    dkernels = (dy @ cols.T).reshape(kernels.shape)
    dbias = dy.sum(axis=1)
    dcols = kernels.reshape(k, -1).T @ dy
    dx = _col2im(dcols, x.shape, kh, kw, stride, padding, out_h, out_w)
    return dx, dkernels, dbias


def _col2im(dcols, x_shape, kh, kw, stride, padding, out_h, out_w) -> Array:
    c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    buf = np.zeros((c, hp, wp))
    d = dcols.reshape(c, kh, kw, out_h, out_w)
    for a in range(kh):
        for b in range(kw):
            buf[:, a : a + stride * out_h : stride, b : b + stride * out_w : stride] += d[:, a, b]
    if padding:
        return buf[:, padding : padding + h, padding : padding + w].copy()
    return buf


def avg_pool(x, kernel: int, stride: int) -> Array:
    """Average-pool a 2-D map; each output cell is the mean of its
    kernel x kernel window."""
    x = _f64(x)
    if x.ndim != 2:
        raise ShapeError(f"avg_pool expects a 2-D map, got shape {x.shape}")
    if kernel < 1 or stride < 1:
        raise ParameterError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    h, w = x.shape
    if kernel > h or kernel > w:
        raise ParameterError(f"kernel {kernel} larger than input {h}x{w}")
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    s0, s1 = x.strides
    windows = as_strided(
        x,
        shape=(out_h, out_w, kernel, kernel),
        strides=(stride * s0, stride * s1, s0, s1),
    )
    return windows.sum(axis=(2, 3)) / float(kernel * kernel)


def avg_pool_backward(x_shape, upstream, kernel: int, stride: int) -> Array:
    """Gradient of avg_pool w.r.t. its input (overlapping windows add)."""
    upstream = _f64(upstream)
    if kernel < 1 or stride < 1:
        raise ParameterError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    h, w = x_shape
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    if upstream.shape != (out_h, out_w):
        raise ShapeError(f"upstream shape {upstream.shape} != ({out_h},{out_w})")
    dx = np.zeros((h, w))
    share = upstream / float(kernel * kernel)
    for a in range(kernel):
        for b in range(kernel):
            dx[a : a + stride * out_h : stride, b : b + stride * out_w : stride] += share
    return dx


def sigmoid(x) -> Array:
    """Elementwise 1/(1+exp(-x)), clamped to stay strictly inside (0, 1)."""
    x = _f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, _SIG_LO, _SIG_HI, out=out)
    return out


def sigmoid_backward(out, upstream) -> Array:
    """Gradient through sigmoid given the forward *output*."""
    out, upstream = _f64(out), _f64(upstream)
    if out.shape != upstream.shape:
        raise ShapeError(f"shape mismatch {out.shape} vs {upstream.shape}")
    return upstream * out * (1.0 - out)


def relu(x) -> Array:
    """Elementwise max(0, x)."""
    return np.maximum(_f64(x), 0.0)


def relu_backward(x, upstream) -> Array:
    """Gradient through relu; the subgradient at exactly 0 is 0."""
    x, upstream = _f64(x), _f64(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {upstream.shape}")
    return upstream * (x > 0)


def mse_loss(pred, target) -> tuple[float, Array]:
    """Mean squared error and its gradient w.r.t. `pred`.

    loss = mean((pred - target)^2), grad = 2*(pred - target)/N.
    """
    pred, target = _f64(pred), _f64(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def sgd_step(params: dict, grads: dict, learning_rate: float) -> dict:
    """One plain gradient-descent step, p <- p - lr*g, returning new arrays."""
    if learning_rate < 0 or not np.isfinite(learning_rate):
        raise ParameterError(f"learning_rate must be finite and >= 0, got {learning_rate}")
    if params.keys() != grads.keys():
        missing = set(params) ^ set(grads)
        raise ShapeError(f"params/grads key mismatch: {sorted(missing)}")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for '{name}'")
        out[name] = p - learning_rate * g
    return out


@dataclass
class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    max_rel_err: float
    tolerance: float
    n_coords: int
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def grad_check(op_under_test, inputs, epsilon: float = 1e-5,
               tolerance: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Check an operation's analytic gradients against central differences.

    `op_under_test(*inputs)` must return `(output, grad_fn)` where
    `grad_fn(upstream)` yields one gradient array per input. The output is
    projected onto a fixed random direction so a scalar can be differenced;
    every input coordinate is perturbed by +/-epsilon. Failures never raise;
    they are recorded as report entries.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ParameterError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    inputs = [_f64(x) for x in inputs]
    out, grad_fn = op_under_test(*inputs)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(np.shape(out))
    analytic = [_f64(g) for g in grad_fn(v)]
    if len(analytic) != len(inputs):
        raise ShapeError(f"grad_fn returned {len(analytic)} grads for {len(inputs)} inputs")

    def scalar(args) -> float:
        return float(np.vdot(v, op_under_test(*args)[0]))

    max_rel = 0.0
    failures: list[str] = []
    n = 0
    for i, (xi, gi) in enumerate(zip(inputs, analytic)):
        if gi.shape != xi.shape:
            raise ShapeError(f"analytic grad {i} shape {gi.shape} != input shape {xi.shape}")
        work = xi.copy()
        flat = work.ravel()
        gflat = gi.ravel()
        args = list(inputs)
        args[i] = work
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            f_plus = scalar(args)
            flat[j] = orig - epsilon
            f_minus = scalar(args)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(gflat[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            n += 1
            if rel > max_rel:
                max_rel = rel
            if rel >= tolerance:
                failures.append(
                    f"input {i} coord {j}: analytic {a:.6e} vs numeric {numeric:.6e} "
                    f"(rel err {rel:.3e})"
                )
    return GradCheckReport(max_rel_err=max_rel, tolerance=tolerance,
                           n_coords=n, failures=failures)
