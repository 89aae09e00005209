"""Bilinear sampling helpers shared by the tracking pipeline and the model.

Images are (H, W, 3) float64 arrays in [0, 1]; feature maps are (C, H, W).
Sampling treats pixel j as a point at coordinate j + 0.5, and positions
outside the source are clamped to the border (edge replication).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ParameterError, ShapeError

Array = np.ndarray


def _axis_samples(in_len: int, out_len: int, left: float, span: float):
    """Per-output-pixel source indices and interpolation weights along one axis."""
    pos = left + (np.arange(out_len) + 0.5) * (span / out_len) - 0.5
    pos = np.clip(pos, 0.0, in_len - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_len - 1)
    return i0, i1, pos - i0


def crop_and_resize(frame: Array, window, out_size: int) -> Array:
    """Bilinearly sample the window region of a frame into an out_size square.

    The window is given by its center and extent in frame pixels and may
    stick out past the frame border; samples taken outside are replicated
    from the nearest edge pixel.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise ShapeError(f"expected (H,W,3) frame, got shape {frame.shape}")
    if out_size < 1:
        raise ParameterError(f"out_size must be >= 1, got {out_size}")
    if window.w <= 0 or window.h <= 0:
        raise ParameterError(f"window has non-positive extent {window.w}x{window.h}")
    h, w = frame.shape[:2]
    x0, x1, tx = _axis_samples(w, out_size, window.cx - window.w / 2.0, window.w)
    y0, y1, ty = _axis_samples(h, out_size, window.cy - window.h / 2.0, window.h)
    top = frame[y0]
    bot = frame[y1]
    tl, tr = top[:, x0], top[:, x1]
    bl, br = bot[:, x0], bot[:, x1]
    wx = tx[None, :, None]
    wy = ty[:, None, None]
    upper = (1.0 - wx) * tl + wx * tr
    lower = (1.0 - wx) * bl + wx * br
    return (1.0 - wy) * upper + wy * lower


def resize_hwc(img: Array, out_h: int, out_w: int) -> Array:
    """Bilinearly resize an (H, W, C) image to (out_h, out_w, C)."""
    img = np.asarray(img, dtype=np.float64)
    wy = _resize_weights(img.shape[0], out_h)
    wx = _resize_weights(img.shape[1], out_w)
    mid = np.einsum("oi,ijc->ojc", wy, img)
    return np.einsum("pj,ojc->opc", wx, mid)


@lru_cache(maxsize=64)
def _resize_weights(in_len: int, out_len: int) -> Array:
    """Dense (out_len, in_len) row-interpolation matrix for a full-span resize."""
    i0, i1, t = _axis_samples(in_len, out_len, 0.0, float(in_len))
    w = np.zeros((out_len, in_len))
    rows = np.arange(out_len)
    np.add.at(w, (rows, i0), 1.0 - t)
    np.add.at(w, (rows, i1), t)
    w.setflags(write=False)
    return w


def resize_chw(x: Array, out_h: int, out_w: int) -> Array:
    """Bilinearly resize a (C, H, W) feature map; linear in x, so it has an
    exact transpose gradient (see resize_chw_backward)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (C,H,W) map, got shape {x.shape}")
    wy = _resize_weights(x.shape[1], out_h)
    wx = _resize_weights(x.shape[2], out_w)
    mid = np.matmul(wy[None], x)           # (C, out_h, W)
    return np.matmul(mid, wx.T[None])      # (C, out_h, out_w)


def resize_chw_backward(in_shape, upstream: Array) -> Array:
    """Gradient of resize_chw w.r.t. its input."""
    upstream = np.asarray(upstream, dtype=np.float64)
    c, h, w = in_shape
    if upstream.ndim != 3 or upstream.shape[0] != c:
        raise ShapeError(f"upstream shape {upstream.shape} incompatible with {in_shape}")
    wy = _resize_weights(h, upstream.shape[1])
    wx = _resize_weights(w, upstream.shape[2])
    mid = np.matmul(wy.T[None], upstream)  # (C, H, out_w)
    return np.matmul(mid, wx[None])        # (C, H, W)
