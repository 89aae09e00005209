"""Geometric window controller: quadrant direction matrix, window movement,
object-size estimation and window-size adaptation.

Everything here is a pure function of a 28x28 presence heatmap and the
current search window; no model state is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

ROI_SIZE = 28
_QUAD = ROI_SIZE // 2          # 14
_QUAD_CELLS = _QUAD * _QUAD    # 196
_EPS = 1e-9

GROW_THRESHOLD = 0.75
SHRINK_THRESHOLD = 0.25
GROW_FACTOR = math.sqrt(2.0)
SHRINK_FACTOR = math.sqrt(2.0) / 2.0
BIN_THRESHOLD = 0.5
ACTIVITY_THRESHOLD = 2.0
MIN_WINDOW = 16.0


@dataclass(frozen=True)
class Window:
    """Search region over the frame: center and extent, in pixels.

    The window may extend past the frame borders; cropping pads by edge
    replication.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ParameterError(f"window extent must be positive, got {self.w}x{self.h}")


@dataclass(frozen=True)
class SizeEstimate:
    """Object size read off a binarized heatmap, in window pixels."""

    obj_w: float
    obj_h: float
    mass: float      # sum of the raw heatmap, a confidence proxy
    lost: bool


def _check_roi(roi) -> np.ndarray:
    roi = np.asarray(roi, dtype=np.float64)
    if roi.shape != (ROI_SIZE, ROI_SIZE):
        raise ShapeError(f"expected ({ROI_SIZE},{ROI_SIZE}) heatmap, got {roi.shape}")
    return roi


def direction_matrix(roi) -> np.ndarray:
    """2x2 matrix of quadrant means of the heatmap.

    Sums use math.fsum, so each entry is the correctly rounded mean of its
    196 cells regardless of traversal order; mirroring the heatmap therefore
    permutes the entries exactly.
    """
    roi = _check_roi(roi)
    d = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            block = roi[i * _QUAD : (i + 1) * _QUAD, j * _QUAD : (j + 1) * _QUAD]
            d[i, j] = math.fsum(block.ravel()) / _QUAD_CELLS
    return d


def movement(d, window: Window,
             activity_threshold: float = ACTIVITY_THRESHOLD) -> tuple[float, float, bool]:
    """Window displacement (dx, dy) from a direction matrix, plus a lost flag.

    dx = lambda * (R - L) / (R + L + eps) with lambda = window.w / 4, where L
    and R are the left/right column sums of the direction matrix; dy works the
    same way on rows with mu = window.h / 4. When the total heatmap mass falls
    below `activity_threshold` the result is (0, 0) with lost set, and the
    caller is expected to hold position.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (2, 2):
        raise ShapeError(f"expected 2x2 direction matrix, got {d.shape}")
    mass = _QUAD_CELLS * (d[0, 0] + d[0, 1] + d[1, 0] + d[1, 1])
    if mass < activity_threshold:
        return 0.0, 0.0, True
    left = d[0, 0] + d[1, 0]
    right = d[0, 1] + d[1, 1]
    top = d[0, 0] + d[0, 1]
    bottom = d[1, 0] + d[1, 1]
    lam = window.w / 4.0
    mu = window.h / 4.0
    dx = lam * (right - left) / (right + left + _EPS)
    dy = mu * (bottom - top) / (top + bottom + _EPS)
    return dx, dy, False


def estimate_object_size(roi, window: Window, bin_threshold: float = BIN_THRESHOLD,
                         activity_threshold: float = ACTIVITY_THRESHOLD) -> SizeEstimate:
    """Approximate the object extent from the binarized heatmap.

    Cells strictly above `bin_threshold` count as object. The tallest column
    (largest per-column count) gives the height fraction, the widest row the
    width fraction; both scale the window extent.
    """
    if not (0.0 < bin_threshold < 1.0):
        raise ParameterError(f"bin_threshold must lie in (0,1), got {bin_threshold}")
    roi = _check_roi(roi)
    mask = roi > bin_threshold
    col_max = int(mask.sum(axis=0).max())
    row_max = int(mask.sum(axis=1).max())
    mass = float(roi.sum())
    return SizeEstimate(
        obj_w=row_max / ROI_SIZE * window.w,
        obj_h=col_max / ROI_SIZE * window.h,
        mass=mass,
        lost=mass < activity_threshold,
    )


def update_window_size(window: Window, est: SizeEstimate,
                       grow_threshold: float = GROW_THRESHOLD,
                       shrink_threshold: float = SHRINK_THRESHOLD,
                       grow_factor: float = GROW_FACTOR,
                       shrink_factor: float = SHRINK_FACTOR,
                       min_size: float = MIN_WINDOW,
                       max_w: float | None = None,
                       max_h: float | None = None) -> Window:
    """Rescale each window axis independently from the estimated object size.

    An axis whose object/window ratio exceeds `grow_threshold` is multiplied
    by `grow_factor`; below `shrink_threshold` it shrinks by `shrink_factor`;
    in between it is left alone. The center never moves.
    """
    w = _rescale_axis(window.w, est.obj_w, grow_threshold, shrink_threshold,
                      grow_factor, shrink_factor, min_size, max_w)
    h = _rescale_axis(window.h, est.obj_h, grow_threshold, shrink_threshold,
                      grow_factor, shrink_factor, min_size, max_h)
    return Window(window.cx, window.cy, w, h)


def _rescale_axis(extent, obj, grow_thr, shrink_thr, grow_f, shrink_f, lo, hi):
    ratio = obj / extent
    if ratio > grow_thr:
        extent = extent * grow_f
    elif ratio < shrink_thr:
        extent = extent * shrink_f
    extent = max(extent, lo)
    if hi is not None:
        extent = min(extent, hi)
    return extent


def step(window: Window, roi, config,
         max_w: float | None = None, max_h: float | None = None
         ) -> tuple[Window, SizeEstimate, bool]:
    """One control update: move the window toward the heatmap mass, then
    adapt its size to the estimated object extent.

    On loss of the target (total mass under the activity threshold) the
    window is returned unchanged -- hold position until mass comes back.
    `config` supplies the thresholds and factors (see tracker.TrackerConfig).
    """
    d = direction_matrix(roi)
    dx, dy, lost = movement(d, window, config.activity_threshold)
    est = estimate_object_size(roi, window, config.bin_threshold,
                               config.activity_threshold)
    if lost:
        return window, est, True
    moved = Window(window.cx + dx, window.cy + dy, window.w, window.h)
    resized = update_window_size(
        moved, est,
        grow_threshold=config.grow_threshold,
        shrink_threshold=config.shrink_threshold,
        grow_factor=config.grow_factor,
        shrink_factor=config.shrink_factor,
        min_size=config.min_window,
        max_w=max_w,
        max_h=max_h,
    )
    return resized, est, False
