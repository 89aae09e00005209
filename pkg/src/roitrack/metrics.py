"""Evaluation: ground-truth rasterization onto the 28x28 grid, the heatmap
overlap score, overlap-to-IoU conversion, and per-sequence aggregation.

The score for a frame compares two 28x28 matrices living in the same search
window: the rasterized ground-truth box P (binary) and the predicted
presence heatmap P_hat (values in [0, 1]):

    score = (P . P_hat) / (P . 1 - P . P_hat + P_hat . 1)

with "." the elementwise dot product. For binary P_hat this is exactly set
intersection-over-union; 0/0 (both matrices empty) is defined as 0 and
counted as a degenerate frame in reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import ROI_SIZE, Window
from .errors import ParameterError, ShapeError

Array = np.ndarray


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner plus extent, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ParameterError(f"box extent must be non-negative, got {self.w}x{self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h


def rasterize_gt(box: BBox, window: Window) -> Array:
    """Rasterize a box onto the window's 28x28 grid.

    The window is split into 28x28 equal cells; a cell is 1 exactly when the
    box covers at least half of its area. Boxes partly or fully outside the
    window simply cover fewer cells.
    """
    if window.w <= 0 or window.h <= 0:
        raise ParameterError(f"degenerate window {window.w}x{window.h}")
    left = window.cx - window.w / 2.0
    top = window.cy - window.h / 2.0
    cw = window.w / ROI_SIZE
    ch = window.h / ROI_SIZE
    xs = left + cw * np.arange(ROI_SIZE + 1)
    ys = top + ch * np.arange(ROI_SIZE + 1)
    fx = np.clip(np.minimum(box.x2, xs[1:]) - np.maximum(box.x, xs[:-1]), 0.0, None) / cw
    fy = np.clip(np.minimum(box.y2, ys[1:]) - np.maximum(box.y, ys[:-1]), 0.0, None) / ch
    cover = fy[:, None] * fx[None, :]
    return (cover >= 0.5).astype(np.float64)


def heatmap_iou(p: Array, p_hat: Array) -> float:
    """Overlap score between a binary truth matrix and a [0,1] heatmap.

    Coincides with set IoU when both arguments are binary. Returns 0 when
    both matrices are entirely empty.
    """
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != (ROI_SIZE, ROI_SIZE) or p_hat.shape != (ROI_SIZE, ROI_SIZE):
        raise ShapeError(f"expected ({ROI_SIZE},{ROI_SIZE}) matrices, got {p.shape}, {p_hat.shape}")
    tp = float(np.vdot(p, p_hat))
    p_sum = float(p.sum())
    p_hat_sum = float(p_hat.sum())
    denom = p_sum - tp + p_hat_sum
    if denom <= 0.0:
        return 0.0
    return tp / denom


def overlap_to_iou(o: float) -> float:
    """Convert a mutual-overlap fraction to intersection-over-union, o/(2-o).

    Strictly increasing on [0, 1] with fixed points exactly at 0 and 1.
    """
    if not (0.0 <= o <= 1.0):
        raise ParameterError(f"overlap must lie in [0,1], got {o}")
    return o / (2.0 - o)


@dataclass
class SequenceScores:
    """Per-frame scores for one tracked sequence.

    `first_frame_index` is the index of the first scored frame (frame 0 is
    the initialization frame and is never scored). `degenerate` counts frames
    where both matrices were empty and the 0/0 := 0 rule applied.
    """

    name: str
    scores: Array
    first_frame_index: int = 1
    degenerate: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.scores)

    @property
    def mean(self) -> float:
        if len(self.scores) == 0:
            return float("nan")
        return float(np.mean(self.scores))


@dataclass
class ScoreReport:
    """Scores for one or more sequences plus dataset-level aggregates.

    The dataset mean is the mean of the per-sequence means (sequences with no
    scored frames are flagged and excluded from it).
    """

    sequences: list[SequenceScores] = field(default_factory=list)

    @property
    def total_frames(self) -> int:
        return sum(s.n_frames for s in self.sequences)

    @property
    def empty_sequences(self) -> int:
        return sum(1 for s in self.sequences if s.n_frames == 0)

    @property
    def degenerate_frames(self) -> int:
        return sum(s.degenerate for s in self.sequences)

    @property
    def dataset_mean(self) -> float:
        means = [s.mean for s in self.sequences if s.n_frames > 0]
        if not means:
            return float("nan")
        return float(np.mean(means))


def score_sequence(gt: list, preds: list, name: str = "sequence",
                   first_frame_index: int = 1) -> ScoreReport:
    """Score one sequence: per-frame heatmap_iou plus the mean."""
    if len(gt) != len(preds):
        raise ParameterError(f"length mismatch: {len(gt)} truth vs {len(preds)} predicted")
    if len(gt) == 0:
        raise ParameterError("need at least one frame to score")
    scores = np.empty(len(gt))
    degenerate = 0
    for i, (p, p_hat) in enumerate(zip(gt, preds)):
        scores[i] = heatmap_iou(p, p_hat)
        if float(np.sum(p)) == 0.0 and float(np.sum(p_hat)) == 0.0:
            degenerate += 1
    seq = SequenceScores(name=name, scores=scores,
                         first_frame_index=first_frame_index, degenerate=degenerate)
    return ScoreReport(sequences=[seq])


def combine_reports(reports) -> ScoreReport:
    """Merge per-sequence reports into one dataset report."""
    merged = ScoreReport()
    for r in reports:
        merged.sequences.extend(r.sequences)
    return merged
