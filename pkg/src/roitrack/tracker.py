"""Per-sequence tracking loop: crop the window, extract the heatmap, let the
controller move and resize the window, with optional template refresh every
n frames.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import controller
from .controller import SizeEstimate, Window
from .errors import ParameterError
from .imageops import crop_and_resize
from .metrics import BBox, ScoreReport, SequenceScores, rasterize_gt, score_sequence
from .model import (
    TEMPLATE_SIZE,
    ModelParams,
    TemplateFeatures,
    encode_template,
    extract_roi_matrix,
    select_branch,
)

Array = np.ndarray


@dataclass(frozen=True)
class TrackerConfig:
    """All tracking knobs with their stock values.

    `template_update_n` = 0 means the first-frame template is kept for the
    whole run; n > 0 re-encodes it from the predicted box every n frames.
    Window extents are clamped to [min_window, max_window_scale * frame edge].
    """

    grow_threshold: float = 0.75
    shrink_threshold: float = 0.25
    grow_factor: float = controller.GROW_FACTOR
    shrink_factor: float = controller.SHRINK_FACTOR
    bin_threshold: float = 0.5
    activity_threshold: float = 2.0
    template_update_n: int = 0
    branch_small: float = 64.0
    branch_mid: float = 128.0
    min_window: float = 16.0
    max_window_scale: float = 4.0

    def __post_init__(self):
        if not (0.0 < self.shrink_threshold < self.grow_threshold < 1.0):
            raise ParameterError(
                f"need 0 < shrink_threshold < grow_threshold < 1, got "
                f"{self.shrink_threshold}, {self.grow_threshold}"
            )
        if self.grow_factor <= 0 or self.shrink_factor <= 0:
            raise ParameterError("scale factors must be positive")
        if not (0.0 < self.bin_threshold < 1.0):
            raise ParameterError(f"bin_threshold must lie in (0,1), got {self.bin_threshold}")
        if self.template_update_n < 0:
            raise ParameterError(f"template_update_n must be >= 0, got {self.template_update_n}")
        if self.min_window <= 0 or self.max_window_scale <= 0:
            raise ParameterError("window bounds must be positive")
        if not (0.0 < self.branch_small < self.branch_mid):
            raise ParameterError("need 0 < branch_small < branch_mid")

    @classmethod
    def from_mapping(cls, kv: dict) -> "TrackerConfig":
        """Build a config from string key=value pairs; unknown keys fail."""
        valid = {f.name for f in fields(cls)}
        parsed = {}
        for key, raw in kv.items():
            if key not in valid:
                raise ParameterError(f"unknown config key {key!r}")
            parsed[key] = int(raw) if key == "template_update_n" else float(raw)
        return cls(**parsed)


@dataclass
class TrackerState:
    """Mutable-per-frame tracker state; advance it with track_frame."""

    window: Window
    template_feats: TemplateFeatures | None
    frame_index: int
    lost: bool
    last_estimate: SizeEstimate | None
    last_box: BBox
    frame_hw: tuple[int, int]


@dataclass
class RoiRecord:
    """A heatmap together with the window it was computed in."""

    frame_index: int
    window: Window
    roi: Array


@dataclass
class TrackResult:
    boxes: list          # one per frame, index 0 echoes the init box
    rois: list           # RoiRecord per tracked frame (1..n-1)
    report: ScoreReport


def init_tracker(params: ModelParams | None, first_frame: Array, init_box: BBox,
                 config: TrackerConfig) -> TrackerState:
    """Start a track: window centered on the box at twice its size per axis
    (clamped to the config bounds), template encoded from the box crop."""
    if init_box.w <= 0 or init_box.h <= 0:
        raise ParameterError(f"init box must have positive area, got {init_box.w}x{init_box.h}")
    fh, fw = first_frame.shape[:2]
    w = min(max(2.0 * init_box.w, config.min_window), config.max_window_scale * fw)
    h = min(max(2.0 * init_box.h, config.min_window), config.max_window_scale * fh)
    window = Window(init_box.cx, init_box.cy, w, h)
    template_feats = None
    if params is not None:
        crop = crop_and_resize(first_frame, Window(init_box.cx, init_box.cy,
                                                   init_box.w, init_box.h), TEMPLATE_SIZE)
        template_feats = encode_template(params, crop)
    return TrackerState(window=window, template_feats=template_feats, frame_index=0,
                        lost=False, last_estimate=None, last_box=init_box,
                        frame_hw=(fh, fw))


def track_frame(state: TrackerState, frame: Array, params: ModelParams | None,
                config: TrackerConfig, roi_fn=None):
    """Advance the tracker by one frame.

    Returns (new state, predicted box, heatmap). The predicted box is the
    size estimate centered at the moved window center; on a lost frame the
    window holds position and the last confident box is repeated. `roi_fn`
    (frame_index, frame, window) -> heatmap substitutes for the model, e.g.
    an oracle in controller-isolation tests.
    """
    if frame.shape[:2] != state.frame_hw:
        raise ParameterError(
            f"frame dims changed from {state.frame_hw} to {frame.shape[:2]}"
        )
    window = state.window
    idx = state.frame_index + 1
    if roi_fn is not None:
        roi = roi_fn(idx, frame, window)
    else:
        branch = select_branch(window.w, window.h, config.branch_small, config.branch_mid)
        crop = crop_and_resize(frame, window, branch.input_size)
        roi = extract_roi_matrix(params, crop, state.template_feats, branch)
    fh, fw = state.frame_hw
    new_window, est, lost = controller.step(
        window, roi, config,
        max_w=config.max_window_scale * fw, max_h=config.max_window_scale * fh,
    )
    if lost:
        pred_box = state.last_box
    else:
        pred_box = BBox(new_window.cx - est.obj_w / 2.0, new_window.cy - est.obj_h / 2.0,
                        est.obj_w, est.obj_h)
    template_feats = state.template_feats
    if (params is not None and config.template_update_n > 0
            and idx % config.template_update_n == 0
            and not lost and pred_box.w >= 1.0 and pred_box.h >= 1.0):
        # refresh from the *predicted* box; ground truth must not leak in
        crop = crop_and_resize(frame, Window(pred_box.cx, pred_box.cy,
                                             pred_box.w, pred_box.h), TEMPLATE_SIZE)
        template_feats = encode_template(params, crop)
    new_state = replace(state, window=new_window, template_feats=template_feats,
                        frame_index=idx, lost=lost, last_estimate=est,
                        last_box=pred_box)
    return new_state, pred_box, roi


def run_sequence(params: ModelParams | None, seq, config: TrackerConfig,
                 roi_fn=None, name: str = "sequence") -> TrackResult:
    """Track a whole sequence and score it against its ground truth.

    Frame 0 only initializes the tracker (its box is echoed in the output);
    frames 1..n-1 are tracked and scored. A 1-frame sequence yields a report
    with zero scored frames, flagged via ScoreReport.empty_sequences.
    """
    n = len(seq.boxes)
    if n < 1:
        raise ParameterError("sequence has no frames")
    state = init_tracker(params, seq.frames[0], seq.boxes[0], config)
    boxes = [seq.boxes[0]]
    rois: list[RoiRecord] = []
    gts = []
    preds = []
    for i in range(1, n):
        window_used = state.window
        state, pred_box, roi = track_frame(state, seq.frames[i], params, config, roi_fn)
        boxes.append(pred_box)
        rois.append(RoiRecord(frame_index=i, window=window_used, roi=roi))
        gts.append(rasterize_gt(seq.boxes[i], window_used))
        preds.append(roi)
    if gts:
        report = score_sequence(gts, preds, name=name)
    else:
        report = ScoreReport(sequences=[SequenceScores(name=name, scores=np.empty(0))])
    return TrackResult(boxes=boxes, rois=rois, report=report)


def oracle_roi_fn(boxes):
    """roi_fn that rasterizes the ground-truth box: a perfect extractor for
    isolating controller behavior."""
    from .scene import oracle_heatmap

    def fn(frame_index: int, frame: Array, window: Window) -> Array:
        return oracle_heatmap(boxes[frame_index], window)

    return fn
