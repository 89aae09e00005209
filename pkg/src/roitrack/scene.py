"""Deterministic synthetic sequences: a textured target on a cluttered
background, optional look-alike distractors, scale ramps and occlusion.

Frames are rendered lazily and are a pure function of (config, frame index),
so a sequence costs almost nothing to hold in memory and two generations
from the same config are bitwise identical. Rendered values are snapped to
the 8-bit grid (k/255) so a lossless PNG export round-trips exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .controller import Window
from .errors import ParameterError
from .imageops import resize_hwc
from .metrics import BBox, rasterize_gt

Array = np.ndarray

_PATCH = 24          # canonical texture patch edge, resized onto each object
_COLOR_MARGIN = 0.35  # minimum base-color distance of a similarity-0 distractor


@dataclass(frozen=True)
class SceneConfig:
    """Everything that defines one synthetic sequence.

    `similarity` blends distractor appearance toward the target's texture
    parameters: 0 gives clearly different colors, 1 draws distractors from
    the target's own texture distribution. Occlusion draws an independent
    patch over `occl_coverage` of the target's area for frames in
    [occl_start, occl_start + occl_len). `allow_exit` disables border
    reflection so the target may leave the frame.
    """

    frame_w: int = 256
    frame_h: int = 256
    n_frames: int = 100
    target_x: float | None = None   # None -> centered
    target_y: float | None = None
    target_w: float = 40.0
    target_h: float = 40.0
    target_shape: str = "rect"      # "rect" | "ellipse"
    texture_seed: int = 1
    n_distractors: int = 2
    similarity: float = 0.7
    vel_max: float = 4.0
    scale_ramp: float = 1.0
    occl_start: int = -1
    occl_len: int = 0
    occl_coverage: float = 0.0
    clutter: float = 0.5
    allow_exit: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.frame_w < 8 or self.frame_h < 8:
            raise ParameterError(f"frame too small: {self.frame_w}x{self.frame_h}")
        if self.n_frames < 1:
            raise ParameterError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.target_w <= 0 or self.target_h <= 0:
            raise ParameterError(f"target extent must be positive, got {self.target_w}x{self.target_h}")
        if self.target_shape not in ("rect", "ellipse"):
            raise ParameterError(f"unknown target_shape {self.target_shape!r}")
        if self.n_distractors < 0:
            raise ParameterError("n_distractors must be >= 0")
        if not (0.0 <= self.similarity <= 1.0):
            raise ParameterError(f"similarity must lie in [0,1], got {self.similarity}")
        if not (0.0 <= self.occl_coverage <= 1.0):
            raise ParameterError(f"occl_coverage must lie in [0,1], got {self.occl_coverage}")
        if not (0.0 <= self.clutter <= 1.0):
            raise ParameterError(f"clutter must lie in [0,1], got {self.clutter}")
        if not math.isfinite(self.vel_max) or self.vel_max < 0:
            raise ParameterError(f"vel_max must be finite and >= 0, got {self.vel_max}")
        if self.scale_ramp <= 0:
            raise ParameterError(f"scale_ramp must be positive, got {self.scale_ramp}")
        final_w = self.target_w * self.scale_ramp ** (self.n_frames - 1)
        final_h = self.target_h * self.scale_ramp ** (self.n_frames - 1)
        if (max(self.target_w, final_w) > self.frame_w
                or max(self.target_h, final_h) > self.frame_h):
            raise ParameterError("target does not fit inside the frame over the whole sequence")

    @classmethod
    def from_mapping(cls, kv: dict) -> "SceneConfig":
        """Build a config from string key=value pairs; unknown keys fail."""
        return _config_from_mapping(cls, kv)


def _config_from_mapping(cls, kv: dict):
    valid = {f.name: f for f in fields(cls)}
    parsed = {}
    for key, raw in kv.items():
        if key not in valid:
            raise ParameterError(f"unknown config key {key!r}")
        parsed[key] = _parse_field(valid[key], raw)
    return cls(**parsed)


def _parse_field(f, raw):
    if isinstance(raw, str):
        raw = raw.strip()
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("bool", bool):
            return raw.lower() in ("1", "true", "yes")
        if f.type in ("str", str):
            return raw
        return float(raw)
    return raw


class FrameSeq:
    """Lazy, list-like view of a sequence's frames."""

    def __init__(self, render_fn, n: int):
        self._render = render_fn
        self._n = n

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return [self._render(i) for i in range(*idx.indices(self._n))]
        i = int(idx)
        if i < 0:
            i += self._n
        if not (0 <= i < self._n):
            raise IndexError(f"frame index {idx} out of range for {self._n} frames")
        return self._render(i)

    def __iter__(self):
        for i in range(self._n):
            yield self._render(i)


@dataclass
class SequenceRecord:
    """Ordered frames with per-frame ground truth (and distractor boxes,
    which synthetic scenes know and disk-loaded ones do not)."""

    frames: "FrameSeq | list"
    boxes: list
    distractor_boxes: list = field(default_factory=list)
    config: SceneConfig | None = None

    def __len__(self) -> int:
        return len(self.boxes)


def _smooth_noise(rng, h: int, w: int, grid: int) -> Array:
    """Band-limited noise: a coarse normal grid bilinearly upsampled."""
    gh = max(2, h // grid)
    gw = max(2, w // grid)
    coarse = rng.standard_normal((gh, gw, 3))
    return resize_hwc(coarse, h, w)


def _texture_patch(base_color: Array, amp: float, noise: Array) -> Array:
    return np.clip(base_color[None, None, :] + amp * noise, 0.02, 0.98)


def _random_walk(rng, start, vel_max: float, n: int, lo, hi, reflect: bool):
    """Smooth 2-D walk: velocity jitters inside [-vel_max, vel_max] per axis,
    positions reflect at [lo, hi] unless reflection is disabled."""
    pos = np.array(start, dtype=np.float64)
    vel = rng.uniform(-vel_max, vel_max, 2)
    accel = vel_max / 2.0
    out = [pos.copy()]
    for t in range(1, n):
        pos = pos + vel
        if reflect:
            for a in range(2):
                lo_t, hi_t = lo(t)[a], hi(t)[a]
                if hi_t <= lo_t:
                    pos[a] = (lo_t + hi_t) / 2.0
                    vel[a] = 0.0
                    continue
                if pos[a] < lo_t:
                    pos[a] = min(lo_t + (lo_t - pos[a]), hi_t)
                    vel[a] = -vel[a]
                elif pos[a] > hi_t:
                    pos[a] = max(hi_t - (pos[a] - hi_t), lo_t)
                    vel[a] = -vel[a]
        out.append(pos.copy())
        vel = np.clip(vel + rng.uniform(-accel, accel, 2), -vel_max, vel_max)
    return out


class _Renderer:
    """Precomputes geometry and textures; renders any frame on demand."""

    def __init__(self, config: SceneConfig):
        self.config = config
        c = config
        tx = (c.frame_w - c.target_w) / 2.0 if c.target_x is None else c.target_x
        ty = (c.frame_h - c.target_h) / 2.0 if c.target_y is None else c.target_y

        # per-frame target size under the scale ramp
        self.tsize = [
            (c.target_w * c.scale_ramp ** t, c.target_h * c.scale_ramp ** t)
            for t in range(c.n_frames)
        ]

        walk_rng = np.random.default_rng((c.seed, 1))
        start = (tx + c.target_w / 2.0, ty + c.target_h / 2.0)
        lo = lambda t: (self.tsize[t][0] / 2.0, self.tsize[t][1] / 2.0)
        hi = lambda t: (c.frame_w - self.tsize[t][0] / 2.0,
                        c.frame_h - self.tsize[t][1] / 2.0)
        centers = _random_walk(walk_rng, start, c.vel_max, c.n_frames,
                               lo, hi, reflect=not c.allow_exit)
        self.boxes = [
            BBox(cx - sw / 2.0, cy - sh / 2.0, sw, sh)
            for (cx, cy), (sw, sh) in zip(centers, self.tsize)
        ]

        # target texture
        tex_rng = np.random.default_rng((c.texture_seed, 0))
        self.t_color = tex_rng.uniform(0.15, 0.85, 3)
        self.t_amp = 0.25
        self.t_noise = _smooth_noise(tex_rng, _PATCH, _PATCH, 6)
        self.t_patch = _texture_patch(self.t_color, self.t_amp, self.t_noise)
        self.t_shape = c.target_shape

        # distractors: blended texture parameters, independent noise
        self.d_patches = []
        self.d_colors = []
        self.d_shapes = []
        self.d_sizes = []
        d_centers = []
        place_rng = np.random.default_rng((c.seed, 2))
        for k in range(c.n_distractors):
            d_rng = np.random.default_rng((c.texture_seed, k + 1))
            other = d_rng.uniform(0.15, 0.85, 3)
            while np.linalg.norm(other - self.t_color) < _COLOR_MARGIN:
                other = d_rng.uniform(0.15, 0.85, 3)
            color = c.similarity * self.t_color + (1.0 - c.similarity) * other
            noise = _smooth_noise(d_rng, _PATCH, _PATCH, 6)
            self.d_colors.append(color)
            self.d_patches.append(_texture_patch(color, self.t_amp, noise))
            self.d_shapes.append("ellipse" if d_rng.integers(2) else "rect")
            dw = float(np.clip(c.target_w * place_rng.uniform(0.7, 1.3), 4, c.frame_w))
            dh = float(np.clip(c.target_h * place_rng.uniform(0.7, 1.3), 4, c.frame_h))
            self.d_sizes.append((dw, dh))
            d_centers.append(self._place_distractor(place_rng, start, (dw, dh)))

        self.d_walks = []
        for k, center in enumerate(d_centers):
            dw, dh = self.d_sizes[k]
            wrng = np.random.default_rng((c.seed, 10 + k))
            dlo = lambda t, dw=dw, dh=dh: (dw / 2.0, dh / 2.0)
            dhi = lambda t, dw=dw, dh=dh: (c.frame_w - dw / 2.0, c.frame_h - dh / 2.0)
            self.d_walks.append(
                _random_walk(wrng, center, c.vel_max, c.n_frames, dlo, dhi, reflect=True)
            )

        # occluder
        self.o_patch = None
        if c.occl_len > 0 and c.occl_coverage > 0.0:
            o_rng = np.random.default_rng((c.texture_seed, 999))
            o_color = o_rng.uniform(0.15, 0.85, 3)
            self.o_patch = _texture_patch(o_color, self.t_amp,
                                          _smooth_noise(o_rng, _PATCH, _PATCH, 6))

        bg_rng = np.random.default_rng((c.seed, 0))
        self.background = np.clip(
            0.5 + c.clutter * 0.4 * _smooth_noise(bg_rng, c.frame_h, c.frame_w, 8),
            0.0, 1.0,
        )
        self._resized: dict = {}

    def _place_distractor(self, rng, target_center, size):
        c = self.config
        min_dist = (math.hypot(c.target_w, c.target_h)
                    + math.hypot(size[0], size[1])) / 2.0
        for _ in range(100):
            cx = rng.uniform(size[0] / 2.0, c.frame_w - size[0] / 2.0)
            cy = rng.uniform(size[1] / 2.0, c.frame_h - size[1] / 2.0)
            if math.hypot(cx - target_center[0], cy - target_center[1]) >= min_dist:
                return (cx, cy)
        return (cx, cy)

    def distractor_boxes(self, t: int) -> list:
        out = []
        for k in range(self.config.n_distractors):
            cx, cy = self.d_walks[k][t]
            dw, dh = self.d_sizes[k]
            out.append(BBox(cx - dw / 2.0, cy - dh / 2.0, dw, dh))
        return out

    def _patch_for(self, key, patch: Array, h: int, w: int) -> Array:
        cached = self._resized.get((key, h, w))
        if cached is None:
            cached = resize_hwc(patch, h, w)
            self._resized[(key, h, w)] = cached
        return cached

    def _paint(self, img: Array, box: BBox, key, patch: Array, shape: str) -> None:
        fh, fw = img.shape[:2]
        gx0 = math.floor(box.x)
        gy0 = math.floor(box.y)
        gx1 = math.ceil(box.x2)
        gy1 = math.ceil(box.y2)
        x0, y0 = max(0, gx0), max(0, gy0)
        x1, y1 = min(fw, gx1), min(fh, gy1)
        if x1 <= x0 or y1 <= y0:
            return
        full = self._patch_for(key, patch, gy1 - gy0, gx1 - gx0)
        view = full[y0 - gy0 : y1 - gy0, x0 - gx0 : x1 - gx0]
        if shape == "ellipse":
            ys = np.arange(y0, y1) + 0.5
            xs = np.arange(x0, x1) + 0.5
            ny = (ys - box.cy) / (box.h / 2.0)
            nx = (xs - box.cx) / (box.w / 2.0)
            mask = (ny[:, None] ** 2 + nx[None, :] ** 2) <= 1.0
            region = img[y0:y1, x0:x1]
            region[mask] = view[mask]
        else:
            img[y0:y1, x0:x1] = view

    def render(self, t: int) -> Array:
        c = self.config
        img = self.background.copy()
        for k in range(c.n_distractors):
            cx, cy = self.d_walks[k][t]
            dw, dh = self.d_sizes[k]
            self._paint(img, BBox(cx - dw / 2.0, cy - dh / 2.0, dw, dh),
                        ("d", k), self.d_patches[k], self.d_shapes[k])
        box = self.boxes[t]
        self._paint(img, box, "t", self.t_patch, self.t_shape)
        if self.o_patch is not None and c.occl_start <= t < c.occl_start + c.occl_len:
            s = math.sqrt(c.occl_coverage)
            ow, oh = box.w * s, box.h * s
            self._paint(img, BBox(box.cx - ow / 2.0, box.cy - oh / 2.0, ow, oh),
                        "o", self.o_patch, "rect")
        # snap to the 8-bit grid so PNG export round-trips exactly; true
        # division matches the k/255 computed when decoding
        np.multiply(img, 255.0, out=img)
        np.rint(img, out=img)
        np.divide(img, 255.0, out=img)
        return img


def gen_sequence(config: SceneConfig) -> SequenceRecord:
    """Generate a sequence; deterministic (bitwise) given the config."""
    r = _Renderer(config)
    return SequenceRecord(
        frames=FrameSeq(r.render, config.n_frames),
        boxes=list(r.boxes),
        distractor_boxes=[r.distractor_boxes(t) for t in range(config.n_frames)],
        config=config,
    )


def oracle_heatmap(box: BBox, window: Window) -> Array:
    """Perfect-extractor stand-in: the box rasterized onto the window grid."""
    return rasterize_gt(box, window)


def _draw_rect(img: Array, x0: float, y0: float, x1: float, y1: float, color) -> None:
    fh, fw = img.shape[:2]
    xa, xb = int(round(x0)), int(round(x1))
    ya, yb = int(round(y0)), int(round(y1))
    for (ys, ye, xs, xe) in (
        (ya, ya + 1, xa, xb),      # top
        (yb - 1, yb, xa, xb),      # bottom
        (ya, yb, xa, xa + 1),      # left
        (ya, yb, xb - 1, xb),      # right
    ):
        cy0, cy1 = max(0, ys), min(fh, ye)
        cx0, cx1 = max(0, xs), min(fw, xe)
        if cy1 > cy0 and cx1 > cx0:
            img[cy0:cy1, cx0:cx1] = color


def render_overlay(frame: Array, window: Window, roi: Array, pred_box: BBox) -> Array:
    """Frame with the search window, predicted box and a translucent heatmap
    composited over the window region. Pixels outside these marks are left
    untouched."""
    img = np.asarray(frame, dtype=np.float64).copy()
    fh, fw = img.shape[:2]
    wx0 = window.cx - window.w / 2.0
    wy0 = window.cy - window.h / 2.0
    x0, y0 = max(0, int(round(wx0))), max(0, int(round(wy0)))
    x1 = min(fw, int(round(wx0 + window.w)))
    y1 = min(fh, int(round(wy0 + window.h)))
    roi = np.asarray(roi, dtype=np.float64)
    if x1 > x0 and y1 > y0 and roi.size:
        # nearest-neighbor upsample of the heat values onto window pixels
        ys = np.clip(((np.arange(y0, y1) - wy0) / window.h * roi.shape[0]).astype(int),
                     0, roi.shape[0] - 1)
        xs = np.clip(((np.arange(x0, x1) - wx0) / window.w * roi.shape[1]).astype(int),
                     0, roi.shape[1] - 1)
        alpha = 0.45 * roi[ys[:, None], xs[None, :], None]
        heat = np.array([1.0, 0.15, 0.1])
        img[y0:y1, x0:x1] = (1.0 - alpha) * img[y0:y1, x0:x1] + alpha * heat
    _draw_rect(img, wx0, wy0, wx0 + window.w, wy0 + window.h, np.array([0.1, 0.9, 0.2]))
    _draw_rect(img, pred_box.x, pred_box.y, pred_box.x2, pred_box.y2,
               np.array([0.95, 0.85, 0.1]))
    return np.clip(img, 0.0, 1.0)
