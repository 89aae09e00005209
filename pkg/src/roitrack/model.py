"""Four-branch RoI heatmap extractor.

Three image branches handle search-window crops at 224/112/56 pixels (only
the one matching the current window size runs); a fourth branch encodes the
target template once and its feature maps are concatenated into the active
branch before a shared head produces the 28x28 sigmoid presence heatmap.

Branch stacks are stride-2 3x3 conv+relu stages that all land on a 32x28x28
feature map (224: 3 stages, 112: 2, 56: 1). The template branch maps the
56x56 template crop to 16 channels at 14x14, which are bilinearly resized to
28x28 for concatenation. Inputs are shifted to [-0.5, 0.5] before the first
convolution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nn
from .controller import Window
from .errors import FormatError, ParameterError, ShapeError, TrainingError
from .imageops import crop_and_resize, resize_chw, resize_chw_backward
from .metrics import rasterize_gt

Array = np.ndarray

ROI_SIZE = 28
TEMPLATE_SIZE = 56
TEMPLATE_CHANNELS = 16
BRANCH_CHANNELS = 32
MODEL_MAGIC = b"ROIX"
MODEL_VERSION = 1

BRANCH_SMALL = 64.0   # max(window edge) <= this -> 56px branch
BRANCH_MID = 128.0    # <= this -> 112px branch, else 224px


class BranchId(Enum):
    """Image branch, named by its square input resolution."""

    B224 = 224
    B112 = 112
    B56 = 56

    @property
    def input_size(self) -> int:
        return self.value


# (stack name, conv output widths); every image stack ends at BRANCH_CHANNELS
# so the head sees the same channel count whichever branch ran.
_STACKS = (
    ("b224", (16, 32, 32)),
    ("b112", (16, 32)),
    ("b56", (32,)),
    ("tmpl", (16, 16)),
    ("head", (32, 1)),
)
_STACK_IN = {"b224": 3, "b112": 3, "b56": 3, "tmpl": 3,
             "head": BRANCH_CHANNELS + TEMPLATE_CHANNELS}
_BRANCH_STACK = {BranchId.B224: "b224", BranchId.B112: "b112", BranchId.B56: "b56"}


def _layer_specs():
    """Fixed (name, out_ch, in_ch) order for every conv layer."""
    specs = []
    for stack, widths in _STACKS:
        c = _STACK_IN[stack]
        for i, width in enumerate(widths):
            specs.append((f"{stack}.conv{i}", width, c))
            c = width
    return specs


LAYER_SPECS = _layer_specs()
PARAM_SPECS = []
for _name, _out, _in in LAYER_SPECS:
    PARAM_SPECS.append((f"{_name}.w", (_out, _in, 3, 3)))
    PARAM_SPECS.append((f"{_name}.b", (_out,)))


@dataclass
class ModelParams:
    """All learnable weights, keyed by layer name, in a fixed order."""

    tensors: dict
    version: int = MODEL_VERSION

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.version)


@dataclass
class TemplateFeatures:
    """Encoded template: (16, 28, 28) feature maps ready for concatenation."""

    feats: Array
    source_size: int = TEMPLATE_SIZE


def build_model(seed: int) -> ModelParams:
    """Deterministically initialize all weights.

    He-style uniform, bound sqrt(6/fan_in), zero biases: keeps activation
    variance roughly constant through the relu conv stacks, which plain SGD
    needs to make progress on deep layers.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, out_ch, in_ch in LAYER_SPECS:
        bound = np.sqrt(6.0 / (in_ch * 9))
        tensors[f"{name}.w"] = rng.uniform(-bound, bound, (out_ch, in_ch, 3, 3))
        tensors[f"{name}.b"] = np.zeros(out_ch)
    return ModelParams(tensors)


def select_branch(window_w: float, window_h: float,
                  small: float = BRANCH_SMALL, mid: float = BRANCH_MID) -> BranchId:
    """Pick the image branch for the current window size (larger branches
    cost more per frame)."""
    if window_w <= 0 or window_h <= 0:
        raise ParameterError(f"window extent must be positive, got {window_w}x{window_h}")
    edge = max(window_w, window_h)
    if edge <= small:
        return BranchId.B56
    if edge <= mid:
        return BranchId.B112
    return BranchId.B224


def _chw(img: Array) -> Array:
    return np.ascontiguousarray(np.moveaxis(img, 2, 0), dtype=np.float64) - 0.5


def _stack_forward(tensors, stack: str, x: Array, stride: int, cache=None):
    n = sum(1 for name, _, _ in LAYER_SPECS if name.startswith(stack + "."))
    h = x
    for i in range(n):
        w = tensors[f"{stack}.conv{i}.w"]
        b = tensors[f"{stack}.conv{i}.b"]
        z = nn.conv2d_forward(h, w, b, stride=stride, padding=1)
        if cache is not None:
            cache.append((f"{stack}.conv{i}", h, z))
        h = nn.relu(z)
    return h


def _stack_backward(tensors, cache, d_out, stride: int, grads: dict) -> Array:
    d = d_out
    for name, h, z in reversed(cache):
        d = nn.relu_backward(z, d)
        dx, dw, db = nn.conv2d_backward(h, tensors[f"{name}.w"], d, stride=stride, padding=1)
        grads[f"{name}.w"] = grads.get(f"{name}.w", 0) + dw
        grads[f"{name}.b"] = grads.get(f"{name}.b", 0) + db
        d = dx
    return d


def encode_template(params: ModelParams, template: Array) -> TemplateFeatures:
    """Encode a 56x56x3 template crop into concatenation-ready feature maps."""
    feats, _ = _encode_template_cached(params, template, want_cache=False)
    return feats


def _encode_template_cached(params: ModelParams, template: Array, want_cache: bool):
    template = np.asarray(template, dtype=np.float64)
    if template.shape != (TEMPLATE_SIZE, TEMPLATE_SIZE, 3):
        raise ShapeError(
            f"template must be ({TEMPLATE_SIZE},{TEMPLATE_SIZE},3), got {template.shape}"
        )
    cache = [] if want_cache else None
    x = _chw(template)
    small = _stack_forward(params.tensors, "tmpl", x, stride=2, cache=cache)  # (16,14,14)
    feats = resize_chw(small, ROI_SIZE, ROI_SIZE)
    return TemplateFeatures(feats=feats), (cache, small.shape)


def _template_backward(params: ModelParams, tcache, d_feats: Array, grads: dict) -> None:
    cache, small_shape = tcache
    d_small = resize_chw_backward(small_shape, d_feats)
    _stack_backward(params.tensors, cache, d_small, stride=2, grads=grads)


def extract_roi_matrix(params: ModelParams, crop: Array,
                       template_feats: TemplateFeatures, branch: BranchId) -> Array:
    """Run one branch plus the shared head on a window crop; returns the
    (28, 28) presence heatmap with every value strictly inside (0, 1)."""
    roi, _ = _forward(params, crop, template_feats, branch, want_cache=False)
    return roi


def extract_with_template(params: ModelParams, crop: Array, template: Array,
                          branch: BranchId) -> Array:
    """Convenience path that encodes the raw template on the fly; equivalent
    to caching the features once and reusing them."""
    return extract_roi_matrix(params, crop, encode_template(params, template), branch)


def _forward(params: ModelParams, crop: Array, template_feats: TemplateFeatures,
             branch: BranchId, want_cache: bool):
    crop = np.asarray(crop, dtype=np.float64)
    size = branch.input_size
    if crop.shape != (size, size, 3):
        raise ShapeError(f"crop shape {crop.shape} does not match branch input ({size},{size},3)")
    tf = np.asarray(template_feats.feats, dtype=np.float64)
    if tf.shape != (TEMPLATE_CHANNELS, ROI_SIZE, ROI_SIZE):
        raise ShapeError(f"template features must be "
                         f"({TEMPLATE_CHANNELS},{ROI_SIZE},{ROI_SIZE}), got {tf.shape}")
    t = params.tensors
    stack = _BRANCH_STACK[branch]
    bcache = [] if want_cache else None
    x = _chw(crop)
    bout = _stack_forward(t, stack, x, stride=2, cache=bcache)  # (32,28,28)
    feats = np.concatenate([bout, tf], axis=0)                  # (48,28,28)
    z0 = nn.conv2d_forward(feats, t["head.conv0.w"], t["head.conv0.b"], stride=1, padding=1)
    a0 = nn.relu(z0)
    z1 = nn.conv2d_forward(a0, t["head.conv1.w"], t["head.conv1.b"], stride=1, padding=1)
    out = nn.sigmoid(z1)
    if not want_cache:
        return out[0], None
    cache = {"branch_cache": bcache, "feats": feats, "z0": z0, "a0": a0, "out": out}
    return out[0], cache


def _backward(params: ModelParams, cache, d_roi: Array):
    """Gradients of the full forward pass given d(loss)/d(heatmap)."""
    grads: dict = {}
    t = params.tensors
    d_z1 = nn.sigmoid_backward(cache["out"], d_roi[None])
    d_a0, dw1, db1 = nn.conv2d_backward(cache["a0"], t["head.conv1.w"], d_z1,
                                        stride=1, padding=1)
    grads["head.conv1.w"] = dw1
    grads["head.conv1.b"] = db1
    d_z0 = nn.relu_backward(cache["z0"], d_a0)
    d_feats, dw0, db0 = nn.conv2d_backward(cache["feats"], t["head.conv0.w"], d_z0,
                                           stride=1, padding=1)
    grads["head.conv0.w"] = dw0
    grads["head.conv0.b"] = db0
    d_branch = d_feats[:BRANCH_CHANNELS]
    d_template = d_feats[BRANCH_CHANNELS:]
    _stack_backward(t, cache["branch_cache"], d_branch, stride=2, grads=grads)
    return grads, d_template


def _zero_grads() -> dict:
    return {name: np.zeros(shape) for name, shape in PARAM_SPECS}


def _sample_window(rng, box, scale_range, center_jitter, min_window: float) -> Window:
    """A search window around a ground-truth box, jittered the way tracking
    windows drift (nominal extent is twice the box per axis)."""
    scale = rng.uniform(*scale_range)
    jx = rng.uniform(-center_jitter, center_jitter)
    jy = rng.uniform(-center_jitter, center_jitter)
    w = max(2.0 * box.w * scale, min_window)
    h = max(2.0 * box.h * scale, min_window)
    return Window(box.cx + jx * w, box.cy + jy * h, w, h)


def _template_crop(frame: Array, box) -> Array:
    win = Window(box.cx, box.cy, max(box.w, 1e-6), max(box.h, 1e-6))
    return crop_and_resize(frame, win, TEMPLATE_SIZE)


def _batch_indices(rng, n: int, batch: int = 15):
    if n >= batch:
        start = int(rng.integers(0, n - batch + 1))
        return list(range(start, start + batch))
    return sorted(int(i) for i in rng.integers(0, n, size=batch))


def train(params: ModelParams, dataset, epochs: int, lr: float, rng_seed: int,
          batches_per_sequence: int = 1,
          scale_range=(0.7, 1.6), center_jitter: float = 0.2,
          min_window: float = 16.0, progress=None):
    """Train on sequences of frames with ground-truth boxes.

    Each optimization step uses a batch of 15 ordered frames from a single
    sequence; the template is cropped from the first frame of that batch
    only. Supervision rasterizes the ground-truth box onto the sampled
    window's 28x28 grid and the loss is plain MSE against the sigmoid
    heatmap.

    The batch/window sampling schedule is derived from `rng_seed` alone and
    replayed identically every epoch, so an epoch is a full pass over a fixed
    derived dataset and runs with the same seed are bit-reproducible.

    Returns (trained params, per-epoch mean loss history).
    """
    if epochs < 1:
        raise ParameterError(f"epochs must be >= 1, got {epochs}")
    if lr < 0:
        raise ParameterError(f"lr must be >= 0, got {lr}")
    if not dataset:
        raise ParameterError("dataset is empty")
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    history = []
    for epoch in range(epochs):
        rng = np.random.default_rng(rng_seed)  # identical schedule every epoch
        losses = []
        for seq_i, rec in enumerate(dataset):
            n = len(rec.boxes)
            if n < 1:
                raise ParameterError(f"sequence {seq_i} has no frames")
            for _ in range(batches_per_sequence):
                idxs = _batch_indices(rng, n)
                work = ModelParams(tensors)
                t_img = _template_crop(rec.frames[idxs[0]], rec.boxes[idxs[0]])
                tfeats, tcache = _encode_template_cached(work, t_img, want_cache=True)
                grad_acc = _zero_grads()
                d_tf_acc = np.zeros_like(tfeats.feats)
                batch_loss = 0.0
                for fi in idxs:
                    box = rec.boxes[fi]
                    win = _sample_window(rng, box, scale_range, center_jitter, min_window)
                    branch = select_branch(win.w, win.h)
                    crop = crop_and_resize(rec.frames[fi], win, branch.input_size)
                    target = rasterize_gt(box, win)
                    roi, cache = _forward(work, crop, tfeats, branch, want_cache=True)
                    loss, d_roi = nn.mse_loss(roi, target)
                    batch_loss += loss
                    grads, d_tf = _backward(work, cache, d_roi)
                    for k, g in grads.items():
                        grad_acc[k] += g
                    d_tf_acc += d_tf
                batch_loss /= len(idxs)
                if not np.isfinite(batch_loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, sequence {seq_i}"
                    )
                scale = 1.0 / len(idxs)
                for k in grad_acc:
                    grad_acc[k] *= scale
                _template_backward(work, tcache, d_tf_acc * scale, grad_acc)
                tensors = nn.sgd_step(tensors, grad_acc, lr)
                losses.append(batch_loss)
        history.append(float(np.mean(losses)))
        if progress is not None:
            progress(epoch, history[-1])
    return ModelParams(tensors), history


def evaluate_on_records(params: ModelParams, records, rng_seed: int = 0,
                        scale_range=(0.9, 1.25), center_jitter: float = 0.1,
                        min_window: float = 16.0):
    """Extractor quality on held-out sequences, independent of the tracking
    loop: windows are jittered around the ground truth the way tracking
    windows sit, the template comes from frame 0 only, and each later frame
    is scored with heatmap_iou against the rasterized truth.

    Returns (mean of per-sequence means, list of per-sequence means).
    """
    from .metrics import heatmap_iou  # local import to avoid cycle at module load

    per_seq = []
    for seq_i, rec in enumerate(records):
        rng = np.random.default_rng((rng_seed, seq_i))
        tfeats = encode_template(params, _template_crop(rec.frames[0], rec.boxes[0]))
        scores = []
        for fi in range(1, len(rec.boxes)):
            box = rec.boxes[fi]
            win = _sample_window(rng, box, scale_range, center_jitter, min_window)
            branch = select_branch(win.w, win.h)
            crop = crop_and_resize(rec.frames[fi], win, branch.input_size)
            roi = extract_roi_matrix(params, crop, tfeats, branch)
            scores.append(heatmap_iou(rasterize_gt(box, win), roi))
        per_seq.append(float(np.mean(scores)))
    return float(np.mean(per_seq)), per_seq


def save_model(params: ModelParams, path) -> None:
    """Serialize weights: magic, version, architecture descriptor, then every
    tensor shape-prefixed as little-endian float64, in the fixed layer order."""
    tensors = params.tensors
    _validate_tensors(tensors)
    chunks = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION),
              struct.pack("<I", len(PARAM_SPECS))]
    for name, shape in PARAM_SPECS:
        nb = name.encode()
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}I", *shape))
    for name, shape in PARAM_SPECS:
        chunks.append(struct.pack("<I", len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}I", *shape))
        chunks.append(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def _validate_tensors(tensors: dict) -> None:
    for name, shape in PARAM_SPECS:
        if name not in tensors:
            raise FormatError(f"missing tensor '{name}'")
        if tuple(tensors[name].shape) != shape:
            raise FormatError(f"tensor '{name}' has shape {tensors[name].shape}, expected {shape}")
        if not np.all(np.isfinite(tensors[name])):
            raise FormatError(f"tensor '{name}' contains non-finite values")
    if len(tensors) != len(PARAM_SPECS):
        extra = set(tensors) - {n for n, _ in PARAM_SPECS}
        raise FormatError(f"unexpected tensors {sorted(extra)}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"model file truncated while reading {what}")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_model(path) -> ModelParams:
    """Load a model saved by save_model; any mismatch (magic, version,
    descriptor, shape, truncation, trailing bytes) raises FormatError naming
    the offending field. load(save(p)) is bitwise-identical to p."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4, "magic") != MODEL_MAGIC:
        raise FormatError(f"bad magic; expected {MODEL_MAGIC!r}")
    version = r.u32("version")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    count = r.u32("tensor count")
    if count != len(PARAM_SPECS):
        raise FormatError(f"descriptor lists {count} tensors, expected {len(PARAM_SPECS)}")
    for name, shape in PARAM_SPECS:
        nlen = r.u32(f"name length of '{name}'")
        got = r.take(nlen, f"name of '{name}'").decode(errors="replace")
        if got != name:
            raise FormatError(f"descriptor names '{got}' where '{name}' was expected")
        ndim = r.u32(f"rank of '{name}'")
        if ndim != len(shape):
            raise FormatError(f"descriptor rank {ndim} for '{name}', expected {len(shape)}")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"dims of '{name}'"))
        if dims != shape:
            raise FormatError(f"descriptor shape {dims} for '{name}', expected {shape}")
    tensors = {}
    for name, shape in PARAM_SPECS:
        ndim = r.u32(f"shape prefix of '{name}'")
        if ndim != len(shape):
            raise FormatError(f"shape prefix rank {ndim} for '{name}', expected {len(shape)}")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"shape of '{name}'"))
        if dims != shape:
            raise FormatError(f"shape prefix {dims} for '{name}', expected {shape}")
        n = int(np.prod(shape))
        raw = r.take(8 * n, f"data of '{name}'")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor '{name}' contains non-finite values")
        tensors[name] = arr
    if r.off != len(r.data):
        raise FormatError(f"{len(r.data) - r.off} trailing bytes after last tensor")
    return ModelParams(tensors, version=version)
