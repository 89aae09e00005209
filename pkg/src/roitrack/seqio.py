"""On-disk formats: sequence directories, prediction/ground-truth box files,
heatmap dumps, score reports and key=value config files.

A sequence directory holds lexicographically ordered image files plus a
`groundtruth.txt` with one comma-separated "x,y,w,h" line per frame (the
GOT-10k layout, so real sequences drop in unchanged). Floats are written
with repr so every format round-trips exactly; images use lossless PNG.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .controller import Window
from .errors import FormatError
from .metrics import BBox, ScoreReport
from .scene import SequenceRecord
from .tracker import RoiRecord

_IMAGE_EXTS = (".png", ".bmp", ".jpg", ".jpeg")
GT_NAME = "groundtruth.txt"


def parse_box_line(line: str, lineno: int = 0) -> BBox:
    """Parse one "x,y,w,h" line; errors carry the 1-based line number."""
    parts = line.strip().split(",")
    if len(parts) != 4:
        raise FormatError(f"line {lineno}: expected 4 comma-separated values, got {len(parts)}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as e:
        raise FormatError(f"line {lineno}: {e}") from None
    try:
        return BBox(x, y, w, h)
    except ValueError as e:
        raise FormatError(f"line {lineno}: {e}") from None


def load_boxes(path) -> list[BBox]:
    boxes = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                boxes.append(parse_box_line(line, lineno))
    return boxes


def write_boxes(path, boxes) -> None:
    with open(path, "w") as f:
        for b in boxes:
            f.write(f"{float(b.x)!r},{float(b.y)!r},{float(b.w)!r},{float(b.h)!r}\n")


# predictions share the ground-truth format
write_predictions = write_boxes
load_predictions = load_boxes


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise FormatError(f"unreadable image {path}: {e}") from None
    return arr / 255.0


def save_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_sequence(path) -> SequenceRecord:
    """Read a sequence directory into memory.

    Fails if the frame count and ground-truth line count disagree, any line
    is malformed, or an image cannot be decoded.
    """
    gt_path = os.path.join(path, GT_NAME)
    if not os.path.isfile(gt_path):
        raise FormatError(f"no {GT_NAME} in {path}")
    boxes = load_boxes(gt_path)
    names = sorted(n for n in os.listdir(path)
                   if os.path.splitext(n)[1].lower() in _IMAGE_EXTS)
    if len(names) != len(boxes):
        raise FormatError(
            f"{path}: {len(names)} frames but {len(boxes)} ground-truth lines"
        )
    frames = [load_image(os.path.join(path, n)) for n in names]
    return SequenceRecord(frames=frames, boxes=boxes)


def export_sequence(record: SequenceRecord, path) -> None:
    """Write a sequence as numbered PNGs plus groundtruth.txt."""
    os.makedirs(path, exist_ok=True)
    for i, frame in enumerate(record.frames):
        save_image(os.path.join(path, f"{i + 1:08d}.png"), frame)
    write_boxes(os.path.join(path, GT_NAME), record.boxes)


def dump_rois(path, rois: list[RoiRecord]) -> None:
    """One line per tracked frame: frame_index, window (cx,cy,w,h), then the
    784 heatmap values row-major. repr floats, so values round-trip exactly."""
    with open(path, "w") as f:
        for r in rois:
            w = r.window
            head = (f"{r.frame_index},{float(w.cx)!r},{float(w.cy)!r},"
                    f"{float(w.w)!r},{float(w.h)!r}")
            body = ",".join(repr(float(v)) for v in r.roi.ravel())
            f.write(head + "," + body + "\n")


def load_rois(path) -> list[RoiRecord]:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 5 + 28 * 28:
                raise FormatError(
                    f"line {lineno}: expected {5 + 28 * 28} values, got {len(parts)}"
                )
            try:
                idx = int(parts[0])
                cx, cy, w, h = (float(p) for p in parts[1:5])
                roi = np.array([float(p) for p in parts[5:]]).reshape(28, 28)
            except ValueError as e:
                raise FormatError(f"line {lineno}: {e}") from None
            out.append(RoiRecord(frame_index=idx, window=Window(cx, cy, w, h), roi=roi))
    return out


def write_report(path, report: ScoreReport) -> None:
    """CSV: header, one (sequence, frame_index, score) row per frame, then
    trailing aggregate rows (per-sequence mean, dataset mean, counts)."""
    with open(path, "w") as f:
        f.write(report_to_csv(report))


def report_to_csv(report: ScoreReport) -> str:
    lines = ["sequence,frame_index,score"]
    for seq in report.sequences:
        for i, s in enumerate(seq.scores):
            lines.append(f"{seq.name},{seq.first_frame_index + i},{float(s)!r}")
    for seq in report.sequences:
        lines.append(f"{seq.name},mean,{seq.mean!r}")
    lines.append(f"ALL,mean,{report.dataset_mean!r}")
    lines.append(f"ALL,frames,{report.total_frames}")
    lines.append(f"ALL,empty_sequences,{report.empty_sequences}")
    lines.append(f"ALL,degenerate_frames,{report.degenerate_frames}")
    return "\n".join(lines) + "\n"


def report_to_text(report: ScoreReport) -> str:
    """Human-readable table of per-sequence means."""
    lines = [f"{'sequence':<24} {'frames':>6} {'mean':>8}"]
    for seq in report.sequences:
        mean = f"{seq.mean:.4f}" if seq.n_frames else "  --  "
        lines.append(f"{seq.name:<24} {seq.n_frames:>6} {mean:>8}")
    lines.append(f"{'dataset mean':<24} {report.total_frames:>6} {report.dataset_mean:>8.4f}")
    if report.empty_sequences:
        lines.append(f"note: {report.empty_sequences} sequence(s) had no tracked frames")
    if report.degenerate_frames:
        lines.append(f"note: {report.degenerate_frames} frame(s) scored 0 by the 0/0 rule")
    return "\n".join(lines)


def parse_kv_file(path) -> dict:
    """Flat key=value config text; '#' starts a comment, blank lines skipped."""
    out: dict = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out
