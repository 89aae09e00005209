"""Command-line surface.

Subcommands:
  synth   generate a synthetic sequence directory
  train   train a model on sequence directories
  track   run the tracker over a sequence, writing predictions and optional
          heatmap dumps / score reports
  eval    recompute a score report from a heatmap dump plus ground truth
  render  write overlay images for visual inspection

Every failure exits nonzero with a one-line cause on stderr; usage errors
exit with code 2.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import metrics, scene, seqio, tracker
from .errors import FormatError, ParameterError
from .model import build_model, load_model, save_model, train as train_model
from .scene import SceneConfig
from .tracker import TrackerConfig


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roitrack",
                                description="Heatmap-driven single-object tracker")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic sequence")
    sp.add_argument("--out", required=True, help="output sequence directory")
    sp.add_argument("--config", help="key=value scene config file")
    sp.add_argument("--seed", type=int, help="override the scene seed")

    tp = sub.add_parser("train", help="train a model")
    tp.add_argument("--data", required=True, nargs="+",
                    help="sequence directories, or parents of sequence directories")
    tp.add_argument("--out", required=True, help="model file to write")
    tp.add_argument("--epochs", type=int, default=10)
    tp.add_argument("--lr", type=float, default=3.0)
    tp.add_argument("--batches-per-seq", type=int, default=1)
    tp.add_argument("--seed", type=int, default=0)

    kp = sub.add_parser("track", help="track one sequence")
    kp.add_argument("--model", required=True)
    kp.add_argument("--seq", required=True, help="sequence directory")
    kp.add_argument("--out-predictions", required=True)
    kp.add_argument("--dump-rois", help="write per-frame heatmaps + windows here")
    kp.add_argument("--report", help="write the score report CSV here")
    kp.add_argument("--template-update-n", type=int, default=None,
                    help="re-encode the template every n frames (0 = never)")
    kp.add_argument("--config", help="key=value tracker config file")
    kp.add_argument("--seed", type=int, help="accepted for interface symmetry; tracking is deterministic")

    ep = sub.add_parser("eval", help="score a heatmap dump against ground truth")
    ep.add_argument("--rois", required=True)
    ep.add_argument("--seq", help="sequence directory providing groundtruth.txt")
    ep.add_argument("--gt", help="explicit ground-truth file (instead of --seq)")
    ep.add_argument("--out", help="report CSV path")
    ep.add_argument("--name", default="sequence")

    rp = sub.add_parser("render", help="write overlay images")
    rp.add_argument("--seq", required=True)
    rp.add_argument("--predictions", required=True)
    rp.add_argument("--rois", help="heatmap dump for exact windows and heat overlays")
    rp.add_argument("--out", required=True, help="output image directory")
    return p


def _sequence_dirs(paths) -> list[str]:
    dirs = []
    for path in paths:
        if os.path.isfile(os.path.join(path, seqio.GT_NAME)):
            dirs.append(path)
            continue
        children = sorted(
            os.path.join(path, n) for n in os.listdir(path)
            if os.path.isfile(os.path.join(path, n, seqio.GT_NAME))
        )
        if not children:
            raise FormatError(f"{path} contains no sequence directories")
        dirs.extend(children)
    return dirs


def _cmd_synth(args) -> int:
    kv = seqio.parse_kv_file(args.config) if args.config else {}
    config = SceneConfig.from_mapping(kv)
    if args.seed is not None:
        import dataclasses
        config = dataclasses.replace(config, seed=args.seed)
    record = scene.gen_sequence(config)
    seqio.export_sequence(record, args.out)
    print(f"wrote {config.n_frames} frames to {args.out}")
    return 0


def _cmd_train(args) -> int:
    dirs = _sequence_dirs(args.data)
    dataset = [seqio.load_sequence(d) for d in dirs]
    params = build_model(args.seed)
    params, history = train_model(
        params, dataset, epochs=args.epochs, lr=args.lr, rng_seed=args.seed,
        batches_per_sequence=args.batches_per_seq,
        progress=lambda e, l: print(f"epoch {e + 1}: loss {l:.6f}"),
    )
    save_model(params, args.out)
    print(f"trained on {len(dataset)} sequence(s); model written to {args.out}")
    return 0


def _cmd_track(args) -> int:
    params = load_model(args.model)
    seq = seqio.load_sequence(args.seq)
    kv = seqio.parse_kv_file(args.config) if args.config else {}
    config = TrackerConfig.from_mapping(kv)
    if args.template_update_n is not None:
        import dataclasses
        config = dataclasses.replace(config, template_update_n=args.template_update_n)
    name = os.path.basename(os.path.normpath(args.seq))
    result = tracker.run_sequence(params, seq, config, name=name)
    seqio.write_predictions(args.out_predictions, result.boxes)
    if args.dump_rois:
        seqio.dump_rois(args.dump_rois, result.rois)
    if args.report:
        seqio.write_report(args.report, result.report)
    print(seqio.report_to_text(result.report))
    return 0


def _cmd_eval(args) -> int:
    if not args.seq and not args.gt:
        raise ParameterError("eval needs --seq or --gt for the ground truth")
    gt_path = args.gt or os.path.join(args.seq, seqio.GT_NAME)
    boxes = seqio.load_boxes(gt_path)
    rois = seqio.load_rois(args.rois)
    expected = list(range(1, len(boxes)))
    got = [r.frame_index for r in rois]
    if got != expected:
        raise FormatError(
            f"count mismatch: dump covers frames {got[:3]}..{got[-1:]} "
            f"({len(got)} lines) but ground truth has {len(boxes)} frames "
            f"(expected frames 1..{len(boxes) - 1})"
        )
    gts = [metrics.rasterize_gt(boxes[r.frame_index], r.window) for r in rois]
    preds = [r.roi for r in rois]
    report = metrics.score_sequence(gts, preds, name=args.name)
    if args.out:
        seqio.write_report(args.out, report)
    print(seqio.report_to_text(report))
    return 0


def _cmd_render(args) -> int:
    seq = seqio.load_sequence(args.seq)
    boxes = seqio.load_predictions(args.predictions)
    rois = {r.frame_index: r for r in seqio.load_rois(args.rois)} if args.rois else {}
    os.makedirs(args.out, exist_ok=True)
    import numpy as np

    from .controller import Window
    for i, frame in enumerate(seq.frames):
        box = boxes[i] if i < len(boxes) else seq.boxes[i]
        rec = rois.get(i)
        if rec is not None:
            window, roi = rec.window, rec.roi
        else:
            window = Window(box.cx, box.cy, max(2.0 * box.w, 1.0), max(2.0 * box.h, 1.0))
            roi = np.zeros((28, 28))
        img = scene.render_overlay(frame, window, roi, box)
        seqio.save_image(os.path.join(args.out, f"{i + 1:08d}.png"), img)
    print(f"wrote {len(seq.boxes)} overlay image(s) to {args.out}")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "render": _cmd_render,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
