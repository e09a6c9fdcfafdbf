"""Command-line surface: segment, eval, diagnose, suppress.

Exit codes: 0 success, 1 usage, 2 data/format problems, 3 surgery/model
problems. Defaults mirror the final configuration (gclip, fusion width 1,
channel suppression on with auto start and dual-stream wiring).
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .encoder import EncodeMode, encode
from .errors import DataError, ModelError, SurgeryError
from .evaluation import evaluate_dataset, load_dataset
from .gtf import write_gtf_file
from .model import ModelBundle, load_model_dir
from .netpbm import read_pgm, read_ppm, write_pgm
from .segmentation import (
    InferenceConfig,
    build_text_bank,
    prepare_classification_input,
    sliding_window_segment,
)
from .surgery import (
    FusionConfig,
    SuppressionConfig,
    channel_rescale_factor,
    detect_global_tokens,
    find_emergence_block,
    find_suppression_start,
    global_token_scores,
    suppress_channel,
)
from .tensor_ops import nearest_resize

_VARIANT_NAMES = {"global": "global-blocks", "cls": "cls-duplicate"}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _amf_l(value: str):
    if value == "off":
        return "off"
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer or 'off', got '{value}'")
    if n < 0:
        raise argparse.ArgumentTypeError(f"fusion width must be non-negative, got {n}")
    return n


def _cs_start(value: str):
    if value == "auto":
        return "auto"
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a block index or 'auto', got '{value}'")
    if n < 0:
        raise argparse.ArgumentTypeError(f"suppression start must be >= 0, got {n}")
    return n


def _add_mode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", choices=("vanilla", "clearclip", "gclip"), default="gclip")
    parser.add_argument("--amf-l", type=_amf_l, default=1, metavar="N|off",
                        help="fusion width: emergence block plus N more (default 1)")
    parser.add_argument("--amf-variant", choices=("global", "cls"), default="global")
    parser.add_argument("--cs", choices=("on", "off"), default="on")
    parser.add_argument("--cs-start", type=_cs_start, default="auto", metavar="auto|N")
    parser.add_argument("--cs-dual", choices=("on", "off"), default="on")


def _add_window_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--resize", type=int, default=336, help="short-side resize (default 336)")
    parser.add_argument("--window", type=int, default=224, help="window size (default 224)")
    parser.add_argument("--stride", type=int, default=112, help="window stride (default 112)")


def _mode_from_args(args) -> EncodeMode:
    if args.mode != "gclip":
        return EncodeMode(variant=args.mode)
    fusion = None
    if args.amf_l != "off":
        fusion = FusionConfig(extra_blocks=args.amf_l, variant=_VARIANT_NAMES[args.amf_variant])
    suppression = None
    if args.cs == "on":
        suppression = SuppressionConfig(
            enabled=True, start=args.cs_start, dual_stream=args.cs_dual == "on"
        )
    return EncodeMode(variant="gclip", fusion=fusion, suppression=suppression)


def _infer_config(args) -> InferenceConfig:
    return InferenceConfig(
        mode=_mode_from_args(args),
        resize_short_side=args.resize,
        window=args.window,
        stride=args.stride,
    )


def _print_plans(plans) -> None:
    seen: dict[tuple, int] = {}
    for plan in plans:
        key = (plan.mode, plan.emergence_block, plan.fused_blocks, plan.suppress_start,
               plan.dual_stream, plan.fusion_variant)
        seen[key] = seen.get(key, 0) + 1
    for (mode, g, fused, s, dual, variant), count in seen.items():
        parts = [f"plan: mode={mode}"]
        if g is not None:
            parts.append(f"g={g}")
        parts.append(f"fused_blocks={list(fused)}")
        if variant is not None:
            parts.append(f"variant={variant}")
        parts.append(f"s={s if s is not None else '-'}")
        if dual is not None:
            parts.append(f"dual_stream={'on' if dual else 'off'}")
        parts.append(f"(windows={count})")
        print(" ".join(parts))


def _cmd_segment(args) -> int:
    bundle = load_model_dir(args.model)
    bank = build_text_bank(args.text, args.classes)
    result = sliding_window_segment(args.image, bundle, bank, _infer_config(args))
    _print_plans(result.plans)
    write_pgm(args.out, result.mask)
    print(f"mask written to {args.out}")
    if args.dump_logits:
        write_gtf_file(args.dump_logits, {"logits": result.logits})
        print(f"logits written to {args.dump_logits}")
    return 0


def _cmd_eval(args) -> int:
    bundle = load_model_dir(args.model)
    bank = build_text_bank(args.text, args.classes)
    dataset = load_dataset(args.data)
    result = evaluate_dataset(dataset, bundle, bank, _infer_config(args))
    ious = result.per_class
    width = max(len(name) for name in result.class_names) + 2
    print(f"{'class'.ljust(width)}IoU")
    for name, iou in zip(result.class_names, ious):
        cell = "n/a" if np.isnan(iou) else f"{100.0 * iou:.1f}"
        print(f"{name.ljust(width)}{cell}")
    print(f"mIoU: {100.0 * result.miou:.1f}")
    return 0


def _cmd_suppress(args) -> int:
    src = Path(args.model)
    bundle = load_model_dir(src)
    cfg = SuppressionConfig(enabled=True, start=args.cs_start)
    start = find_suppression_start(bundle, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors = dict(bundle.tensors)
    factors = []
    for i in range(start, bundle.config.layers):
        name = f"blocks.{i}.mlp.fc2.weight"
        _, factor = channel_rescale_factor(tensors[name])
        factors.append(factor)
        tensors[name] = suppress_channel(tensors[name])
    write_gtf_file(out_dir / "model.gtf", tensors)
    shutil.copyfile(src / "model.cfg", out_dir / "model.cfg")
    print(f"suppression start: s={start} (blocks {start}..{bundle.config.last_block})")
    for i, factor in zip(range(start, bundle.config.layers), factors):
        print(f"block {i}: dominant channel rescaled by {factor:.6g}")
    if max(abs(f - 1.0) for f in factors) < 1e-6:
        print("note: bundle already suppressed; re-applying is a no-op")
    print(f"suppressed bundle written to {out_dir}")
    return 0


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _diag_entropy(args, bundle: ModelBundle) -> int:
    profile = diagnostics.entropy_profile(bundle)
    _write_csv(args.out, ["block", "entropy"], [[i, f"{h:.6f}"] for i, h in profile])
    for i, h in profile:
        print(f"block {i}: entropy {h:.4f}")
    try:
        start = find_suppression_start(bundle, SuppressionConfig())
        print(f"auto suppression start: s={start}")
    except SurgeryError as exc:
        print(f"auto suppression start: {exc}")
    return 0


def _diag_global_tokens(args, parser, bundle: ModelBundle) -> int:
    if not args.image:
        parser.error("--report global-tokens requires --image")
    image = prepare_classification_input(read_ppm(args.image), bundle)
    out = encode(image, bundle, EncodeMode(variant="vanilla"))
    fusion = FusionConfig()
    rows = []
    maps = out.record.maps[:-1]
    for i, attn in enumerate(maps):
        found, columns = detect_global_tokens(attn, fusion)
        scores = global_token_scores(attn, fusion.scale)
        rows.append([i, int(found), len(columns), f"{float(scores.max()):.4f}"])
    _write_csv(args.out, ["block", "detected", "global_count", "max_score"], rows)
    try:
        g = find_emergence_block(maps, fusion)
        _, columns = detect_global_tokens(maps[g], fusion)
        print(f"emergence block g={g}, global patch columns: {columns}")
    except SurgeryError as exc:
        print(str(exc))
    return 0


def _diag_value_sim(args, parser, bundle: ModelBundle) -> int:
    if not args.data:
        parser.error("--report value-sim requires --data")
    dataset = load_dataset(args.data)
    samples = dataset.samples[: args.limit] if args.limit else dataset.samples
    grid = bundle.config.grid
    modes = {
        "cs-off": EncodeMode(variant="clearclip"),
        "cs-on": EncodeMode(
            variant="gclip",
            suppression=SuppressionConfig(enabled=True, start=args.cs_start, dual_stream=True),
        ),
    }
    rows = []
    for sample in samples:
        image_u8 = read_ppm(sample.image_path)
        label = read_pgm(sample.label_path)
        size = bundle.config.image_size
        chw = prepare_classification_input(image_u8, bundle)
        # crop the label through the same geometry, then down to the patch grid
        resized = nearest_resize(label, *_short_side_shape(label.shape, size))
        top = (resized.shape[0] - size) // 2
        left = (resized.shape[1] - size) // 2
        label_grid = nearest_resize(resized[top:top + size, left:left + size], grid, grid)
        regions = [(-1 if v == dataset.ignore_index else int(v)) for v in label_grid.reshape(-1)]
        for tag, mode in modes.items():
            out = encode(chw, bundle, mode)
            try:
                in_in, in_out = diagnostics.value_similarity_report(out.record.values, regions)
            except ValueError as exc:
                print(f"{sample.stem} [{tag}]: skipped ({exc})")
                continue
            rows.append([sample.stem, tag, f"{in_in:.6f}", f"{in_out:.6f}"])
            print(f"{sample.stem} [{tag}]: in_in={in_in:.4f} in_out={in_out:.4f}")
    if not rows:
        raise DataError("value-sim: no sample produced at least two labeled regions")
    _write_csv(args.out, ["sample", "suppression", "in_in", "in_out"], rows)
    return 0


def _diag_agreement(args, parser, bundle: ModelBundle) -> int:
    if not args.data:
        parser.error("--report agreement requires --data")
    if not args.text or not args.classes:
        parser.error("--report agreement requires --text and --classes")
    bank = build_text_bank(args.text, args.classes)
    dataset = load_dataset(args.data)
    samples = dataset.samples[: args.limit] if args.limit else dataset.samples
    images = [prepare_classification_input(read_ppm(s.image_path), bundle) for s in samples]
    fraction, rows = diagnostics.token_cls_agreement(
        bundle, bank, images, token_choice=args.token, seed=args.seed
    )
    _write_csv(
        args.out,
        ["image", "token", "cls_class", "token_class", "agree"],
        [[samples[r["image"]].stem, r["token"], r["cls_class"], r["token_class"], int(r["agree"])]
         for r in rows],
    )
    print(f"{args.token}-token agreement with CLS over {len(rows)} images: {fraction:.4f}")
    return 0


def _short_side_shape(shape: tuple[int, int], target: int) -> tuple[int, int]:
    h, w = shape
    scale = target / min(h, w)
    return max(1, round(h * scale)), max(1, round(w * scale))


def _cmd_diagnose(args, parser) -> int:
    bundle = load_model_dir(args.model)
    if args.report == "entropy":
        return _diag_entropy(args, bundle)
    if args.report == "global-tokens":
        return _diag_global_tokens(args, parser, bundle)
    if args.report == "value-sim":
        return _diag_value_sim(args, parser, bundle)
    return _diag_agreement(args, parser, bundle)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vit-surgeon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    seg = sub.add_parser("segment", help="segment one image against a class list")
    seg.add_argument("--model", required=True, help="directory with model.gtf + model.cfg")
    seg.add_argument("--text", required=True, help="GTF file with a 'text_embeddings' tensor")
    seg.add_argument("--classes", required=True, help="text file, one class per line")
    seg.add_argument("--image", required=True, help="input image (binary P6)")
    seg.add_argument("--out", required=True, help="output mask path (binary P5)")
    seg.add_argument("--dump-logits", default=None, metavar="GTF",
                     help="also dump averaged logits to a GTF file")
    _add_mode_flags(seg)
    _add_window_flags(seg)

    ev = sub.add_parser("eval", help="mean IoU over a dataset directory")
    ev.add_argument("--model", required=True)
    ev.add_argument("--text", required=True)
    ev.add_argument("--classes", required=True)
    ev.add_argument("--data", required=True, help="dataset dir (images/, labels/, classes.txt)")
    _add_mode_flags(ev)
    _add_window_flags(ev)

    diag = sub.add_parser("diagnose", help="analysis reports as CSV")
    diag.add_argument("--model", required=True)
    diag.add_argument("--report", required=True,
                      choices=("entropy", "global-tokens", "value-sim", "agreement"))
    diag.add_argument("--out", required=True, help="CSV output path")
    diag.add_argument("--image", default=None)
    diag.add_argument("--data", default=None)
    diag.add_argument("--text", default=None)
    diag.add_argument("--classes", default=None)
    diag.add_argument("--token", choices=("global", "random"), default="global")
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--limit", type=int, default=0, help="cap sample count (0 = all)")
    diag.add_argument("--cs-start", type=_cs_start, default="auto")

    sup = sub.add_parser("suppress", help="write a channel-suppressed copy of a checkpoint")
    sup.add_argument("--model", required=True)
    sup.add_argument("--cs-start", type=_cs_start, default="auto")
    sup.add_argument("--out", required=True, help="output bundle directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "segment":
            return _cmd_segment(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "diagnose":
            return _cmd_diagnose(args, parser)
        return _cmd_suppress(args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except (DataError, ValueError, OSError) as exc:
        print(f"vit-surgeon {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, SurgeryError) as exc:
        print(f"vit-surgeon {args.command}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
