"""Offline conversion CLI: export-visual, export-text, convert-dataset."""

from __future__ import annotations

import argparse
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vit-surgeon-convert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    vis = sub.add_parser("export-visual", help="checkpoint -> model.gtf + model.cfg")
    vis.add_argument("--checkpoint", required=True,
                     help="HF model dir/hub id, or a torch state-dict / TorchScript file")
    vis.add_argument("--out", required=True, help="output bundle directory")
    vis.add_argument("--heads", type=int, default=None,
                     help="head count override for state-dict sources (default width/64)")
    vis.add_argument("--activation", choices=("quick-gelu", "exact-gelu"),
                     default="quick-gelu",
                     help="activation for state-dict sources (HF sources use their config)")

    txt = sub.add_parser("export-text", help="class list -> text_embeddings GTF")
    txt.add_argument("--checkpoint", required=True, help="HF model dir or hub id")
    txt.add_argument("--classes", required=True)
    txt.add_argument("--out", required=True, help="output GTF path")
    txt.add_argument("--single-template", action="store_true",
                     help="use only 'a photo of a {}.' instead of the template ensemble")

    ds = sub.add_parser("convert-dataset", help="benchmark -> images/labels/classes layout")
    ds.add_argument("--root", default=None, help="auto-detected tree (e.g. a VOC2012 root)")
    ds.add_argument("--split", default="val", help="split name for VOC trees")
    ds.add_argument("--images", default=None, help="generic mode: image directory")
    ds.add_argument("--labels", default=None, help="generic mode: label directory")
    ds.add_argument("--classes", default=None, help="generic mode: class list file")
    ds.add_argument("--ignore-value", type=int, default=None,
                    help="generic mode: label value remapped to 255")
    ds.add_argument("--limit", type=int, default=0, help="cap sample count (0 = all)")
    ds.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-visual":
            from .visual import export_visual

            cfg = export_visual(args.checkpoint, args.out, heads=args.heads,
                                activation=args.activation)
            print(f"exported: layers={cfg.layers} width={cfg.width} heads={cfg.heads} "
                  f"patch={cfg.patch} image_size={cfg.image_size} embed_dim={cfg.embed_dim} "
                  f"activation={cfg.activation}")
        elif args.command == "export-text":
            from .text import export_text_bank

            bank = export_text_bank(args.checkpoint, args.classes, args.out,
                                    template_set="single" if args.single_template else "ensemble")
            print(f"text bank written: {bank.shape[0]} classes x {bank.shape[1]} dims")
        else:
            from .datasets import convert_dataset, convert_generic

            if args.root:
                report = convert_dataset(args.root, args.out, split=args.split,
                                         limit=args.limit)
            else:
                if not (args.images and args.labels and args.classes):
                    print("convert-dataset needs --root or all of --images/--labels/--classes",
                          file=sys.stderr)
                    return 1
                report = convert_generic(args.images, args.labels, args.classes, args.out,
                                         ignore_value=args.ignore_value, limit=args.limit)
            report.print_table()
        return 0
    except (ValueError, OSError) as exc:
        print(f"vit-surgeon-convert {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
