"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 data integrity (bad or inconsistent
input files), 3 configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .annotations import (
    IndexBase,
    SchemaMap,
    is_converted,
    parse_annotations,
    to_coco,
)
from .errors import ConfigError, DentexError, ParseError, RangeError
from .evaluate import LABEL_TYPES, EvalConfig, evaluate
from .formats import PredictionRecord, dump_predictions, load_images, read_json, write_json_atomic, write_text_atomic
from .geometry import BBox, CropFrame, clamp_box, rescale_box, restore_to_image
from .pipeline import load_config, run_fuse

log = logging.getLogger("dentexfuse")

INDEX_BASES = [b.value for b in IndexBase]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text: str, n: int) -> tuple[int, ...]:
    parts = text.replace("x", ",").split(",")
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated integers, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _floats(text: str, n: int) -> tuple[float, ...]:
    parts = text.split(",")
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    return _ints(text, 2)  # type: ignore[return-value]


def _box(text: str) -> BBox:
    return BBox(*_floats(text, 4))


def _score(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"score must be in [0, 1], got {v}")
    return v


def _schema(args) -> SchemaMap:
    if not getattr(args, "schema_map", None):
        return SchemaMap()
    try:
        return SchemaMap.from_mapping(read_json(args.schema_map))
    except RangeError as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ commands


def cmd_convert(args) -> int:
    data = read_json(args.input)
    if isinstance(data, dict) and is_converted(data):
        out = data
    else:
        aset = parse_annotations(data, args.id_base, schema=_schema(args))
        out = to_coco(aset, diseases_only=args.diseases_only)
    write_json_atomic(args.output, out)
    log.info("wrote %s (%d objects)", args.output, len(out["annotations"]))
    return 0


def cmd_rasterize(args) -> int:
    from .rasterize import Labeling, crop_mask, rasterize_objects, resize_mask, write_mask

    aset = parse_annotations(read_json(args.annotations), args.id_base, schema=_schema(args))
    labeling = Labeling.quadrant_9(args.quadrant) if args.quadrant else Labeling()
    wanted = set(args.image_id or [im.id for im in aset.images])
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for im in aset.images:
        if im.id not in wanted:
            continue
        mask = rasterize_objects(aset.objects_for(im.id), im.width, im.height, labeling)
        if args.crop:
            mask = crop_mask(mask, args.crop)
        if args.size:
            mask = resize_mask(mask, *args.size)
        suffix = f"_q{args.quadrant}" if args.quadrant else ""
        write_mask(mask, out_dir / f"{im.id}{suffix}.png")
        if mask.skipped:
            log.warning("image %d: %d object(s) skipped", im.id, mask.skipped)
    return 0


def cmd_boxes(args) -> int:
    from .annotations import ToothId, to_global
    from .rasterize import OTHER_QUADRANT, largest_component_boxes, read_mask

    mask = read_mask(args.mask)
    boxes = largest_component_boxes(mask, args.connectivity)
    frame = None
    if args.quadrant and args.frame:
        if not args.source_size:
            raise ConfigError("--frame needs --source-size")
        frame = CropFrame(args.frame, args.source_size, (mask.width, mask.height))
    records = []
    for label, box in sorted(boxes.items()):
        if args.quadrant:
            if label == OTHER_QUADRANT or not 1 <= label <= 8:
                continue
            category = to_global(ToothId(args.quadrant, label))
            if frame is not None:
                box = restore_to_image(box, frame)
        else:
            category = label
            if args.source_size and (mask.width, mask.height) != tuple(args.source_size):
                box = clamp_box(rescale_box(box, (mask.width, mask.height), args.source_size), *args.source_size)
        records.append(PredictionRecord(args.image_id, box, category, None, args.source_id))
    payload = dump_predictions(records)
    if args.output:
        write_json_atomic(args.output, payload)
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_fuse(args) -> int:
    overrides = {"min_score": args.min_score, "index_base": args.index_base, "jobs": args.jobs,
                 "connectivity": args.connectivity}
    if args.keep_unmatched:
        overrides["keep_unmatched"] = True
    config = load_config(args.config, overrides)
    result = run_fuse(config)
    write_json_atomic(args.output, result.submission)
    if args.report:
        write_json_atomic(args.report, result.report)
    log.info("%d finding(s) written to %s", len(result.findings), args.output)
    return 0


def cmd_eval(args) -> int:
    gt = parse_annotations(read_json(args.gt), args.id_base, schema=_schema(args))
    submission = read_json(args.submission)
    if not isinstance(submission, list):
        raise ParseError("submission must be a JSON array", args.submission)
    cfg = EvalConfig(max_detections=args.max_detections)
    reports = {}
    tables = []
    for label_type in args.label_type or LABEL_TYPES:
        rep = evaluate(gt, submission, cfg.with_label_type(label_type), args.index_base)
        reports[label_type] = rep.to_dict()
        tables.append((label_type, rep.per_class_table(args.delimiter)))
        print(f"{label_type:<12} AR={rep.ar:.3f} AP={rep.ap:.3f} AP50={rep.ap50:.3f} AP75={rep.ap75:.3f}")
    if args.output:
        write_text_atomic(args.output, json.dumps(reports, indent=2) + "\n")
    if args.table:
        text = "".join(f"# {lt}\n{t}" for lt, t in tables)
        write_text_atomic(args.table, text)
    return 0


def _parse_plan(text: str) -> tuple[tuple[int, str], ...]:
    plan = []
    for item in filter(None, (p.strip() for p in text.split(","))):
        g, _, name = item.partition(":")
        if not name:
            raise argparse.ArgumentTypeError(f"plan items look like '<global id>:<disease>', got {item!r}")
        plan.append((int(g), name))
    return tuple(plan)


def cmd_synth(args) -> int:
    import numpy as np

    from .synth import SynthSpec, generate_dataset, random_plan, write_dataset

    spec = SynthSpec(
        seed=args.seed, image_size=args.size, jitter=args.jitter, drop_rate=args.drop_rate,
        false_positive_rate=args.fp_rate, disease_plan=args.plan or (), crop_size=args.crop_size,
    )
    plans = None
    if not args.plan:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed, spawn_key=(2**31,))))
        plans = [random_plan(rng, spec.teeth_present) for _ in range(args.images)]
    ds = generate_dataset(spec, args.images, plans)
    config = write_dataset(ds, args.output, id_base=args.id_base)
    print(config)
    return 0


def cmd_overlay(args) -> int:
    from .overlay import render

    images = {im.id: im for im in load_images(args.images)}
    records = read_json(args.submission)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_image: dict[int, list] = {}
    for r in records:
        by_image.setdefault(int(r["image_id"]), []).append(r)
    for image_id, im in images.items():
        src = Path(args.image_dir) / im.file_name
        if not src.is_file():
            log.warning("image %d: %s not found, skipped", image_id, src)
            continue
        n = render(src, by_image.get(image_id, []), out_dir / f"{Path(im.file_name).stem}_overlay.png",
                   args.min_score)
        log.info("image %d: drew %d finding(s)", image_id, n)
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dentexfuse", description="Dental panoramic detection post-processing pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def id_base(p):
        p.add_argument("--id-base", choices=INDEX_BASES, default="zero_based",
                       help="index base of category values in raw annotation files")
        p.add_argument("--schema-map", help="JSON file overriding the raw category field names")

    p = sub.add_parser("convert", help="raw challenge annotations to COCO detection format")
    p.add_argument("input")
    p.add_argument("output")
    id_base(p)
    p.add_argument("--diseases-only", action="store_true", help="keep only the disease label as category")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("rasterize", help="draw label masks from annotation polygons")
    p.add_argument("annotations")
    p.add_argument("output", help="output directory for <image_id>[_q<quadrant>].png")
    id_base(p)
    p.add_argument("--image-id", type=int, action="append")
    p.add_argument("--quadrant", type=int, choices=[1, 2, 3, 4],
                   help="label teeth 1..8 within this quadrant and 9 elsewhere")
    p.add_argument("--crop", type=_box, help="x,y,w,h crop applied after rasterizing")
    p.add_argument("--size", type=_size, help="w,h nearest-neighbour resize applied last")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("boxes", help="largest-component boxes from a label mask")
    p.add_argument("mask")
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--source-id")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    p.add_argument("--quadrant", type=int, choices=[1, 2, 3, 4], help="mask is a quadrant mask for this quadrant")
    p.add_argument("--frame", type=_box, help="x,y,w,h crop box to restore quadrant boxes into")
    p.add_argument("--source-size", type=_size, help="w,h of the whole image")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_boxes)

    p = sub.add_parser("fuse", help="label matching and postprocessing from a run configuration")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True, help="submission JSON")
    p.add_argument("--report", help="run report JSON")
    p.add_argument("--min-score", type=_score)
    p.add_argument("--index-base", choices=INDEX_BASES)
    p.add_argument("--connectivity", type=int, choices=[4, 8])
    p.add_argument("--keep-unmatched", action="store_true")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="COCO-style AP/AR per label type")
    p.add_argument("gt")
    p.add_argument("submission")
    id_base(p)
    p.add_argument("--index-base", choices=INDEX_BASES, default="one_based",
                   help="index base of the submission's category fields")
    p.add_argument("--label-type", choices=LABEL_TYPES, action="append")
    p.add_argument("--max-detections", type=int, default=100)
    p.add_argument("-o", "--output", help="report JSON")
    p.add_argument("--table", help="per-class table")
    p.add_argument("--delimiter", default=",")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset and run configuration")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=1)
    p.add_argument("--size", type=_size, default=(1024, 512))
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--drop-rate", type=_score, default=0.0)
    p.add_argument("--fp-rate", type=_score, default=0.0)
    p.add_argument("--plan", type=_parse_plan, help="'<global id>:<disease>,...' used for every image")
    p.add_argument("--crop-size", type=_size)
    p.add_argument("--id-base", choices=INDEX_BASES, default="zero_based")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("overlay", help="draw findings onto source images")
    p.add_argument("submission")
    p.add_argument("images", help="annotation-style document listing the images")
    p.add_argument("image_dir")
    p.add_argument("output")
    p.add_argument("--min-score", type=_score, default=0.3)
    p.set_defaults(func=cmd_overlay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DentexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
