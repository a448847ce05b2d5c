"""``leyolo`` command line: analyze, compare, infer, dump-spec, verify, init-random.

Results go to stdout (or ``-o``); diagnostics go to stderr. Exit codes:
0 success, 1 failed verification or other error, 2 bad usage,
3 unmet input precondition, 4 missing file, 5 malformed file, 6 weights do
not fit the spec.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analyzer
from .archspec import ABLATION_STEPS, VARIANTS, build_spec, dump_spec, load_spec, parse_ablation
from .engine import bind, forward
from .errors import BindError, ConfigError, ImageFormatError, LeyoloError, PreconditionError, StoreFormatError
from .modelio import init_random, read_ppm, read_store, write_store
from .postprocess import DEFAULT_CONF, DEFAULT_IOU, DEFAULT_MAX_DET, detections_to_json, letterbox, postprocess

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_PRECONDITION = 3
EXIT_MISSING_FILE = 4
EXIT_BAD_FILE = 5
EXIT_BIND = 6


class CliError(Exception):
    def __init__(self, message, code=EXIT_FAILED):
        super().__init__(message)
        self.code = code


def _emit(text: str, path=None) -> None:
    if path:
        Path(path).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _spec_from_args(args):
    if getattr(args, "spec", None):
        return load_spec(args.spec)
    ablation = parse_ablation(getattr(args, "ablate", None) or [])
    return build_spec(args.variant, ablation, num_classes=args.num_classes)


def cmd_analyze(args) -> int:
    report = analyzer.count(_spec_from_args(args), args.imgsz)
    text = {"json": report.to_json, "table": report.to_table, "csv": report.to_csv}[args.format]()
    _emit(text, args.output)
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = analyzer.compare_variants(args.num_classes)
    _emit(json.dumps(rows, indent=2) if args.format == "json" else analyzer.format_comparison(rows), args.output)
    return EXIT_OK


def _require_file(path, what):
    if not Path(path).is_file():
        raise CliError(f"{what} not found: {path}", EXIT_MISSING_FILE)


def cmd_infer(args) -> int:
    if args.imgsz % 32 or args.imgsz <= 0:
        raise CliError(f"--imgsz must be a positive multiple of 32, got {args.imgsz}", EXIT_PRECONDITION)
    _require_file(args.weights, "weight file")
    _require_file(args.image, "image file")
    spec = _spec_from_args(args)
    model = bind(spec, read_store(args.weights))
    image = read_ppm(args.image)
    x, meta = letterbox(image, args.imgsz)
    dets = postprocess(forward(model, x), meta, image.shape[2:], args.conf, args.iou, args.max_det)
    _emit(detections_to_json(dets), args.output)
    print(f"{len(dets)} detection(s)", file=sys.stderr)
    return EXIT_OK


def cmd_dump_spec(args) -> int:
    _emit(dump_spec(_spec_from_args(args)), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(VARIANTS) if args.variant == "all" else [args.variant]
    failed = False
    for name in names:
        report = analyzer.verify_constraints(build_spec(name, num_classes=args.num_classes))
        print(f"{name}: {report}")
        failed |= not report.ok
    return EXIT_FAILED if failed else EXIT_OK


def cmd_init_random(args) -> int:
    store = init_random(_spec_from_args(args), args.seed)
    write_store(store, args.output)
    print(f"wrote {len(store)} tensors to {args.output}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leyolo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def variant_opts(sp, allow_all=False):
        choices = list(VARIANTS) + (["all"] if allow_all else [])
        sp.add_argument("--variant", default="all" if allow_all else "nano", choices=choices)
        sp.add_argument("--num-classes", type=int, default=80)

    a = sub.add_parser("analyze", help="parameter / FLOP report")
    variant_opts(a)
    a.add_argument("--imgsz", type=int, default=640)
    a.add_argument("--ablate", action="append", metavar="STEP|KEY=VALUE",
                   help=f"ablation step ({', '.join(ABLATION_STEPS)}) or field override; repeatable")
    a.add_argument("--spec", help="analyze a dumped spec instead of building one")
    a.add_argument("--format", choices=("table", "json", "csv"), default="table")
    a.add_argument("-o", "--output")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="all variants against reference cost figures")
    c.add_argument("--num-classes", type=int, default=80)
    c.add_argument("--format", choices=("table", "json"), default="table")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("infer", help="run detection on a PPM image")
    variant_opts(i)
    i.add_argument("--weights", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--imgsz", type=int, default=640)
    i.add_argument("--conf", type=float, default=DEFAULT_CONF)
    i.add_argument("--iou", type=float, default=DEFAULT_IOU)
    i.add_argument("--max-det", type=int, default=DEFAULT_MAX_DET)
    i.add_argument("--spec", help="use a dumped spec instead of --variant")
    i.add_argument("-o", "--output")
    i.set_defaults(func=cmd_infer)

    d = sub.add_parser("dump-spec", help="write the architecture spec as JSON")
    variant_opts(d)
    d.add_argument("--ablate", action="append", metavar="STEP|KEY=VALUE")
    d.add_argument("-o", "--output")
    d.set_defaults(func=cmd_dump_spec)

    v = sub.add_parser("verify", help="check architecture constraints")
    variant_opts(v, allow_all=True)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("init-random", help="write deterministic random weights")
    variant_opts(r)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--spec", help="use a dumped spec instead of --variant")
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_init_random)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (StoreFormatError, ImageFormatError) as exc:
        print(f"error: malformed file: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BIND
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LeyoloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
