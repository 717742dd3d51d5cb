"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 corrupt or inconsistent
input, 3 invalid arguments, 4 state misuse (already converted, not yet
converted, state in use).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import __version__
from .advisor import DEFAULT_EPSILON, DEFAULT_THRESHOLD, analyze
from .convert import ConvertMode, Variant, convert
from .errors import (AlreadyConverted, AnalysisFailed, BadTrace, DebloatError, ExportBeforeConvert,
                     ImageError, InvalidBaseDepth, IoError, StateError)
from .fixtures import FIXTURES, write_fixture
from .imageio import load_image, store_image
from .layers import MB, account_sizes
from .pipeline import AccessTrace, export_fleet, profile, record_command_trace, verify
from .state import StateMeta, is_state_dir, load_state, locked, save_state

log = logging.getLogger("debloatfs")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_ARGS, EXIT_STATE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def fmt_mb(n: int) -> str:
    return f"{n / MB:.2f}".rstrip("0").rstrip(".") + " MB"


def reduction(before: int, after: int) -> float:
    return 100.0 * (before - after) / before if before else 0.0


def fmt_pct(p: float) -> str:
    return f"{p:.1f}".rstrip("0").rstrip(".") + "%"


def _write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    with os.fdopen(fd, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    os.replace(tmp, path)


def cmd_convert(args) -> int:
    mode = ConvertMode.parse(args.mode)
    if args.base_depth is not None and mode.variant is not Variant.SEMI_SHARING:
        raise UsageError("--base-depth only applies to --mode semi-sharing")
    if args.base_depth is not None and args.base_depth < 0:
        raise InvalidBaseDepth("--base-depth must be >= 0")
    if is_state_dir(args.state):
        raise AlreadyConverted(f"{args.state} already holds converted state")
    for image in args.images:
        if is_state_dir(image):
            raise AlreadyConverted(f"{image} is a converted state, not an image")

    fleet, names = [], {}
    for image in args.images:
        bundle, fs = load_image(image)
        base = fs.container_id
        cid, k = base, 1
        while cid in names:
            k += 1
            cid = f"{base}#{k}"
        fs.container_id = cid
        names[cid] = bundle.manifest.image_name
        fleet.append(fs)
    original = account_sizes(fleet)

    if mode.variant is Variant.SEMI_SHARING:
        converted = [convert(fs, ConvertMode(Variant.SEMI_SHARING,
                                             fs.base_depth if args.base_depth is None else args.base_depth))
                     for fs in fleet]
    else:
        converted = convert(fleet, mode)

    meta = StateMeta(mode.variant.value, args.base_depth or 0, original.per_container, original.total, names)
    fresh = not Path(args.state).exists()
    try:
        with locked(args.state) as root:
            if is_state_dir(root):
                raise AlreadyConverted(f"{root} already holds converted state")
            save_state(root, converted, meta)
    except BaseException:
        if fresh:
            shutil.rmtree(args.state, ignore_errors=True)
        raise
    for fs in converted:
        kinds = ", ".join(f"{l.role.value}({len(l.children)} children)" if l.children else l.role.value
                          for l in fs.root_layers)
        print(f"{fs.container_id}: {mode.variant.flag}, roots: {kinds}")
    return EXIT_OK


def cmd_profile(args) -> int:
    traces = [AccessTrace.load(t) for t in args.trace]
    with locked(args.state) as root:
        fleet, meta = load_state(root)
        if len(traces) != len(fleet):
            raise UsageError(f"state has {len(fleet)} containers but {len(traces)} traces were given")
        runs = profile(fleet, traces)
        for run in runs:
            for ev in run.record:
                meta.events.append({"container": run.container_id, **ev.to_dict()})
        save_state(root, fleet, meta)
    for run in runs:
        for ev in run.record:
            where = "MISS" if ev.miss else f"hit {ev.hit}"
            moved = f" (moved from {ev.migrated_from})" if ev.migrated_from else ""
            print(f"{run.container_id} {ev.op:5} {ev.path} -> {where}{moved} probes={ev.probe_count}")
        for f in run.failures:
            print(f"{run.container_id} event {f.index} {f.path}: {f.reason}")
        print(f"{run.container_id}: {len(run.record)} accesses, {run.hits} hits, "
              f"{len(run.failures)} failed events")
    return EXIT_OK


def cmd_export(args) -> int:
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise IoError(f"output {out} exists and is not empty")
    with locked(args.state) as root:
        fleet, meta = load_state(root)
        if not fleet or not all(fs.converted for fs in fleet):
            raise ExportBeforeConvert(f"{root} holds no converted filesystem")
        exported = export_fleet(fleet)
        sizes = account_sizes(exported)
        if len(exported) == 1:
            fs = exported[0]
            store_image(fs, out, meta.image_names.get(fs.container_id))
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
            tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
            try:
                for fs in exported:
                    store_image(fs, tmp / fs.container_id.replace("/", "_"),
                                meta.image_names.get(fs.container_id))
                if out.exists():
                    out.rmdir()
                os.replace(tmp, out)
            except BaseException:
                shutil.rmtree(tmp, ignore_errors=True)
                raise

    report = {"mode": meta.mode, "containers": [], "original_total": meta.original_total,
              "debloated_total": sizes.total}
    for fs in exported:
        before = meta.original_sizes.get(fs.container_id, 0)
        after = sizes.per_container[fs.container_id]
        report["containers"].append({"container_id": fs.container_id, "original_bytes": before,
                                     "debloated_bytes": after,
                                     "reduction_percent": reduction(before, after),
                                     "layers": [l.digest for l in reversed(fs.root_layers)]})
        print(f"{fs.container_id}: {before} -> {after} bytes, {fmt_mb(before)} -> {fmt_mb(after)} "
              f"({fmt_pct(reduction(before, after))} reduction)")
    if len(exported) > 1:
        print(f"total: {meta.original_total} -> {sizes.total} bytes, {fmt_mb(meta.original_total)} -> "
              f"{fmt_mb(sizes.total)} ({fmt_pct(reduction(meta.original_total, sizes.total))} reduction)")
    if args.report:
        _write_json(args.report, report)
    return EXIT_OK


def cmd_verify(args) -> int:
    _, fs = load_image(args.image)
    report = verify(fs, AccessTrace.load(args.trace))
    if args.report:
        _write_json(args.report, report.to_json())
    for f in report.failures:
        print(f"FAIL event {f.index} {f.path}: {f.reason}")
    print("verification passed" if report.passed else f"verification failed: {len(report.failures)} events")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_analyze(args) -> int:
    if len(args.image) != len(args.trace):
        raise UsageError(f"{len(args.image)} --image but {len(args.trace)} --trace; pass one trace per image")
    fleet = []
    seen = set()
    for image in args.image:
        _, fs = load_image(image)
        base, k = fs.container_id, 1
        while fs.container_id in seen:
            k += 1
            fs.container_id = f"{base}#{k}"
        seen.add(fs.container_id)
        fleet.append(fs)
    traces = [AccessTrace.load(t) for t in args.trace]
    report = analyze(fleet, traces, args.threshold, args.epsilon)
    if args.report:
        _write_json(args.report, report.to_json())
    for cid, s, sp in zip(report.containers, report.no_sharing_sizes, report.fully_sharing_sizes):
        print(f"{cid}: no-sharing {s} bytes ({fmt_mb(s)}), fully-sharing {sp} bytes ({fmt_mb(sp)})")
    print(f"total: no-sharing {report.no_sharing_total} bytes, fully-sharing {report.fully_sharing_total} bytes")
    print(f"alpha = {report.alpha} bytes, beta = {report.beta} bytes")
    print(f"theta = {report.theta:.6g}")
    print(f"recommendation: {report.recommendation.flag}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    for path in write_fixture(args.name, args.out):
        print(path)
    return EXIT_OK


def cmd_record(args) -> int:
    if not args.command:
        raise UsageError("give the command to run after --")
    _, fs = load_image(args.image)
    trace = record_command_trace(fs, args.command, timeout=args.timeout)
    trace.save(args.out)
    print(f"recorded {len(trace)} reads to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="debloatfs", description="Debloat layered container images by profiling file use.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command_name", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="convert image(s) into a debloating state bundle")
    c.add_argument("images", nargs="+", metavar="IMAGE_DIR")
    c.add_argument("--mode", required=True, choices=[v.flag for v in Variant])
    c.add_argument("--base-depth", type=int, default=None,
                   help="bottom layers belonging to the base image (semi-sharing; default: from manifest)")
    c.add_argument("--state", required=True, help="state directory to create")
    c.set_defaults(func=cmd_convert)

    pr = sub.add_parser("profile", help="replay profiling traces through a converted state")
    pr.add_argument("--state", required=True)
    pr.add_argument("--trace", required=True, action="append",
                    help="trace file (JSON lines); repeat once per container, in convert order")
    pr.set_defaults(func=cmd_profile)

    e = sub.add_parser("export", help="write the debloated image(s)")
    e.add_argument("--state", required=True)
    e.add_argument("--out", required=True, help="output image dir (one subdir per container for fleets)")
    e.add_argument("--report", help="write a JSON size report here")
    e.set_defaults(func=cmd_export)

    v = sub.add_parser("verify", help="check a debloated image against a verification trace")
    v.add_argument("image", metavar="DEBLOATED_DIR")
    v.add_argument("--trace", required=True)
    v.add_argument("--report", help="write the JSON verification report here")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("analyze", help="compute theta and recommend no- or fully-sharing")
    a.add_argument("--image", required=True, action="append", help="image dir; repeat per container")
    a.add_argument("--trace", required=True, action="append", help="trace per --image, same order")
    a.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    a.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    a.add_argument("--report", help="write the JSON mode report here")
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("fixture", help="write a bundled example image and its trace")
    f.add_argument("name", choices=FIXTURES)
    f.add_argument("out")
    f.set_defaults(func=cmd_fixture)

    r = sub.add_parser("record", help="best-effort: derive a trace by running a command on the unpacked image")
    r.add_argument("image", metavar="IMAGE_DIR")
    r.add_argument("--out", required=True, help="trace file to write")
    r.add_argument("--timeout", type=float, default=None)
    r.set_defaults(func=cmd_record, command=[])
    r.epilog = "Give the command after --; {root} in it expands to the unpacked tree."
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    tail = None
    if "--" in argv:
        cut = argv.index("--")
        argv, tail = argv[:cut], argv[cut + 1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    if tail is not None:
        if args.command_name != "record":
            parser.error("'--' is only used by record")
        args.command = tail
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ImageError, BadTrace, AnalysisFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvalidBaseDepth, UsageError, IoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (AlreadyConverted, ExportBeforeConvert, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except DebloatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
