"""``segchain`` command line.

Exit codes: 0 success, 1 chain verification failure, 2 usage or
argument error, 3 unreadable or undecodable input, 4 provenance mismatch.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .chain import ChainConfig, verify_full_chain
from .errors import (
    ConfigError,
    DecodeError,
    IntegrityError,
    OrderingError,
    ProvenanceError,
    SegchainError,
    ValidationError,
)
from .harness import ExperimentFailed, load_config, pivot_report, read_report, run_experiment
from .retention import NodeStore, RetentionMode
from .snapshot import (
    PREAMBLE_SIZE,
    SegmentFile,
    Snapshot,
    export_snapshot,
    import_snapshot,
    persist_segment,
    read_segment_file,
    read_snapshot,
    write_snapshot,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_UNREADABLE = 3
EXIT_PROVENANCE = 4


def _hex32(text: str) -> bytes:
    try:
        raw = bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not hex: {text!r}") from None
    if len(raw) != 32:
        raise argparse.ArgumentTypeError("expected 32 bytes (64 hex digits)")
    return raw


def _range(text: str) -> tuple[int, int]:
    try:
        a, b = text.split("..")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like A..B, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segchain", description="Time-segmented chain simulator and tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides output_dir in the config)")

    ver = sub.add_parser("verify", help="verify a chain of segment files")
    ver.add_argument("files", nargs="+", type=Path)
    ver.add_argument("--chain-id", required=True, type=_hex32)
    ver.add_argument("--trusted-head", type=_hex32, help="digest the final block must have")

    exp = sub.add_parser("export-snapshot", help="bundle segment files into a snapshot")
    exp.add_argument("--from", dest="source", required=True, type=Path)
    exp.add_argument("--range", dest="seg_range", required=True, type=_range)
    exp.add_argument("--out", required=True, type=Path)

    imp = sub.add_parser("import-snapshot", help="check a snapshot and optionally unpack it")
    imp.add_argument("file", type=Path)
    imp.add_argument("--trusted-head", type=_hex32)
    imp.add_argument("--into", type=Path, help="write the imported segments here")

    tam = sub.add_parser("tamper", help="xor one byte of a file in place")
    tam.add_argument("file", type=Path)
    tam.add_argument("--offset", required=True, type=int)
    tam.add_argument("--xor", required=True, type=lambda s: int(s, 0))

    rep = sub.add_parser("report", help="print a plot-ready wide CSV for an experiment directory")
    rep.add_argument("dir", type=Path)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    handler = {
        "run": cmd_run,
        "verify": cmd_verify,
        "export-snapshot": cmd_export,
        "import-snapshot": cmd_import,
        "tamper": cmd_tamper,
        "report": cmd_report,
    }[args.command]
    return handler(args)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    if cfg.output_dir is None:
        print("error: no output directory (use --out)", file=sys.stderr)
        return EXIT_USAGE
    try:
        path = run_experiment(cfg)
    except ExperimentFailed as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(path)
    return EXIT_OK


def load_segment_files(paths: list[Path]) -> list[SegmentFile]:
    files = [read_segment_file(p) for p in paths]
    files.sort(key=lambda f: f.segment.segment_id)
    return files


def verify_command(paths: list[Path], expect_chain_id: bytes, trusted_head: bytes | None = None,
                   out=None) -> int:
    """Without ``trusted_head`` the final block's timestamp is not covered by any hash."""
    out = out or sys.stdout
    try:
        files = load_segment_files(paths)
    except (OSError, DecodeError) as err:
        print(f"unreadable: {err}", file=out)
        return EXIT_UNREADABLE
    try:
        for f in files:
            seg = f.segment
            if f.chain_id != expect_chain_id:
                raise ValidationError("file header names a different chain", segment_id=seg.segment_id,
                                      field="chain_id")
            if seg.blocks and seg.blocks[0].segment_id != seg.segment_id:
                raise ValidationError("file header segment id disagrees with its blocks",
                                      segment_id=seg.segment_id, field="segment_id")
        verify_full_chain([f.segment for f in files], ChainConfig(expect_chain_id), trusted_head)
    except (ValidationError, OrderingError) as err:
        print(f"FAIL: {err}", file=out)
        return EXIT_INVALID
    total = sum(len(f.segment.blocks) for f in files)
    print(f"OK: {len(files)} segments, {total} blocks", file=out)
    return EXIT_OK


def cmd_verify(args) -> int:
    return verify_command(args.files, args.chain_id, args.trusted_head)


def cmd_export(args) -> int:
    try:
        files = load_segment_files(sorted(args.source.glob("*.segc")))
    except (OSError, DecodeError) as err:
        print(f"unreadable: {err}", file=sys.stderr)
        return EXIT_UNREADABLE
    store = NodeStore(RetentionMode.segmented_cold())
    try:
        for f in files:
            for block in f.segment.blocks:
                store.ingest_block(block)
        snap = export_snapshot(store, *args.seg_range)
    except SegchainError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    write_snapshot(snap, args.out)
    print(f"{args.out} head={snap.head_hash.hex()}")
    return EXIT_OK


def cmd_import(args) -> int:
    try:
        snap: Snapshot = read_snapshot(args.file)
    except (OSError, DecodeError) as err:
        print(f"unreadable: {err}", file=sys.stderr)
        return EXIT_UNREADABLE
    try:
        store = import_snapshot(snap, args.trusted_head)
    except ProvenanceError as err:
        print(f"PROVENANCE: {err}", file=sys.stderr)
        return EXIT_PROVENANCE
    except IntegrityError as err:
        print(f"INTEGRITY: {err}", file=sys.stderr)
        return EXIT_INVALID
    status = "VERIFIED" if store.provenance_verified else "UNVERIFIED-PROVENANCE"
    print(f"{status} segments {snap.first_segment}..{snap.last_segment} head={snap.head_hash.hex()}")
    if args.into is not None:
        for sid in store.segment_ids:
            persist_segment(store.segment(sid), args.into)
    return EXIT_OK


def tamper_file(path: Path, offset: int, xor: int) -> tuple[int, int]:
    """Xor the byte at ``offset`` in place; returns (old, new)."""
    if not 0 <= xor <= 0xFF:
        raise ValueError("xor value must be a single byte")
    data = bytearray(path.read_bytes())
    if offset < PREAMBLE_SIZE:
        raise PermissionError("refusing to tamper with the magic/version preamble")
    if offset >= len(data):
        raise IndexError(f"offset {offset} beyond file length {len(data)}")
    old = data[offset]
    data[offset] = old ^ xor
    path.write_bytes(bytes(data))
    return old, data[offset]


def cmd_tamper(args) -> int:
    try:
        old, new = tamper_file(args.file, args.offset, args.xor)
    except (PermissionError, IndexError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"unreadable: {err}", file=sys.stderr)
        return EXIT_UNREADABLE
    print(f"offset {args.offset}: 0x{old:02x} -> 0x{new:02x}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = args.dir / "report.csv" if args.dir.is_dir() else args.dir
    try:
        rows = read_report(path)
    except (OSError, ConfigError) as err:
        print(f"unreadable: {err}", file=sys.stderr)
        return EXIT_UNREADABLE
    header, body = pivot_report(rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
