"""``ndpdb`` command line: load, query, serve-pagestore, bench, disasm.

Exit codes: 0 ok, 1 user error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from .btree import BTreeError, DuplicateKeyError, PageVersionStore
from .compute import IntegrityError, ScanError
from .engine import ClusterConfig, Database, format_value
from .pagestore import PageStoreConfig, PageStoreNode, PageStoreServer, parse_address
from .predicate import compile_predicate, disassemble
from .sql import SqlError
from .types import Schema, SchemaError

log = logging.getLogger("ndpdb")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    pass


def read_csv(schema: Schema, path: Path | str) -> list[tuple]:
    """Parse a CSV into typed rows; a header row naming the columns is skipped."""
    rows = []
    seen: dict[tuple, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue
            if lineno == 1 and tuple(c.strip() for c in rec) == schema.names:
                continue
            if len(rec) != len(schema.columns):
                raise UserError(f"{path}:{lineno}: expected {len(schema.columns)} fields, got {len(rec)}")
            try:
                row = tuple(c.type.parse(v) for c, v in zip(schema.columns, rec))
            except SchemaError as exc:
                raise UserError(f"{path}:{lineno}: {exc}") from None
            key = schema.key_of(row)
            if key in seen:
                raise UserError(f"{path}:{lineno}: duplicate primary key {key} (first on line {seen[key]})")
            seen[key] = lineno
            rows.append(row)
    return rows


def _config(path: Optional[str]) -> ClusterConfig:
    if path is None:
        return ClusterConfig()
    try:
        return ClusterConfig.from_file(path)
    except (OSError, ValueError) as exc:
        raise UserError(f"cluster config {path}: {exc}") from None


def cmd_load(args) -> int:
    try:
        schema = Schema.from_json(json.loads(Path(args.schema).read_text()))
    except (OSError, ValueError) as exc:
        raise UserError(f"schema {args.schema}: {exc}") from None
    rows = read_csv(schema, args.csv)
    cfg = _config(args.cluster)
    if args.slice_size:
        cfg.slice_size_pages = args.slice_size
    if args.page_size:
        cfg.page_size = args.page_size
    db = Database.create(schema, rows, cfg)
    try:
        db.persist(args.slices)
    finally:
        db.close()
    print(f"loaded {len(rows)} rows into {len(db.tree.leaf_chain())} leaf pages at {args.slices}")
    return EXIT_OK


def _open(args) -> Database:
    cfg = _config(args.cluster)
    slices = args.slices or cfg.slices
    if not slices:
        raise UserError("no table: pass --slices or set 'slices' in the cluster config")
    try:
        return Database.open(slices, cfg)
    except (BTreeError, OSError) as exc:
        raise UserError(str(exc)) from None


def cmd_query(args) -> int:
    db = _open(args)
    try:
        res = db.run_query(args.sql, ndp=args.ndp == "on", dop=args.pq, explain=args.explain)
        if args.explain:
            print("\n".join(res.explain))
            return EXIT_OK
        print("\t".join(res.columns))
        for row in res.rows:
            print("\t".join(format_value(v) for v in row))
        if args.metrics:
            print(json.dumps(res.metrics.to_dict(), indent=2), file=sys.stderr)
    finally:
        db.close()
    return EXIT_OK


def cmd_serve(args) -> int:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UserError(f"config {args.config}: {exc}") from None
    cfg = PageStoreConfig.from_dict(raw)
    catalog = json.loads((Path(args.slices) / "catalog.json").read_text())
    wanted = [int(s) for s in args.slice_ids.split(",")] if args.slice_ids else None
    versions = PageVersionStore.read_slices(args.slices, wanted)
    node = PageStoreNode(versions, cfg, catalog["slice_size_pages"], args.node_id)
    server = PageStoreServer(node, parse_address(args.listen)).start()
    print(f"page store {args.node_id} serving {len(versions)} pages on {server.address}", flush=True)
    stop = threading.Event()
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        node.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    from .tpch import make_database, run_bench

    cfg = _config(args.cluster)
    if args.latency_ms is not None:
        cfg.pagestore.page_read_latency_ms = args.latency_ms
    if args.io_threads is not None:
        cfg.pagestore.io_threads = args.io_threads
    db = make_database(args.scale, args.seed, cfg)
    try:
        report = run_bench(db, args.scale, args.seed, dop=args.pq)
    finally:
        db.close()
    print(report.table())
    if args.report:
        report.write(args.report)
    return EXIT_OK


def cmd_disasm(args) -> int:
    db = _open(args)
    try:
        spec, _flags = db.plan(db.bind(args.sql))
    finally:
        db.close()
    if spec.pushed is None:
        print("; nothing pushable")
        return EXIT_OK
    print(disassemble(compile_predicate(spec.pushed, db.schema), db.schema))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ndpdb", description="Desk-scale NDP database engine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("load", help="load a CSV into slice files")
    s.add_argument("--schema", required=True)
    s.add_argument("--csv", required=True)
    s.add_argument("--slices", required=True)
    s.add_argument("--cluster")
    s.add_argument("--slice-size", type=int)
    s.add_argument("--page-size", type=int)
    s.set_defaults(func=cmd_load)

    s = sub.add_parser("query", help="run one SQL query")
    s.add_argument("--sql", required=True)
    s.add_argument("--ndp", choices=("on", "off"), default="on")
    s.add_argument("--pq", type=int, default=1)
    s.add_argument("--explain", action="store_true")
    s.add_argument("--cluster")
    s.add_argument("--slices")
    s.add_argument("--metrics", action="store_true", help="print metrics JSON to stderr")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("serve-pagestore", help="serve slices over TCP")
    s.add_argument("--slices", required=True)
    s.add_argument("--listen", default="127.0.0.1:0")
    s.add_argument("--config")
    s.add_argument("--slice-ids", help="comma-separated slice ids to host (default all)")
    s.add_argument("--node-id", default="ps0")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("bench", help="run a benchmark profile")
    s.add_argument("profile", choices=("tpch-mini",))
    s.add_argument("--scale", type=int, default=100000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.add_argument("--cluster")
    s.add_argument("--pq", type=int, default=4)
    s.add_argument("--latency-ms", type=float)
    s.add_argument("--io-threads", type=int)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("disasm", help="show the bytecode of a query's pushed predicate")
    s.add_argument("--sql", required=True)
    s.add_argument("--cluster")
    s.add_argument("--slices")
    s.set_defaults(func=cmd_disasm)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (UserError, SqlError, SchemaError, DuplicateKeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ScanError, IntegrityError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
