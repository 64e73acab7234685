"""tpch-mini: a deterministic lineitem-like table and the micro-benchmark.

Only the single-table queries are reproduced.  Arithmetic inside aggregate
arguments is outside the SQL subset, so Q6 sums ``l_extendedprice`` rather
than ``l_extendedprice * l_discount`` and Q1 drops the derived price sums.
"""

from __future__ import annotations

import datetime as _dt
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .engine import ClusterConfig, Database
from .types import ColumnType as T
from .types import Schema, date_to_days

LINEITEM = Schema.build(
    "lineitem",
    [
        ("l_orderkey", T.int64()),
        ("l_linenumber", T.int64()),
        ("l_partkey", T.int64()),
        ("l_suppkey", T.int64()),
        ("l_quantity", T.decimal(15, 2)),
        ("l_extendedprice", T.decimal(15, 2)),
        ("l_discount", T.decimal(15, 2)),
        ("l_tax", T.decimal(15, 2)),
        ("l_returnflag", T.varchar(1)),
        ("l_linestatus", T.varchar(1)),
        ("l_shipdate", T.date()),
        ("l_commitdate", T.date()),
        ("l_receiptdate", T.date()),
        ("l_shipinstruct", T.varchar(25)),
        ("l_shipmode", T.varchar(10)),
        ("l_comment", T.varchar(44)),
    ],
    pk_prefix_len=2,
)

QUERIES: dict[str, str] = {
    "Q0": "SELECT COUNT(*) FROM lineitem",
    "Q001": "SELECT COUNT(*) FROM lineitem WHERE l_shipdate < DATE '1998-07-01'",
    "Q002": "SELECT COUNT(*) FROM lineitem WHERE l_suppkey <= 10000",
    "Q1": (
        "SELECT l_returnflag, l_linestatus, SUM(l_quantity), SUM(l_extendedprice), "
        "AVG(l_quantity), AVG(l_extendedprice), AVG(l_discount), COUNT(*) FROM lineitem "
        "WHERE l_shipdate <= DATE '1998-12-01' - INTERVAL '90' DAY "
        "GROUP BY l_returnflag, l_linestatus"
    ),
    "Q6": (
        "SELECT SUM(l_extendedprice) FROM lineitem "
        "WHERE l_shipdate >= DATE '1994-01-01' "
        "AND l_shipdate < DATE '1994-01-01' + INTERVAL '1' YEAR "
        "AND l_discount BETWEEN 0.05 AND 0.07 AND l_quantity < 24"
    ),
}

_INSTRUCT = ("DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN")
_MODES = ("REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB")
_WORDS = (
    "furiously", "carefully", "quickly", "blithely", "slyly", "ironic", "final", "regular",
    "express", "pending", "bold", "even", "special", "deposits", "requests", "accounts",
    "packages", "theodolites", "pinto", "beans", "foxes", "ideas", "sleep", "haggle",
)
_START = date_to_days(_dt.date(1992, 1, 1))
_END = date_to_days(_dt.date(1998, 8, 2))
_CURRENT = date_to_days(_dt.date(1995, 6, 17))
N_SUPPLIERS = 20000


def generate(rows: int, seed: int = 0) -> list[tuple]:
    """``rows`` lineitem rows in PK order; orders carry 1 to 7 lines."""
    rng = random.Random(seed)
    out: list[tuple] = []
    order = 0
    while len(out) < rows:
        order += 1
        orderdate = rng.randint(_START, _END - 151)
        for line in range(1, rng.randint(1, 7) + 1):
            if len(out) >= rows:
                break
            qty = rng.randint(1, 50)
            partkey = rng.randint(1, 200000)
            price = 90000 + (partkey // 10) % 20001 + 100 * (partkey % 1000)
            ship = orderdate + rng.randint(1, 121)
            commit = orderdate + rng.randint(30, 90)
            receipt = ship + rng.randint(1, 30)
            if receipt <= _CURRENT:
                flag = "R" if rng.random() < 0.5 else "A"
            else:
                flag = "N"
            status = "O" if ship > _CURRENT else "F"
            comment = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(2, 5)))[:44]
            out.append(
                (
                    order,
                    line,
                    partkey,
                    rng.randint(1, N_SUPPLIERS),
                    qty * 100,
                    qty * price,
                    rng.randint(0, 10),
                    rng.randint(0, 8),
                    flag,
                    status,
                    ship,
                    commit,
                    receipt,
                    rng.choice(_INSTRUCT),
                    rng.choice(_MODES),
                    comment,
                )
            )
    return out


def make_database(rows: int, seed: int = 0, config: Optional[ClusterConfig] = None) -> Database:
    return Database.create(LINEITEM, generate(rows, seed), config)


MODES = {"off": (False, 1), "ndp": (True, 1), "ndp_pq": (True, 4)}


def _reduction(base: float, new: float) -> Optional[float]:
    if base == 0:
        return None
    return 1.0 - new / base


@dataclass
class BenchReport:
    scale: int
    seed: int
    queries: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"scale": self.scale, "seed": self.seed, "queries": self.queries}

    def write(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, default=str))

    def table(self) -> str:
        head = f"{'query':6} {'mode':7} {'bytes_on_wire':>14} {'rows_local':>11} {'wall_s':>8}"
        lines = [head, "-" * len(head)]
        for name, q in self.queries.items():
            for mode, m in q["modes"].items():
                lines.append(
                    f"{name:6} {mode:7} {m['bytes_on_wire']:>14} "
                    f"{m['rows_evaluated_locally']:>11} {m['wall_time']:>8.3f}"
                )
            r = q["reductions"]
            lines.append(
                f"{'':6} reduce  data={_pct(r['data_reduction'])} cpu={_pct(r['cpu_reduction'])} "
                f"runtime={_pct(r['runtime_reduction'])} pq_runtime={_pct(r['pq_runtime_reduction'])}"
            )
        return "\n".join(lines)


def _pct(x: Optional[float]) -> str:
    return "n/a" if x is None else f"{100 * x:.1f}%"


def run_bench(
    db: Database,
    scale: int,
    seed: int,
    queries: Optional[dict[str, str]] = None,
    dop: int = 4,
) -> BenchReport:
    """Run every query cold under NDP off, NDP, and NDP with parallel query."""
    report = BenchReport(scale, seed)
    modes = dict(MODES, ndp_pq=(True, dop))
    for name, sql in (queries or QUERIES).items():
        per_mode = {}
        results = {}
        for mode, (ndp, d) in modes.items():
            db.buffer_pool.clear()
            db.sal.forget_descriptors()
            res = db.run_query(sql, ndp=ndp, dop=d)
            m = res.metrics.to_dict()
            m["flags"] = {"project": res.flags.project, "filter": res.flags.filter, "aggregate": res.flags.aggregate}
            per_mode[mode] = m
            results[mode] = res.rows
        off, on, pq = per_mode["off"], per_mode["ndp"], per_mode["ndp_pq"]
        report.queries[name] = {
            "sql": sql,
            "rows": [list(r) for r in results["off"]],
            "results_match": results["off"] == results["ndp"] == results["ndp_pq"],
            "modes": per_mode,
            "reductions": {
                "data_reduction": _reduction(off["bytes_on_wire"], on["bytes_on_wire"]),
                "cpu_reduction": _reduction(off["rows_evaluated_locally"], on["rows_evaluated_locally"]),
                "runtime_reduction": _reduction(off["wall_time"], on["wall_time"]),
                "pq_runtime_reduction": _reduction(on["wall_time"], pq["wall_time"]),
            },
        }
    return report
