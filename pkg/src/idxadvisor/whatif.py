"""Hypothetical index management and workload cost estimation.

Two interchangeable backends:

  * SimulatedEngine — a deterministic cost model over the catalog, cheap
    enough for thousands of evaluations in tests and label collection.
  * LiveEngine — a thin client over a DBMS with a hypothetical-index
    extension (HypoPG-style), using its size estimates and EXPLAIN costs.

Simulated cost model, per query q and index set I, summed over tables of q:

    P(t)       = WHERE predicates of q on t, with selectivities from the
                 column model (equality 1/ndv, range 1/3, LIKE prefix 1/10,
                 IN(k) min(1, k/ndv), conjunctions multiply, unknown 1/2)
    applicable = indexes on t whose leading column carries some p in P(t)
    matched    = longest prefix of the index whose columns all carry
                 predicates; matched selectivity multiplies each such
                 predicate once
    access(t)  = rows(t) without an applicable index, else
                 min over applicable of 0.5 * rows(t) * matched_sel
                                         + log2(rows(t) + 2)
    * 0.8 when a join column of q on t leads some index
    * 0.9 when q's GROUP BY or ORDER BY columns on t prefix some index
    floored at 1.0; cost(q, I) = sum of access(t)

Simulated index size: rows(table) * (sum of column widths + 8 B overhead),
reported in MiB-based MB.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import sqlparser as sp
from .catalog import Catalog
from .errors import (
    BackendError,
    DuplicateIndex,
    IndexNotFound,
    PredicateError,
    UnknownColumn,
    ZeroBaseline,
)
from .sql_features import QueryShape, Workload, parse_query

_MB = 1024 * 1024


@dataclass(frozen=True, order=True)
class IndexDef:
    """An ordered-column index on one table."""

    table: str
    columns: tuple[str, ...]

    def __post_init__(self):
        if not self.columns:
            raise ValueError("index needs at least one column")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError(f"duplicate columns in index on {self.table}")

    @property
    def name(self) -> str:
        return f"{self.table}_{'_'.join(self.columns)}_idx"

    @property
    def leading(self) -> str:
        return self.columns[0]

    def is_strict_prefix_of(self, other: "IndexDef") -> bool:
        return (self.table == other.table
                and len(self.columns) < len(other.columns)
                and other.columns[: len(self.columns)] == self.columns)

    def to_dict(self) -> dict:
        return {"table": self.table, "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, data: dict) -> "IndexDef":
        return cls(table=data["table"], columns=tuple(data["columns"]))


@dataclass(frozen=True)
class IndexAction:
    """CREATE or DROP of one index; the unit of recommendations and labels."""

    kind: str  # "create" | "drop"
    index: IndexDef

    def __post_init__(self):
        if self.kind not in ("create", "drop"):
            raise ValueError(f"bad action kind {self.kind!r}")

    @property
    def sort_key(self):
        return (self.kind, self.index.table, self.index.columns)

    def to_dict(self) -> dict:
        return {"action": self.kind, "table": self.index.table,
                "columns": list(self.index.columns)}

    @classmethod
    def from_dict(cls, data: dict) -> "IndexAction":
        return cls(kind=data["action"],
                   index=IndexDef(data["table"], tuple(data["columns"])))


def create(table: str, *columns: str) -> IndexAction:
    return IndexAction("create", IndexDef(table, tuple(columns)))


def drop(table: str, *columns: str) -> IndexAction:
    return IndexAction("drop", IndexDef(table, tuple(columns)))


@dataclass(frozen=True)
class HypoIndex:
    definition: IndexDef
    est_size_mb: float
    handle: int

    def __post_init__(self):
        if self.est_size_mb <= 0:
            raise ValueError("hypothetical index size must be positive")


@dataclass
class CostReport:
    per_query_cost: list[float]
    used_indexes: set[str] = field(default_factory=set)

    @property
    def total(self) -> float:
        return sum(self.per_query_cost)


def relative_cost_reduction(baseline: CostReport, current: CostReport) -> float:
    """(baseline - current) / baseline; negative values flag regressions."""
    if baseline.total <= 0:
        raise ZeroBaseline("baseline workload cost must be positive")
    return (baseline.total - current.total) / baseline.total


# --- simulated backend -------------------------------------------------------


def _literal_value(node: sp.Node):
    if isinstance(node, sp.Literal):
        if node.kind == "number":
            return float(node.value)
        if node.kind == "string":
            return node.value
        if node.kind == "bool":
            return node.value == "TRUE"
    return None


def _const_truth(node: sp.Node) -> bool | None:
    """Truth value of a constant comparison like 1 = 1, else None."""
    if isinstance(node, sp.Literal) and node.kind == "bool":
        return node.value == "TRUE"
    if not (isinstance(node, sp.BinOp)
            and node.op in ("=", "!=", "<>", "<", "<=", ">", ">=")):
        return None
    left = _literal_value(node.left)
    right = _literal_value(node.right)
    if left is None or right is None or type(left) is not type(right):
        return None
    ops = {
        "=": left == right,
        "!=": left != right,
        "<>": left != right,
        "<": left < right,
        "<=": left <= right,
        ">": left > right,
        ">=": left >= right,
    }
    return ops[node.op]


def _bare_column(node: sp.Node, table: str, catalog: Catalog) -> str | None:
    """Column name when node is a bare reference to a column of `table`."""
    if not isinstance(node, sp.ColumnRef):
        return None
    if node.qualifier is not None and node.qualifier != table:
        return None
    if catalog.table(table).has_column(node.name):
        return node.name
    return None


class SimulatedEngine:
    """Deterministic selectivity and cost model over a catalog.

    Shareable read-only; sessions created from it are independent.
    """

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._shape_cache: dict[str, QueryShape] = {}
        self._sel_cache: dict[tuple[str, str], float] = {}

    # engine protocol

    def session(self) -> "WhatIfSession":
        return WhatIfSession(backend="simulated", engine=self)

    def database_size_mb(self) -> float:
        return self.catalog.database_size_mb()

    def explain_ok(self, sql: str) -> bool:
        """Validity probe: parses and resolves against the catalog."""
        try:
            self.shape(sql)
            return True
        except Exception:
            return False

    def shape(self, sql: str) -> QueryShape:
        shape = self._shape_cache.get(sql)
        if shape is None:
            shape = parse_query(sql, self.catalog)
            self._shape_cache[sql] = shape
        return shape

    # column-value selectivity model

    def selectivity(self, table: str, predicate: str) -> float:
        key = (table, predicate)
        cached = self._sel_cache.get(key)
        if cached is None:
            cached = self._estimate(table, predicate)
            self._sel_cache[key] = cached
        return cached

    def _estimate(self, table: str, predicate: str) -> float:
        try:
            expr = sp.parse_expression(predicate)
        except Exception as ex:
            raise PredicateError(f"cannot parse predicate {predicate!r}: {ex}") from ex
        sel = 1.0
        for conjunct in sp.split_conjuncts(expr):
            sel *= self._conjunct_selectivity(table, conjunct)
        return min(1.0, max(0.0, sel))

    def _conjunct_selectivity(self, table: str, node: sp.Node) -> float:
        const = _const_truth(node)
        if const is not None:
            return 1.0 if const else 0.0
        if isinstance(node, sp.BinOp) and node.op in ("=", "!=", "<>", "<", "<=", ">", ">="):
            column = _bare_column(node.left, table, self.catalog) \
                or _bare_column(node.right, table, self.catalog)
            if column is None:
                return 0.5
            ndv = max(1, self.catalog.column(table, column).ndv)
            if node.op == "=":
                return 1.0 / ndv
            if node.op in ("<", "<=", ">", ">="):
                return 1.0 / 3.0
            return 0.5  # != / <> : unknown
        if isinstance(node, sp.BetweenOp) and not node.negated:
            return 1.0 / 3.0
        if isinstance(node, sp.LikeOp) and not node.negated:
            if isinstance(node.pattern, sp.Literal) and node.pattern.kind == "string" \
                    and node.pattern.value and not node.pattern.value.startswith(("%", "_")):
                return 1.0 / 10.0
            return 0.5
        if isinstance(node, sp.InList) and not node.negated:
            column = _bare_column(node.expr, table, self.catalog)
            if column is None:
                return 0.5
            ndv = max(1, self.catalog.column(table, column).ndv)
            return min(1.0, len(node.items) / ndv)
        return 0.5  # OR blocks, NOT variants, IS NULL, subqueries: unknown

    def drop_hook(self, hypo: HypoIndex) -> None:
        """Simulated drops need no backend bookkeeping."""

    # cost model

    def index_size_mb(self, definition: IndexDef) -> float:
        table = self.catalog.table(definition.table)
        width = sum(table.column(c).width for c in definition.columns) + 8
        size = table.rows * width / _MB
        return max(size, 1e-9)  # keep positivity for empty tables

    def query_cost(self, sql: str, indexes: frozenset[IndexDef]) -> tuple[float, set[str]]:
        shape = self.shape(sql)
        total = 0.0
        used: set[str] = set()
        for table in sorted(shape.tables):
            access, credited = self._table_access(shape, table, indexes)
            total += access
            used.update(credited)
        return total, used

    def _table_access(self, shape: QueryShape, table: str,
                      indexes: frozenset[IndexDef]) -> tuple[float, set[str]]:
        rows = self.catalog.table(table).rows
        preds = [p for p in shape.where_predicates if p.table == table]
        pred_sel = {p: self.selectivity(table, p.text) for p in preds}
        carried = {c for p in preds for c in p.columns}
        table_indexes = sorted(i for i in indexes if i.table == table)

        used: set[str] = set()
        best: tuple[float, IndexDef] | None = None
        for idx in table_indexes:
            if idx.leading not in carried:
                continue
            prefix: list[str] = []
            for col in idx.columns:
                if col not in carried:
                    break
                prefix.append(col)
            prefix_set = set(prefix)
            matched_sel = 1.0
            for p in preds:
                if prefix_set & set(p.columns):
                    matched_sel *= pred_sel[p]
            cost = 0.5 * rows * matched_sel + math.log2(rows + 2)
            if best is None or cost < best[0]:
                best = (cost, idx)

        if best is None:
            access = float(rows)
        else:
            access = best[0]
            used.add(best[1].name)

        join_cols = {c for t, c in shape.join_columns if t == table}
        join_idx = next(
            (i for i in table_indexes if i.leading in join_cols), None)
        if join_idx is not None:
            access *= 0.8
            used.add(join_idx.name)

        sort_idx = None
        for cols in (
            [c for t, c in shape.group_by if t == table],
            [c for t, c in shape.order_by if t == table],
        ):
            if not cols:
                continue
            for idx in table_indexes:
                if list(idx.columns[: len(cols)]) == cols:
                    sort_idx = idx
                    break
            if sort_idx is not None:
                break
        if sort_idx is not None:
            access *= 0.9
            used.add(sort_idx.name)

        return max(access, 1.0), used


# --- sessions ----------------------------------------------------------------


class WhatIfSession:
    """Single-owner set of hypothetical indexes against one backend."""

    def __init__(self, backend: str, engine):
        self.backend = backend
        self.engine = engine
        self.existing: dict[IndexDef, HypoIndex] = {}
        self._next_handle = 1

    @property
    def catalog(self) -> Catalog:
        return self.engine.catalog

    def defs(self) -> set[IndexDef]:
        return set(self.existing)

    def total_size_mb(self) -> float:
        return sum(h.est_size_mb for h in self.existing.values())

    def _validate(self, definition: IndexDef):
        table = self.catalog.table(definition.table)
        for col in definition.columns:
            if not table.has_column(col):
                raise UnknownColumn(
                    f"no column {col!r} on table {definition.table!r}")

    def hypo_create(self, definition: IndexDef) -> HypoIndex:
        self._validate(definition)
        if definition in self.existing:
            raise DuplicateIndex(f"index {definition.name} already simulated")
        size = self.engine.index_size_mb(definition)
        hypo = HypoIndex(definition=definition, est_size_mb=size,
                         handle=self._next_handle)
        self._next_handle += 1
        self.existing[definition] = hypo
        return hypo

    def hypo_drop(self, definition: IndexDef) -> None:
        try:
            hypo = self.existing.pop(definition)
        except KeyError:
            raise IndexNotFound(f"index {definition.name} not simulated") from None
        self.engine.drop_hook(hypo)

    def estimate_workload_cost(self, workload: Workload) -> CostReport:
        per_query: list[float] = []
        used: set[str] = set()
        index_set = frozenset(self.existing)
        for sql in workload.queries:
            cost, q_used = self.engine.query_cost(sql, index_set)
            per_query.append(cost)
            used.update(q_used)
        return CostReport(per_query_cost=per_query, used_indexes=used)


# --- live backend -------------------------------------------------------------


class LiveEngine:
    """Client for a DBMS exposing HypoPG-style hypothetical index functions.

    Requires a DSN and an importable psycopg2/psycopg driver; construction
    fails with BackendError otherwise. Cost units are the planner's and are
    never compared with the simulated model's row units.
    """

    def __init__(self, dsn: str, catalog: Catalog):
        self.dsn = dsn
        self.catalog = catalog
        self._conn = self._connect(dsn)

    @staticmethod
    def _connect(dsn: str):
        driver = None
        for name in ("psycopg2", "psycopg"):
            try:
                driver = __import__(name)
                break
            except ImportError:
                continue
        if driver is None:
            raise BackendError("no PostgreSQL driver available for live backend")
        try:
            conn = driver.connect(dsn)
            conn.autocommit = True
            return conn
        except Exception as ex:
            raise BackendError(f"cannot connect to {dsn!r}: {ex}") from ex

    def _fetch(self, sql: str, params=None):
        try:
            with self._conn.cursor() as cur:
                cur.execute(sql, params or ())
                return cur.fetchall()
        except Exception as ex:
            raise BackendError(f"query failed: {ex}") from ex

    def session(self) -> WhatIfSession:
        self._fetch("SELECT hypopg_reset()")
        return LiveWhatIfSession(engine=self)

    def database_size_mb(self) -> float:
        rows = self._fetch("SELECT pg_database_size(current_database())")
        return rows[0][0] / _MB

    def explain_ok(self, sql: str) -> bool:
        try:
            self._fetch(f"EXPLAIN (FORMAT JSON) {sql}")
            return True
        except BackendError:
            return False

    def selectivity(self, table: str, predicate: str) -> float:
        probe = f"SELECT * FROM {table} WHERE {predicate}"
        try:
            plan = self._fetch(f"EXPLAIN (FORMAT JSON) {probe}")[0][0]
        except BackendError as ex:
            raise PredicateError(f"probe failed for {predicate!r}: {ex}") from ex
        plan_rows = _plan_root(plan)["Plan"]["Plan Rows"]
        total = max(1, self.catalog.table(table).rows)
        return min(1.0, max(0.0, plan_rows / total))

    def create_index(self, definition: IndexDef) -> tuple[int, float]:
        cols = ", ".join(definition.columns)
        ddl = f"CREATE INDEX ON {definition.table} ({cols})"
        rows = self._fetch("SELECT indexrelid FROM hypopg_create_index(%s)", (ddl,))
        oid = rows[0][0]
        size = self._fetch("SELECT hypopg_relation_size(%s)", (oid,))[0][0]
        return oid, max(size / _MB, 1e-9)

    def drop_index(self, handle: int) -> None:
        self._fetch("SELECT hypopg_drop_index(%s)", (handle,))

    def query_cost_live(self, sql: str) -> tuple[float, set[str]]:
        plan = self._fetch(f"EXPLAIN (FORMAT JSON) {sql}")[0][0]
        root = _plan_root(plan)["Plan"]
        used: set[str] = set()
        _collect_index_names(root, used)
        return float(root["Total Cost"]), used


class LiveWhatIfSession(WhatIfSession):
    def __init__(self, engine: LiveEngine):
        super().__init__(backend="live", engine=engine)

    def hypo_create(self, definition: IndexDef) -> HypoIndex:
        self._validate(definition)
        if definition in self.existing:
            raise DuplicateIndex(f"index {definition.name} already simulated")
        handle, size = self.engine.create_index(definition)
        hypo = HypoIndex(definition=definition, est_size_mb=size, handle=handle)
        self.existing[definition] = hypo
        return hypo

    def hypo_drop(self, definition: IndexDef) -> None:
        try:
            hypo = self.existing.pop(definition)
        except KeyError:
            raise IndexNotFound(f"index {definition.name} not simulated") from None
        self.engine.drop_index(hypo.handle)

    def estimate_workload_cost(self, workload: Workload) -> CostReport:
        per_query: list[float] = []
        used: set[str] = set()
        for sql in workload.queries:
            cost, q_used = self.engine.query_cost_live(sql)
            per_query.append(cost)
            used.update(q_used)
        return CostReport(per_query_cost=per_query, used_indexes=used)


def _plan_root(plan) -> dict:
    if isinstance(plan, str):
        plan = json.loads(plan)
    if isinstance(plan, list):
        plan = plan[0]
    return plan


def _collect_index_names(node: dict, out: set[str]):
    name = node.get("Index Name")
    if name:
        # hypopg reports "<oid>btree_<table>_<cols>"; keep the canonical tail
        out.add(name.split("btree_")[-1] if "btree_" in name else name)
    for child in node.get("Plans", []):
        _collect_index_names(child, out)
