"""Workload feature extraction: clause-classified columns and selectivities.

A parsed query is reduced to a QueryShape (tables, WHERE predicates, join /
group / order columns); shapes aggregate into WorkloadFeatures carrying the
per-column statistics and per-predicate selectivities that drive candidate
generation, demonstration matching, and prompting.

Classification rules:
  * equi-joins between columns of two different tables (in ON or WHERE)
    become join columns, not WHERE predicates;
  * a conjunct referencing columns of several tables without being an
    equi-join is attributed to each referenced table;
  * columns reachable only through expressions (function calls, arithmetic)
    count toward all_columns but never as predicate columns, so they are
    excluded from index candidates;
  * subqueries and CTEs contribute their own clauses to the same shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from . import sqlparser as sp
from .catalog import Catalog, ColumnStat
from .errors import AmbiguousColumn, ConfigError, ParseError, UnknownColumn

ColumnKey = tuple[str, str]


@dataclass(frozen=True)
class Workload:
    """An ordered set of SELECT statements analysed as one unit."""

    queries: tuple[str, ...]
    name: str = "workload"

    def __post_init__(self):
        if not self.queries:
            raise ConfigError("workload must contain at least one query")
        for q in self.queries:
            sp.parse_select_statement(q)  # reject malformed input at load time

    def __len__(self) -> int:
        return len(self.queries)

    @classmethod
    def load(cls, path: str | Path, name: str | None = None) -> "Workload":
        """Load queries from a semicolon-separated .sql file or a JSON file."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        stripped = text.lstrip()
        if stripped.startswith("{"):
            data = json.loads(text)
            try:
                queries = [str(q) for q in data["queries"]]
            except (KeyError, TypeError):
                raise ConfigError(f"{path}: workload JSON needs a 'queries' list") from None
            wname = name or data.get("name") or path.stem
        else:
            queries = sp.split_statements(text)
            wname = name or path.stem
        if not queries:
            raise ConfigError(f"{path}: no queries found")
        return cls(queries=tuple(queries), name=wname)


@dataclass(frozen=True)
class WherePredicate:
    """One WHERE conjunct attributed to a table.

    columns holds the plain predicate columns (bare comparison operands);
    an expression-only conjunct keeps an empty tuple.
    """

    table: str
    columns: tuple[str, ...]
    text: str


@dataclass
class QueryShape:
    tables: set[str] = field(default_factory=set)
    where_predicates: list[WherePredicate] = field(default_factory=list)
    join_columns: list[ColumnKey] = field(default_factory=list)
    group_by: list[ColumnKey] = field(default_factory=list)
    order_by: list[ColumnKey] = field(default_factory=list)
    all_columns: set[ColumnKey] = field(default_factory=set)


@dataclass
class WorkloadFeatures:
    """Aggregated, LLM-facing description of a workload."""

    per_query_columns: list[list[ColumnStat]]
    where_selectivities: list[tuple[str, str, tuple[str, ...], float]]
    join_freq: dict[ColumnKey, int]
    groupby_freq: dict[ColumnKey, int]
    orderby_freq: dict[ColumnKey, int]
    table_rows: dict[str, int]

    def column_stats(self) -> dict[ColumnKey, ColumnStat]:
        stats: dict[ColumnKey, ColumnStat] = {}
        for cols in self.per_query_columns:
            for stat in cols:
                stats[(stat.table, stat.column)] = stat
        return stats

    def where_freq(self) -> dict[ColumnKey, int]:
        freq: dict[ColumnKey, int] = {}
        for _text, table, columns, _sel in self.where_selectivities:
            for col in columns:
                key = (table, col)
                freq[key] = freq.get(key, 0) + 1
        return freq

    def column_freq(self) -> dict[ColumnKey, int]:
        """Total occurrence count across WHERE/JOIN/GROUP BY/ORDER BY clauses."""
        freq = self.where_freq()
        for source in (self.join_freq, self.groupby_freq, self.orderby_freq):
            for key, count in source.items():
                freq[key] = freq.get(key, 0) + count
        return freq

    def to_dict(self) -> dict:
        return {
            "per_query_columns": [
                [
                    {"table": s.table, "column": s.column, "ndv": s.ndv,
                     "rows": s.rows, "type": s.data_type}
                    for s in cols
                ]
                for cols in self.per_query_columns
            ],
            "where_selectivities": [
                {"predicate": text, "table": table, "columns": list(columns),
                 "selectivity": round(sel, 12)}
                for text, table, columns, sel in self.where_selectivities
            ],
            "join_freq": _freq_to_list(self.join_freq),
            "groupby_freq": _freq_to_list(self.groupby_freq),
            "orderby_freq": _freq_to_list(self.orderby_freq),
            "table_rows": dict(sorted(self.table_rows.items())),
        }

    def to_json(self) -> str:
        """Canonical serialization; byte-stable for identical inputs."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def render_text(self) -> str:
        """Human-readable rendering used in prompts and demonstrations."""
        lines = ["Used columns (table.column: ndv, table rows, type):"]
        stats = self.column_stats()
        for (table, column), stat in sorted(stats.items()):
            lines.append(
                f"  {table}.{column}: ndv={stat.ndv}, rows={stat.rows}, type={stat.data_type}"
            )
        lines.append("WHERE predicates (selectivity):")
        if self.where_selectivities:
            for text, table, _cols, sel in self.where_selectivities:
                lines.append(f"  [{table}] {text} (selectivity={sel:.6f})")
        else:
            lines.append("  none")
        for label, freq in (
            ("JOIN columns", self.join_freq),
            ("GROUP BY columns", self.groupby_freq),
            ("ORDER BY columns", self.orderby_freq),
        ):
            lines.append(f"{label} (frequency):")
            if freq:
                for (table, column), count in sorted(freq.items()):
                    lines.append(f"  {table}.{column}: {count}")
            else:
                lines.append("  none")
        lines.append("Table rows:")
        for table, rows in sorted(self.table_rows.items()):
            lines.append(f"  {table}: {rows}")
        return "\n".join(lines)


def _freq_to_list(freq: dict[ColumnKey, int]) -> list[dict]:
    return [
        {"table": t, "column": c, "count": n}
        for (t, c), n in sorted(freq.items())
    ]


class SelectivityEstimator(Protocol):
    def selectivity(self, table: str, predicate: str) -> float: ...


def estimate_selectivity(predicate: tuple[str, str],
                         engine: SelectivityEstimator) -> float:
    """Fraction of a table's rows satisfying a predicate, clamped to [0, 1]."""
    table, text = predicate
    sel = engine.selectivity(table, text)
    return min(1.0, max(0.0, sel))


# --- scope-based column resolution ------------------------------------------


class _Scope:
    """Name resolution context for one SELECT (including its FROM sources)."""

    def __init__(self, catalog: Catalog, parent: "_Scope | None" = None):
        self.catalog = catalog
        self.parent = parent
        # alias -> ("table", table_name) | ("derived", _Scope, Select)
        self.sources: dict[str, tuple] = {}
        self.ctes: dict[str, tuple[_Scope, sp.Select]] = {}

    def add_table(self, ref: sp.TableRef) -> str | None:
        """Register a FROM table; returns the base table name if it is one.

        A CTE of the same name shadows a catalog table, as in SQL.
        """
        alias = ref.alias or ref.name
        cte = self._find_cte(ref.name)
        if cte is not None:
            self.sources[alias] = ("derived",) + cte
            return None
        if not self.catalog.has_table(ref.name):
            raise UnknownColumn(f"no table {ref.name!r} in catalog")
        self.sources[alias] = ("table", ref.name)
        return ref.name

    def add_derived(self, alias: str, scope: "_Scope", select: sp.Select):
        self.sources[alias] = ("derived", scope, select)

    def _find_cte(self, name: str):
        scope: _Scope | None = self
        while scope is not None:
            if name in scope.ctes:
                return scope.ctes[name]
            scope = scope.parent
        return None

    def resolve(self, ref: sp.ColumnRef) -> ColumnKey | None:
        """Resolve a column reference to a base (table, column).

        Returns None when the reference is legal but maps to a derived
        expression (e.g. an aggregate exposed by a CTE). Raises UnknownColumn
        or AmbiguousColumn otherwise.
        """
        if ref.qualifier:
            source = self._lookup_source(ref.qualifier)
            if source is None:
                raise UnknownColumn(
                    f"unknown table or alias {ref.qualifier!r} for column {ref.name!r}")
            return self._resolve_in_source(source, ref.name, required=True)
        return self._resolve_unqualified(ref.name)

    def _lookup_source(self, alias: str):
        scope: _Scope | None = self
        while scope is not None:
            if alias in scope.sources:
                return scope.sources[alias]
            scope = scope.parent
        return None

    def _resolve_in_source(self, source: tuple, name: str, required: bool) -> ColumnKey | None:
        if source[0] == "table":
            table = self.catalog.table(source[1])
            if table.has_column(name):
                return (source[1], name)
            if required:
                raise UnknownColumn(f"no column {name!r} on table {source[1]!r}")
            return None
        _, scope, select = source
        hit = _projection_named(select, name)
        if hit is _MISSING:
            if required:
                raise UnknownColumn(f"column {name!r} not exposed by derived table")
            return None
        if isinstance(hit, sp.ColumnRef):
            return scope.resolve(hit)
        if isinstance(hit, sp.Star):
            return scope._resolve_unqualified(name, raise_missing=required)
        return None  # defined, but an expression with no single base column

    def _resolve_unqualified(self, name: str, raise_missing: bool = True) -> ColumnKey | None:
        matches: list[ColumnKey | None] = []
        for source in self.sources.values():
            if source[0] == "table":
                if self.catalog.table(source[1]).has_column(name):
                    matches.append((source[1], name))
            else:
                _, scope, select = source
                hit = _projection_named(select, name)
                if hit is _MISSING:
                    continue
                if isinstance(hit, sp.ColumnRef):
                    matches.append(scope.resolve(hit))
                elif isinstance(hit, sp.Star):
                    inner = scope._resolve_unqualified(name, raise_missing=False)
                    matches.append(inner)
                else:
                    matches.append(None)
        if len(matches) > 1:
            raise AmbiguousColumn(f"column {name!r} matches multiple tables in scope")
        if matches:
            return matches[0]
        if self.parent is not None:
            return self.parent._resolve_unqualified(name, raise_missing=raise_missing)
        if raise_missing:
            raise UnknownColumn(f"column {name!r} has no catalog match in scope")
        return None


_MISSING = object()


def _projection_named(select: sp.Select, name: str):
    """The expression a derived table exposes under `name`, or _MISSING."""
    star_seen = None
    for proj in select.projections:
        if isinstance(proj.expr, sp.Star):
            star_seen = proj.expr
            continue
        label = proj.alias
        if label is None and isinstance(proj.expr, sp.ColumnRef):
            label = proj.expr.name
        if label == name:
            return proj.expr
    if star_seen is not None:
        return star_seen
    return _MISSING


# --- shape extraction --------------------------------------------------------


class _ShapeBuilder:
    def __init__(self, sql: str, catalog: Catalog):
        self.sql = sql
        self.catalog = catalog
        self.shape = QueryShape()

    def build(self, select: sp.Select) -> QueryShape:
        self._walk_select(select, parent=None)
        return self.shape

    def _walk_select(self, select: sp.Select, parent: _Scope | None) -> _Scope:
        scope = _Scope(self.catalog, parent=parent)
        # CTE bodies are walked before FROM sources are registered, so they
        # see earlier CTEs (via scope.ctes) but not this query's tables.
        for name, cte_select in select.ctes:
            cte_scope = self._walk_select(cte_select, parent=scope)
            scope.ctes[name] = (cte_scope, cte_select)
        for item in select.from_items:
            self._register_from_item(scope, item)
        for join in select.joins:
            self._register_from_item(scope, join.item)
        # Sources are all registered before any condition is resolved, so
        # comma-join predicates may reference tables in either order.
        for join in select.joins:
            if join.condition is not None:
                self._classify_condition(scope, join.condition)
        if select.where is not None:
            self._classify_condition(scope, select.where)
        for expr in select.group_by:
            key = self._plain_column(scope, expr)
            if key is not None:
                self.shape.group_by.append(key)
            self._collect_columns(scope, expr)
        for item in select.order_by:
            key = self._plain_column(scope, item.expr)
            if key is not None:
                self.shape.order_by.append(key)
            self._collect_columns(scope, item.expr)
        for proj in select.projections:
            self._collect_columns(scope, proj.expr)
        if select.having is not None:
            self._collect_columns(scope, select.having)
        return scope

    def _register_from_item(self, scope: _Scope, item: sp.Node):
        if isinstance(item, sp.TableRef):
            base = scope.add_table(item)
            if base is not None:
                self.shape.tables.add(base)
        elif isinstance(item, sp.DerivedRef):
            derived_scope = self._walk_select(item.select, parent=scope)
            scope.add_derived(item.alias, derived_scope, item.select)
        else:  # pragma: no cover - parser only yields the two kinds
            raise ParseError(f"unsupported FROM item {type(item).__name__}")

    def _classify_condition(self, scope: _Scope, condition: sp.Node):
        for conjunct in sp.split_conjuncts(condition):
            self._classify_conjunct(scope, conjunct)

    def _classify_conjunct(self, scope: _Scope, conjunct: sp.Node):
        self._collect_columns(scope, conjunct)

        join_pair = self._equi_join_pair(scope, conjunct)
        if join_pair is not None:
            self.shape.join_columns.extend(join_pair)
            return

        plain = self._plain_predicate_columns(scope, conjunct)
        tables = sorted({t for t, _ in plain})
        if not tables:
            # constant conjuncts and pure expression filters over several
            # tables carry no indexable column; attribute expression filters
            # that still touch exactly one table to that table
            tables = sorted(self._referenced_tables(scope, conjunct))
            if len(tables) != 1:
                return
            self.shape.where_predicates.append(
                WherePredicate(table=tables[0], columns=(), text=conjunct.text(self.sql)))
            return
        for table in tables:
            columns = tuple(dict.fromkeys(c for t, c in plain if t == table))
            self.shape.where_predicates.append(
                WherePredicate(table=table, columns=columns, text=conjunct.text(self.sql)))

    def _equi_join_pair(self, scope: _Scope, conjunct: sp.Node):
        if not (isinstance(conjunct, sp.BinOp) and conjunct.op == "="):
            return None
        if not (isinstance(conjunct.left, sp.ColumnRef)
                and isinstance(conjunct.right, sp.ColumnRef)):
            return None
        left = scope.resolve(conjunct.left)
        right = scope.resolve(conjunct.right)
        if left is None or right is None or left[0] == right[0]:
            return None
        return [left, right]

    def _plain_predicate_columns(self, scope: _Scope, conjunct: sp.Node) -> list[ColumnKey]:
        """Bare column operands of the conjunct's comparisons, in source order."""
        out: list[ColumnKey] = []

        def bare(node: sp.Node):
            if isinstance(node, sp.ColumnRef):
                key = scope.resolve(node)
                if key is not None:
                    out.append(key)

        def walk(node: sp.Node):
            if isinstance(node, sp.BinOp):
                if node.op in ("=", "!=", "<>", "<", "<=", ">", ">="):
                    bare(node.left)
                    bare(node.right)
                else:
                    walk(node.left)
                    walk(node.right)
            elif isinstance(node, (sp.LikeOp, sp.BetweenOp, sp.IsNull)):
                bare(node.expr)
            elif isinstance(node, (sp.InList, sp.InSubquery)):
                bare(node.expr)
            elif isinstance(node, sp.NotOp):
                walk(node.operand)
            elif isinstance(node, sp.BoolOp):
                for operand in node.operands:
                    walk(operand)

        walk(conjunct)
        return list(dict.fromkeys(out))

    def _referenced_tables(self, scope: _Scope, node: sp.Node) -> set[str]:
        tables: set[str] = set()
        for ref in self._iter_refs(node):
            key = scope.resolve(ref)
            if key is not None:
                tables.add(key[0])
        return tables

    def _plain_column(self, scope: _Scope, expr: sp.Node) -> ColumnKey | None:
        if isinstance(expr, sp.ColumnRef):
            return scope.resolve(expr)
        return None

    def _collect_columns(self, scope: _Scope, node: sp.Node):
        for ref in self._iter_refs(node):
            key = scope.resolve(ref)
            if key is not None:
                self.shape.all_columns.add(key)
        for sub in self._iter_subselects(node):
            self._walk_select(sub, parent=scope)

    @staticmethod
    def _iter_refs(node: sp.Node):
        """Column references at the current query level (not inside subselects)."""
        stack = [node]
        while stack:
            cur = stack.pop()
            if isinstance(cur, sp.ColumnRef):
                yield cur
            elif isinstance(cur, sp.BinOp):
                stack.extend((cur.left, cur.right))
            elif isinstance(cur, sp.BoolOp):
                stack.extend(cur.operands)
            elif isinstance(cur, sp.NotOp):
                stack.append(cur.operand)
            elif isinstance(cur, sp.FuncCall):
                stack.extend(cur.args)
            elif isinstance(cur, sp.InList):
                stack.append(cur.expr)
                stack.extend(cur.items)
            elif isinstance(cur, sp.InSubquery):
                stack.append(cur.expr)
            elif isinstance(cur, sp.LikeOp):
                stack.extend((cur.expr, cur.pattern))
            elif isinstance(cur, sp.BetweenOp):
                stack.extend((cur.expr, cur.low, cur.high))
            elif isinstance(cur, sp.IsNull):
                stack.append(cur.expr)
            elif isinstance(cur, sp.CaseExpr):
                for cond, result in cur.whens:
                    stack.extend((cond, result))
                if cur.default is not None:
                    stack.append(cur.default)

    @staticmethod
    def _iter_subselects(node: sp.Node):
        stack = [node]
        while stack:
            cur = stack.pop()
            if isinstance(cur, (sp.InSubquery, sp.ExistsOp, sp.ScalarSubquery)):
                yield cur.select
            elif isinstance(cur, sp.BinOp):
                stack.extend((cur.left, cur.right))
            elif isinstance(cur, sp.BoolOp):
                stack.extend(cur.operands)
            elif isinstance(cur, sp.NotOp):
                stack.append(cur.operand)
            elif isinstance(cur, sp.FuncCall):
                stack.extend(cur.args)
            elif isinstance(cur, sp.InList):
                stack.extend(cur.items)
                stack.append(cur.expr)
            elif isinstance(cur, sp.LikeOp):
                stack.extend((cur.expr, cur.pattern))
            elif isinstance(cur, sp.BetweenOp):
                stack.extend((cur.expr, cur.low, cur.high))
            elif isinstance(cur, sp.IsNull):
                stack.append(cur.expr)
            elif isinstance(cur, sp.CaseExpr):
                for cond, result in cur.whens:
                    stack.extend((cond, result))
                if cur.default is not None:
                    stack.append(cur.default)


def parse_query(sql: str, catalog: Catalog) -> QueryShape:
    """Classify one SELECT statement's columns by clause.

    Raises ParseError for malformed SQL, UnknownColumn / AmbiguousColumn for
    references the catalog cannot resolve uniquely.
    """
    select = sp.parse_select_statement(sql)
    return _ShapeBuilder(sql, catalog).build(select)


def extract_workload_features(workload: Workload, catalog: Catalog,
                              estimator: SelectivityEstimator) -> WorkloadFeatures:
    """Aggregate per-query shapes into workload-level features.

    Join / group / order frequencies count one occurrence per query per
    distinct column; every WHERE predicate is probed for selectivity.
    """
    per_query_columns: list[list[ColumnStat]] = []
    where_selectivities: list[tuple[str, str, tuple[str, ...], float]] = []
    join_freq: dict[ColumnKey, int] = {}
    groupby_freq: dict[ColumnKey, int] = {}
    orderby_freq: dict[ColumnKey, int] = {}
    table_rows: dict[str, int] = {}

    for sql in workload.queries:
        shape = parse_query(sql, catalog)
        stats = [catalog.column(t, c) for t, c in sorted(shape.all_columns)]
        per_query_columns.append(stats)
        for pred in shape.where_predicates:
            sel = estimate_selectivity((pred.table, pred.text), engine=estimator)
            where_selectivities.append((pred.text, pred.table, pred.columns, sel))
        for freq, keys in (
            (join_freq, shape.join_columns),
            (groupby_freq, shape.group_by),
            (orderby_freq, shape.order_by),
        ):
            for key in dict.fromkeys(keys):
                freq[key] = freq.get(key, 0) + 1
        for table in shape.tables:
            table_rows[table] = catalog.table(table).rows

    return WorkloadFeatures(
        per_query_columns=per_query_columns,
        where_selectivities=where_selectivities,
        join_freq=join_freq,
        groupby_freq=groupby_freq,
        orderby_freq=orderby_freq,
        table_rows=table_rows,
    )
