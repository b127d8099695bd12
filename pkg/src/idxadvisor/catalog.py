"""Schema catalog: tables, columns, and the statistics the advisor relies on.

The catalog file is JSON:

    {"tables": [{"name": ..., "rows": N,
                 "columns": [{"name": ..., "type": ..., "ndv": N}, ...]}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, UnknownColumn

# Per-value byte widths used for simulated index and table sizing.
TYPE_WIDTHS = {
    "int": 4,
    "bigint": 8,
    "date": 4,
    "decimal": 8,
    "text": 16,
}

# Common dialect spellings folded onto the supported type tags.
_TYPE_ALIASES = {
    "integer": "int",
    "int4": "int",
    "smallint": "int",
    "serial": "int",
    "int8": "bigint",
    "bigserial": "bigint",
    "numeric": "decimal",
    "float": "decimal",
    "double": "decimal",
    "real": "decimal",
    "varchar": "text",
    "char": "text",
    "string": "text",
    "timestamp": "date",
    "datetime": "date",
}

ROW_OVERHEAD_BYTES = 8
_MB = 1024 * 1024


def normalize_type(type_name: str) -> str:
    tag = type_name.strip().lower()
    tag = _TYPE_ALIASES.get(tag, tag)
    if tag not in TYPE_WIDTHS:
        raise ConfigError(f"unsupported column type: {type_name!r}")
    return tag


@dataclass(frozen=True)
class ColumnStat:
    """Statistics for one column: distinct values, table cardinality, type."""

    table: str
    column: str
    ndv: int
    rows: int
    data_type: str

    def __post_init__(self):
        if self.rows < 0:
            raise ConfigError(f"{self.table}.{self.column}: rows must be >= 0")
        if not 0 <= self.ndv <= self.rows:
            raise ConfigError(
                f"{self.table}.{self.column}: need 0 <= ndv <= rows, "
                f"got ndv={self.ndv} rows={self.rows}"
            )

    @property
    def width(self) -> int:
        return TYPE_WIDTHS[self.data_type]


@dataclass(frozen=True)
class Table:
    name: str
    rows: int
    columns: tuple[ColumnStat, ...]

    def column(self, name: str) -> ColumnStat:
        for col in self.columns:
            if col.column == name:
                return col
        raise UnknownColumn(f"no column {name!r} on table {self.name!r}")

    def has_column(self, name: str) -> bool:
        return any(col.column == name for col in self.columns)

    @property
    def row_width(self) -> int:
        return sum(col.width for col in self.columns) + ROW_OVERHEAD_BYTES

    @property
    def size_mb(self) -> float:
        return self.rows * self.row_width / _MB


class Catalog:
    """Lookup structure over the schema; raises UnknownColumn on misses."""

    def __init__(self, tables: list[Table], schema_id: str = "default"):
        self.schema_id = schema_id
        self._tables = {t.name: t for t in tables}
        if len(self._tables) != len(tables):
            raise ConfigError("duplicate table names in catalog")

    @property
    def tables(self) -> list[Table]:
        return list(self._tables.values())

    def table_names(self) -> list[str]:
        return sorted(self._tables)

    def has_table(self, name: str) -> bool:
        return name in self._tables

    def table(self, name: str) -> Table:
        try:
            return self._tables[name]
        except KeyError:
            raise UnknownColumn(f"no table {name!r} in catalog") from None

    def column(self, table: str, column: str) -> ColumnStat:
        return self.table(table).column(column)

    def tables_with_column(self, column: str) -> list[str]:
        return sorted(t.name for t in self._tables.values() if t.has_column(column))

    def database_size_mb(self) -> float:
        return sum(t.size_mb for t in self._tables.values())

    @classmethod
    def from_dict(cls, data: dict, schema_id: str = "default") -> "Catalog":
        try:
            raw_tables = data["tables"]
        except (KeyError, TypeError):
            raise ConfigError("catalog JSON must have a 'tables' list") from None
        tables = []
        for raw in raw_tables:
            rows = int(raw["rows"])
            cols = tuple(
                ColumnStat(
                    table=raw["name"],
                    column=c["name"],
                    ndv=int(c["ndv"]),
                    rows=rows,
                    data_type=normalize_type(c["type"]),
                )
                for c in raw["columns"]
            )
            if not cols:
                raise ConfigError(f"table {raw['name']!r} has no columns")
            tables.append(Table(name=raw["name"], rows=rows, columns=cols))
        return cls(tables, schema_id=schema_id)

    @classmethod
    def load(cls, path: str | Path, schema_id: str | None = None) -> "Catalog":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as ex:
            raise ConfigError(f"cannot read catalog {path}: {ex}") from ex
        return cls.from_dict(data, schema_id=schema_id or path.stem)

    def to_dict(self) -> dict:
        return {
            "tables": [
                {
                    "name": t.name,
                    "rows": t.rows,
                    "columns": [
                        {"name": c.column, "type": c.data_type, "ndv": c.ndv}
                        for c in t.columns
                    ],
                }
                for t in self.tables
            ]
        }
