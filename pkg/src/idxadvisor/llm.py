"""LLM backends, prompt construction, and parsing of recommended actions.

The prompt has three parts: a fixed system instruction (task overview, I/O
format, ordering guidance, and, on the first iteration only, a minimum
recommendation count of ceil(m * budget_fraction)), up to two worked
demonstrations, and the input information (workload features, existing
indexes, remaining storage, history). The input section ends with a fenced
JSON block so both the deterministic mock and downstream tooling can read
the state without scraping prose.

Backends implement `chat(request) -> list[str]`. MockBackend is pure: the
completions are a function of (seed, request digest, sample index) only.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field

from .catalog import Catalog
from .errors import EmptyCompletion, LLMError
from .sql_features import WorkloadFeatures
from .whatif import IndexAction, IndexDef

SYSTEM_INSTRUCTION = """\
You are a database index advisor. Given workload features (columns with \
statistics, WHERE predicates with selectivities, JOIN/GROUP BY/ORDER BY \
columns with frequencies), the existing indexes, and the remaining storage \
budget, recommend index changes that minimize the workload's estimated cost \
while staying within the budget.

Output format: one statement per line, using exactly
  CREATE INDEX ON <table> (<col>[, <col>...]);
  DROP INDEX <table>_<col>[_<col>...]_idx;
Order CREATE statements from most to least beneficial, because statements \
that no longer fit in the remaining budget are skipped. Prefer selective \
WHERE columns on large tables, then JOIN columns, then GROUP BY/ORDER BY \
columns; favour high-NDV columns. Drop existing indexes only when they \
waste budget.\
"""

FIRST_ITERATION_CLAUSE = (
    "This is the first inference for this workload: recommend at least "
    "{count} indexes so the budget is not left underused."
)

SYNTH_INSTRUCTION = """\
You generate analytical SQL workloads. Given a database schema, emit \
syntactically valid single-statement SELECT queries in the requested \
dialect, each inside its own ```sql fenced block. Use only tables and \
columns from the schema, vary filters, joins, grouping and ordering, and \
respect the sampled tables and column values provided.\
"""

_JSON_BLOCK_RE = re.compile(r"```json\s*(\{.*?\})\s*```", re.DOTALL)
_SQL_BLOCK_RE = re.compile(r"```sql\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def extract_sql_blocks(text: str) -> list[str]:
    """SQL statements inside ```sql fenced blocks, trimmed."""
    out = []
    for block in _SQL_BLOCK_RE.findall(text):
        sql = block.strip().rstrip(";").strip()
        if sql:
            out.append(sql)
    return out


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    temperature: float = 0.6
    n_samples: int = 8
    max_tokens: int = 8192

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def digest(self) -> str:
        payload = f"{self.system_text}\x00{self.user_text}\x00{self.temperature}"
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class HistoryEntry:
    iteration: int
    recommended: list[IndexAction]
    cost_before: float
    cost_after: float
    used_indexes: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "recommended": [a.to_dict() for a in self.recommended],
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "used_indexes": sorted(self.used_indexes),
        }


@dataclass
class PromptState:
    features: WorkloadFeatures
    table_rows: dict[str, int]
    existing: set[IndexDef]
    remaining_budget_mb: float
    budget_fraction: float
    workload_length: int
    first_iteration: bool = True
    history: list[HistoryEntry] = field(default_factory=list)
    demos: list[tuple] = field(default_factory=list)  # (Demonstration, actions)

    def __post_init__(self):
        if self.remaining_budget_mb < 0:
            raise ValueError("remaining budget cannot be negative")
        if len(self.demos) > 2:
            raise ValueError("at most 2 demonstrations per prompt")


def min_create_count(workload_length: int, budget_fraction: float) -> int:
    return max(1, math.ceil(workload_length * budget_fraction))


def _estimate_tokens(text: str) -> int:
    return len(text) // 4 + 1


def _state_json(state: PromptState) -> str:
    stats = state.features.column_stats()
    where_freq = state.features.where_freq()
    best_sel: dict[tuple[str, str], float] = {}
    for _text, table, columns, sel in state.features.where_selectivities:
        for col in columns:
            key = (table, col)
            best_sel[key] = min(best_sel.get(key, 1.0), sel)
    columns = []
    for key in sorted(stats):
        stat = stats[key]
        columns.append({
            "table": key[0],
            "column": key[1],
            "ndv": stat.ndv,
            "rows": stat.rows,
            "where": where_freq.get(key, 0),
            "join": state.features.join_freq.get(key, 0),
            "group": state.features.groupby_freq.get(key, 0),
            "order": state.features.orderby_freq.get(key, 0),
            "selectivity": round(best_sel.get(key, 1.0), 9),
        })
    payload = {
        "budget_fraction": state.budget_fraction,
        "columns": columns,
        "existing": [d.to_dict() for d in sorted(state.existing)],
        "remaining_budget_mb": round(state.remaining_budget_mb, 6),
        "table_rows": dict(sorted(state.table_rows.items())),
        "workload_len": state.workload_length,
    }
    if state.first_iteration:
        payload["min_create_count"] = min_create_count(
            state.workload_length, state.budget_fraction)
    return json.dumps(payload, sort_keys=True)


def _render_demo(index: int, demo, actions: list[IndexAction]) -> str:
    lines = [f"Example {index}:",
             f"Budget fraction: {demo.budget_fraction:g}",
             demo.features_text,
             "Recommended actions:"]
    if actions:
        lines.extend(render_actions(actions).splitlines())
    else:
        lines.append("(none)")
    return "\n".join(lines)


def _render_input(state: PromptState, features_text: str) -> str:
    lines = ["### Input information", features_text, "Existing indexes:"]
    if state.existing:
        lines.extend(f"  {d.name}" for d in sorted(state.existing))
    else:
        lines.append("  none")
    lines.append(f"Remaining storage budget: {state.remaining_budget_mb:.2f} MB "
                 f"(budget fraction {state.budget_fraction:g})")
    lines.append(f"Workload length: {state.workload_length}")
    lines.append("History:")
    if state.history:
        for entry in state.history:
            ddl = "; ".join(render_actions(entry.recommended).splitlines()) or "(none)"
            used = ", ".join(sorted(entry.used_indexes)) or "none"
            lines.append(
                f"  iteration {entry.iteration}: {ddl} | cost "
                f"{entry.cost_before:.2f} -> {entry.cost_after:.2f} | used: {used}")
    else:
        lines.append("  none")
    lines.append("### State (JSON)")
    lines.append("```json")
    lines.append(_state_json(state))
    lines.append("```")
    return "\n".join(lines)


def build_prompt(state: PromptState, temperature: float = 0.6,
                 n_samples: int = 8, max_tokens: int = 8192) -> ChatRequest:
    """Deterministic prompt for a PromptState.

    When the serialized prompt would exceed 75% of max_tokens (4 chars per
    token heuristic), demonstrations are dropped from the back before the
    feature text is truncated; the JSON state block is never cut.
    """
    system_text = SYSTEM_INSTRUCTION
    if state.first_iteration:
        count = min_create_count(state.workload_length, state.budget_fraction)
        system_text += "\n" + FIRST_ITERATION_CLAUSE.format(count=count)

    budget_chars = int(max_tokens * 0.75) * 4
    demos = list(state.demos)
    features_text = state.features.render_text()

    def assemble(demo_list, feat_text) -> str:
        parts = []
        if demo_list:
            parts.append("### Demonstrations")
            parts.extend(_render_demo(i + 1, demo, actions)
                         for i, (demo, actions) in enumerate(demo_list))
        parts.append(_render_input(state, feat_text))
        return "\n\n".join(parts)

    user_text = assemble(demos, features_text)
    while demos and _estimate_tokens(system_text + user_text) * 4 > budget_chars:
        demos.pop()
        user_text = assemble(demos, features_text)
    if _estimate_tokens(system_text + user_text) * 4 > budget_chars:
        overshoot = _estimate_tokens(system_text + user_text) * 4 - budget_chars
        keep = max(0, len(features_text) - overshoot)
        features_text = features_text[:keep] + "\n  ... (truncated)"
        user_text = assemble(demos, features_text)

    return ChatRequest(system_text=system_text, user_text=user_text,
                       temperature=temperature, n_samples=n_samples,
                       max_tokens=max_tokens)


# --- backends ----------------------------------------------------------------


def chat(backend, request: ChatRequest) -> list[str]:
    """Request n_samples completions; raises LLMError / EmptyCompletion."""
    completions = backend.chat(request)
    if len(completions) != request.n_samples:
        raise LLMError(
            f"backend returned {len(completions)} completions, "
            f"expected {request.n_samples}")
    if all(not (c and c.strip()) for c in completions):
        raise EmptyCompletion("backend returned only empty completions")
    return completions


class HttpBackend:
    """Chat-completions style HTTP backend.

    Endpoint, model and auth token come from the constructor or the
    IXADV_LLM_ENDPOINT / IXADV_LLM_MODEL / IXADV_LLM_TOKEN environment
    variables.
    """

    def __init__(self, endpoint: str, model: str, token: str | None = None,
                 timeout: float = 120.0):
        if not endpoint or not model:
            raise LLMError("http backend needs an endpoint and a model name")
        self.endpoint = endpoint
        self.model = model
        self.token = token
        self.timeout = timeout

    def chat(self, request: ChatRequest) -> list[str]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "n": request.n_samples,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers,
                                 timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()
            choices = data["choices"]
            return [c["message"]["content"] or "" for c in choices]
        except LLMError:
            raise
        except Exception as ex:
            raise LLMError(f"chat request failed: {ex}") from ex


class MockBackend:
    """Deterministic stand-in for a chat LLM.

    Recommendation prompts (recognised by the JSON state block) yield CREATE
    statements over the top-frequency filter/join columns, with per-sample
    jitter in column order and index width; sample 0 is the unjittered
    ranking. Synthesis prompts yield template-instantiated SELECT queries.
    Identical (seed, request) pairs always produce identical completions.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def chat(self, request: ChatRequest) -> list[str]:
        digest = request.digest()
        if request.system_text.startswith(SYNTH_INSTRUCTION[:40]):
            schema = _last_json_block(request.user_text)
            if not schema or not schema.get("tables"):
                return ["No schema block found."] * request.n_samples
            return [self._synthesize(schema, digest, i)
                    for i in range(request.n_samples)]
        state = _last_json_block(request.user_text)
        if state is None:
            return ["No recommendation: missing state block."] * request.n_samples
        return [self._recommend(state, digest, i, request.temperature)
                for i in range(request.n_samples)]

    # recommendation path

    def _recommend(self, state: dict, digest: str, sample: int,
                   temperature: float) -> str:
        rng = random.Random(f"{self.seed}|{digest}|{sample}")
        columns = state.get("columns", [])
        ranked = _rank_columns(columns)
        if not ranked:
            return "The workload exposes no indexable columns."

        # temperature 0 emulates greedy decoding: every sample is the clean
        # ranking; otherwise each sample is an independently noisy draw
        jittered = list(ranked)
        noisy = temperature > 0
        if noisy and len(jittered) > 1:
            if rng.random() < 0.15:
                jittered.pop(0)  # occasionally miss the most important column
            for _ in range(rng.randint(0, len(jittered) - 1)):
                pos = rng.randrange(len(jittered) - 1)
                jittered[pos], jittered[pos + 1] = jittered[pos + 1], jittered[pos]

        want = state.get("min_create_count")
        if want is None:
            want = max(1, round(len(ranked) * 0.6))
        if noisy and len(jittered) > 1:
            want += rng.randint(-2, 2)
        want = min(len(jittered), max(1, want))

        lines = ["Recommended index changes:"]
        existing = [IndexDef.from_dict(d) for d in state.get("existing", [])]
        clause_keys = {(c["table"], c["column"]) for c in ranked}
        if existing and noisy and rng.random() < 0.25:
            # only indexes whose leading column carries no clause at all are
            # safe to call budget waste
            stale = [d for d in existing if (d.table, d.leading) not in clause_keys]
            if stale:
                victim = rng.choice(sorted(stale))
                lines.append(f"DROP INDEX {victim.name};")

        table_columns = {}
        for col in columns:
            table_columns.setdefault(col["table"], []).append(col["column"])

        used: set[tuple[str, str]] = set()
        emitted: set[IndexDef] = set()
        for entry in jittered:
            if len(emitted) >= want:
                break
            key = (entry["table"], entry["column"])
            if key in used:
                continue
            cols = [entry["column"]]
            if noisy:
                roll = rng.random()
                if roll < 0.2:
                    # plausible-looking junk: widen with a same-table column
                    # that carries no clause, wasting storage for no benefit
                    junk = [c for c in table_columns.get(entry["table"], [])
                            if (entry["table"], c) not in clause_keys
                            and c != entry["column"]]
                    if junk:
                        cols.append(rng.choice(sorted(junk)))
                elif roll < 0.35:
                    mate = next(
                        (e for e in jittered
                         if e["table"] == entry["table"]
                         and (e["table"], e["column"]) not in used
                         and e["column"] != entry["column"]),
                        None)
                    if mate is not None:
                        cols.append(mate["column"])
            defn = IndexDef(entry["table"], tuple(cols))
            if defn in emitted:
                continue
            emitted.add(defn)
            used.add(key)
            lines.append(f"CREATE INDEX ON {defn.table} ({', '.join(defn.columns)});")
        return "\n".join(lines)

    # synthesis path

    def _synthesize(self, schema: dict, digest: str, sample: int) -> str:
        rng = random.Random(f"{self.seed}|{digest}|synth|{sample}")
        sql = _random_query(schema, rng)
        return f"Here is a query:\n```sql\n{sql}\n```"


def _last_json_block(text: str) -> dict | None:
    matches = _JSON_BLOCK_RE.findall(text)
    if not matches:
        return None
    try:
        return json.loads(matches[-1])
    except json.JSONDecodeError:
        return None


def _rank_columns(columns: list[dict]) -> list[dict]:
    """Top-frequency filter/join columns first; impact and NDV break ties."""
    def key(c: dict):
        primary = c.get("where", 0) + c.get("join", 0)
        impact = c.get("rows", 0) * (1.0 - min(1.0, c.get("selectivity", 1.0)))
        secondary = c.get("group", 0) + c.get("order", 0)
        return (-primary, -impact, -secondary, -c.get("ndv", 0),
                c["table"], c["column"])

    ranked = [c for c in columns
              if (c.get("where", 0) + c.get("join", 0)
                  + c.get("group", 0) + c.get("order", 0)) > 0]
    return sorted(ranked, key=key)


def _random_query(schema: dict, rng: random.Random) -> str:
    tables = schema["tables"]
    table = rng.choice(tables)
    cols = table["columns"]

    def lit(col: dict) -> str:
        t = col["type"]
        if t in ("int", "bigint"):
            return str(rng.randint(1, max(1, col["ndv"])))
        if t == "decimal":
            return f"{rng.uniform(1, 1000):.2f}"
        if t == "date":
            return f"'199{rng.randint(2, 8)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}'"
        return f"'v{rng.randint(1, max(1, col['ndv']))}'"

    def predicate(col: dict) -> str:
        t = col["type"]
        roll = rng.random()
        if t == "text" and roll < 0.25:
            return f"{col['name']} LIKE 'v{rng.randint(1, 9)}%'"
        if roll < 0.4:
            vals = ", ".join(lit(col) for _ in range(rng.randint(2, 4)))
            return f"{col['name']} IN ({vals})"
        if roll < 0.6 and t in ("int", "bigint", "decimal", "date"):
            low, high = sorted((lit(col), lit(col)))
            return f"{col['name']} BETWEEN {low} AND {high}"
        op = rng.choice(["=", ">", "<", ">=", "<="]) if t != "text" else "="
        return f"{col['name']} {op} {lit(col)}"

    shape = rng.random()
    pick = lambda: rng.choice(cols)  # noqa: E731
    preds = " AND ".join(predicate(pick()) for _ in range(rng.randint(1, 2)))

    if shape < 0.45 or len(tables) < 2:
        select_cols = ", ".join(dict.fromkeys(pick()["name"] for _ in range(2)))
        group = pick()["name"]
        if rng.random() < 0.5:
            return (f"SELECT {group}, COUNT(*) FROM {table['name']} "
                    f"WHERE {preds} GROUP BY {group} ORDER BY {group}")
        order = pick()["name"]
        return (f"SELECT {select_cols} FROM {table['name']} "
                f"WHERE {preds} ORDER BY {order}")
    other = rng.choice([t for t in tables if t["name"] != table["name"]])
    join_left = rng.choice([c for c in cols if c["type"] in ("int", "bigint")] or cols)
    join_right = rng.choice(
        [c for c in other["columns"] if c["type"] in ("int", "bigint")]
        or other["columns"])
    left_col = f"{table['name']}.{join_left['name']}"
    right_col = f"{other['name']}.{join_right['name']}"
    qualified_preds = " AND ".join(
        f"{table['name']}.{predicate(pick())}" for _ in range(rng.randint(1, 2)))
    if shape < 0.8:
        return (f"SELECT {left_col}, {right_col} FROM {table['name']} "
                f"JOIN {other['name']} ON {left_col} = {right_col} "
                f"WHERE {qualified_preds} ORDER BY {left_col}")
    sub_col = rng.choice(other["columns"])
    return (f"SELECT {left_col} FROM {table['name']} WHERE {join_left['name']} IN "
            f"(SELECT {join_right['name']} FROM {other['name']} "
            f"WHERE {predicate(sub_col)})")


# --- DDL parsing / rendering ---------------------------------------------------

_CREATE_RE = re.compile(
    r"CREATE\s+INDEX\s+(?:(?!ON\b)[A-Za-z_]\w*\s+)?ON\s+([A-Za-z_]\w*)\s*\(([^)]+)\)",
    re.IGNORECASE)
_DROP_RE = re.compile(
    r"DROP\s+INDEX\s+(?:IF\s+EXISTS\s+)?([A-Za-z_]\w*)", re.IGNORECASE)


def resolve_index_name(name: str, catalog: Catalog) -> IndexDef | None:
    """Invert the canonical '<table>_<col>..._idx' naming scheme.

    Column names may themselves contain underscores, so the tail is matched
    against the table's actual column names; longer table names win ties.
    """
    if not name.endswith("_idx"):
        return None
    stem = name[: -len("_idx")]
    for table_name in sorted(catalog.table_names(), key=len, reverse=True):
        if not stem.startswith(table_name + "_"):
            continue
        tail = stem[len(table_name) + 1:]
        columns = _match_columns(tail, [c.column for c in catalog.table(table_name).columns])
        if columns:
            return IndexDef(table_name, tuple(columns))
    return None


def _match_columns(tail: str, column_names: list[str]) -> list[str] | None:
    if not tail:
        return None

    def walk(pos: int, acc: list[str]) -> list[str] | None:
        if pos == len(tail):
            return acc
        for col in sorted(column_names, key=len, reverse=True):
            if col in acc:
                continue
            end = pos + len(col)
            if tail.startswith(col, pos) and (end == len(tail) or tail[end] == "_"):
                nxt = end + 1 if end < len(tail) else end
                hit = walk(nxt, acc + [col])
                if hit is not None:
                    return hit
        return None

    return walk(0, [])


def parse_actions(text: str, catalog: Catalog) -> list[IndexAction]:
    """Extract CREATE/DROP INDEX statements from free-form completion text.

    Total function: invalid statements are dropped (counted on the returned
    list's `warnings` attribute) and duplicates keep their first occurrence.
    """
    actions: list[IndexAction] = []
    seen: set[tuple[str, IndexDef]] = set()
    warnings = 0

    events: list[tuple[int, str, re.Match]] = []
    for match in _CREATE_RE.finditer(text):
        events.append((match.start(), "create", match))
    for match in _DROP_RE.finditer(text):
        events.append((match.start(), "drop", match))
    events.sort(key=lambda e: e[0])

    for _pos, kind, match in events:
        if kind == "create":
            table = match.group(1)
            raw_cols = [c.strip().split()[0] for c in match.group(2).split(",")
                        if c.strip()]
            try:
                if not catalog.has_table(table):
                    raise ValueError(f"unknown table {table}")
                tab = catalog.table(table)
                for col in raw_cols:
                    if not tab.has_column(col):
                        raise ValueError(f"unknown column {table}.{col}")
                defn = IndexDef(table, tuple(raw_cols))
            except ValueError:
                warnings += 1
                continue
        else:
            defn = resolve_index_name(match.group(1), catalog)
            if defn is None:
                warnings += 1
                continue
        key = (kind, defn)
        if key in seen:
            continue
        seen.add(key)
        actions.append(IndexAction(kind, defn))

    result = _ActionList(actions)
    result.warnings = warnings
    return result


class _ActionList(list):
    """List of IndexAction with a `warnings` counter for dropped statements."""

    warnings: int = 0


def render_actions(actions: list[IndexAction]) -> str:
    """Canonical DDL printer; parse_actions inverts it exactly."""
    lines = []
    for action in actions:
        if action.kind == "create":
            cols = ", ".join(action.index.columns)
            lines.append(f"CREATE INDEX {action.index.name} ON "
                         f"{action.index.table} ({cols});")
        else:
            lines.append(f"DROP INDEX {action.index.name};")
    return "\n".join(lines)
