"""Candidate generation and the two greedy advisors used for label collection.

Both advisors work against a what-if session and deliberately stay simple:
a bottom-up greedy (add the best candidate until nothing improves or fits)
and a benefit-density ranking (solo benefit per MB, admitted greedily).
Label collection runs both across a budget grid and lets what-if evaluation
arbitrate, extending low-budget winners up to the target budget to escape
the local optima the fixed search patterns fall into.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

from .sql_features import Workload, WorkloadFeatures, extract_workload_features
from .whatif import IndexAction, IndexDef, WhatIfSession

log = logging.getLogger(__name__)


@dataclass
class CandidateSet:
    candidates: list[IndexDef]
    provenance: dict[IndexDef, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.candidates)


def generate_candidates(features: WorkloadFeatures, max_width: int = 2) -> CandidateSet:
    """Index candidates from clause columns.

    Single-column candidates cover every WHERE/JOIN/GROUP BY/ORDER BY column.
    Wider candidates combine columns of the same table co-occurring in one
    query, with the leading column drawn from WHERE or JOIN columns.
    """
    if max_width < 1:
        raise ValueError("max_width must be >= 1")

    where_cols = set(features.where_freq())
    join_cols = set(features.join_freq)
    group_cols = set(features.groupby_freq)
    order_cols = set(features.orderby_freq)
    provenance: dict[IndexDef, str] = {}

    def note(defn: IndexDef, source: str):
        provenance.setdefault(defn, source)

    singles: list[IndexDef] = []
    for cols, source in ((where_cols, "where"), (join_cols, "join"),
                         (group_cols, "group"), (order_cols, "order")):
        for table, column in sorted(cols):
            defn = IndexDef(table, (column,))
            if defn not in provenance:
                singles.append(defn)
            note(defn, source)

    wider: list[IndexDef] = []
    if max_width >= 2:
        leading = where_cols | join_cols
        per_query = _per_query_clause_columns(features)
        seen: set[IndexDef] = set(singles)
        for query_cols in per_query:
            by_table: dict[str, list[str]] = {}
            for table, column in query_cols:
                by_table.setdefault(table, []).append(column)
            for table, cols in sorted(by_table.items()):
                cols = list(dict.fromkeys(cols))
                leads = [c for c in cols if (table, c) in leading]
                for width in range(2, min(max_width, len(cols)) + 1):
                    for lead in leads:
                        rest = [c for c in cols if c != lead]
                        for tail in itertools.permutations(rest, width - 1):
                            defn = IndexDef(table, (lead, *tail))
                            if defn not in seen:
                                seen.add(defn)
                                wider.append(defn)
                                note(defn, "where" if (table, lead) in where_cols else "join")

    return CandidateSet(candidates=singles + sorted(wider), provenance=provenance)


def _per_query_clause_columns(features: WorkloadFeatures) -> list[list[tuple[str, str]]]:
    """Clause columns per query, approximated from per-query column stats.

    A column qualifies when the workload uses it in some indexable clause and
    the query references it at all; this slightly over-generates combinations
    but never invents columns outside the workload's clause features.
    """
    clause_cols = (set(features.where_freq()) | set(features.join_freq)
                   | set(features.groupby_freq) | set(features.orderby_freq))
    out = []
    for stats in features.per_query_columns:
        cols = [(s.table, s.column) for s in stats if (s.table, s.column) in clause_cols]
        out.append(cols)
    return out


def _fits(size_mb: float, used_mb: float, budget_mb: float) -> bool:
    return used_mb + size_mb <= budget_mb + 1e-9


def greedy_advisor(session: WhatIfSession, workload: Workload,
                   candidates: CandidateSet, budget_mb: float,
                   initial: list[IndexDef] | None = None) -> list[IndexDef]:
    """Bottom-up greedy: repeatedly add the candidate with the largest
    workload-cost reduction that still fits the budget.

    `initial` seeds the session (its storage counts against the budget),
    which is how label collection extends low-budget results upward.
    Returns only the newly chosen definitions, in selection order.
    """
    if budget_mb <= 0:
        raise ValueError("budget_mb must be positive")
    for defn in initial or []:
        if defn not in session.existing:
            session.hypo_create(defn)

    chosen: list[IndexDef] = []
    current_cost = session.estimate_workload_cost(workload).total
    remaining = sorted(set(candidates.candidates) - set(session.existing))

    while remaining:
        best_key: tuple[float, float, IndexDef] | None = None
        used_mb = session.total_size_mb()
        for defn in remaining:
            hypo = session.hypo_create(defn)
            if not _fits(hypo.est_size_mb, used_mb, budget_mb):
                session.hypo_drop(defn)
                continue
            cost = session.estimate_workload_cost(workload).total
            session.hypo_drop(defn)
            reduction = current_cost - cost
            if reduction <= 1e-9:
                continue
            key = (-reduction, hypo.est_size_mb, defn)
            if best_key is None or key < best_key:
                best_key = key
        if best_key is None:
            break
        defn = best_key[2]
        session.hypo_create(defn)
        chosen.append(defn)
        remaining.remove(defn)
        current_cost = session.estimate_workload_cost(workload).total
    return chosen


def density_advisor(session: WhatIfSession, workload: Workload,
                    candidates: CandidateSet, budget_mb: float) -> list[IndexDef]:
    """Rank candidates by solo benefit per MB, admit greedily within budget."""
    if budget_mb <= 0:
        raise ValueError("budget_mb must be positive")
    baseline = session.estimate_workload_cost(workload).total

    ranked: list[tuple[float, float, IndexDef]] = []
    for defn in sorted(set(candidates.candidates)):
        if defn in session.existing:
            continue
        hypo = session.hypo_create(defn)
        cost = session.estimate_workload_cost(workload).total
        session.hypo_drop(defn)
        benefit = baseline - cost
        if benefit <= 1e-9:
            continue
        ranked.append((benefit / hypo.est_size_mb, hypo.est_size_mb, defn))
    ranked.sort(key=lambda item: (-item[0], item[1], item[2]))

    chosen: list[IndexDef] = []
    for _density, size_mb, defn in ranked:
        if _fits(size_mb, session.total_size_mb(), budget_mb):
            session.hypo_create(defn)
            chosen.append(defn)
    return chosen


@dataclass
class LabelCandidate:
    """One evaluated member of the label-candidate pool."""

    defs: tuple[IndexDef, ...]
    cost: float
    size_mb: float
    source: str

    @property
    def def_set(self) -> frozenset[IndexDef]:
        return frozenset(self.defs)


def _evaluate_set(engine, workload: Workload, defs: tuple[IndexDef, ...],
                  source: str) -> LabelCandidate:
    session = engine.session()
    size = 0.0
    for defn in defs:
        size += session.hypo_create(defn).est_size_mb
    cost = session.estimate_workload_cost(workload).total
    return LabelCandidate(defs=defs, cost=cost, size_mb=size, source=source)


def collect_label_pool(engine, workload: Workload, budget_grid: list[float],
                       target: float, max_width: int = 2) -> list[LabelCandidate]:
    """Advisor outputs at every grid budget <= target, each also extended
    greedily up to the target budget, all evaluated with what-if."""
    if target not in budget_grid:
        raise ValueError("target budget must be a member of the budget grid")
    features = extract_workload_features(workload, engine.catalog, engine)
    candidates = generate_candidates(features, max_width=max_width)
    db_size = engine.database_size_mb()
    target_mb = target * db_size

    raw_sets: list[tuple[tuple[IndexDef, ...], str]] = []
    for fraction in sorted(b for b in budget_grid if b <= target):
        budget_mb = fraction * db_size
        for advisor, tag in ((greedy_advisor, "greedy"), (density_advisor, "density")):
            session = engine.session()
            defs = tuple(advisor(session, workload, candidates, budget_mb))
            raw_sets.append((defs, f"{tag}@{fraction:g}"))

    pool: list[LabelCandidate] = []
    seen: set[frozenset[IndexDef]] = set()
    for defs, source in raw_sets:
        for variant, suffix in _with_extension(engine, workload, candidates,
                                               defs, target_mb):
            key = frozenset(variant)
            if key in seen:
                continue
            seen.add(key)
            pool.append(_evaluate_set(engine, workload, variant, source + suffix))
    if not any(len(c.defs) == 0 for c in pool):
        pool.append(_evaluate_set(engine, workload, (), "empty"))
    return pool


def _with_extension(engine, workload, candidates, defs, target_mb):
    yield defs, ""
    session = engine.session()
    extension = greedy_advisor(session, workload, candidates, target_mb,
                               initial=list(defs))
    if extension:
        yield defs + tuple(extension), "+ext"


def collect_default_label(engine, workload: Workload, budget_grid: list[float],
                          target: float, max_width: int = 2) -> list[IndexAction]:
    """Minimum-cost pool member as CREATE actions only."""
    pool = collect_label_pool(engine, workload, budget_grid, target,
                              max_width=max_width)
    best = min(pool, key=lambda c: (c.cost, c.size_mb, sorted(c.defs)))
    return [IndexAction("create", defn) for defn in sorted(best.defs)]


def make_refined_label(suboptimal: set[IndexDef],
                       optimal: set[IndexDef]) -> list[IndexAction]:
    """DROP extras then CREATE the missing; applying to `suboptimal` yields
    exactly `optimal`."""
    drops = [IndexAction("drop", d) for d in sorted(suboptimal - optimal)]
    creates = [IndexAction("create", d) for d in sorted(optimal - suboptimal)]
    return drops + creates


def apply_actions(actions: list[IndexAction], state: set[IndexDef]) -> set[IndexDef]:
    """Pure application of CREATE/DROP actions to an index-set state."""
    out = set(state)
    for action in actions:
        if action.kind == "create":
            out.add(action.index)
        else:
            out.discard(action.index)
    return out
