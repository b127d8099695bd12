"""Demonstration pool: construction, serialization, and matching.

A demonstration pairs a workload's features with the labels collected
offline: a CREATE-only default label for the empty initial state, and
refined CREATE/DROP labels that move suboptimal states to the optimum.
Matching works on schema-independent meta-features, a fixed-length vector
of normalized (column frequency, NDV) pairs sorted descending.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import Catalog
from .errors import MatchEmpty, NoQueriesParsed
from .heuristics import (
    LabelCandidate,
    apply_actions,
    collect_label_pool,
    make_refined_label,
)
from .llm import SYNTH_INSTRUCTION, ChatRequest, chat, extract_sql_blocks
from .sql_features import Workload, WorkloadFeatures, extract_workload_features
from .whatif import IndexAction, IndexDef

log = logging.getLogger(__name__)

DEFAULT_K = 20
DEFAULT_SIMILARITY_THRESHOLD = 0.8
DEFAULT_TIMEOUT_FACTOR = 50.0


@dataclass(frozen=True)
class MetaFeature:
    """K normalized (frequency, ndv) pairs, sorted descending, zero-padded."""

    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for f, ndv in self.pairs:
            if not (0.0 <= f <= 1.0 and 0.0 <= ndv <= 1.0):
                raise ValueError("meta-feature coordinates must lie in [0, 1]")
        if list(self.pairs) != sorted(self.pairs, reverse=True):
            raise ValueError("meta-feature pairs must be sorted descending")

    @property
    def k(self) -> int:
        return len(self.pairs)

    def flatten(self) -> list[float]:
        return [x for pair in self.pairs for x in pair]


def build_meta_feature(features: WorkloadFeatures, k: int = DEFAULT_K) -> MetaFeature:
    """Normalize per-column (frequency, ndv) by their workload maxima."""
    if k < 1:
        raise ValueError("k must be >= 1")
    freq = features.column_freq()
    stats = features.column_stats()
    raw = [(count, stats[key].ndv if key in stats else 0)
           for key, count in sorted(freq.items())]
    max_f = max((f for f, _ in raw), default=0)
    max_ndv = max((n for _, n in raw), default=0)
    pairs = [
        (f / max_f if max_f else 0.0, n / max_ndv if max_ndv else 0.0)
        for f, n in raw
    ]
    pairs.sort(reverse=True)
    pairs = pairs[:k] + [(0.0, 0.0)] * max(0, k - len(pairs))
    return MetaFeature(pairs=tuple(pairs))


def cosine_similarity(a: MetaFeature, b: MetaFeature) -> float:
    """Cosine over the flattened 2K vectors; zero vectors compare as 0."""
    if a.k != b.k:
        raise ValueError("meta-features must share the same K")
    va, vb = a.flatten(), b.flatten()
    dot = sum(x * y for x, y in zip(va, vb))
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(y * y for y in vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


@dataclass
class Demonstration:
    id: str
    schema_id: str
    meta: MetaFeature
    features_text: str
    default_label: list[IndexAction]
    refined_labels: list[tuple[frozenset[IndexDef], list[IndexAction]]]
    budget_fraction: float

    def __post_init__(self):
        if any(a.kind == "drop" for a in self.default_label):
            raise ValueError("default label must contain CREATE actions only")
        target = {a.index for a in self.default_label}
        for initial, actions in self.refined_labels:
            if apply_actions(actions, set(initial)) != target:
                raise ValueError(
                    f"refined label for {self.id} does not round-trip to the "
                    "default-label set")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "schema_id": self.schema_id,
            "meta": [list(p) for p in self.meta.pairs],
            "features_text": self.features_text,
            "default_label": [a.to_dict() for a in self.default_label],
            "refined_labels": [
                {"initial": [d.to_dict() for d in sorted(initial)],
                 "actions": [a.to_dict() for a in actions]}
                for initial, actions in self.refined_labels
            ],
            "budget_fraction": self.budget_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Demonstration":
        return cls(
            id=data["id"],
            schema_id=data["schema_id"],
            meta=MetaFeature(tuple(tuple(p) for p in data["meta"])),
            features_text=data["features_text"],
            default_label=[IndexAction.from_dict(a) for a in data["default_label"]],
            refined_labels=[
                (frozenset(IndexDef.from_dict(d) for d in r["initial"]),
                 [IndexAction.from_dict(a) for a in r["actions"]])
                for r in data["refined_labels"]
            ],
            budget_fraction=data["budget_fraction"],
        )


class DemoPool:
    def __init__(self, demonstrations: list[Demonstration]):
        ids = [d.id for d in demonstrations]
        if len(set(ids)) != len(ids):
            raise ValueError("demonstration ids must be unique")
        self.demonstrations = list(demonstrations)

    def __len__(self) -> int:
        return len(self.demonstrations)

    def schemas(self) -> set[str]:
        return {d.schema_id for d in self.demonstrations}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        lines = [json.dumps(d.to_dict(), sort_keys=True) for d in self.demonstrations]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DemoPool":
        path = Path(path)
        demos = []
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                demos.append(Demonstration.from_dict(json.loads(line)))
        return cls(demos)


def match_demonstrations(pool: DemoPool, meta: MetaFeature, strategy: str = "cosine",
                         n: int = 2, exclude_schema: str | None = None,
                         seed: int = 0, k_clusters: int = 8) -> list[Demonstration]:
    """Rank the pool for a target workload.

    The full ranking is returned (the caller prompts with the first `n` and
    rotates through the rest); `exclude_schema` implements the cross-schema
    setting. Ties and sampling are deterministic for a given seed.
    """
    candidates = [d for d in pool.demonstrations
                  if exclude_schema is None or d.schema_id != exclude_schema]
    if not candidates:
        raise MatchEmpty("no demonstrations left after schema exclusion")
    if n < 1:
        raise ValueError("n must be >= 1")

    if strategy == "cosine":
        return sorted(candidates,
                      key=lambda d: (-cosine_similarity(meta, d.meta), d.id))
    if strategy == "random":
        rng = random.Random(seed)
        shuffled = sorted(candidates, key=lambda d: d.id)
        rng.shuffle(shuffled)
        return shuffled
    if strategy == "kmeans":
        return _kmeans_match(candidates, meta, seed=seed, k=k_clusters)
    raise ValueError(f"unknown match strategy {strategy!r}")


def _kmeans_match(candidates: list[Demonstration], meta: MetaFeature,
                  seed: int, k: int) -> list[Demonstration]:
    """Seeded Lloyd's iteration; matched cluster first (seeded sample order),
    remaining demonstrations after it (by distance to the query)."""
    import numpy as np

    candidates = sorted(candidates, key=lambda d: d.id)
    points = np.array([d.meta.flatten() for d in candidates], dtype=float)
    k = max(1, min(k, len(candidates)))
    rng = random.Random(seed)
    centers = points[rng.sample(range(len(candidates)), k)].copy()

    assignment = np.zeros(len(candidates), dtype=int)
    for iteration in range(50):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = dist.argmin(axis=1)
        if iteration > 0 and (new_assignment == assignment).all():
            break
        assignment = new_assignment
        for j in range(k):
            members = points[assignment == j]
            if len(members):
                centers[j] = members.mean(axis=0)

    query = np.array(meta.flatten(), dtype=float)
    center_dist = ((centers - query) ** 2).sum(axis=1)
    target = int(center_dist.argmin())

    matched = [d for d, a in zip(candidates, assignment) if a == target]
    rest = [d for d, a in zip(candidates, assignment) if a != target]
    rng.shuffle(matched)

    def qdist(d: Demonstration) -> float:
        v = np.array(d.meta.flatten(), dtype=float)
        return float(((v - query) ** 2).sum())

    rest.sort(key=lambda d: (qdist(d), d.id))
    return matched + rest


def select_label(demo: Demonstration, existing: set[IndexDef]) -> list[IndexAction]:
    """Default label for an empty state; otherwise the refined label whose
    initial state is closest by Jaccard overlap (ties: fewer actions)."""
    if not existing or not demo.refined_labels:
        return list(demo.default_label)

    def jaccard(state: frozenset[IndexDef]) -> float:
        union = state | existing
        if not union:
            return 1.0
        return len(state & existing) / len(union)

    best = max(
        demo.refined_labels,
        key=lambda item: (jaccard(item[0]), -len(item[1]),
                          [a.sort_key for a in item[1]]),
    )
    return list(best[1])


# --- workload synthesis --------------------------------------------------------


@dataclass
class SynthesisSeeds:
    """Sampled context injected into the generation prompt."""

    tables: list[str]
    values: dict[str, list[str]]
    examples: list[str] = field(default_factory=list)
    nonce: int = 0


def sample_seeds(catalog: Catalog, rng: random.Random, n_tables: int = 3,
                 examples: list[str] | None = None, nonce: int = 0) -> SynthesisSeeds:
    names = catalog.table_names()
    tables = sorted(rng.sample(names, min(n_tables, len(names))))
    values: dict[str, list[str]] = {}
    for t in tables:
        table = catalog.table(t)
        col = rng.choice(sorted(table.columns, key=lambda c: c.column))
        values[f"{t}.{col.column}"] = [str(rng.randint(1, max(1, col.ndv)))
                                       for _ in range(3)]
    chosen_examples = []
    if examples:
        chosen_examples = rng.sample(examples, min(2, len(examples)))
    return SynthesisSeeds(tables=tables, values=values,
                          examples=chosen_examples, nonce=nonce)


def build_synthesis_request(catalog: Catalog, seeds: SynthesisSeeds,
                            n: int, dialect: str = "postgresql") -> ChatRequest:
    lines = [
        f"Dialect: {dialect}",
        f"Focus tables: {', '.join(seeds.tables)}",
        "Sample column values: " + json.dumps(seeds.values, sort_keys=True),
        f"Variation nonce: {seeds.nonce}",
    ]
    if seeds.examples:
        lines.append("Example queries for style (do not copy):")
        lines.extend(f"  {q}" for q in seeds.examples)
    lines.append("Emit one SELECT per ```sql block.")
    lines.append("### SCHEMA (JSON)")
    lines.append("```json")
    lines.append(json.dumps(catalog.to_dict(), sort_keys=True))
    lines.append("```")
    return ChatRequest(system_text=SYNTH_INSTRUCTION, user_text="\n".join(lines),
                       temperature=0.8, n_samples=n, max_tokens=2048)


def synthesize_queries(llm, catalog: Catalog, n: int,
                       seeds: SynthesisSeeds) -> list[str]:
    """Ask the backend for n queries and pull fenced SQL from the completions."""
    request = build_synthesis_request(catalog, seeds, n)
    completions = chat(llm, request)
    queries: list[str] = []
    for completion in completions:
        queries.extend(extract_sql_blocks(completion))
    if not queries:
        raise NoQueriesParsed("no fenced SQL found in completions")
    return queries[:n]


def _normalized_tokens(sql: str) -> frozenset[str]:
    from . import sqlparser as sp

    try:
        tokens = sp.tokenize(sql)
    except Exception:
        return frozenset(sql.lower().split())
    out = []
    for tok in tokens:
        if tok.kind in ("NUMBER",):
            out.append("<num>")
        elif tok.kind == "STRING":
            out.append("<str>")
        elif tok.kind == "EOF":
            continue
        else:
            out.append(tok.value.lower())
    return frozenset(out)


def token_jaccard(a: str, b: str) -> float:
    ta, tb = _normalized_tokens(a), _normalized_tokens(b)
    if not ta and not tb:
        return 1.0
    union = ta | tb
    return len(ta & tb) / len(union) if union else 1.0


def validate_and_filter(queries: list[str], engine, benchmark_templates: list[str],
                        timeout_factor: float = DEFAULT_TIMEOUT_FACTOR,
                        similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
                        ) -> list[str]:
    """Drop invalid queries, near-duplicates of benchmark templates, and
    slow outliers (simulated cost above timeout_factor x the median)."""
    valid = [q for q in queries if engine.explain_ok(q)]
    if benchmark_templates:
        valid = [
            q for q in valid
            if all(token_jaccard(q, t) < similarity_threshold
                   for t in benchmark_templates)
        ]
    if not valid:
        return []
    costs = [engine.query_cost(q, frozenset())[0] for q in valid]
    median = sorted(costs)[len(costs) // 2]
    if median > 0:
        valid = [q for q, cost in zip(valid, costs)
                 if cost <= timeout_factor * median]
    return valid


# --- pool construction ----------------------------------------------------------


@dataclass
class PoolConfig:
    queries_per_schema: int = 40
    workload_size_range: tuple[int, int] = (3, 8)
    budget_grid: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6)
    n_workloads: int = 4
    seed: int = 0
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    timeout_factor: float = DEFAULT_TIMEOUT_FACTOR
    meta_k: int = DEFAULT_K
    # None keeps a refined label for every non-selected pool member
    max_refined_labels: int | None = None


def build_pool(catalog: Catalog, engine, llm, config: PoolConfig,
               benchmark_templates: list[str] | None = None) -> DemoPool:
    """Synthesize, filter, and label workloads into a demonstration pool."""
    rng = random.Random(config.seed)
    queries: list[str] = []
    batch = 0
    while len(queries) < config.queries_per_schema and batch < 20:
        seeds = sample_seeds(catalog, rng, nonce=batch,
                             examples=benchmark_templates)
        want = config.queries_per_schema - len(queries)
        try:
            raw = synthesize_queries(llm, catalog, min(want + 4, 16), seeds)
        except NoQueriesParsed:
            batch += 1
            continue
        kept = validate_and_filter(raw, engine, benchmark_templates or [],
                                   timeout_factor=config.timeout_factor,
                                   similarity_threshold=config.similarity_threshold)
        for q in kept:
            if q not in queries:
                queries.append(q)
        batch += 1
    if not queries:
        log.warning("no synthesized queries survived filtering; pool is empty")
        return DemoPool([])

    demos: list[Demonstration] = []
    for w_idx in range(config.n_workloads):
        lo, hi = config.workload_size_range
        size = rng.randint(lo, min(hi, len(queries)))
        selected = rng.sample(queries, size)
        workload = Workload(queries=tuple(selected),
                            name=f"{catalog.schema_id}-w{w_idx}")
        features = extract_workload_features(workload, catalog, engine)
        meta = build_meta_feature(features, k=config.meta_k)
        features_text = features.render_text()

        for target in config.budget_grid:
            pool_members = collect_label_pool(
                engine, workload, list(config.budget_grid), target)
            best = min(pool_members,
                       key=lambda c: (c.cost, c.size_mb, sorted(c.defs)))
            default_label = [IndexAction("create", d) for d in sorted(best.defs)]
            refined = _refined_labels(pool_members, best,
                                      limit=config.max_refined_labels)
            demos.append(Demonstration(
                id=f"{catalog.schema_id}-w{w_idx}-b{int(round(target * 100))}",
                schema_id=catalog.schema_id,
                meta=meta,
                features_text=features_text,
                default_label=default_label,
                refined_labels=refined,
                budget_fraction=target,
            ))
    return DemoPool(demos)


def _refined_labels(pool_members: list[LabelCandidate], best: LabelCandidate,
                    limit: int | None,
                    ) -> list[tuple[frozenset[IndexDef], list[IndexAction]]]:
    """Refined labels from the non-selected pool members, cheapest first."""
    optimal = set(best.defs)
    out = []
    seen: set[frozenset[IndexDef]] = {best.def_set}
    for member in sorted(pool_members, key=lambda c: (c.cost, c.size_mb)):
        if member.def_set in seen:
            continue
        seen.add(member.def_set)
        actions = make_refined_label(set(member.defs), optimal)
        out.append((member.def_set, actions))
        if limit is not None and len(out) >= limit:
            break
    return out
