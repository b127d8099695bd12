"""Inference scaling: index-guided major voting, Best-of-N, self-optimization.

Vertical scaling samples the LLM several times, adds a voted option built
from the samples, evaluates every option with a fresh what-if session, and
keeps the cheapest. Horizontal scaling wraps that in an iterative loop that
applies improving options virtually, feeds cost/usage history and rotated
demonstrations back into the next prompt, and stops on the first
non-improving iteration or at the iteration cap.

Voting rules (applied to per-option deduplicated action sets):
  * DROPs with at least two recommendations are kept, emitted first
    (count desc, name asc);
  * all single-column CREATEs are kept; multi-column CREATEs need at least
    two recommendations;
  * prefix folding: while some retained def is a same-table strict prefix of
    another retained def, the shortest such prefix (ties by name) is removed
    and its count added to every retained def it prefixes;
  * CREATEs are ordered by count desc, column width asc, name asc.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from .demos import Demonstration, select_label
from .errors import EmptyOptions, LLMError
from .llm import HistoryEntry, PromptState, build_prompt, chat, parse_actions, render_actions
from .sql_features import Workload, WorkloadFeatures
from .whatif import CostReport, IndexAction, IndexDef

log = logging.getLogger(__name__)


@dataclass
class CandidateOption:
    """One complete recommendation and its what-if evaluation."""

    actions: list[IndexAction]
    applied: list[IndexAction]
    cost: float
    size_mb: float  # net storage delta of the applied actions
    origin: str  # "sample-<i>" | "voted"
    resulting: frozenset[IndexDef] = frozenset()
    used_indexes: set[str] = field(default_factory=set)

    def tie_key(self):
        return (self.cost, len(self.applied), self.size_mb,
                [a.sort_key for a in self.applied])


@dataclass
class VoteTally:
    create_counts: dict[IndexDef, int] = field(default_factory=dict)
    drop_counts: dict[IndexDef, int] = field(default_factory=dict)


def tally(options: list[list[IndexAction]]) -> VoteTally:
    """Count each distinct def once per option, creates and drops apart."""
    out = VoteTally()
    for actions in options:
        for kind, counts in (("create", out.create_counts),
                             ("drop", out.drop_counts)):
            for defn in {a.index for a in actions if a.kind == kind}:
                counts[defn] = counts.get(defn, 0) + 1
    return out


def index_guided_major_voting(vote_tally: VoteTally) -> list[IndexAction]:
    """Merge sampled recommendations into one option; see module docstring."""
    drops = sorted(
        (d for d, c in vote_tally.drop_counts.items() if c >= 2),
        key=lambda d: (-vote_tally.drop_counts[d], d.name),
    )

    counts = {
        d: c for d, c in vote_tally.create_counts.items()
        if len(d.columns) == 1 or c >= 2
    }
    while True:
        prefixes = sorted(
            (p for p in counts
             if any(p.is_strict_prefix_of(e) for e in counts)),
            key=lambda d: (len(d.columns), d.name),
        )
        if not prefixes:
            break
        prefix = prefixes[0]
        for extension in counts:
            if prefix.is_strict_prefix_of(extension):
                counts[extension] += counts[prefix]
        del counts[prefix]

    creates = sorted(counts, key=lambda d: (-counts[d], len(d.columns), d.name))
    return ([IndexAction("drop", d) for d in drops]
            + [IndexAction("create", d) for d in creates])


def evaluate_option(session_factory: Callable, workload: Workload,
                    existing: set[IndexDef], actions: list[IndexAction],
                    budget_mb: float, origin: str = "option") -> CandidateOption:
    """Apply actions on a fresh session seeded with `existing`, gated by budget.

    DROPs of absent defs and CREATEs of already-present defs are skipped;
    a CREATE is skipped when its estimated size exceeds the remaining budget
    (drops applied earlier free budget). Never raises for over-budget input.
    """
    if budget_mb < 0:
        raise ValueError("budget_mb cannot be negative")
    session = session_factory()
    for defn in sorted(existing):
        session.hypo_create(defn)

    remaining = budget_mb
    applied: list[IndexAction] = []
    net = 0.0
    for action in actions:
        if action.kind == "drop":
            if action.index in session.existing:
                freed = session.existing[action.index].est_size_mb
                session.hypo_drop(action.index)
                remaining += freed
                net -= freed
                applied.append(action)
            continue
        if action.index in session.existing:
            continue
        size = session.engine.index_size_mb(action.index)
        if size > remaining + 1e-9:
            continue
        session.hypo_create(action.index)
        remaining -= size
        net += size
        applied.append(action)

    report: CostReport = session.estimate_workload_cost(workload)
    return CandidateOption(
        actions=list(actions),
        applied=applied,
        cost=report.total,
        size_mb=net,
        origin=origin,
        resulting=frozenset(session.existing),
        used_indexes=set(report.used_indexes),
    )


def best_of_n(options: list[CandidateOption]) -> CandidateOption:
    """Minimum-cost option; ties go to fewer applied actions, then smaller
    size, then lexicographic action order."""
    if not options:
        raise EmptyOptions("no options to choose from")
    best = min(options, key=lambda o: o.tie_key())
    assert best.cost == min(o.cost for o in options)
    return best


@dataclass
class ScalingConfig:
    max_iters: int = 4
    n_samples: int = 8
    temperature: float = 0.6
    max_tokens: int = 8192
    use_voting: bool = True
    demo_slots: int = 2

    def __post_init__(self):
        if self.max_iters < 1 or self.n_samples < 1:
            raise ValueError("max_iters and n_samples must be >= 1")


@dataclass
class IterationTrace:
    iteration: int
    option_costs: list[float]
    chosen_origin: str
    chosen_cost: float
    applied_ddl: list[str]
    improved: bool
    remaining_budget_mb: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "option_costs": [round(c, 6) for c in self.option_costs],
            "chosen_origin": self.chosen_origin,
            "chosen_cost": round(self.chosen_cost, 6),
            "applied_ddl": self.applied_ddl,
            "improved": self.improved,
            "remaining_budget_mb": round(self.remaining_budget_mb, 6),
        }


@dataclass
class OptimizationResult:
    actions: list[IndexAction]
    final_defs: frozenset[IndexDef]
    cost: float
    baseline_cost: float
    history: list[HistoryEntry]
    iterations: list[IterationTrace]
    aborted: bool = False

    @property
    def iteration_best_costs(self) -> list[float]:
        return [t.chosen_cost for t in self.iterations]


class _DemoRotation:
    """Serve ranked demonstrations two at a time, never repeating a slot
    while unseen ones remain; falls back to the best seen otherwise."""

    def __init__(self, ranked: list[Demonstration], slots: int):
        self.ranked = ranked
        self.slots = slots
        self.cursor = 0

    def next_slots(self) -> list[Demonstration]:
        out = self.ranked[self.cursor : self.cursor + self.slots]
        self.cursor += len(out)
        if len(out) < self.slots and self.ranked:
            filler = [d for d in self.ranked[: self.slots] if d not in out]
            out.extend(filler[: self.slots - len(out)])
        return out


def self_optimize(backend, session_factory: Callable, workload: Workload,
                  features: WorkloadFeatures, ranked_demos: list[Demonstration],
                  budget_mb: float, budget_fraction: float,
                  config: ScalingConfig | None = None,
                  trace_sink: Callable[[IterationTrace], None] | None = None,
                  ) -> OptimizationResult:
    """Iterative sample -> vote -> evaluate -> apply loop.

    Improving options are applied virtually (what-if only); the loop stops
    after the first non-improving iteration or max_iters. An LLMError mid-run
    aborts and returns the best configuration seen, flagged as aborted.
    """
    config = config or ScalingConfig()
    baseline = session_factory().estimate_workload_cost(workload)
    baseline_cost = baseline.total

    existing: set[IndexDef] = set()
    remaining_mb = budget_mb
    incumbent_cost = baseline_cost
    history: list[HistoryEntry] = []
    traces: list[IterationTrace] = []
    rotation = _DemoRotation(ranked_demos, config.demo_slots)
    aborted = False

    for iteration in range(1, config.max_iters + 1):
        demos = [(demo, select_label(demo, existing))
                 for demo in rotation.next_slots()]
        state = PromptState(
            features=features,
            table_rows=dict(features.table_rows),
            existing=set(existing),
            remaining_budget_mb=remaining_mb,
            budget_fraction=budget_fraction,
            workload_length=len(workload),
            first_iteration=(iteration == 1),
            history=list(history),
            demos=demos,
        )
        request = build_prompt(state, temperature=config.temperature,
                               n_samples=config.n_samples,
                               max_tokens=config.max_tokens)
        try:
            completions = chat(backend, request)
        except LLMError as ex:
            log.warning("LLM failed at iteration %d: %s", iteration, ex)
            aborted = True
            break

        catalog = session_factory().catalog
        sample_actions = [parse_actions(text, catalog) for text in completions]
        options = [
            evaluate_option(session_factory, workload, existing, actions,
                            remaining_mb, origin=f"sample-{i}")
            for i, actions in enumerate(sample_actions)
        ]
        if config.use_voting:
            voted = index_guided_major_voting(tally([list(a) for a in sample_actions]))
            options.append(
                evaluate_option(session_factory, workload, existing, voted,
                                remaining_mb, origin="voted"))

        best = best_of_n(options)
        improved = best.cost < incumbent_cost - 1e-9
        history.append(HistoryEntry(
            iteration=iteration,
            recommended=list(best.applied),
            cost_before=incumbent_cost,
            cost_after=best.cost,
            used_indexes=set(best.used_indexes),
        ))
        trace = IterationTrace(
            iteration=iteration,
            option_costs=[o.cost for o in options],
            chosen_origin=best.origin,
            chosen_cost=best.cost,
            applied_ddl=render_actions(best.applied).splitlines(),
            improved=improved,
            remaining_budget_mb=remaining_mb - best.size_mb if improved else remaining_mb,
        )
        traces.append(trace)
        if trace_sink is not None:
            trace_sink(trace)
        if not improved:
            break
        existing = set(best.resulting)
        remaining_mb -= best.size_mb
        incumbent_cost = best.cost

    final_actions = [IndexAction("create", d) for d in sorted(existing)]
    return OptimizationResult(
        actions=final_actions,
        final_defs=frozenset(existing),
        cost=incumbent_cost,
        baseline_cost=baseline_cost,
        history=history,
        iterations=traces,
        aborted=aborted,
    )
