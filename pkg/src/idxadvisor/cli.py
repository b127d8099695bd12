"""Command-line entry point: advise | build-demos | gen-workload | labels | eval.

Configuration precedence is flags > config file (--config, JSON) > environment
(IXADV_* variables) > defaults. Exit codes: 0 success, 2 configuration or
input error, 3 database backend error, 4 LLM backend error.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import random
import sys
import time
from pathlib import Path

import click

from . import demos as demos_mod
from .catalog import Catalog
from .errors import (
    AdvisorError,
    AmbiguousColumn,
    BackendError,
    ConfigError,
    LLMError,
    MatchEmpty,
    ParseError,
    UnknownColumn,
    ZeroBaseline,
)
from .heuristics import collect_label_pool, make_refined_label
from .llm import HttpBackend, MockBackend, parse_actions, render_actions
from .report import Report, write_report_files
from .scaling import IterationTrace, ScalingConfig, self_optimize
from .sql_features import Workload, extract_workload_features
from .whatif import LiveEngine, SimulatedEngine, relative_cost_reduction

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_LLM = 4

_CONFIG_KEYS = (
    "workload", "catalog", "dsn", "backend", "storage_pct", "llm", "model",
    "endpoint", "token", "samples", "temperature", "max_iters", "demos",
    "match", "mode", "exclude_schema", "seed", "out", "zero_shot",
)


def resolve_config(cli_values: dict, config_path: str | None) -> dict:
    """Merge flags over config-file values over IXADV_* environment values."""
    merged: dict = {}
    for key in _CONFIG_KEYS:
        env = os.environ.get(f"IXADV_{key.upper()}")
        if env is not None:
            merged[key] = env
    if config_path:
        try:
            file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as ex:
            raise ConfigError(f"cannot read config file {config_path}: {ex}") from ex
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(file_values)
    for key, value in cli_values.items():
        if value is not None:
            merged[key] = value
    return merged


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ParseError, UnknownColumn, AmbiguousColumn,
                MatchEmpty, ZeroBaseline, ValueError, OSError) as ex:
            click.echo(f"error: {ex}", err=True)
            sys.exit(EXIT_CONFIG)
        except BackendError as ex:
            click.echo(f"backend error: {ex}", err=True)
            sys.exit(EXIT_BACKEND)
        except LLMError as ex:
            click.echo(f"llm error: {ex}", err=True)
            sys.exit(EXIT_LLM)
        except AdvisorError as ex:
            click.echo(f"error: {ex}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


def _make_engine(cfg: dict, catalog: Catalog):
    backend = str(cfg.get("backend", "sim"))
    if backend == "sim":
        return SimulatedEngine(catalog)
    if backend == "live":
        dsn = cfg.get("dsn")
        if not dsn:
            raise ConfigError("live backend requires --dsn")
        return LiveEngine(str(dsn), catalog)
    raise ConfigError(f"unknown backend {backend!r} (expected sim|live)")


def _make_llm(cfg: dict):
    kind = str(cfg.get("llm", "mock"))
    if kind == "mock":
        return MockBackend(seed=int(cfg.get("seed", 0)))
    if kind == "http":
        endpoint = cfg.get("endpoint") or os.environ.get("IXADV_LLM_ENDPOINT")
        model = cfg.get("model") or os.environ.get("IXADV_LLM_MODEL")
        token = cfg.get("token") or os.environ.get("IXADV_LLM_TOKEN")
        if not endpoint or not model:
            raise ConfigError("http llm requires an endpoint and model "
                              "(flags or IXADV_LLM_ENDPOINT / IXADV_LLM_MODEL)")
        return HttpBackend(endpoint=str(endpoint), model=str(model),
                           token=str(token) if token else None)
    raise ConfigError(f"unknown llm backend {kind!r} (expected http|mock)")


def _storage_pct(cfg: dict) -> float:
    value = float(cfg.get("storage_pct", 0.3))
    if not 0 < value <= 1:
        raise ConfigError("--storage-pct must lie in (0, 1]")
    return value


def _load_inputs(cfg: dict) -> tuple[Catalog, Workload]:
    if not cfg.get("catalog"):
        raise ConfigError("--catalog is required")
    if not cfg.get("workload"):
        raise ConfigError("--workload is required")
    catalog = Catalog.load(str(cfg["catalog"]))
    workload = Workload.load(str(cfg["workload"]))
    return catalog, workload


def _config_echo(cfg: dict) -> dict:
    echo = {k: cfg.get(k) for k in _CONFIG_KEYS if cfg.get(k) is not None}
    echo.pop("token", None)  # never echo credentials
    echo.pop("out", None)  # destination is self-evident and varies across runs
    return {k: str(v) if isinstance(v, Path) else v for k, v in sorted(echo.items())}


_shared_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config file; flags override it."),
    click.option("--catalog", type=click.Path(), default=None,
                 help="Catalog JSON (tables, rows, columns, ndv)."),
    click.option("--seed", type=int, default=None, help="Random seed."),
    click.option("--out", type=click.Path(), default=None, help="Output path."),
]


def shared_options(fn):
    for option in reversed(_shared_options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Workload-level index advisor with LLM sampling and what-if checks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@shared_options
@click.option("--workload", type=click.Path(), default=None,
              help="Workload .sql (semicolon separated) or JSON file.")
@click.option("--dsn", default=None, help="Live backend connection string.")
@click.option("--backend", type=click.Choice(["sim", "live"]), default=None)
@click.option("--storage-pct", type=float, default=None,
              help="Budget as a fraction of database size, in (0, 1].")
@click.option("--llm", type=click.Choice(["http", "mock"]), default=None)
@click.option("--model", default=None, help="Model name for the http backend.")
@click.option("--endpoint", default=None, help="Chat-completions endpoint URL.")
@click.option("--samples", type=int, default=None, help="Samples per iteration.")
@click.option("--temperature", type=float, default=None)
@click.option("--max-iters", type=int, default=None)
@click.option("--demos", type=click.Path(), default=None,
              help="Demonstration pool (JSON lines).")
@click.option("--match", type=click.Choice(["cosine", "random", "kmeans"]),
              default=None)
@click.option("--mode", type=click.Choice(["in-schema", "cross-schema"]),
              default=None)
@click.option("--exclude-schema", default=None)
@click.option("--zero-shot", "zero_shot", is_flag=True, default=None,
              help="Run without demonstrations.")
@click.option("--vote/--no-vote", "use_voting", default=True,
              help="Include the index-guided voted option (ablation switch).")
@click.option("--stable-report", is_flag=True,
              help="Zero the runtime field for byte-stable reports.")
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
@handle_errors
def advise(config_path, use_voting, stable_report, no_figures, **cli_values):
    """Recommend an index set for a workload under a storage budget."""
    cfg = resolve_config(cli_values, config_path)
    catalog, workload = _load_inputs(cfg)
    engine = _make_engine(cfg, catalog)
    backend = _make_llm(cfg)
    storage_pct = _storage_pct(cfg)
    seed = int(cfg.get("seed", 0))
    zero_shot = _truthy(cfg.get("zero_shot"))

    start = time.perf_counter()
    features = extract_workload_features(workload, catalog, engine)

    ranked = []
    if not zero_shot:
        if not cfg.get("demos"):
            raise ConfigError("--demos is required unless --zero-shot is set")
        pool = demos_mod.DemoPool.load(str(cfg["demos"]))
        if not len(pool):
            raise MatchEmpty("demonstration pool is empty")
        meta_k = pool.demonstrations[0].meta.k
        meta = demos_mod.build_meta_feature(features, k=meta_k)
        exclude = None
        if str(cfg.get("mode", "in-schema")) == "cross-schema":
            exclude = str(cfg.get("exclude_schema") or catalog.schema_id)
        ranked = demos_mod.match_demonstrations(
            pool, meta, strategy=str(cfg.get("match", "cosine")),
            n=2, exclude_schema=exclude, seed=seed)

    budget_mb = storage_pct * engine.database_size_mb()
    scaling_cfg = ScalingConfig(
        max_iters=int(cfg.get("max_iters", 4)),
        n_samples=int(cfg.get("samples", 8)),
        temperature=float(cfg.get("temperature", 0.6)),
        use_voting=use_voting,
    )
    result = self_optimize(
        backend, engine.session, workload, features, ranked,
        budget_mb=budget_mb, budget_fraction=storage_pct, config=scaling_cfg)

    baseline = engine.session().estimate_workload_cost(workload)
    final_session = engine.session()
    for defn in sorted(result.final_defs):
        final_session.hypo_create(defn)
    final = final_session.estimate_workload_cost(workload)
    runtime = time.perf_counter() - start

    report = Report(
        recommended_ddl=render_actions(result.actions).splitlines(),
        baseline_cost=result.baseline_cost,
        final_cost=result.cost,
        runtime_seconds=runtime,
        iterations=result.iterations,
        config_echo=_config_echo(cfg),
        aborted=result.aborted,
        per_query_baseline=list(baseline.per_query_cost),
        per_query_final=list(final.per_query_cost),
    )
    out_dir = Path(str(cfg.get("out", "advise-out")))
    paths = write_report_files(report, out_dir, stable=stable_report,
                               figures=not no_figures)
    reduction = report.relative_reduction
    click.echo(f"baseline cost {report.baseline_cost:.2f} -> final "
               f"{report.final_cost:.2f} (reduction {reduction:.1%})")
    click.echo(f"report written to {paths['report']}")


@main.command("eval")
@shared_options
@click.option("--workload", type=click.Path(), default=None)
@click.option("--dsn", default=None)
@click.option("--backend", type=click.Choice(["sim", "live"]), default=None)
@click.option("--ddl", type=click.Path(), required=True,
              help="File with CREATE/DROP INDEX statements to evaluate.")
@click.option("--no-figures", is_flag=True)
@handle_errors
def eval_cmd(config_path, ddl, no_figures, **cli_values):
    """Evaluate a given index set (from any advisor) against a workload."""
    cfg = resolve_config(cli_values, config_path)
    catalog, workload = _load_inputs(cfg)
    engine = _make_engine(cfg, catalog)

    start = time.perf_counter()
    ddl_text = Path(ddl).read_text(encoding="utf-8")
    actions = parse_actions(ddl_text, catalog)

    baseline = engine.session().estimate_workload_cost(workload)
    session = engine.session()
    applied = []
    for action in actions:
        if action.kind == "create" and action.index not in session.existing:
            session.hypo_create(action.index)
            applied.append(action)
        elif action.kind == "drop" and action.index in session.existing:
            session.hypo_drop(action.index)
            applied.append(action)
    current = session.estimate_workload_cost(workload)
    runtime = time.perf_counter() - start

    reduction = relative_cost_reduction(baseline, current)
    trace = IterationTrace(
        iteration=1,
        option_costs=[current.total],
        chosen_origin="eval",
        chosen_cost=current.total,
        applied_ddl=render_actions(applied).splitlines(),
        improved=current.total < baseline.total,
        remaining_budget_mb=0.0,
    )
    report = Report(
        recommended_ddl=render_actions(applied).splitlines(),
        baseline_cost=baseline.total,
        final_cost=current.total,
        runtime_seconds=runtime,
        iterations=[trace],
        config_echo=_config_echo(cfg),
        per_query_baseline=list(baseline.per_query_cost),
        per_query_final=list(current.per_query_cost),
    )
    out_dir = Path(str(cfg.get("out", "eval-out")))
    paths = write_report_files(report, out_dir, figures=not no_figures)
    click.echo(f"cost {baseline.total:.2f} -> {current.total:.2f} "
               f"(reduction {reduction:.1%})")
    click.echo(f"report written to {paths['report']}")


@main.command("build-demos")
@shared_options
@click.option("--llm", type=click.Choice(["http", "mock"]), default=None)
@click.option("--model", default=None)
@click.option("--endpoint", default=None)
@click.option("--dsn", default=None)
@click.option("--backend", type=click.Choice(["sim", "live"]), default=None)
@click.option("--queries", type=int, default=24, show_default=True,
              help="Synthesized queries to keep for this schema.")
@click.option("--workloads", type=int, default=3, show_default=True)
@click.option("--workload-size", default="3,6", show_default=True,
              help="min,max queries per workload.")
@click.option("--grid", default="0.2,0.3,0.4,0.5,0.6", show_default=True,
              help="Comma-separated budget fractions for label collection.")
@click.option("--templates", type=click.Path(), default=None,
              help="Benchmark queries to filter near-duplicates against.")
@handle_errors
def build_demos(config_path, queries, workloads, workload_size, grid,
                templates, **cli_values):
    """Build a demonstration pool offline and write it as JSON lines."""
    cfg = resolve_config(cli_values, config_path)
    if not cfg.get("catalog"):
        raise ConfigError("--catalog is required")
    catalog = Catalog.load(str(cfg["catalog"]))
    engine = _make_engine(cfg, catalog)
    llm = _make_llm(cfg)
    lo, hi = _int_pair(workload_size)
    pool_cfg = demos_mod.PoolConfig(
        queries_per_schema=queries,
        workload_size_range=(lo, hi),
        budget_grid=tuple(_float_list(grid)),
        n_workloads=workloads,
        seed=int(cfg.get("seed", 0)),
    )
    bench = _load_templates(templates)
    pool = demos_mod.build_pool(catalog, engine, llm, pool_cfg,
                                benchmark_templates=bench)
    out = Path(str(cfg.get("out", "demos.jsonl")))
    pool.save(out)
    click.echo(f"wrote {len(pool)} demonstrations to {out}")


@main.command("gen-workload")
@shared_options
@click.option("--llm", type=click.Choice(["http", "mock"]), default=None)
@click.option("--model", default=None)
@click.option("--endpoint", default=None)
@click.option("--n", type=int, default=12, show_default=True,
              help="Queries to generate (after filtering).")
@click.option("--templates", type=click.Path(), default=None)
@handle_errors
def gen_workload(config_path, n, templates, **cli_values):
    """Synthesize SELECT queries for a schema and write them to a .sql file."""
    cfg = resolve_config(cli_values, config_path)
    if not cfg.get("catalog"):
        raise ConfigError("--catalog is required")
    catalog = Catalog.load(str(cfg["catalog"]))
    engine = SimulatedEngine(catalog)
    llm = _make_llm(cfg)
    rng = random.Random(int(cfg.get("seed", 0)))
    bench = _load_templates(templates)

    kept: list[str] = []
    for batch in range(20):
        if len(kept) >= n:
            break
        seeds = demos_mod.sample_seeds(catalog, rng, nonce=batch, examples=bench)
        raw = demos_mod.synthesize_queries(llm, catalog, min(n + 4, 16), seeds)
        for q in demos_mod.validate_and_filter(raw, engine, bench or []):
            if q not in kept:
                kept.append(q)
    kept = kept[:n]
    out = Path(str(cfg.get("out", "workload.sql")))
    out.write_text(";\n\n".join(kept) + (";\n" if kept else ""), encoding="utf-8")
    click.echo(f"wrote {len(kept)} queries to {out}")


@main.command()
@shared_options
@click.option("--workload", type=click.Path(), default=None)
@click.option("--dsn", default=None)
@click.option("--backend", type=click.Choice(["sim", "live"]), default=None)
@click.option("--grid", default="0.2,0.3,0.4,0.5,0.6", show_default=True)
@handle_errors
def labels(config_path, grid, **cli_values):
    """Collect default and refined labels for a workload across a budget grid."""
    cfg = resolve_config(cli_values, config_path)
    catalog, workload = _load_inputs(cfg)
    engine = _make_engine(cfg, catalog)
    fractions = _float_list(grid)

    entries = []
    for target in fractions:
        pool = collect_label_pool(engine, workload, fractions, target)
        best = min(pool, key=lambda c: (c.cost, c.size_mb, sorted(c.defs)))
        optimal = set(best.defs)
        refined = []
        seen = {frozenset(best.defs)}
        for member in sorted(pool, key=lambda c: (c.cost, c.size_mb)):
            if member.def_set in seen:
                continue
            seen.add(member.def_set)
            refined.append({
                "initial": [d.to_dict() for d in sorted(member.defs)],
                "actions": [a.to_dict() for a in
                            make_refined_label(set(member.defs), optimal)],
            })
        entries.append({
            "workload": workload.name,
            "budget_fraction": target,
            "default_label": [
                {"action": "create", "table": d.table, "columns": list(d.columns)}
                for d in sorted(optimal)
            ],
            "refined_labels": refined,
        })

    out = Path(str(cfg.get("out", "labels.json")))
    out.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    click.echo(f"wrote labels for {len(entries)} budgets to {out}")


def _truthy(value) -> bool:
    if isinstance(value, str):
        return value.lower() in ("1", "true", "yes", "on")
    return bool(value)


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad fraction list {text!r}") from None
    if not values or any(not 0 < v <= 1 for v in values):
        raise ConfigError("budget fractions must lie in (0, 1]")
    return values


def _int_pair(text: str) -> tuple[int, int]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'min,max', got {text!r}")
    lo, hi = int(parts[0]), int(parts[1])
    if lo < 1 or hi < lo:
        raise ConfigError("workload size range must satisfy 1 <= min <= max")
    return lo, hi


def _load_templates(path: str | None) -> list[str]:
    if not path:
        return []
    from .sqlparser import split_statements

    return split_statements(Path(path).read_text(encoding="utf-8"))


if __name__ == "__main__":
    main()
