"""Report assembly and artifact writing.

Every advise/eval run produces a directory with `report.json` (canonical,
sorted keys), `recommended.sql` (plain DDL), `trace.jsonl` (one record per
iteration), `summary.csv`, and rendered matplotlib figures. The JSON report
is byte-stable for a fixed seed when `stable` zeroes the runtime field.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .scaling import IterationTrace  # noqa: E402

_PNG_META = {"Software": "idxadvisor"}


@dataclass
class Report:
    recommended_ddl: list[str]
    baseline_cost: float
    final_cost: float
    runtime_seconds: float
    iterations: list[IterationTrace]
    config_echo: dict
    aborted: bool = False
    per_query_baseline: list[float] = field(default_factory=list)
    per_query_final: list[float] = field(default_factory=list)

    @property
    def relative_reduction(self) -> float:
        if self.baseline_cost <= 0:
            return 0.0
        return (self.baseline_cost - self.final_cost) / self.baseline_cost

    def to_dict(self, stable: bool = False) -> dict:
        return {
            "recommended_ddl": self.recommended_ddl,
            "baseline_cost": round(self.baseline_cost, 6),
            "final_cost": round(self.final_cost, 6),
            "relative_cost_reduction": round(self.relative_reduction, 9),
            "runtime_seconds": 0.0 if stable else round(self.runtime_seconds, 3),
            "iterations": [t.to_dict() for t in self.iterations],
            "aborted": self.aborted,
            "config": self.config_echo,
        }

    def to_json(self, stable: bool = False) -> str:
        return json.dumps(self.to_dict(stable=stable), sort_keys=True, indent=2) + "\n"


def write_report_files(report: Report, out_dir: str | Path,
                       stable: bool = False, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "ddl": out / "recommended.sql",
        "trace": out / "trace.jsonl",
        "summary": out / "summary.csv",
    }
    paths["report"].write_text(report.to_json(stable=stable), encoding="utf-8")
    ddl_text = "\n".join(report.recommended_ddl)
    paths["ddl"].write_text(ddl_text + ("\n" if ddl_text else ""), encoding="utf-8")
    with paths["trace"].open("w", encoding="utf-8") as fh:
        for trace in report.iterations:
            fh.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")
    _write_summary_csv(report, paths["summary"])
    if figures:
        paths["cost_figure"] = _plot_cost_trajectory(report, out)
        paths["options_figure"] = _plot_option_costs(report, out)
        if report.per_query_baseline and report.per_query_final:
            paths["per_query_figure"] = _plot_per_query(report, out)
    return paths


def _write_summary_csv(report: Report, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "best_cost", "n_options", "chosen_origin",
                         "improved", "applied_statements", "remaining_budget_mb"])
        writer.writerow(["baseline", f"{report.baseline_cost:.6f}", "", "", "", "", ""])
        for trace in report.iterations:
            writer.writerow([
                trace.iteration,
                f"{trace.chosen_cost:.6f}",
                len(trace.option_costs),
                trace.chosen_origin,
                int(trace.improved),
                len(trace.applied_ddl),
                f"{trace.remaining_budget_mb:.6f}",
            ])
        writer.writerow(["final", f"{report.final_cost:.6f}", "", "", "", "", ""])


def _plot_cost_trajectory(report: Report, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [0] + [t.iteration for t in report.iterations]
    ys = [report.baseline_cost]
    best = report.baseline_cost
    for trace in report.iterations:
        if trace.improved:
            best = trace.chosen_cost
        ys.append(best)
    ax.step(xs, ys, where="post", marker="o", color="#2c6fbb")
    ax.axhline(report.baseline_cost, color="grey", linestyle="--",
               linewidth=0.8, label="baseline")
    ax.set_xlabel("iteration")
    ax.set_ylabel("workload cost")
    ax.set_title("Estimated workload cost per iteration")
    ax.legend(loc="best")
    fig.tight_layout()
    path = out / "cost_trajectory.png"
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def _plot_option_costs(report: Report, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for trace in report.iterations:
        xs = [trace.iteration] * len(trace.option_costs)
        ax.scatter(xs, trace.option_costs, s=18, alpha=0.6, color="#888888")
        ax.scatter([trace.iteration], [trace.chosen_cost], s=45,
                   color="#d1495b", zorder=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("option cost")
    ax.set_title("Evaluated options per iteration (red = chosen)")
    if report.iterations:
        ax.set_xticks([t.iteration for t in report.iterations])
    fig.tight_layout()
    path = out / "option_costs.png"
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def _plot_per_query(report: Report, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    n = len(report.per_query_baseline)
    xs = range(1, n + 1)
    width = 0.4
    ax.bar([x - width / 2 for x in xs], report.per_query_baseline, width,
           label="baseline", color="#888888")
    ax.bar([x + width / 2 for x in xs], report.per_query_final, width,
           label="with indexes", color="#2c6fbb")
    ax.set_xlabel("query")
    ax.set_ylabel("estimated cost")
    ax.set_title("Per-query cost before and after")
    ax.legend(loc="best")
    fig.tight_layout()
    path = out / "per_query_costs.png"
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path
