"""Workload-level index advisor: feature extraction, what-if costing,
LLM-sampled recommendations with index-guided voting, and self-optimization."""

from .catalog import Catalog, ColumnStat
from .sql_features import Workload, WorkloadFeatures, extract_workload_features, parse_query
from .whatif import (
    CostReport,
    IndexAction,
    IndexDef,
    LiveEngine,
    SimulatedEngine,
    relative_cost_reduction,
)

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "ColumnStat",
    "CostReport",
    "IndexAction",
    "IndexDef",
    "LiveEngine",
    "SimulatedEngine",
    "Workload",
    "WorkloadFeatures",
    "extract_workload_features",
    "parse_query",
    "relative_cost_reduction",
    "__version__",
]
