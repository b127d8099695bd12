import itertools
import math
import random

import pytest

from idxadvisor.catalog import Catalog
from idxadvisor.errors import DuplicateIndex, IndexNotFound, UnknownColumn, ZeroBaseline
from idxadvisor.sql_features import Workload
from idxadvisor.whatif import (
    CostReport,
    IndexDef,
    SimulatedEngine,
    relative_cost_reduction,
)


@pytest.fixture(scope="module")
def catalog() -> Catalog:
    return Catalog.from_dict({"tables": [
        {"name": "t", "rows": 1_000_000, "columns": [
            {"name": "int_col", "type": "int", "ndv": 1_000_000},
            {"name": "flag", "type": "text", "ndv": 4}]},
        {"name": "small", "rows": 1000, "columns": [
            {"name": "k", "type": "int", "ndv": 1000},
            {"name": "v", "type": "int", "ndv": 100},
            {"name": "w", "type": "int", "ndv": 10}]},
    ]})


class TestIndexDef:
    def test_canonical_name(self):
        assert IndexDef("lineitem", ("l_orderkey",)).name == "lineitem_l_orderkey_idx"
        assert IndexDef("t", ("a", "b")).name == "t_a_b_idx"

    def test_rejects_duplicate_columns(self):
        with pytest.raises(ValueError):
            IndexDef("t", ("a", "a"))

    def test_strict_prefix(self):
        a = IndexDef("t", ("x",))
        ab = IndexDef("t", ("x", "y"))
        assert a.is_strict_prefix_of(ab)
        assert not ab.is_strict_prefix_of(a)
        assert not a.is_strict_prefix_of(IndexDef("u", ("x", "y")))


class TestHypoManagement:
    def test_size_formula(self, catalog):
        engine = SimulatedEngine(catalog)
        session = engine.session()
        hypo = session.hypo_create(IndexDef("t", ("int_col",)))
        assert hypo.est_size_mb == pytest.approx(1_000_000 * 12 / (1024 * 1024))
        assert hypo.est_size_mb == pytest.approx(11.44, abs=0.01)

    def test_duplicate_create_rejected(self, catalog):
        session = SimulatedEngine(catalog).session()
        session.hypo_create(IndexDef("small", ("k",)))
        with pytest.raises(DuplicateIndex):
            session.hypo_create(IndexDef("small", ("k",)))

    def test_unknown_column_rejected(self, catalog):
        session = SimulatedEngine(catalog).session()
        with pytest.raises(UnknownColumn):
            session.hypo_create(IndexDef("small", ("missing",)))

    def test_create_then_drop_restores_state(self, catalog):
        session = SimulatedEngine(catalog).session()
        defn = IndexDef("small", ("v",))
        session.hypo_create(defn)
        session.hypo_drop(defn)
        assert session.defs() == set()

    def test_drop_absent_raises(self, catalog):
        session = SimulatedEngine(catalog).session()
        with pytest.raises(IndexNotFound):
            session.hypo_drop(IndexDef("small", ("v",)))

    def test_drop_one_of_two_keeps_other_effective(self, catalog):
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=("SELECT k FROM small WHERE v = 1",), name="w")
        session = engine.session()
        session.hypo_create(IndexDef("small", ("v",)))
        session.hypo_create(IndexDef("small", ("w",)))
        with_both = session.estimate_workload_cost(wl).total
        session.hypo_drop(IndexDef("small", ("w",)))
        assert session.estimate_workload_cost(wl).total == pytest.approx(with_both)
        session.hypo_drop(IndexDef("small", ("v",)))
        assert session.estimate_workload_cost(wl).total > with_both

    def test_session_isolation(self, catalog):
        engine = SimulatedEngine(catalog)
        one, two = engine.session(), engine.session()
        one.hypo_create(IndexDef("small", ("k",)))
        assert two.defs() == set()

    def test_size_additivity(self, catalog):
        engine = SimulatedEngine(catalog)
        session = engine.session()
        sizes = [session.hypo_create(d).est_size_mb
                 for d in (IndexDef("small", ("k",)), IndexDef("small", ("v", "w")),
                           IndexDef("t", ("flag",)))]
        assert session.total_size_mb() == pytest.approx(sum(sizes))


class TestCostModel:
    def test_table_scan_without_indexes(self, catalog):
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=("SELECT k FROM small",), name="scan")
        report = engine.session().estimate_workload_cost(wl)
        assert report.per_query_cost == [1000.0]
        assert report.total == 1000.0

    def test_leading_equality_formula(self, catalog):
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=("SELECT k FROM small WHERE v = 7",), name="eq")
        session = engine.session()
        session.hypo_create(IndexDef("small", ("v",)))
        report = session.estimate_workload_cost(wl)
        expected = 0.5 * 1000 * (1 / 100) + math.log2(1002)
        assert report.per_query_cost[0] == pytest.approx(expected)
        assert report.per_query_cost[0] == pytest.approx(14.97, abs=0.01)
        assert report.used_indexes == {"small_v_idx"}

    def test_total_is_sum(self, catalog):
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=("SELECT k FROM small WHERE v = 1",
                               "SELECT int_col FROM t WHERE flag = 'A'"), name="two")
        report = engine.session().estimate_workload_cost(wl)
        assert report.total == pytest.approx(sum(report.per_query_cost))

    def test_multi_column_prefix_match(self, catalog):
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=("SELECT k FROM small WHERE v = 1 AND w = 2",),
                      name="prefix")
        session = engine.session()
        session.hypo_create(IndexDef("small", ("v", "w")))
        matched = session.estimate_workload_cost(wl).total
        session.hypo_drop(IndexDef("small", ("v", "w")))
        session.hypo_create(IndexDef("small", ("v", "k")))
        partial = session.estimate_workload_cost(wl).total
        # (v, w) matches both predicates (sel 1/100 * 1/10), (v, k) only one
        assert matched < partial

    def test_join_and_sort_credits(self, catalog):
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=(
            "SELECT k FROM small, t WHERE k = int_col ORDER BY v",), name="join")
        baseline = engine.session().estimate_workload_cost(wl).total
        session = engine.session()
        session.hypo_create(IndexDef("small", ("k",)))
        with_join_idx = session.estimate_workload_cost(wl).total
        assert with_join_idx == pytest.approx(baseline - 0.2 * 1000)
        session.hypo_create(IndexDef("small", ("v",)))
        with_sort_idx = session.estimate_workload_cost(wl).total
        assert with_sort_idx == pytest.approx(with_join_idx - 0.8 * 0.1 * 1000)

    def test_access_floor(self):
        catalog = Catalog.from_dict({"tables": [
            {"name": "tiny", "rows": 2, "columns": [
                {"name": "a", "type": "int", "ndv": 2}]}]})
        engine = SimulatedEngine(catalog)
        wl = Workload(queries=("SELECT a FROM tiny WHERE a = 1",), name="tiny")
        session = engine.session()
        session.hypo_create(IndexDef("tiny", ("a",)))
        assert session.estimate_workload_cost(wl).per_query_cost[0] >= 1.0

    def test_monotonicity_under_random_index_sets(self, toyshop_catalog,
                                                  regression_suite):
        engine = SimulatedEngine(toyshop_catalog)
        rng = random.Random(7)
        columns = [(t.name, c.column) for t in toyshop_catalog.tables
                   for c in t.columns]
        for wl in regression_suite:
            defs: list[IndexDef] = []
            session = engine.session()
            previous = session.estimate_workload_cost(wl)
            baseline = previous
            for _ in range(6):
                table, column = rng.choice(columns)
                defn = IndexDef(table, (column,))
                if defn in session.existing:
                    continue
                session.hypo_create(defn)
                defs.append(defn)
                current = session.estimate_workload_cost(wl)
                for before, after in zip(previous.per_query_cost,
                                         current.per_query_cost):
                    assert after <= before + 1e-9
                previous = current
            for defn in defs:
                session.hypo_drop(defn)
            restored = session.estimate_workload_cost(wl)
            assert restored.per_query_cost == baseline.per_query_cost

    def test_exhaustive_minimum_is_stable(self, toyshop_catalog):
        """Enumerating all candidate subsets twice finds the same optimum."""
        engine = SimulatedEngine(toyshop_catalog)
        wl = Workload(queries=(
            "SELECT c_name FROM customers WHERE c_segment = 'GOLD'",
            "SELECT o_id FROM orders WHERE o_status = 'OPEN' AND o_total > 10",
        ), name="micro")
        candidates = [IndexDef("customers", ("c_segment",)),
                      IndexDef("orders", ("o_status",)),
                      IndexDef("orders", ("o_total",)),
                      IndexDef("orders", ("o_status", "o_total"))]

        def exhaustive():
            best = None
            for r in range(len(candidates) + 1):
                for combo in itertools.combinations(candidates, r):
                    session = engine.session()
                    for defn in combo:
                        session.hypo_create(defn)
                    cost = session.estimate_workload_cost(wl).total
                    key = (cost, len(combo), sorted(d.name for d in combo))
                    if best is None or key < best:
                        best = key
            return best

        assert exhaustive() == exhaustive()


class TestRelativeReduction:
    def test_no_change(self):
        base = CostReport(per_query_cost=[100.0])
        assert relative_cost_reduction(base, CostReport(per_query_cost=[100.0])) == 0.0

    def test_matches_benchmark_scale(self):
        base = CostReport(per_query_cost=[100.0])
        current = CostReport(per_query_cost=[12.8])
        assert relative_cost_reduction(base, current) == pytest.approx(0.872)

    def test_regression_is_negative(self):
        base = CostReport(per_query_cost=[100.0])
        current = CostReport(per_query_cost=[120.0])
        assert relative_cost_reduction(base, current) == pytest.approx(-0.2)

    def test_zero_baseline_raises(self):
        with pytest.raises(ZeroBaseline):
            relative_cost_reduction(CostReport(per_query_cost=[]),
                                    CostReport(per_query_cost=[1.0]))
