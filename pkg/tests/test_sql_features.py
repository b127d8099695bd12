import json
from pathlib import Path

import pytest

from idxadvisor.catalog import Catalog
from idxadvisor.errors import AmbiguousColumn, ConfigError, ParseError, UnknownColumn
from idxadvisor.sql_features import (
    Workload,
    estimate_selectivity,
    extract_workload_features,
    parse_query,
)
from idxadvisor.whatif import SimulatedEngine

from conftest import DATA, GOLDEN


@pytest.fixture(scope="module")
def micro_catalog() -> Catalog:
    return Catalog.from_dict({"tables": [
        {"name": "t", "rows": 1000, "columns": [
            {"name": "a", "type": "int", "ndv": 1000},
            {"name": "b", "type": "int", "ndv": 100},
            {"name": "shared", "type": "int", "ndv": 10}]},
        {"name": "u", "rows": 500, "columns": [
            {"name": "c", "type": "int", "ndv": 500},
            {"name": "d", "type": "int", "ndv": 50},
            {"name": "shared", "type": "int", "ndv": 10}]},
    ]})


class TestParseQuery:
    def test_single_clause_case(self, micro_catalog):
        shape = parse_query("SELECT * FROM t WHERE t.a = 5", micro_catalog)
        assert [(p.table, p.columns, p.text) for p in shape.where_predicates] == \
            [("t", ("a",), "t.a = 5")]
        assert shape.join_columns == []
        assert shape.group_by == [] and shape.order_by == []

    def test_join_group_order(self, tpch_catalog):
        shape = parse_query(
            "SELECT l_returnflag FROM lineitem JOIN orders ON l_orderkey = o_orderkey "
            "GROUP BY l_returnflag ORDER BY l_returnflag", tpch_catalog)
        assert set(shape.join_columns) == {("lineitem", "l_orderkey"),
                                           ("orders", "o_orderkey")}
        assert shape.group_by == [("lineitem", "l_returnflag")]
        assert shape.order_by == [("lineitem", "l_returnflag")]
        assert shape.where_predicates == []

    def test_subquery_clauses_share_the_shape(self, micro_catalog):
        shape = parse_query(
            "SELECT a FROM t WHERE b IN (SELECT c FROM u WHERE d > 1)", micro_catalog)
        preds = {(p.table, p.columns): p.text for p in shape.where_predicates}
        assert preds[("u", ("d",))] == "d > 1"
        assert ("t", ("b",)) in preds
        assert shape.all_columns == {("t", "a"), ("t", "b"), ("u", "c"), ("u", "d")}

    def test_comma_join_classified_as_join(self, micro_catalog):
        shape = parse_query(
            "SELECT a FROM t, u WHERE t.a = u.c AND d = 3", micro_catalog)
        assert set(shape.join_columns) == {("t", "a"), ("u", "c")}
        assert [(p.table, p.columns) for p in shape.where_predicates] == [("u", ("d",))]

    def test_unknown_column_raises(self, micro_catalog):
        with pytest.raises(UnknownColumn):
            parse_query("SELECT nope FROM t", micro_catalog)

    def test_unknown_table_raises(self, micro_catalog):
        with pytest.raises(UnknownColumn):
            parse_query("SELECT a FROM missing", micro_catalog)

    def test_ambiguous_column_raises(self, micro_catalog):
        with pytest.raises(AmbiguousColumn):
            parse_query("SELECT shared FROM t, u", micro_catalog)

    def test_qualified_ambiguity_is_fine(self, micro_catalog):
        shape = parse_query("SELECT t.shared FROM t, u WHERE u.shared = 1",
                            micro_catalog)
        assert ("t", "shared") in shape.all_columns
        assert [(p.table, p.columns) for p in shape.where_predicates] == \
            [("u", ("shared",))]

    def test_expression_predicate_excluded_from_candidates(self, micro_catalog):
        shape = parse_query("SELECT a FROM t WHERE a + 1 = 5", micro_catalog)
        assert [(p.table, p.columns) for p in shape.where_predicates] == [("t", ())]
        assert ("t", "a") in shape.all_columns

    def test_clause_columns_subset_of_all_columns(self, tpch_catalog, tpch_workload):
        for sql in tpch_workload.queries:
            shape = parse_query(sql, tpch_catalog)
            clause_cols = set(shape.join_columns) | set(shape.group_by) | set(shape.order_by)
            for pred in shape.where_predicates:
                clause_cols.update((pred.table, c) for c in pred.columns)
            assert clause_cols <= shape.all_columns
            for table, column in shape.all_columns:
                assert tpch_catalog.table(table).has_column(column)

    def test_multi_table_non_equi_attributed_to_each(self, micro_catalog):
        shape = parse_query("SELECT a FROM t, u WHERE t.a = u.c AND t.b > u.d",
                            micro_catalog)
        tables = sorted(p.table for p in shape.where_predicates)
        assert tables == ["t", "u"]
        texts = {p.text for p in shape.where_predicates}
        assert texts == {"t.b > u.d"}


class TestSelectivity:
    def test_always_true(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        assert estimate_selectivity(("t", "1 = 1"), engine) == 1.0

    def test_always_false(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        assert estimate_selectivity(("t", "1 = 0"), engine) == 0.0

    def test_unique_key_equality(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        assert estimate_selectivity(("t", "a = 7"), engine) == pytest.approx(1 / 1000)

    def test_conjunction_multiplies(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        # range 1/3 times IN(5)/50 = 1/10 -> 1/30
        sel = estimate_selectivity(("u", "d > 1 AND d IN (1, 2, 3, 4, 5)"), engine)
        assert sel == pytest.approx((1 / 3) * (5 / 50))

    def test_clamped_to_unit_interval(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        sel = estimate_selectivity(("u", "d IN (1,2,3,4,5,6,7,8,9,10)" +
                                    " OR d > 0"), engine)
        assert 0.0 <= sel <= 1.0


class TestExtractFeatures:
    def test_single_predicate_workload(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        wl = Workload(queries=("SELECT a FROM t WHERE b = 1",), name="one")
        features = extract_workload_features(wl, micro_catalog, engine)
        assert len(features.where_selectivities) == 1
        assert features.table_rows == {"t": 1000}

    def test_join_frequency_counts_per_query(self, micro_catalog):
        engine = SimulatedEngine(micro_catalog)
        wl = Workload(queries=(
            "SELECT a FROM t, u WHERE t.a = u.c",
            "SELECT b FROM t JOIN u ON t.a = u.c",
        ), name="two")
        features = extract_workload_features(wl, micro_catalog, engine)
        assert features.join_freq[("t", "a")] == 2
        assert features.join_freq[("u", "c")] == 2

    def test_frequency_additivity(self, toyshop_catalog, corpus_workload):
        engine = SimulatedEngine(toyshop_catalog)
        half = len(corpus_workload.queries) // 2
        first = Workload(queries=corpus_workload.queries[:half], name="first")
        second = Workload(queries=corpus_workload.queries[half:], name="second")
        whole = extract_workload_features(corpus_workload, toyshop_catalog, engine)
        f1 = extract_workload_features(first, toyshop_catalog, engine)
        f2 = extract_workload_features(second, toyshop_catalog, engine)
        for attr in ("join_freq", "groupby_freq", "orderby_freq"):
            combined: dict = {}
            for source in (getattr(f1, attr), getattr(f2, attr)):
                for key, count in source.items():
                    combined[key] = combined.get(key, 0) + count
            assert combined == getattr(whole, attr)

    def test_selectivities_in_bounds(self, tpch_catalog, tpch_workload):
        engine = SimulatedEngine(tpch_catalog)
        features = extract_workload_features(tpch_workload, tpch_catalog, engine)
        assert all(0.0 <= sel <= 1.0
                   for _t, _tab, _c, sel in features.where_selectivities)
        for freq in (features.join_freq, features.groupby_freq,
                     features.orderby_freq):
            assert all(count >= 1 for count in freq.values())

    def test_deterministic_serialization(self, tpch_catalog, tpch_workload):
        a = extract_workload_features(tpch_workload, tpch_catalog,
                                      SimulatedEngine(tpch_catalog))
        b = extract_workload_features(tpch_workload, tpch_catalog,
                                      SimulatedEngine(tpch_catalog))
        assert a.to_json() == b.to_json()

    def test_tpch_where_predicates_average(self, tpch_catalog, tpch_workload):
        engine = SimulatedEngine(tpch_catalog)
        features = extract_workload_features(tpch_workload, tpch_catalog, engine)
        average = len(features.where_selectivities) / len(tpch_workload)
        assert average == pytest.approx(2.11, abs=0.01)


class TestWorkloadLoading:
    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            Workload(queries=(), name="empty")

    def test_rejects_malformed_at_load(self):
        with pytest.raises(ParseError):
            Workload(queries=("SELECT FROM WHERE",), name="bad")

    def test_load_json_format(self, tmp_path):
        path = tmp_path / "w.json"
        path.write_text(json.dumps(
            {"name": "demo", "queries": ["SELECT a FROM t WHERE a = 1"]}))
        wl = Workload.load(path)
        assert wl.name == "demo" and len(wl) == 1

    def test_load_sql_format(self, tmp_path):
        path = tmp_path / "w.sql"
        path.write_text("SELECT a FROM t;\nSELECT b FROM t WHERE b = 2;")
        wl = Workload.load(path)
        assert len(wl) == 2


def _shape_summary(sql: str, catalog: Catalog) -> dict:
    shape = parse_query(sql, catalog)
    return {
        "tables": sorted(shape.tables),
        "where": [[p.table, list(p.columns), p.text] for p in shape.where_predicates],
        "joins": sorted(map(list, set(shape.join_columns))),
        "group_by": [list(k) for k in shape.group_by],
        "order_by": [list(k) for k in shape.order_by],
        "all_columns": sorted(map(list, shape.all_columns)),
    }


@pytest.mark.parametrize("corpus,catalog_file,schema", [
    ("tpch_subset.sql", "tpch_catalog.json", "tpch"),
    ("corpus_extra.sql", "toyshop_catalog.json", "toyshop"),
])
def test_golden_workload_features(corpus, catalog_file, schema):
    catalog = Catalog.load(DATA / catalog_file, schema_id=schema)
    workload = Workload.load(DATA / corpus)
    engine = SimulatedEngine(catalog)
    features = extract_workload_features(workload, catalog, engine)
    actual = {
        "features": features.to_dict(),
        "shapes": [_shape_summary(sql, catalog) for sql in workload.queries],
    }
    golden_path = GOLDEN / f"features_{Path(corpus).stem}.json"
    golden = json.loads(golden_path.read_text(encoding="utf-8"))
    assert actual == golden
