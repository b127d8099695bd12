from __future__ import annotations

import random
from pathlib import Path

import pytest

from idxadvisor.catalog import Catalog
from idxadvisor.demos import DemoPool, PoolConfig, build_pool
from idxadvisor.llm import MockBackend
from idxadvisor.sql_features import Workload
from idxadvisor.whatif import SimulatedEngine

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"


@pytest.fixture(scope="session")
def tpch_catalog() -> Catalog:
    return Catalog.load(DATA / "tpch_catalog.json", schema_id="tpch")


@pytest.fixture(scope="session")
def toyshop_catalog() -> Catalog:
    return Catalog.load(DATA / "toyshop_catalog.json", schema_id="toyshop")


@pytest.fixture(scope="session")
def tpch_workload() -> Workload:
    return Workload.load(DATA / "tpch_subset.sql", name="tpch19")


@pytest.fixture(scope="session")
def corpus_workload() -> Workload:
    return Workload.load(DATA / "corpus_extra.sql", name="corpus")


@pytest.fixture()
def tpch_engine(tpch_catalog) -> SimulatedEngine:
    return SimulatedEngine(tpch_catalog)


@pytest.fixture()
def toyshop_engine(toyshop_catalog) -> SimulatedEngine:
    return SimulatedEngine(toyshop_catalog)


def regression_workloads(catalog_name: str = "toyshop") -> list[Workload]:
    """Fixed workload suite for scaling/acceptance regressions."""
    if catalog_name == "toyshop":
        return [
            Workload(queries=(
                "SELECT c_name FROM customers WHERE c_segment = 'GOLD' AND c_balance > 500 ORDER BY c_name",
                "SELECT o_status, COUNT(*) FROM orders WHERE o_date >= '1995-01-01' GROUP BY o_status",
                "SELECT c_name, o_total FROM customers JOIN orders ON c_id = o_cust_id WHERE o_priority = 'HIGH'",
            ), name="reg-a"),
            Workload(queries=(
                "SELECT ol_mode, SUM(ol_amount) FROM order_lines WHERE ol_ship_date BETWEEN '1995-01-01' AND '1995-06-30' AND ol_qty < 10 GROUP BY ol_mode",
                "SELECT i_name FROM items WHERE i_category = 'TOOLS' AND i_price < 30",
                "SELECT o_id FROM orders WHERE o_status = 'OPEN' ORDER BY o_date",
                "SELECT c_name FROM customers WHERE c_city = 'Berlin'",
            ), name="reg-b"),
            Workload(queries=(
                "SELECT c_id FROM customers WHERE c_since >= '1996-01-01' AND c_segment IN ('GOLD', 'SILVER')",
                "SELECT o_priority, COUNT(*) FROM orders WHERE o_total > 800 GROUP BY o_priority ORDER BY o_priority",
                "SELECT ol_item_id, SUM(ol_qty) FROM order_lines WHERE ol_amount > 100 GROUP BY ol_item_id",
                "SELECT s_name FROM suppliers WHERE s_region = 'EMEA' AND s_rating >= 8",
                "SELECT c_name, o_date FROM customers, orders WHERE c_id = o_cust_id AND o_date < '1994-06-01'",
            ), name="reg-c"),
            # reg-d / reg-e concentrate clause columns on the large tables so
            # the 30% budget binds and option quality differences persist
            Workload(queries=(
                "SELECT ol_amount FROM order_lines WHERE ol_mode = 'AIR'",
                "SELECT ol_amount FROM order_lines WHERE ol_qty = 3",
                "SELECT ol_amount FROM order_lines WHERE ol_ship_date > '1996-01-01'",
                "SELECT ol_qty FROM order_lines WHERE ol_item_id = 77",
                "SELECT ol_qty FROM order_lines WHERE ol_order_id = 1234",
                "SELECT o_total FROM orders WHERE o_status = 'OPEN'",
                "SELECT o_total FROM orders WHERE o_date > '1995-06-01'",
                "SELECT o_total FROM orders WHERE o_priority = 'LOW'",
            ), name="reg-d"),
            Workload(queries=(
                "SELECT ol_ship_date FROM order_lines WHERE ol_amount > 900",
                "SELECT ol_ship_date FROM order_lines WHERE ol_mode = 'RAIL'",
                "SELECT ol_item_id FROM order_lines WHERE ol_qty > 40",
                "SELECT o_date FROM orders WHERE o_cust_id = 99",
                "SELECT o_date FROM orders WHERE o_total < 20",
                "SELECT c_balance FROM customers WHERE c_city = 'Lima'",
                "SELECT c_balance FROM customers WHERE c_segment = 'BASE'",
                "SELECT c_city FROM customers WHERE c_since < '1993-01-01'",
            ), name="reg-e"),
        ]
    raise ValueError(catalog_name)


@pytest.fixture(scope="session")
def regression_suite() -> list[Workload]:
    return regression_workloads()


@pytest.fixture(scope="session")
def toyshop_pool(toyshop_catalog) -> DemoPool:
    """Small deterministic demonstration pool built once per test session."""
    engine = SimulatedEngine(toyshop_catalog)
    config = PoolConfig(queries_per_schema=16, workload_size_range=(3, 5),
                        budget_grid=(0.3,), n_workloads=3, seed=11)
    return build_pool(toyshop_catalog, engine, MockBackend(seed=11), config)


@pytest.fixture()
def rng() -> random.Random:
    return random.Random(0xC0FFEE)


def make_micro_instance(seed: int):
    """Small random (catalog, workload, budget fraction) for oracle checks."""
    gen = random.Random(seed)
    n_tables = gen.choice([1, 1, 2, 3])
    tables = []
    for ti in range(n_tables):
        rows = gen.choice([2000, 5000, 20000, 100000])
        cols = []
        for ci in range(gen.randint(2, 4)):
            ndv = min(rows, gen.choice([2, 5, 20, 100, rows // 2, rows]))
            cols.append({"name": f"t{ti}c{ci}",
                         "type": gen.choice(["int", "text", "decimal", "date"]),
                         "ndv": max(1, ndv)})
        tables.append({"name": f"t{ti}", "rows": rows, "columns": cols})
    catalog = Catalog.from_dict({"tables": tables}, schema_id=f"micro{seed}")

    queries = []
    for _ in range(gen.randint(2, 4)):
        ti = gen.randrange(n_tables)
        names = [c["name"] for c in tables[ti]["columns"]]
        col, col2 = gen.choice(names), gen.choice(names)
        form = gen.random()
        if form < 0.5:
            queries.append(f"SELECT {col2} FROM t{ti} WHERE {col} = 1")
        elif form < 0.8:
            queries.append(f"SELECT {col2} FROM t{ti} WHERE {col} > 5")
        else:
            queries.append(f"SELECT {col}, COUNT(*) FROM t{ti} "
                           f"WHERE {col2} = 2 GROUP BY {col}")
    workload = Workload(queries=tuple(queries), name=f"micro{seed}")
    return catalog, workload, gen.choice([0.3, 0.4, 0.5])


def exhaustive_optimum(engine, workload, candidates, budget_mb: float) -> float:
    """Brute-force minimum workload cost over all budget-feasible subsets."""
    import itertools

    best = float("inf")
    for r in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, r):
            if sum(engine.index_size_mb(d) for d in combo) > budget_mb + 1e-9:
                continue
            session = engine.session()
            for defn in combo:
                session.hypo_create(defn)
            best = min(best, session.estimate_workload_cost(workload).total)
    return best
