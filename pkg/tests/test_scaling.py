import pytest

from idxadvisor.errors import EmptyOptions, LLMError
from idxadvisor.scaling import (
    CandidateOption,
    ScalingConfig,
    best_of_n,
    evaluate_option,
    index_guided_major_voting,
    self_optimize,
    tally,
)
from idxadvisor.sql_features import Workload, extract_workload_features
from idxadvisor.whatif import IndexAction, IndexDef, SimulatedEngine
from idxadvisor.llm import MockBackend


def C(table, *cols):
    return IndexAction("create", IndexDef(table, cols))


def D(table, *cols):
    return IndexAction("drop", IndexDef(table, cols))


class TestTally:
    def test_single_option_counts_one(self):
        t = tally([[C("t", "a"), D("t", "b")]])
        assert t.create_counts == {IndexDef("t", ("a",)): 1}
        assert t.drop_counts == {IndexDef("t", ("b",)): 1}

    def test_counts_across_options(self):
        options = [[C("t", "a")]] * 5 + [[C("t", "b")]] * 3
        t = tally(options)
        assert t.create_counts[IndexDef("t", ("a",))] == 5
        assert t.create_counts[IndexDef("t", ("b",))] == 3

    def test_per_option_dedupe(self):
        t = tally([[C("t", "a"), C("t", "a"), C("t", "a")]])
        assert t.create_counts[IndexDef("t", ("a",))] == 1

    def test_create_and_drop_of_same_def(self):
        t = tally([[C("t", "a")], [D("t", "a")], [D("t", "a")]])
        assert t.create_counts[IndexDef("t", ("a",))] == 1
        assert t.drop_counts[IndexDef("t", ("a",))] == 2


class TestVoting:
    def test_prefix_folding_spec_example(self):
        # single (l_orderkey) x1 folds into (l_orderkey, l_suppkey) x2
        options = [
            [C("lineitem", "l_orderkey")],
            [C("lineitem", "l_orderkey", "l_suppkey")],
            [C("lineitem", "l_orderkey", "l_suppkey")],
        ]
        voted = index_guided_major_voting(tally(options))
        assert voted == [C("lineitem", "l_orderkey", "l_suppkey")]

    def test_multi_column_below_threshold_excluded(self):
        voted = index_guided_major_voting(tally([[C("t", "a", "b")]]))
        assert voted == []

    def test_single_column_always_retained(self):
        voted = index_guided_major_voting(tally([[C("t", "a")]]))
        assert voted == [C("t", "a")]

    def test_drop_threshold(self):
        assert index_guided_major_voting(tally([[D("t", "a")]])) == []
        voted = index_guided_major_voting(tally([[D("t", "a")], [D("t", "a")]]))
        assert voted == [D("t", "a")]

    def test_drops_emitted_before_creates(self):
        options = [[D("t", "a"), C("t", "b")], [D("t", "a"), C("t", "b")]]
        voted = index_guided_major_voting(tally(options))
        assert [a.kind for a in voted] == ["drop", "create"]

    def test_create_ordering_count_width_name(self):
        options = [
            [C("t", "a"), C("t", "b"), C("u", "x", "y")],
            [C("t", "b"), C("u", "x", "y")],
            [C("t", "b")],
        ]
        voted = index_guided_major_voting(tally(options))
        # b:3, (x,y):2, a:1 -> count desc, then width asc, then name
        assert voted == [C("t", "b"), C("u", "x", "y"), C("t", "a")]

    def test_no_retained_prefix_pairs(self):
        options = [
            [C("t", "a"), C("t", "a", "b"), C("t", "a", "b", "c")],
            [C("t", "a", "b"), C("t", "a", "b", "c")],
            [C("t", "a")],
        ]
        voted = index_guided_major_voting(tally(options))
        creates = [a.index for a in voted if a.kind == "create"]
        for i, small in enumerate(creates):
            for big in creates[i + 1:]:
                assert not small.is_strict_prefix_of(big)
                assert not big.is_strict_prefix_of(small)

    def test_deterministic(self):
        options = [[C("t", "a"), C("u", "x", "y")], [C("u", "x", "y"), C("t", "b")]]
        assert index_guided_major_voting(tally(options)) == \
            index_guided_major_voting(tally(options))


@pytest.fixture()
def toy_env(toyshop_catalog, regression_suite):
    engine = SimulatedEngine(toyshop_catalog)
    wl = regression_suite[0]
    features = extract_workload_features(wl, toyshop_catalog, engine)
    return engine, wl, features


class TestEvaluateOption:
    def test_empty_actions_keep_existing_cost(self, toy_env):
        engine, wl, _ = toy_env
        existing = {IndexDef("orders", ("o_date",))}
        session = engine.session()
        for d in existing:
            session.hypo_create(d)
        expected = session.estimate_workload_cost(wl).total
        option = evaluate_option(engine.session, wl, existing, [], 100.0)
        assert option.cost == pytest.approx(expected)
        assert option.applied == []

    def test_budget_gating_skips_oversized(self, toy_env):
        engine, wl, _ = toy_env
        big = IndexDef("order_lines", ("ol_ship_date",))
        small = IndexDef("customers", ("c_segment",))
        big_size = engine.index_size_mb(big)
        small_size = engine.index_size_mb(small)
        budget = small_size * 1.5
        assert big_size > budget
        option = evaluate_option(
            engine.session, wl, set(), [C("order_lines", "ol_ship_date"),
                                        C("customers", "c_segment")], budget)
        assert [a.index for a in option.applied] == [small]
        assert option.size_mb <= budget + 1e-9

    def test_drop_frees_budget_for_create(self, toy_env):
        engine, wl, _ = toy_env
        stale = IndexDef("order_lines", ("ol_ship_date",))
        wanted = IndexDef("order_lines", ("ol_qty",))
        existing = {stale}
        budget = 0.0  # nothing fits until the drop frees space
        actions = [D("order_lines", "ol_ship_date"), C("order_lines", "ol_qty")]
        option = evaluate_option(engine.session, wl, existing, actions, budget)
        assert [a.kind for a in option.applied] == ["drop", "create"]
        assert option.resulting == frozenset({wanted})

    def test_drop_of_absent_skipped(self, toy_env):
        engine, wl, _ = toy_env
        option = evaluate_option(engine.session, wl, set(),
                                 [D("orders", "o_date")], 100.0)
        assert option.applied == []

    def test_duplicate_create_skipped(self, toy_env):
        engine, wl, _ = toy_env
        existing = {IndexDef("orders", ("o_date",))}
        option = evaluate_option(engine.session, wl, existing,
                                 [C("orders", "o_date")], 100.0)
        assert option.applied == []
        assert option.resulting == frozenset(existing)


class TestBestOfN:
    def _option(self, cost, n_applied=1, size=1.0, origin="sample"):
        applied = [C("t", "a")][:n_applied]
        return CandidateOption(actions=list(applied), applied=list(applied),
                               cost=cost, size_mb=size, origin=origin)

    def test_single_option(self):
        option = self._option(5.0)
        assert best_of_n([option]) is option

    def test_argmin(self):
        options = [self._option(10.0), self._option(7.0), self._option(9.0)]
        assert best_of_n(options).cost == 7.0

    def test_tie_prefers_fewer_actions(self):
        a = self._option(5.0, n_applied=1)
        b = CandidateOption(actions=[C("t", "a"), C("t", "b")],
                            applied=[C("t", "a"), C("t", "b")],
                            cost=5.0, size_mb=0.5, origin="x")
        assert best_of_n([b, a]) is a

    def test_tie_prefers_smaller_size(self):
        a = self._option(5.0, size=5.0)
        b = self._option(5.0, size=3.0)
        assert best_of_n([a, b]) is b

    def test_empty_raises(self):
        with pytest.raises(EmptyOptions):
            best_of_n([])


class TestSelfOptimize:
    def test_single_iteration_round(self, toy_env):
        engine, wl, features = toy_env
        result = self_optimize(MockBackend(seed=1), engine.session, wl, features,
                               [], budget_mb=0.3 * engine.database_size_mb(),
                               budget_fraction=0.3,
                               config=ScalingConfig(max_iters=1))
        assert len(result.iterations) == 1
        assert result.cost <= result.baseline_cost

    def test_mock_run_improves_monotonically(self, toy_env):
        engine, wl, features = toy_env
        result = self_optimize(MockBackend(seed=1), engine.session, wl, features,
                               [], budget_mb=0.3 * engine.database_size_mb(),
                               budget_fraction=0.3, config=ScalingConfig())
        assert result.cost <= min(result.iteration_best_costs)
        assert result.cost <= result.baseline_cost
        improved = [t for t in result.iterations if t.improved]
        assert result.cost == pytest.approx(improved[-1].chosen_cost)

    def test_stops_after_first_non_improving(self, toy_env):
        engine, wl, features = toy_env

        class OneTrickBackend:
            """Good recommendation once, then prose only."""

            def __init__(self):
                self.mock = MockBackend(seed=1)
                self.calls = 0

            def chat(self, request):
                self.calls += 1
                if self.calls == 1:
                    return self.mock.chat(request)
                return ["Everything looks optimal already."] * request.n_samples

        result = self_optimize(OneTrickBackend(), engine.session, wl, features,
                               [], budget_mb=0.3 * engine.database_size_mb(),
                               budget_fraction=0.3,
                               config=ScalingConfig(max_iters=6))
        assert len(result.history) == 2  # improving round + stopping round
        assert not result.iterations[-1].improved

    def test_llm_error_aborts_with_best_so_far(self, toy_env):
        engine, wl, features = toy_env

        class FlakyBackend:
            def __init__(self):
                self.mock = MockBackend(seed=1)
                self.calls = 0

            def chat(self, request):
                self.calls += 1
                if self.calls > 1:
                    raise LLMError("quota exceeded")
                return self.mock.chat(request)

        result = self_optimize(FlakyBackend(), engine.session, wl, features,
                               [], budget_mb=0.3 * engine.database_size_mb(),
                               budget_fraction=0.3, config=ScalingConfig())
        assert result.aborted
        assert result.cost <= result.baseline_cost

    def test_budget_invariant_throughout(self, toy_env):
        engine, wl, features = toy_env
        budget = 0.25 * engine.database_size_mb()
        result = self_optimize(MockBackend(seed=3), engine.session, wl, features,
                               [], budget_mb=budget, budget_fraction=0.25,
                               config=ScalingConfig())
        total = sum(engine.index_size_mb(d) for d in result.final_defs)
        assert total <= budget + 1e-9

    def test_demo_rotation_skips_presented(self, toy_env, toyshop_pool):
        engine, wl, features = toy_env
        seen_ids: list[str] = []
        from idxadvisor.demos import build_meta_feature, match_demonstrations
        meta = build_meta_feature(features, k=toyshop_pool.demonstrations[0].meta.k)
        ranked = match_demonstrations(toyshop_pool, meta, "cosine")

        class SpyBackend(MockBackend):
            def chat(self, request):
                for demo in ranked:
                    if demo.features_text[:40] in request.user_text:
                        seen_ids.append(demo.id)
                return super().chat(request)

        self_optimize(SpyBackend(seed=1), engine.session, wl, features, ranked,
                      budget_mb=0.3 * engine.database_size_mb(),
                      budget_fraction=0.3, config=ScalingConfig(max_iters=3))
        # rotation advances: iteration 2 must not repeat iteration 1's demos
        # (the pool is larger than one slot pair)
        if len(ranked) >= 4 and len(seen_ids) >= 4:
            assert set(seen_ids[:2]).isdisjoint(seen_ids[2:4])

    def test_voted_option_evaluated_alongside(self, toy_env):
        engine, wl, features = toy_env
        result = self_optimize(MockBackend(seed=1), engine.session, wl, features,
                               [], budget_mb=0.3 * engine.database_size_mb(),
                               budget_fraction=0.3,
                               config=ScalingConfig(max_iters=1, n_samples=4))
        assert len(result.iterations[0].option_costs) == 5  # 4 samples + voted

    def test_no_vote_config(self, toy_env):
        engine, wl, features = toy_env
        result = self_optimize(MockBackend(seed=1), engine.session, wl, features,
                               [], budget_mb=0.3 * engine.database_size_mb(),
                               budget_fraction=0.3,
                               config=ScalingConfig(max_iters=1, n_samples=4,
                                                    use_voting=False))
        assert len(result.iterations[0].option_costs) == 4
