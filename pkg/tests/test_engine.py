import numpy as np
import pytest

from conftest import make_instance
from ensembleflow.core import (
    FlowEdge,
    FlowGraph,
    ModelSpec,
    ScopeDescriptor,
    SeriesWindow,
    VariableSpec,
    ParameterSpec,
    DiscreteDomain,
)
from ensembleflow.engine import (
    RunConfig,
    align_inputs,
    compile_plan,
    execute_instance,
    run_ensemble,
    verify_budgets,
    verify_input_coverage,
    verify_state_lineage,
)
from ensembleflow.errors import (
    CoverageGap,
    EmptySample,
    InvalidFlow,
    ModelFailure,
    UnsatisfiableInput,
)
from ensembleflow.registry import ModelRegistry
from ensembleflow.sampling import ParameterVector, SamplingPolicy
from ensembleflow.store import RunStore


def series(variable, lo, hi, values, res=1):
    return SeriesWindow(variable, lo, hi, res, np.asarray(values, dtype=float))


def mk_model(mid, inputs=(), outputs=("y",), w_in=0, w_out=2, shift=2, params=(), stateful=False, fn="f"):
    return ModelSpec(
        id=mid,
        function_ref=fn,
        params=tuple(params),
        inputs=tuple(VariableSpec(n) for n in inputs),
        outputs=tuple(VariableSpec(n) for n in outputs),
        input_scope=ScopeDescriptor(w_in),
        output_scope=ScopeDescriptor(w_out),
        shift=shift,
        stateful=stateful,
    )


class TestCompilePlan:
    def test_single_source(self):
        flow = FlowGraph("solo", {"a": mk_model("a")}, ())
        plan = compile_plan(flow, 6)
        assert sorted(plan.tasks) == [("a", 0), ("a", 1), ("a", 2)]
        assert all(not plan.deps[k] for k in plan.tasks)

    def test_identical_window_chain(self):
        flow = FlowGraph(
            "chain",
            {"a": mk_model("a"), "b": mk_model("b", inputs=("x",), w_in=2)},
            (FlowEdge("a", "y", "b", "x"),),
        )
        plan = compile_plan(flow, 8)
        for s in range(4):
            assert plan.deps[("b", s)] == frozenset({("a", s)})

    def test_window_intersections_against_oracle(self):
        flow = FlowGraph(
            "mix",
            {
                "a": mk_model("a", w_out=2, shift=1),
                "b": mk_model("b", inputs=("x",), w_in=4, w_out=4, shift=2),
            },
            (FlowEdge("a", "y", "b", "x"),),
        )
        horizon = 6
        plan = compile_plan(flow, horizon)
        # oracle: each required tick is owned by the latest scheduled A
        # window covering it; B(1) reads [2, 6)
        a_last = (horizon - 2) // 1
        owners = {min(t, a_last) for t in range(2, 6)}
        assert plan.deps[("b", 1)] == frozenset(("a", k) for k in owners)
        assert plan.deps[("b", 1)] == frozenset({("a", 2), ("a", 3), ("a", 4)})

    def test_invalid_flow_rejected(self):
        flow = FlowGraph(
            "bad",
            {"a": mk_model("a"), "b": mk_model("b", inputs=("x",), w_in=2)},
            (FlowEdge("a", "nope", "b", "x"),),
        )
        with pytest.raises(InvalidFlow):
            compile_plan(flow, 8)

    def test_stages_respect_dependencies(self):
        flow = FlowGraph(
            "chain",
            {"a": mk_model("a"), "b": mk_model("b", inputs=("x",), w_in=2)},
            (FlowEdge("a", "y", "b", "x"),),
        )
        plan = compile_plan(flow, 8)
        position = {k: i for i, stage in enumerate(plan.stages) for k in stage}
        for k, deps in plan.deps.items():
            for d in deps:
                assert position[d] < position[k]

    def test_stateful_steps_serialize_across_stages(self):
        flow = FlowGraph("st", {"a": mk_model("a", stateful=True)}, ())
        plan = compile_plan(flow, 8)
        position = {k: i for i, stage in enumerate(plan.stages) for k in stage}
        for s in range(1, 4):
            assert position[("a", s - 1)] < position[("a", s)]


class TestAlignInputs:
    def test_constant_series_any_resolution(self):
        win = series("x", 0, 8, [5.0] * 8)
        out = align_inputs("x", (0, 8), 4, [win])
        assert list(out.values) == [5.0, 5.0]

    def test_downsampling_means(self):
        win = series("x", 0, 2, [1.0, 3.0])
        out = align_inputs("x", (0, 2), 2, [win])
        assert list(out.values) == [2.0]

    def test_later_window_wins_on_overlap(self):
        w1 = series("x", 0, 4, [1.0] * 4)
        w2 = series("x", 2, 6, [9.0] * 4)
        out = align_inputs("x", (0, 6), 1, [w1, w2])
        assert list(out.values) == [1.0, 1.0, 9.0, 9.0, 9.0, 9.0]

    def test_upsampling_sample_and_hold(self):
        win = series("x", 0, 4, [1.0, 2.0], res=2)
        out = align_inputs("x", (0, 4), 1, [win])
        assert list(out.values) == [1.0, 1.0, 2.0, 2.0]

    def test_gap_raises(self):
        win = series("x", 0, 2, [1.0, 1.0])
        with pytest.raises(CoverageGap):
            align_inputs("x", (0, 4), 1, [win])

    def test_vector_alignment(self):
        win = SeriesWindow("v", 0, 2, 1, np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = align_inputs("v", (0, 2), 2, [win], dim=2)
        assert out.values.shape == (1, 2)
        assert list(out.values[0]) == [2.0, 3.0]


IDENTITY = mk_model("id", inputs=("x",), outputs=("y",), w_in=2, w_out=2, fn="identity")


def identity_fn(params, inputs, state, window, resolution):
    return {"y": inputs["x"].values}, None


class TestExecuteInstance:
    def test_identity_output_matches_input(self):
        inp = {"x": series("x", 0, 2, [4.0, 7.0])}
        outs, state = execute_instance(
            IDENTITY, identity_fn, 0, ParameterVector(()), inp
        )
        assert list(outs[0].values) == [4.0, 7.0]
        assert outs[0].window == (0, 2)
        assert state is None

    def test_stateless_is_pure(self):
        inp = {"x": series("x", 0, 2, [4.0, 7.0])}
        a = execute_instance(IDENTITY, identity_fn, 0, ParameterVector(()), inp)
        b = execute_instance(IDENTITY, identity_fn, 0, ParameterVector(()), inp)
        assert a == b

    def test_raising_function_becomes_model_failure(self):
        def boom(params, inputs, state, window, resolution):
            raise RuntimeError("kaput")

        with pytest.raises(ModelFailure, match="kaput"):
            execute_instance(IDENTITY, boom, 0, ParameterVector(()), {"x": series("x", 0, 2, [0, 0])})

    def test_wrong_output_set_rejected(self):
        def wrong(params, inputs, state, window, resolution):
            return {"z": np.zeros(2)}, None

        with pytest.raises(ModelFailure, match="outputs"):
            execute_instance(IDENTITY, wrong, 0, ParameterVector(()), {"x": series("x", 0, 2, [0, 0])})

    def test_wrong_length_rejected(self):
        def short(params, inputs, state, window, resolution):
            return {"y": np.zeros(1)}, None

        with pytest.raises(ModelFailure):
            execute_instance(IDENTITY, short, 0, ParameterVector(()), {"x": series("x", 0, 2, [0, 0])})


# A tiny two-model flow with a branching source and a stateful accumulator,
# used for run-level invariants.


def counting_registry():
    reg = ModelRegistry()

    def const(params, inputs, state, window, resolution):
        n = (window[1] - window[0]) // resolution
        return {"y": np.full(n, float(params["level"]))}, None

    def accumulate(params, inputs, state, window, resolution):
        total = (state or 0.0) + float(np.sum(inputs["x"].values))
        n = (window[1] - window[0]) // resolution
        return {"y": np.full(n, total)}, total

    reg.register("const", const)
    reg.register("accumulate", accumulate)
    return reg


def mini_flow():
    src = mk_model(
        "src",
        params=(ParameterSpec("level", DiscreteDomain((1.0, 2.0, 3.0))),),
        w_out=2,
        shift=2,
        fn="const",
    )
    acc = mk_model(
        "acc", inputs=("x",), w_in=2, w_out=2, shift=2, stateful=True, fn="accumulate"
    )
    return FlowGraph(
        "mini", {"src": src, "acc": acc}, (FlowEdge("src", "y", "acc", "x"),)
    )


def mini_config(budget_src=2, budget_acc=2, seed=7):
    return RunConfig(
        flow=mini_flow(),
        horizon=8,
        policies={
            "src": SamplingPolicy(strategy="grid", budget=budget_src, branch_limit=budget_src, seed=1),
            "acc": SamplingPolicy(strategy="grid", budget=budget_acc, branch_limit=1, seed=2),
        },
        seed=seed,
    )


class TestRunEnsemble:
    def test_run_satisfies_invariants(self, tmp_path):
        config = mini_config()
        store = RunStore(tmp_path)
        run_id = run_ensemble(config, store, counting_registry())
        g = store.load(run_id)
        assert g.status == "complete" and not g.incomplete
        assert verify_budgets(g, config) == []
        assert verify_input_coverage(g, config.flow) == []
        assert verify_state_lineage(g, config.flow) == []

    def test_stateful_accumulation_follows_branch(self, tmp_path):
        config = mini_config()
        store = RunStore(tmp_path)
        g = store.load(run_ensemble(config, store, counting_registry()))
        for inst in g.nodes():
            if inst.model_id != "acc" or inst.step == 0:
                continue
            parent = g.node(inst.state_parent)
            own_input = [
                g.node(e.src) for e in g.parents(inst.id) if e.kind == "data"
            ][0]
            expected = parent.outputs[0].values[0] + float(
                np.sum(own_input.outputs[0].values)
            )
            assert inst.outputs[0].values[0] == pytest.approx(expected)

    def test_deterministic_byte_identical_logs(self, tmp_path):
        config = mini_config()
        r1 = run_ensemble(config, RunStore(tmp_path / "s1"), counting_registry())
        r2 = run_ensemble(config, RunStore(tmp_path / "s2"), counting_registry())
        assert r1 == r2
        b1 = (tmp_path / "s1" / r1 / "run.log").read_bytes()
        b2 = (tmp_path / "s2" / r2 / "run.log").read_bytes()
        assert b1 == b2

    def test_horizon_below_first_window_is_trivial_complete(self, tmp_path):
        config = RunConfig(flow=mini_flow(), horizon=1, policies={}, seed=0)
        store = RunStore(tmp_path)
        g = store.load(run_ensemble(config, store, counting_registry()))
        assert g.node_count == 0
        assert g.status == "complete" and g.trivial

    def test_failed_instance_recorded_and_childless(self, tmp_path):
        reg = counting_registry()

        def sometimes_fail(params, inputs, state, window, resolution):
            if params["level"] >= 3.0:
                raise RuntimeError("unstable configuration")
            n = (window[1] - window[0]) // resolution
            return {"y": np.full(n, float(params["level"]))}, None

        reg._functions["const"] = sometimes_fail
        config = mini_config(budget_src=3)
        store = RunStore(tmp_path)
        run_id = run_ensemble(config, store, reg)
        g = store.load(run_id)
        failed = [i for i in g.node_ids() if g.node(i).status == "failed"]
        assert failed, "level-3 source instances should fail"
        for fid in failed:
            assert g.children(fid) == []
            assert g.node(fid).error is not None
            assert g.node(fid).outputs == ()

    def test_all_parents_failed_halts_with_empty_sample(self, tmp_path):
        reg = counting_registry()

        def always_fail(params, inputs, state, window, resolution):
            raise RuntimeError("nope")

        reg._functions["const"] = always_fail
        store = RunStore(tmp_path)
        with pytest.raises(EmptySample):
            run_ensemble(mini_config(), store, reg)
        g = store.load(mini_config().run_id())
        assert g.status == "incomplete"

    def test_dropped_branch_marks(self, tmp_path):
        # budget 1 on the accumulator: one source branch never gets children
        config = mini_config(budget_src=2, budget_acc=1)
        store = RunStore(tmp_path)
        g = store.load(run_ensemble(config, store, counting_registry()))
        dropped = [
            i for i in g.node_ids() if g.status_of(i) == "dropped-child-source"
        ]
        assert dropped
        for d in dropped:
            assert g.children(d) == []
            assert g.node(d).model_id == "src"

    def test_run_id_content_addressed(self, tmp_path):
        assert mini_config(seed=7).run_id() == mini_config(seed=7).run_id()
        assert mini_config(seed=7).run_id() != mini_config(seed=8).run_id()
