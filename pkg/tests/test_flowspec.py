import textwrap

import pytest

from ensembleflow import scenario
from ensembleflow.errors import ParseError
from ensembleflow.flowspec import (
    flow_to_dict,
    load_flow,
    load_run_config,
    parse_flow,
)
from ensembleflow.util import canonical_json

MINI_FLOW = """
name: mini
models:
  src:
    function_ref: f
    shift: 2
    output_scope: {window: 2, resolution: 1}
    params:
      - {name: level, domain: {low: 0.0, high: 1.0}}
      - {name: mode, domain: {values: [a, b]}}
    outputs:
      - {name: y, kind: scalar, unit: widgets}
  sink:
    function_ref: g
    shift: 2
    input_scope: {window: 2, resolution: 1}
    output_scope: {window: 2, resolution: 1}
    inputs:
      - {name: x, kind: scalar}
    outputs:
      - {name: z, kind: "vector[2]"}
edges:
  - {from_node: src, output_var: y, to_node: sink, input_var: x}
"""


@pytest.fixture
def mini_flow_path(tmp_path):
    p = tmp_path / "mini.yaml"
    p.write_text(MINI_FLOW, encoding="utf-8")
    return p


class TestFlowParsing:
    def test_parses_models_and_edges(self, mini_flow_path):
        flow = load_flow(mini_flow_path)
        assert set(flow.nodes) == {"src", "sink"}
        assert flow.nodes["src"].params[0].name == "level"
        assert flow.nodes["sink"].outputs[0].kind_label == "vector[2]"
        assert flow.edges[0].lag == 0

    def test_unknown_field_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(MINI_FLOW.replace("shift: 2", "shift: 2\n    bogus: 1", 1))
        with pytest.raises(ParseError, match="bogus"):
            load_flow(p)

    def test_missing_required_field(self):
        with pytest.raises(ParseError, match="function_ref"):
            parse_flow({"models": {"m": {"output_scope": {"window": 1}, "outputs": []}}})

    def test_malformed_yaml_reports_line(self, tmp_path):
        p = tmp_path / "broken.yaml"
        p.write_text("models:\n  src: [unclosed\n")
        with pytest.raises(ParseError) as err:
            load_flow(p)
        assert err.value.line is not None

    def test_bad_kind_string(self):
        doc = {
            "models": {
                "m": {
                    "function_ref": "f",
                    "output_scope": {"window": 1},
                    "outputs": [{"name": "y", "kind": "tensor"}],
                }
            }
        }
        with pytest.raises(ParseError, match="kind"):
            parse_flow(doc)

    def test_domain_requires_one_form(self):
        doc = {
            "models": {
                "m": {
                    "function_ref": "f",
                    "output_scope": {"window": 1},
                    "outputs": [{"name": "y"}],
                    "params": [{"name": "p", "domain": {"low": 0}}],
                }
            }
        }
        with pytest.raises(ParseError, match="domain"):
            parse_flow(doc)

    def test_round_trip_through_dict(self, mini_flow_path):
        flow = load_flow(mini_flow_path)
        again = parse_flow(flow_to_dict(flow))
        assert canonical_json(flow_to_dict(again)) == canonical_json(flow_to_dict(flow))

    def test_demo_flow_round_trips(self):
        flow = scenario.demo_flow()
        again = parse_flow(flow_to_dict(flow))
        assert canonical_json(flow_to_dict(again)) == canonical_json(flow_to_dict(flow))


class TestRunConfigParsing:
    def test_policies_and_derived_seeds(self, mini_flow_path, tmp_path):
        flow = load_flow(mini_flow_path)
        p = tmp_path / "run.yaml"
        p.write_text(
            textwrap.dedent(
                """
                horizon: 8
                seed: 7
                policies:
                  src: {strategy: grid, budget: 3, branch_limit: 2}
                default_policy: {strategy: uniform-random, budget: 1, branch_limit: 1}
                """
            )
        )
        cfg = load_run_config(p, flow)
        assert cfg.horizon == 8
        assert cfg.policies["src"].budget == 3
        assert cfg.policies["sink"].strategy == "uniform-random"
        # seeds derive from the global seed: overriding it changes them
        cfg2 = load_run_config(p, flow, seed_override=8)
        assert cfg2.policies["src"].seed != cfg.policies["src"].seed

    def test_explicit_policy_seed_pinned(self, mini_flow_path, tmp_path):
        flow = load_flow(mini_flow_path)
        p = tmp_path / "run.yaml"
        p.write_text("horizon: 4\npolicies:\n  src: {seed: 42}\n")
        cfg = load_run_config(p, flow)
        cfg2 = load_run_config(p, flow, seed_override=9)
        assert cfg.policies["src"].seed == 42 == cfg2.policies["src"].seed

    def test_unknown_model_in_policies(self, mini_flow_path, tmp_path):
        flow = load_flow(mini_flow_path)
        p = tmp_path / "run.yaml"
        p.write_text("horizon: 4\npolicies:\n  nope: {budget: 1}\n")
        with pytest.raises(ParseError, match="unknown model"):
            load_run_config(p, flow)

    def test_drop_rule_forms(self, mini_flow_path, tmp_path):
        flow = load_flow(mini_flow_path)
        p = tmp_path / "run.yaml"
        p.write_text(
            "horizon: 4\npolicies:\n  src: {drop_rule: {bottom_quantile: 0.25}}\n"
        )
        cfg = load_run_config(p, flow)
        assert cfg.policies["src"].drop_quantile == 0.25
        p.write_text("horizon: 4\npolicies:\n  src: {drop_rule: sometimes}\n")
        with pytest.raises(ParseError, match="drop_rule"):
            load_run_config(p, flow)
