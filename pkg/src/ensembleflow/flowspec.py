"""Human-writable flow-spec and run-config files.

Both are YAML documents whose field names mirror the core types exactly;
unknown fields are rejected so typos fail loudly.  A flow spec declares
models (params/inputs/outputs/scopes/shift/stateful) and edges (with lag
and, for lagged edges, the initial value seeding ticks before 0).  A run
config declares the horizon, the global seed, and per-model sampling
policies; policy seeds left unset are derived from the global seed, so
changing only the global seed changes every model's draws.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .core import (
    ContinuousDomain,
    DiscreteDomain,
    FlowEdge,
    FlowGraph,
    ModelSpec,
    ParameterSpec,
    ScopeDescriptor,
    VariableSpec,
)
from .engine import RunConfig
from .errors import ParseError
from .sampling import SamplingPolicy
from .util import derive_seed

_KIND_RE = re.compile(r"^(scalar|vector\[(\d+)\])$")


def _load_yaml(path: Path | str):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ParseError(f"malformed YAML: {exc.problem}", path=str(path), line=line) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML: {exc}", path=str(path)) from exc
    if not isinstance(doc, Mapping):
        raise ParseError("document must be a mapping", path=str(path))
    return doc


def _take(mapping, ctx: str, required: dict, optional: dict) -> dict:
    if not isinstance(mapping, Mapping):
        raise ParseError(f"{ctx}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - set(required) - set(optional)
    if unknown:
        raise ParseError(f"{ctx}: unknown field(s) {sorted(unknown)}")
    missing = set(required) - set(mapping)
    if missing:
        raise ParseError(f"{ctx}: missing required field(s) {sorted(missing)}")
    out = dict(optional)
    out.update(mapping)
    return out


def _parse_kind(raw, ctx: str) -> tuple[str, int]:
    m = _KIND_RE.match(str(raw))
    if not m:
        raise ParseError(f"{ctx}: kind must be 'scalar' or 'vector[n]', got {raw!r}")
    if m.group(2):
        return "vector", int(m.group(2))
    return "scalar", 1


def _parse_variable(raw, ctx: str) -> VariableSpec:
    d = _take(raw, ctx, required={"name": None}, optional={"kind": "scalar", "unit": ""})
    kind, dim = _parse_kind(d["kind"], f"{ctx}.{d['name']}")
    try:
        return VariableSpec(name=str(d["name"]), kind=kind, dim=dim, unit=str(d["unit"]))
    except ValueError as exc:
        raise ParseError(f"{ctx}: {exc}") from exc


def _parse_parameter(raw, ctx: str) -> ParameterSpec:
    d = _take(raw, ctx, required={"name": None, "domain": None}, optional={})
    dom = d["domain"]
    if not isinstance(dom, Mapping):
        raise ParseError(f"{ctx}.{d['name']}: domain must be a mapping")
    try:
        if set(dom) == {"low", "high"}:
            domain = ContinuousDomain(float(dom["low"]), float(dom["high"]))
        elif set(dom) == {"values"}:
            domain = DiscreteDomain(tuple(dom["values"]))
        else:
            raise ParseError(
                f"{ctx}.{d['name']}: domain needs either low/high or values"
            )
        return ParameterSpec(name=str(d["name"]), domain=domain)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}.{d['name']}: {exc}") from exc


def _parse_scope(raw, ctx: str) -> ScopeDescriptor:
    d = _take(raw, ctx, required={"window": None}, optional={"resolution": 1})
    try:
        return ScopeDescriptor(int(d["window"]), int(d["resolution"]))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}: {exc}") from exc


def _parse_model(model_id: str, raw) -> ModelSpec:
    ctx = f"models.{model_id}"
    d = _take(
        raw,
        ctx,
        required={"function_ref": None, "output_scope": None, "outputs": None},
        optional={
            "params": [],
            "inputs": [],
            "input_scope": None,
            "shift": 1,
            "stateful": False,
        },
    )
    inputs = tuple(_parse_variable(v, f"{ctx}.inputs") for v in d["inputs"] or [])
    if d["input_scope"] is None:
        if inputs:
            raise ParseError(f"{ctx}: models with inputs need an input_scope")
        input_scope = ScopeDescriptor(0)
    else:
        input_scope = _parse_scope(d["input_scope"], f"{ctx}.input_scope")
    try:
        return ModelSpec(
            id=model_id,
            function_ref=str(d["function_ref"]),
            params=tuple(_parse_parameter(p, f"{ctx}.params") for p in d["params"] or []),
            inputs=inputs,
            outputs=tuple(_parse_variable(v, f"{ctx}.outputs") for v in d["outputs"] or []),
            input_scope=input_scope,
            output_scope=_parse_scope(d["output_scope"], f"{ctx}.output_scope"),
            shift=int(d["shift"]),
            stateful=bool(d["stateful"]),
        )
    except ValueError as exc:
        raise ParseError(f"{ctx}: {exc}") from exc


def _parse_edge(raw, index: int) -> FlowEdge:
    ctx = f"edges[{index}]"
    d = _take(
        raw,
        ctx,
        required={
            "from_node": None,
            "output_var": None,
            "to_node": None,
            "input_var": None,
        },
        optional={"lag": 0, "initial_value": None},
    )
    try:
        return FlowEdge(
            from_node=str(d["from_node"]),
            output_var=str(d["output_var"]),
            to_node=str(d["to_node"]),
            input_var=str(d["input_var"]),
            lag=int(d["lag"]),
            initial_value=None if d["initial_value"] is None else float(d["initial_value"]),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}: {exc}") from exc


def parse_flow(doc: Mapping, default_name: str = "flow") -> FlowGraph:
    d = _take(doc, "flow", required={"models": None}, optional={"name": default_name, "edges": []})
    if not isinstance(d["models"], Mapping):
        raise ParseError("models must be a mapping of model id to model spec")
    nodes = {mid: _parse_model(str(mid), raw) for mid, raw in d["models"].items()}
    edges = tuple(_parse_edge(raw, i) for i, raw in enumerate(d["edges"] or []))
    return FlowGraph(name=str(d["name"]), nodes=nodes, edges=edges)


def load_flow(path: Path | str) -> FlowGraph:
    doc = _load_yaml(path)
    try:
        return parse_flow(doc, default_name=Path(path).stem)
    except ParseError as exc:
        if exc.path is None:
            raise ParseError(str(exc), path=str(path)) from exc
        raise


def flow_to_dict(flow: FlowGraph) -> dict:
    def var(v: VariableSpec):
        return {"name": v.name, "kind": v.kind_label, "unit": v.unit}

    def par(p: ParameterSpec):
        if isinstance(p.domain, ContinuousDomain):
            return {"name": p.name, "domain": {"low": p.domain.low, "high": p.domain.high}}
        return {"name": p.name, "domain": {"values": list(p.domain.values)}}

    models = {}
    for mid, m in sorted(flow.nodes.items()):
        entry = {
            "function_ref": m.function_ref,
            "params": [par(p) for p in m.params],
            "inputs": [var(v) for v in m.inputs],
            "outputs": [var(v) for v in m.outputs],
            "output_scope": {"window": m.output_scope.window, "resolution": m.output_scope.resolution},
            "shift": m.shift,
            "stateful": m.stateful,
        }
        if m.inputs:
            entry["input_scope"] = {
                "window": m.input_scope.window,
                "resolution": m.input_scope.resolution,
            }
        models[mid] = entry
    edges = [
        {
            "from_node": e.from_node,
            "output_var": e.output_var,
            "to_node": e.to_node,
            "input_var": e.input_var,
            "lag": e.lag,
            "initial_value": e.initial_value,
        }
        for e in flow.edges
    ]
    return {"name": flow.name, "models": models, "edges": edges}


# ---------------------------------------------------------------------------
# Run configs


def _parse_policy(raw, ctx: str, seed_default: int) -> SamplingPolicy:
    d = _take(
        raw,
        ctx,
        required={},
        optional={
            "strategy": "uniform-random",
            "budget": 1,
            "branch_limit": 1,
            "drop_rule": "none",
            "seed": None,
        },
    )
    rule = d["drop_rule"]
    if rule == "none" or rule is None:
        quantile = 0.0
    elif isinstance(rule, Mapping) and set(rule) == {"bottom_quantile"}:
        quantile = float(rule["bottom_quantile"])
    else:
        raise ParseError(f"{ctx}: drop_rule must be 'none' or {{bottom_quantile: q}}")
    try:
        return SamplingPolicy(
            strategy=str(d["strategy"]),
            budget=int(d["budget"]),
            branch_limit=int(d["branch_limit"]),
            drop_quantile=quantile,
            seed=int(d["seed"]) if d["seed"] is not None else seed_default,
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}: {exc}") from exc


def parse_run_config(
    doc: Mapping, flow: FlowGraph, seed_override: Optional[int] = None
) -> RunConfig:
    d = _take(
        doc,
        "run-config",
        required={"horizon": None},
        optional={"seed": 0, "policies": {}, "default_policy": {}},
    )
    seed = int(seed_override if seed_override is not None else d["seed"])
    raw_policies = d["policies"] or {}
    for mid in raw_policies:
        if mid not in flow.nodes:
            raise ParseError(f"policies.{mid}: unknown model id")
    policies = {}
    for mid in flow.nodes:
        raw = raw_policies.get(mid, d["default_policy"] or {})
        policies[mid] = _parse_policy(
            raw, f"policies.{mid}", seed_default=derive_seed(seed, "policy", mid)
        )
    try:
        return RunConfig(flow=flow, horizon=int(d["horizon"]), policies=policies, seed=seed)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"run-config: {exc}") from exc


def load_run_config(
    path: Path | str, flow: FlowGraph, seed_override: Optional[int] = None
) -> RunConfig:
    return parse_run_config(_load_yaml(path), flow, seed_override)
