"""Operator DAG model for preprocessing routines.

A routine is a DAG with one Source, any number of intermediate operators,
and one or more Sinks that each maintain a structure. Transforms come from
a built-in catalog keyed by an identity token: two transform nodes are the
same computation iff token and parameters are equal, which is what makes
cross-routine dedup sound without analyzing opaque code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable

from .fields import MISSING, is_missing
from .structures import (
    HASH_INDEX,
    MATERIALIZED_AGGREGATE,
    PREFILTERED_LOG,
    STRUCTURE_KINDS,
    Predicate,
)

SOURCE = "source"
PARSE_FIELDS = "parse_fields"
FILTER = "filter"
PROJECT = "project"
TRANSFORM = "transform"
SINK = "sink"

NODE_KINDS = (SOURCE, PARSE_FIELDS, FILTER, PROJECT, TRANSFORM, SINK)

# Calibrated budget units per record for one invocation of each operator.
# Transform costs are declared per catalog entry.
UNIT_COSTS = {
    SOURCE: 0.0,
    PARSE_FIELDS: 5.0,
    FILTER: 1.0,
    PROJECT: 1.0,
    SINK: 2.0,
}


class SpecError(ValueError):
    """Raised when a routine spec fails validation."""


@dataclass(frozen=True)
class OperatorNode:
    id: str
    kind: str
    params: dict
    inputs: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind, "params": self.params, "inputs": list(self.inputs)}


@dataclass(frozen=True)
class DprSpec:
    id: str
    nodes: tuple[OperatorNode, ...]
    declared_cost_hint: float | None = None

    def node(self, node_id: str) -> OperatorNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def sinks(self) -> list[OperatorNode]:
        return [n for n in self.nodes if n.kind == SINK]

    def to_json(self) -> dict:
        doc = {"id": self.id, "nodes": [n.to_json() for n in self.nodes]}
        if self.declared_cost_hint is not None:
            doc["declared_cost_hint"] = self.declared_cost_hint
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DprSpec":
        if not isinstance(doc, dict) or "id" not in doc or "nodes" not in doc:
            raise SpecError("spec document needs 'id' and 'nodes'")
        nodes = []
        for n in doc["nodes"]:
            try:
                nodes.append(OperatorNode(
                    id=str(n["id"]),
                    kind=str(n["kind"]),
                    params=dict(n.get("params", {})),
                    inputs=tuple(str(i) for i in n.get("inputs", [])),
                ))
            except (KeyError, TypeError) as exc:
                raise SpecError(f"malformed node entry: {n!r}") from exc
        spec = cls(id=str(doc["id"]), nodes=tuple(nodes),
                   declared_cost_hint=doc.get("declared_cost_hint"))
        validate_spec(spec)
        return spec


# --- transform catalog --------------------------------------------------------

@dataclass(frozen=True)
class TransformEntry:
    token: str
    unit_cost: float
    fn: Callable[[dict, dict], Any]  # (params, values) -> output value


def _t_lower(params: dict, values: dict) -> Any:
    v = values.get(params["field"], MISSING)
    if is_missing(v) or v is None:
        return MISSING
    return str(v).lower()


def _t_token_count(params: dict, values: dict) -> Any:
    v = values.get(params["field"], MISSING)
    if is_missing(v) or v is None:
        return MISSING
    return len(str(v).split())


def _t_heavy_signature(params: dict, values: dict) -> Any:
    # Deliberately expensive: stands in for NLP-grade per-record work.
    v = values.get(params["field"], MISSING)
    if is_missing(v) or v is None:
        return MISSING
    data = str(v).encode()
    rounds = int(params.get("rounds", 32))
    digest = data
    for _ in range(rounds):
        digest = hashlib.sha256(digest).digest()
    return digest.hex()[:16]


TRANSFORM_CATALOG: dict[str, TransformEntry] = {
    "lower": TransformEntry("lower", 1.0, _t_lower),
    "token_count": TransformEntry("token_count", 3.0, _t_token_count),
    "heavy_signature": TransformEntry("heavy_signature", 40.0, _t_heavy_signature),
}


def node_unit_cost(node: OperatorNode) -> float:
    if node.kind == TRANSFORM:
        return TRANSFORM_CATALOG[node.params["token"]].unit_cost
    return UNIT_COSTS[node.kind]


def static_dag_unit_cost(spec: DprSpec) -> float:
    """Sum of unit costs assuming every record reaches every node."""
    return sum(node_unit_cost(n) for n in spec.nodes)


# --- validation ----------------------------------------------------------------

def validate_spec(spec: DprSpec) -> None:
    if not spec.id:
        raise SpecError("spec id must be non-empty")
    ids = [n.id for n in spec.nodes]
    if len(set(ids)) != len(ids):
        raise SpecError(f"duplicate node ids in spec {spec.id}")
    by_id = {n.id: n for n in spec.nodes}
    sources = [n for n in spec.nodes if n.kind == SOURCE]
    if len(sources) != 1:
        raise SpecError(f"spec {spec.id} must have exactly one source node")
    if not any(n.kind == SINK for n in spec.nodes):
        raise SpecError(f"spec {spec.id} must have at least one sink node")

    for n in spec.nodes:
        if n.kind not in NODE_KINDS:
            raise SpecError(f"unknown operator kind: {n.kind}")
        if n.kind == SOURCE:
            if n.inputs:
                raise SpecError("source node takes no inputs")
            continue
        if len(n.inputs) != 1:
            raise SpecError(f"node {n.id} must have exactly one input")
        if n.inputs[0] not in by_id:
            raise SpecError(f"node {n.id} references unknown input {n.inputs[0]}")
        if n.kind == PARSE_FIELDS:
            fields = n.params.get("fields")
            if not isinstance(fields, list) or not fields:
                raise SpecError(f"parse_fields node {n.id} needs a non-empty 'fields' list")
        elif n.kind == FILTER:
            for key in ("field", "op", "value"):
                if key not in n.params:
                    raise SpecError(f"filter node {n.id} needs 'field', 'op' and 'value'")
            if n.params["op"] not in ("==", "!=", "<", "<=", ">", ">="):
                raise SpecError(f"filter node {n.id} has unknown comparator {n.params['op']}")
        elif n.kind == PROJECT:
            if not isinstance(n.params.get("fields"), list):
                raise SpecError(f"project node {n.id} needs a 'fields' list")
        elif n.kind == TRANSFORM:
            token = n.params.get("token")
            if token not in TRANSFORM_CATALOG:
                raise SpecError(f"transform node {n.id} has unknown token {token!r}")
            if "out" not in n.params:
                raise SpecError(f"transform node {n.id} needs an 'out' name")
        elif n.kind == SINK:
            structure = n.params.get("structure")
            if structure not in STRUCTURE_KINDS:
                raise SpecError(f"sink node {n.id} has unknown structure kind {structure!r}")
            if structure == HASH_INDEX and "field" not in n.params:
                raise SpecError(f"hash_index sink {n.id} needs a 'field'")
            if structure == PREFILTERED_LOG and "predicate" not in n.params:
                raise SpecError(f"prefiltered_log sink {n.id} needs a 'predicate'")
            if structure == MATERIALIZED_AGGREGATE and "group_by" not in n.params:
                raise SpecError(f"materialized_aggregate sink {n.id} needs a 'group_by'")

    # Sinks are terminal and the graph must be acyclic and connected.
    for n in spec.nodes:
        for inp in n.inputs:
            if by_id[inp].kind == SINK:
                raise SpecError(f"sink {inp} cannot feed node {n.id}")
    order = topo_order(spec.nodes)
    if len(order) != len(spec.nodes):
        raise SpecError(f"spec {spec.id} contains a cycle or unreachable nodes")


def topo_order(nodes: tuple[OperatorNode, ...]) -> list[OperatorNode]:
    """Topological order from the source; nodes unreachable from it are dropped."""
    by_id = {n.id: n for n in nodes}
    children: dict[str, list[OperatorNode]] = {n.id: [] for n in nodes}
    roots = []
    for n in nodes:
        if n.kind == SOURCE:
            roots.append(n)
        for inp in n.inputs:
            if inp in children:
                children[inp].append(n)
    out: list[OperatorNode] = []
    seen: set[str] = set()
    stack = list(roots)
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        out.append(node)
        stack.extend(children[node.id])
    return out


def sink_predicate(node: OperatorNode) -> Predicate:
    p = node.params["predicate"]
    return Predicate(p["field"], p.get("op", "=="), p["value"])


def parse_predicates(raw: list[dict]) -> tuple[Predicate, ...]:
    return tuple(Predicate(p["field"], p.get("op", "=="), p["value"]) for p in raw)


# --- spec builders used by the manager, scenarios and tests --------------------

def hash_index_spec(field_path: str, spec_id: str | None = None) -> DprSpec:
    sid = spec_id or f"idx-{field_path}"
    return DprSpec(sid, (
        OperatorNode("src", SOURCE, {}),
        OperatorNode("parse", PARSE_FIELDS, {"fields": [field_path]}, ("src",)),
        OperatorNode("sink", SINK, {"structure": HASH_INDEX, "field": field_path}, ("parse",)),
    ))


def prefilter_spec(field_path: str, value: Any, keep_fields: list[str],
                   spec_id: str | None = None) -> DprSpec:
    sid = spec_id or f"pf-{field_path}={value}"
    parse_fields = sorted(set([field_path, *keep_fields]))
    return DprSpec(sid, (
        OperatorNode("src", SOURCE, {}),
        OperatorNode("parse", PARSE_FIELDS, {"fields": parse_fields}, ("src",)),
        OperatorNode("flt", FILTER, {"field": field_path, "op": "==", "value": value}, ("parse",)),
        OperatorNode("proj", PROJECT, {"fields": sorted(set(keep_fields))}, ("flt",)),
        OperatorNode("sink", SINK, {
            "structure": PREFILTERED_LOG,
            "predicate": {"field": field_path, "op": "==", "value": value},
            "fields": sorted(set(keep_fields)),
        }, ("proj",)),
    ))


def aggregate_spec(group_by: str, prefilter: list[tuple[str, Any]],
                   spec_id: str | None = None) -> DprSpec:
    tag = ",".join(f"{f}={v}" for f, v in prefilter) or "all"
    sid = spec_id or f"agg-{group_by}|{tag}"
    parse_fields = sorted({group_by, *(f for f, _ in prefilter)})
    nodes = [
        OperatorNode("src", SOURCE, {}),
        OperatorNode("parse", PARSE_FIELDS, {"fields": parse_fields}, ("src",)),
    ]
    prev = "parse"
    for i, (f, v) in enumerate(sorted(prefilter)):
        nid = f"flt{i}"
        nodes.append(OperatorNode(nid, FILTER, {"field": f, "op": "==", "value": v}, (prev,)))
        prev = nid
    nodes.append(OperatorNode("sink", SINK, {
        "structure": MATERIALIZED_AGGREGATE,
        "group_by": group_by,
        "prefilter": [{"field": f, "op": "==", "value": v} for f, v in sorted(prefilter)],
    }, (prev,)))
    return DprSpec(sid, tuple(nodes))
