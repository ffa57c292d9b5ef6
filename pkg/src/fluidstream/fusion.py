"""Consolidation of concurrently active routine DAGs into one fused DAG.

Three levels of effort sharing:

  0  routines run side by side under one shared source
  1  maximal common prefixes of parse/filter chains execute once
  2  global common-subexpression elimination by structural hashing; transforms
     merge only when their identity tokens and parameters match

Fusion is a pure function of (specs, level): node order and ids are
canonicalized, so equal inputs produce byte-equal dumps.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .operators import (
    DprSpec,
    FILTER,
    OperatorNode,
    PARSE_FIELDS,
    SINK,
    SOURCE,
    node_unit_cost,
    topo_order,
)

_PREFIX_KINDS = (PARSE_FIELDS, FILTER)


@dataclass(frozen=True)
class FusedNode:
    id: str
    kind: str
    params: dict
    input: str | None
    provenance: tuple[tuple[str, str], ...]  # (spec id, original node id)

    def unit_cost(self) -> float:
        return node_unit_cost(OperatorNode(self.id, self.kind, self.params, ()))


@dataclass(frozen=True)
class FusedDag:
    level: int
    nodes: tuple[FusedNode, ...]  # canonical order, source first

    def by_id(self) -> dict[str, FusedNode]:
        return {n.id: n for n in self.nodes}

    def sinks(self) -> list[FusedNode]:
        return [n for n in self.nodes if n.kind == SINK]

    def dump(self) -> dict:
        return {
            "level": self.level,
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind,
                    "params": n.params,
                    "input": n.input,
                    "provenance": [list(p) for p in n.provenance],
                }
                for n in self.nodes
            ],
        }


class _Work:
    __slots__ = ("kind", "params", "parent", "provenance")

    def __init__(self, kind: str, params: dict, parent: "_Work | None"):
        self.kind = kind
        self.params = params
        self.parent = parent
        self.provenance: list[tuple[str, str]] = []


def _params_key(params: dict) -> str:
    return json.dumps(params, sort_keys=True)


def _sort_filter_chains(spec: DprSpec) -> DprSpec:
    """Reorder maximal runs of straight-line filter nodes canonically.

    Filter conjunctions commute, so sorting them makes structural sharing
    insensitive to the order a spec author happened to write.
    """
    nodes = list(topo_order(spec.nodes))
    children: dict[str, list[OperatorNode]] = {n.id: [] for n in nodes}
    for n in nodes:
        for inp in n.inputs:
            children[inp].append(n)

    rewired: dict[str, OperatorNode] = {n.id: n for n in nodes}
    for n in nodes:
        run: list[OperatorNode] = []
        cur = rewired[n.id]
        # collect a maximal straight-line run of single-child filters below n;
        # a fan-out filter pins everything from it downward in place
        while True:
            kids = children[cur.id]
            if len(kids) != 1 or kids[0].kind != FILTER or len(children[kids[0].id]) != 1:
                break
            run.append(kids[0])
            cur = kids[0]
        if len(run) < 2:
            continue
        tail_children = children[run[-1].id]
        order = sorted(run, key=lambda f: _params_key(f.params))
        prev_id = n.id
        for f in order:
            rewired[f.id] = OperatorNode(f.id, f.kind, f.params, (prev_id,))
            prev_id = f.id
        for child in tail_children:
            c = rewired[child.id]
            rewired[child.id] = OperatorNode(c.id, c.kind, c.params, (prev_id,))
        # children map must reflect the rewiring for nested runs
        for nid in children:
            children[nid] = []
        for node in rewired.values():
            for inp in node.inputs:
                children[inp].append(node)
    return DprSpec(spec.id, tuple(rewired[n.id] for n in nodes), spec.declared_cost_hint)


def fuse(specs: list[DprSpec], level: int) -> FusedDag:
    """Merge routine DAGs into one fused DAG at the given sharing level."""
    if level not in (0, 1, 2):
        raise ValueError(f"unknown fusion level: {level}")
    ordered = sorted(specs, key=lambda s: s.id)
    if level >= 1:
        ordered = [_sort_filter_chains(s) for s in ordered]

    root = _Work(SOURCE, {}, None)
    work: list[_Work] = [root]
    cse: dict[tuple, _Work] = {}

    for spec in ordered:
        mapping: dict[str, _Work] = {}
        for node in topo_order(spec.nodes):
            if node.kind == SOURCE:
                mapping[node.id] = root
                root.provenance.append((spec.id, node.id))
                continue
            parent = mapping[node.inputs[0]]
            shared: _Work | None = None
            if level == 2:
                key = (node.kind, _params_key(node.params), id(parent))
                shared = cse.get(key)
            elif level == 1 and node.kind in _PREFIX_KINDS and _is_prefix(parent, root):
                for w in work:
                    if (w.parent is parent and w.kind == node.kind
                            and _params_key(w.params) == _params_key(node.params)
                            and _is_prefix(w, root)):
                        shared = w
                        break
            if shared is None:
                shared = _Work(node.kind, dict(node.params), parent)
                work.append(shared)
                if level == 2:
                    cse[(node.kind, _params_key(node.params), id(parent))] = shared
            shared.provenance.append((spec.id, node.id))
            mapping[node.id] = shared

    return _canonicalize(work, root, level)


def _is_prefix(w: _Work, root: _Work) -> bool:
    while w is not root:
        if w.kind not in _PREFIX_KINDS:
            return False
        w = w.parent
    return True


def _canonicalize(work: list[_Work], root: _Work, level: int) -> FusedDag:
    depth: dict[int, int] = {id(root): 0}
    shash: dict[int, str] = {id(root): hashlib.sha256(b"source").hexdigest()}

    def visit(w: _Work) -> None:
        if id(w) in depth:
            return
        visit(w.parent)
        depth[id(w)] = depth[id(w.parent)] + 1
        blob = f"{w.kind}|{_params_key(w.params)}|{shash[id(w.parent)]}".encode()
        shash[id(w)] = hashlib.sha256(blob).hexdigest()

    for w in work:
        visit(w)
    ordered = sorted(work, key=lambda w: (depth[id(w)], shash[id(w)], sorted(w.provenance)))
    ids = {id(w): f"n{i}" for i, w in enumerate(ordered)}
    nodes = tuple(
        FusedNode(
            id=ids[id(w)],
            kind=w.kind,
            params=w.params,
            input=None if w.parent is None else ids[id(w.parent)],
            provenance=tuple(sorted(w.provenance)),
        )
        for w in ordered
    )
    return FusedDag(level=level, nodes=nodes)


def dag_cost(dag: FusedDag, selectivity: dict[str, float] | None = None,
             default_pass_rate: float = 1.0) -> float:
    """Expected budget units per record: unit cost times reach probability.

    ``selectivity`` maps fused filter node ids to pass rates in [0, 1];
    filters not listed use ``default_pass_rate``.
    """
    selectivity = selectivity or {}
    by_id = dag.by_id()
    reach: dict[str, float] = {}
    total = 0.0
    for node in dag.nodes:
        if node.input is None:
            reach[node.id] = 1.0
            continue
        p = reach[node.input]
        parent = by_id[node.input]
        if parent.kind == FILTER:
            p *= selectivity.get(parent.id, default_pass_rate)
        reach[node.id] = p
        total += node.unit_cost() * p
    return total
