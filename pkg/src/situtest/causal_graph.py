"""Causal DAG model used as the regulatory policy artifact.

A regulator expresses which variables may influence a decision as a
directed acyclic graph over the attribute names of the audited data.
This module holds the graph type, the standard reachability queries,
d-separation, and the variable partition that decides which attributes
an audit conditions on and which it marginalizes away.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "GraphError",
    "Dag",
    "AuditRoles",
    "NodePartition",
    "AuditValidation",
    "parse_dag",
    "parse_dag_json",
    "partition_nodes",
    "validate_for_audit",
]

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class GraphError(ValueError):
    """Malformed graph, malformed graph file, or invalid graph query."""


def _check_name(name: str) -> str:
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise GraphError(f"invalid node name {name!r} (expected identifier)")
    return name


class Dag:
    """Immutable directed acyclic graph over named variables.

    Construction validates everything up front (declared endpoints, no
    self-loops, no duplicate edges, acyclicity), so instances can be
    shared freely between threads; all queries are read-only.
    """

    __slots__ = ("_nodes", "_edges", "_parents", "_children", "_topo",
                 "_anc_cache", "_desc_cache")

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple[str, str]]):
        node_set = frozenset(_check_name(n) for n in nodes)
        parents: dict[str, list[str]] = {n: [] for n in node_set}
        children: dict[str, list[str]] = {n: [] for n in node_set}
        seen: set[tuple[str, str]] = set()
        for edge in edges:
            u, v = edge
            if u not in node_set or v not in node_set:
                missing = u if u not in node_set else v
                raise GraphError(f"edge {u}->{v} references undeclared node {missing!r}")
            if u == v:
                raise GraphError(f"self-loop on node {u!r}")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge {u}->{v}")
            seen.add((u, v))
            parents[v].append(u)
            children[u].append(v)
        self._nodes = node_set
        self._edges = frozenset(seen)
        self._parents = {n: tuple(ps) for n, ps in parents.items()}
        self._children = {n: tuple(cs) for n, cs in children.items()}
        self._topo = self._toposort()
        self._anc_cache: dict[str, frozenset[str]] = {}
        self._desc_cache: dict[str, frozenset[str]] = {}

    def _toposort(self) -> tuple[str, ...]:
        indeg = {n: len(self._parents[n]) for n in self._nodes}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop()
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self._nodes):
            cyclic = sorted(n for n, d in indeg.items() if d > 0)
            raise GraphError(f"cycle detected among nodes {cyclic}")
        return tuple(order)

    @property
    def nodes(self) -> frozenset[str]:
        return self._nodes

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return self._edges

    def __contains__(self, node: str) -> bool:
        return node in self._nodes

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((self._nodes, self._edges))

    def __repr__(self) -> str:
        return f"Dag(nodes={len(self._nodes)}, edges={len(self._edges)})"

    def topological_order(self) -> tuple[str, ...]:
        """Nodes in an order where every parent precedes its children."""
        return self._topo

    def _require(self, node: str) -> None:
        if node not in self._nodes:
            raise GraphError(f"unknown node {node!r}")

    def parents(self, node: str) -> frozenset[str]:
        self._require(node)
        return frozenset(self._parents[node])

    def children(self, node: str) -> frozenset[str]:
        self._require(node)
        return frozenset(self._children[node])

    def ancestors(self, node: str) -> frozenset[str]:
        """All nodes with a directed path into ``node`` (excluding itself)."""
        self._require(node)
        cached = self._anc_cache.get(node)
        if cached is None:
            cached = self._reach(node, self._parents)
            self._anc_cache[node] = cached
        return cached

    def descendants(self, node: str) -> frozenset[str]:
        """All nodes reachable from ``node`` along directed paths (excluding itself)."""
        self._require(node)
        cached = self._desc_cache.get(node)
        if cached is None:
            cached = self._reach(node, self._children)
            self._desc_cache[node] = cached
        return cached

    def _reach(self, start: str, step: Mapping[str, tuple[str, ...]]) -> frozenset[str]:
        found: set[str] = set()
        stack = list(step[start])
        while stack:
            n = stack.pop()
            if n not in found:
                found.add(n)
                stack.extend(step[n])
        return frozenset(found)

    def is_d_separated(self, x: str, y: str, z: Iterable[str] = ()) -> bool:
        """Decide whether every path between ``x`` and ``y`` is blocked by ``z``.

        A path is blocked when some interior node is a chain or fork
        member that belongs to ``z``, or a collider such that neither it
        nor any of its descendants belongs to ``z``.  Decided with a
        ball-bouncing reachability walk over (node, arrival-direction)
        states rather than by enumerating paths: a state entered against
        the arrow may continue anywhere unless the node is in ``z``; a
        state entered along the arrow may continue downward unless the
        node is in ``z`` and may bounce back upward only where a collider
        would be opened, i.e. at nodes in ``z`` or with a descendant in
        ``z``.  The walk reaches ``y`` if and only if some path is open.
        """
        zset = frozenset(z)
        self._require(x)
        self._require(y)
        for n in zset:
            self._require(n)
        if x == y:
            raise GraphError("x and y must be distinct nodes")
        if x in zset or y in zset:
            raise GraphError("conditioning set z must not contain x or y")

        # Nodes at which an along-the-arrow arrival may bounce back up:
        # members of z and their ancestors (= nodes with a descendant in z).
        anc = self._anc_cache
        bounce = set(zset)
        for n in zset:
            a = anc.get(n)
            if a is None:
                a = self.ancestors(n)
            bounce |= a

        parents = self._parents
        children = self._children
        # State: (node, True) = arrived along an arrow (from a parent),
        #        (node, False) = arrived against an arrow or start.
        stack: list[tuple[str, bool]] = [(x, False)]
        seen: set[tuple[str, bool]] = {(x, False)}
        push = stack.append
        while stack:
            node, down = stack.pop()
            if node == y:
                return False
            if down:
                if node not in zset:
                    for c in children[node]:
                        s = (c, True)
                        if s not in seen:
                            seen.add(s)
                            push(s)
                if node in bounce:
                    for p in parents[node]:
                        s = (p, False)
                        if s not in seen:
                            seen.add(s)
                            push(s)
            elif node not in zset:
                for p in parents[node]:
                    s = (p, False)
                    if s not in seen:
                        seen.add(s)
                        push(s)
                for c in children[node]:
                    s = (c, True)
                    if s not in seen:
                        seen.add(s)
                        push(s)
        return True


@dataclass(frozen=True)
class AuditRoles:
    """Designates the protected attribute and the decision outcome."""

    protected: str
    outcome: str

    def __post_init__(self) -> None:
        _check_name(self.protected)
        _check_name(self.outcome)
        if self.protected == self.outcome:
            raise GraphError("protected attribute and outcome must differ")

    def require_in(self, dag: Dag) -> None:
        for n in (self.protected, self.outcome):
            if n not in dag:
                raise GraphError(f"role attribute {n!r} is not a node of the DAG")


@dataclass(frozen=True)
class NodePartition:
    """Split of the non-role variables by their relation to the outcome.

    ``antecedents`` hold every direct or indirect cause of the outcome,
    ``descendants`` everything the outcome can influence (the variables a
    sound audit must marginalize away), ``spouses`` the nodes sharing a
    child with the outcome, and ``irrelevant`` the rest.
    """

    antecedents: frozenset[str]
    descendants: frozenset[str]
    spouses: frozenset[str]
    irrelevant: frozenset[str]

    def __post_init__(self) -> None:
        sets = (self.antecedents, self.descendants, self.spouses, self.irrelevant)
        total = sum(len(s) for s in sets)
        union = frozenset().union(*sets)
        if total != len(union):
            raise GraphError("partition sets must be pairwise disjoint")

    def all_nodes(self) -> frozenset[str]:
        return self.antecedents | self.descendants | self.spouses | self.irrelevant


def partition_nodes(dag: Dag, roles: AuditRoles) -> NodePartition:
    """Classify every non-role node as antecedent, descendant, spouse or irrelevant.

    Descendants of the outcome take precedence over spousehood, and a
    node is a spouse only through a direct common child of the outcome.
    """
    roles.require_in(dag)
    a, y = roles.protected, roles.outcome
    desc = dag.descendants(y) - {a}
    ante = dag.ancestors(y) - {a}
    spouses = set()
    for child in dag.children(y):
        spouses.update(dag.parents(child))
    spouses -= {a, y}
    spouses -= desc
    spouses -= ante
    rest = dag.nodes - desc - ante - spouses - {a, y}
    return NodePartition(
        antecedents=frozenset(ante),
        descendants=frozenset(desc),
        spouses=frozenset(spouses),
        irrelevant=frozenset(rest),
    )


@dataclass(frozen=True)
class AuditValidation:
    """Pre-audit report on a DAG / role combination."""

    acyclic: bool
    has_protected_edge: bool
    colliders: frozenset[str]
    collider_descendants: frozenset[str]
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_json(self) -> str:
        return json.dumps(
            {
                "warnings": list(self.warnings),
                "colliders": sorted(self.colliders),
                "collider_descendants": sorted(self.collider_descendants),
            }
        )

    def to_text(self) -> str:
        lines = [
            f"acyclic: {'yes' if self.acyclic else 'no'}",
            f"protected -> outcome edge present: {'yes' if self.has_protected_edge else 'no'}",
            f"colliders of (protected, outcome): {', '.join(sorted(self.colliders)) or '(none)'}",
            f"collider descendants: {', '.join(sorted(self.collider_descendants)) or '(none)'}",
        ]
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def validate_for_audit(dag: Dag, roles: AuditRoles) -> AuditValidation:
    """List the collider variables that would bias a naive flip test.

    A missing protected->outcome edge is only a warning: a genuinely fair
    policy graph has no such edge, and the audit then checks whether the
    classifier introduces a dependence regardless.
    """
    roles.require_in(dag)
    a, y = roles.protected, roles.outcome
    colliders = dag.children(a) & dag.children(y)
    collider_desc: set[str] = set()
    for c in colliders:
        collider_desc |= dag.descendants(c)
    collider_desc -= colliders
    warnings = []
    has_edge = (a, y) in dag.edges
    if not has_edge:
        warnings.append(
            f"no edge {a} -> {y}: direct-effect testing assumes the protected "
            "attribute may be a parent of the outcome; the audit will check "
            "whether the classifier introduces a dependence anyway"
        )
    if colliders:
        warnings.append(
            "conditioning on {%s} (or descendants {%s}) would open a spurious "
            "association between %s and %s"
            % (", ".join(sorted(colliders)), ", ".join(sorted(collider_desc)), a, y)
        )
    return AuditValidation(
        acyclic=True,
        has_protected_edge=has_edge,
        colliders=frozenset(colliders),
        collider_descendants=frozenset(collider_desc),
        warnings=tuple(warnings),
    )


def parse_dag(text: str) -> Dag:
    """Parse the plain-text edge list format.

    One ``Parent -> Child`` per line; a line holding a bare identifier
    declares an isolated node; ``#`` starts a comment.  Errors carry the
    offending line number.
    """
    nodes: set[str] = set()
    edges: list[tuple[str, str]] = []
    edge_set: set[tuple[str, str]] = set()
    children: dict[str, set[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            parts = [p.strip() for p in line.split("->")]
            if len(parts) != 2 or not all(parts):
                raise GraphError(f"line {lineno}: expected 'Parent -> Child', got {raw!r}")
            u, v = parts
            for name in (u, v):
                if not _NAME_RE.match(name):
                    raise GraphError(f"line {lineno}: invalid node name {name!r}")
            if u == v:
                raise GraphError(f"line {lineno}: self-loop on {u!r}")
            if (u, v) in edge_set:
                raise GraphError(f"line {lineno}: duplicate edge {u} -> {v}")
            nodes.update((u, v))
            edges.append((u, v))
            edge_set.add((u, v))
            children.setdefault(u, set()).add(v)
            if _reaches(children, v, u):
                raise GraphError(f"line {lineno}: edge {u} -> {v} closes a cycle")
        else:
            if not _NAME_RE.match(line):
                raise GraphError(f"line {lineno}: invalid node name {line!r}")
            nodes.add(line)
    return Dag(nodes, edges)


def _reaches(children: Mapping[str, set[str]], start: str, target: str) -> bool:
    stack = [start]
    seen = {start}
    while stack:
        n = stack.pop()
        if n == target:
            return True
        for c in children.get(n, ()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def parse_dag_json(text: str) -> Dag:
    """Parse the JSON equivalent: {"nodes": [...], "edges": [["A","B"], ...]}."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"invalid DAG JSON: {exc}") from None
    if not isinstance(obj, dict) or "edges" not in obj:
        raise GraphError("DAG JSON must be an object with an 'edges' array")
    edges = [tuple(e) for e in obj["edges"]]
    for e in edges:
        if len(e) != 2:
            raise GraphError(f"edge {list(e)!r} must be a [parent, child] pair")
    nodes = set(obj.get("nodes", []))
    for u, v in edges:
        nodes.update((u, v))
    return Dag(nodes, edges)


def dag_to_text(dag: Dag) -> str:
    """Render a Dag in the plain-text edge list format."""
    lines = [f"{u} -> {v}" for u, v in sorted(dag.edges)]
    connected = {n for e in dag.edges for n in e}
    lines.extend(sorted(dag.nodes - connected))
    return "\n".join(lines) + "\n"
