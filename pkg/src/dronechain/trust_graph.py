"""Directed trust graph over registered entities.

Nodes are entity records keyed by account public key; an edge ``u -> v``
records that ``u`` confirmed ``v``'s identity/key binding and carries a
maximal allowed path length ``L``.

Chain rule: a path ``a0 -> a1 -> ... -> ak`` from an anchor ``a0`` to the
target ``ak`` is valid when ``k <= global_cap`` and every edge's limit covers
the number of hops from that edge through the target, inclusive. The last
edge therefore needs ``L >= 1``, the one before it ``L >= 2``, and so on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .ledger import EntityType

DEFAULT_GLOBAL_CAP = 6


class GraphError(KeyError):
    pass


@dataclass(frozen=True)
class EntityRecord:
    account: bytes
    auth_public_key: bytes
    identity_name: str
    entity_type: EntityType

    def __post_init__(self) -> None:
        if not self.auth_public_key:
            raise ValueError("auth_public_key must be non-empty")


@dataclass(frozen=True, eq=True)
class TrustGraph:
    """Immutable snapshot; every mutation returns a new graph."""

    nodes: Mapping[bytes, EntityRecord] = field(default_factory=dict)
    edges: Mapping[tuple[bytes, bytes], int] = field(default_factory=dict)

    __hash__ = None  # type: ignore[assignment]

    def add_node(self, record: EntityRecord) -> "TrustGraph":
        nodes = dict(self.nodes)
        nodes[record.account] = record
        return TrustGraph(nodes, self.edges)

    def remove_node(self, key: bytes) -> "TrustGraph":
        if key not in self.nodes:
            raise GraphError(f"no node {key.hex()[:16]}")
        nodes = dict(self.nodes)
        del nodes[key]
        edges = {e: L for e, L in self.edges.items() if key not in e}
        return TrustGraph(nodes, edges)

    def set_edge(self, src: bytes, dst: bytes, max_path_len: int) -> "TrustGraph":
        if src not in self.nodes or dst not in self.nodes:
            raise GraphError("edge endpoint missing")
        if src == dst:
            raise GraphError("self-edges are not allowed")
        if not 1 <= max_path_len <= 255:
            raise ValueError("max_path_len must be in [1, 255]")
        edges = dict(self.edges)
        edges[(src, dst)] = max_path_len
        return TrustGraph(self.nodes, edges)

    def remove_edge(self, src: bytes, dst: bytes) -> "TrustGraph":
        if (src, dst) not in self.edges:
            raise GraphError("no such edge")
        edges = dict(self.edges)
        del edges[(src, dst)]
        return TrustGraph(self.nodes, edges)

    def in_edges(self, key: bytes) -> list[tuple[bytes, int]]:
        return [(s, L) for (s, d), L in self.edges.items() if d == key]

    def out_edges(self, key: bytes) -> list[tuple[bytes, int]]:
        return [(d, L) for (s, d), L in self.edges.items() if s == key]

    def adjacency(self) -> dict[bytes, list[tuple[bytes, int]]]:
        adj: dict[bytes, list[tuple[bytes, int]]] = {k: [] for k in self.nodes}
        for (s, d), L in sorted(self.edges.items()):
            adj[s].append((d, L))
        return adj


class TrustReason(str, enum.Enum):
    DIRECT_ANCHOR = "DirectAnchor"
    PATH_FOUND = "PathFound"
    NO_PATH = "NoPath"
    UNKNOWN_TARGET = "UnknownTarget"


@dataclass(frozen=True)
class TrustDecision:
    trusted: bool
    reason: TrustReason
    witness_path: tuple[bytes, ...] = ()


def path_is_valid(graph: TrustGraph, path: tuple[bytes, ...], global_cap: int) -> bool:
    """Re-walk a witness path against the chain rule."""
    k = len(path) - 1
    if k < 1 or k > global_cap or len(set(path)) != len(path):
        return False
    for i in range(1, k + 1):
        limit = graph.edges.get((path[i - 1], path[i]))
        if limit is None or limit < k - i + 1:
            return False
    return True


def evaluate_trust(
    graph: TrustGraph, anchors: Iterable[bytes], target: bytes, global_cap: int = DEFAULT_GLOBAL_CAP
) -> TrustDecision:
    anchor_set = set(anchors)
    if not anchor_set:
        raise ValueError("anchors must be non-empty")
    if global_cap < 1:
        raise ValueError("global_cap must be >= 1")
    if target in anchor_set:
        return TrustDecision(True, TrustReason.DIRECT_ANCHOR, ())
    if target not in graph.nodes:
        return TrustDecision(False, TrustReason.UNKNOWN_TARGET)

    # reach[d] = nodes with a rule-respecting walk of exactly d hops to target.
    # The shortest valid walk is always a simple path, so the minimal d at
    # which an anchor appears is the answer.
    reverse: dict[bytes, list[tuple[bytes, int]]] = {}
    for (s, d), L in graph.edges.items():
        reverse.setdefault(d, []).append((s, L))
    reach: list[set[bytes]] = [{target}]
    for d in range(1, global_cap + 1):
        layer = {s for v in reach[d - 1] for s, L in reverse.get(v, ()) if L >= d}
        reach.append(layer)
        starts = sorted(layer & anchor_set)
        if starts:
            return TrustDecision(True, TrustReason.PATH_FOUND, _lex_path(graph, reach, starts[0], d))
        if not layer:
            break
    return TrustDecision(False, TrustReason.NO_PATH)


def _lex_path(graph: TrustGraph, reach: list[set[bytes]], start: bytes, k: int) -> tuple[bytes, ...]:
    adj = graph.adjacency()
    path = [start]
    for i in range(1, k + 1):
        remaining = k - i + 1
        # Edge i covers ``remaining`` hops; the next node must finish in remaining - 1.
        path.append(
            min(v for v, L in adj[path[-1]] if L >= remaining and v in reach[remaining - 1])
        )
    return tuple(path)


def valid_paths(
    graph: TrustGraph, anchors: Iterable[bytes], global_cap: int = DEFAULT_GLOBAL_CAP
) -> Iterable[tuple[bytes, ...]]:
    """Yield every valid simple path (of at least one edge) starting at an anchor.

    Extending a prefix of ``i`` hops along an edge with limit ``L`` bounds the
    total length by ``L + i``, so each prefix carries the tightest bound seen.
    """
    adj = graph.adjacency()
    for anchor in sorted(set(anchors)):
        if anchor not in graph.nodes:
            continue
        stack = [((anchor,), global_cap)]
        while stack:
            path, bound = stack.pop()
            hops = len(path) - 1
            for nxt, L in adj[path[-1]]:
                if nxt in path:
                    continue
                new_bound = min(bound, L + hops)
                if hops + 1 <= new_bound:
                    new_path = path + (nxt,)
                    yield new_path
                    stack.append((new_path, new_bound))


def relevant_subgraph(
    graph: TrustGraph, anchors: Iterable[bytes], global_cap: int = DEFAULT_GLOBAL_CAP
) -> TrustGraph:
    anchor_set = set(anchors)
    if not anchor_set:
        raise ValueError("anchors must be non-empty")
    keep_nodes = {a for a in anchor_set if a in graph.nodes}
    keep_edges: set[tuple[bytes, bytes]] = set()
    for path in valid_paths(graph, anchor_set, global_cap):
        keep_nodes.update(path)
        keep_edges.update(zip(path, path[1:]))
    nodes = {k: graph.nodes[k] for k in sorted(keep_nodes)}
    edges = {e: graph.edges[e] for e in sorted(keep_edges)}
    return TrustGraph(nodes, edges)


def to_dot(graph: TrustGraph) -> str:
    lines = ["digraph trust {"]
    for key in sorted(graph.nodes):
        rec = graph.nodes[key]
        name = rec.identity_name.replace("\\", "\\\\").replace('"', '\\"')
        label = f"{name}\\n{rec.entity_type.name}"
        lines.append(f'  "{key.hex()[:16]}" [label="{label}"];')
    for (s, d), L in sorted(graph.edges.items()):
        lines.append(f'  "{s.hex()[:16]}" -> "{d.hex()[:16]}" [label="{L}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(graph: TrustGraph) -> dict:
    return {
        "nodes": [
            {
                "account": key.hex(),
                "name": rec.identity_name,
                "type": rec.entity_type.name,
                "auth_public_key": rec.auth_public_key.hex(),
            }
            for key, rec in sorted(graph.nodes.items())
        ],
        "edges": [
            {"from": s.hex(), "to": d.hex(), "max_path_len": L}
            for (s, d), L in sorted(graph.edges.items())
        ],
    }
