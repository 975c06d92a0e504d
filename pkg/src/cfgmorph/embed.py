"""Embedding of a source CFG into a target graph: node map and edge routing."""

from __future__ import annotations

import json
import logging
import random
from collections import deque
from dataclasses import dataclass, field

import networkx as nx

from cfgmorph.cfg import Cfg
from cfgmorph.exceptions import MorphismError, RoutingError
from cfgmorph.layout import MAX_ROUTE_DECISIONS

logger = logging.getLogger(__name__)

Edge = tuple[int, int]


@dataclass
class Morphism:
    """Injective node map plus the intermediates realizing every source edge.

    Args:
        pi: Source node -> target node
        edge_paths: Source edge -> target intermediates strictly between the images
    """

    pi: dict[int, int]
    edge_paths: dict[Edge, list[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        images = list(self.pi.values())
        if len(set(images)) != len(images):
            raise MorphismError("node map is not injective")

    @property
    def images(self) -> set[int]:
        """Target nodes that are the image of some source node."""
        return set(self.pi.values())

    def full_path(self, edge: Edge) -> list[int]:
        """Target walk ``[pi(a), s1, ..., sn, pi(b)]`` of a source edge."""
        a, b = edge
        return [self.pi[a], *self.edge_paths[edge], self.pi[b]]

    def inverse(self) -> dict[int, int]:
        """Target node -> source node for every image."""
        return {t: s for s, t in self.pi.items()}


def path_is_valid(target: Cfg, start: int, intermediates: list[int], end: int) -> bool:
    """Whether ``start -> s1 -> ... -> sn -> end`` uses only target edges."""
    walk = [start, *intermediates, end]
    edges = set(target.edges)
    return all((x, y) in edges for x, y in zip(walk, walk[1:]))


def _reach_sets(target: Cfg) -> dict[int, set[int]]:
    """Nodes reachable through at least one edge, per node."""
    graph = target.to_networkx()
    reach: dict[int, set[int]] = {}
    for node in target.nodes:
        below = set(nx.descendants(graph, node))
        on_cycle = any(s == node or node in nx.descendants(graph, s) for s in target.successors(node))
        if on_cycle:
            below.add(node)
        reach[node] = below
    return reach


def _dfs_order(source: Cfg) -> list[int]:
    order = list(nx.dfs_preorder_nodes(source.to_networkx(), source.entry))
    seen = set(order)
    order.extend(n for n in source.nodes if n not in seen)
    return order


def find_morphism(
    source: Cfg, target: Cfg, seed: int, search_budget: int = 1_000_000
) -> Morphism:
    """Search an injective node map under which every source edge has a target path.

    Nodes are assigned in source DFS order, the entry going to the target
    entry. A candidate must reach (and be reached from) the images of its
    already-mapped neighbours; candidates that keep more edges direct are
    tried first, ties broken at random.

    Args:
        source: Source CFG
        target: Target graph, at least as large as ``source``
        seed: Seed for tie-breaking
        search_budget: Maximum number of candidate trials

    Returns:
        A Morphism with ``edge_paths`` still empty

    Raises:
        MorphismError: If the target is too small or the budget runs out
    """
    if len(target.nodes) < len(source.nodes):
        raise MorphismError(
            f"target has {len(target.nodes)} nodes, source needs {len(source.nodes)}"
        )
    rng = random.Random(seed)
    reach = _reach_sets(target)
    if source.predecessors(source.entry) and target.entry not in reach[target.entry]:
        raise MorphismError("source entry lies on a cycle, target entry does not")
    target_edges = set(target.edges)
    order = _dfs_order(source)
    pi: dict[int, int] = {}
    used: set[int] = set()
    trials = 0

    def feasible(node: int, cand: int) -> bool:
        for succ in source.successors(node):
            if succ == node:
                if cand not in reach[cand]:
                    return False
            elif succ in pi and pi[succ] not in reach[cand]:
                return False
        for pred in source.predecessors(node):
            if pred != node and pred in pi and cand not in reach[pi[pred]]:
                return False
        return True

    def score(node: int, cand: int) -> int:
        direct = sum(1 for s in source.successors(node) if s in pi and (cand, pi[s]) in target_edges)
        direct += sum(1 for p in source.predecessors(node) if p in pi and (pi[p], cand) in target_edges)
        return direct

    def assign(depth: int) -> bool:
        nonlocal trials
        if depth == len(order):
            return True
        node = order[depth]
        if node == source.entry:
            candidates = [target.entry]
        else:
            candidates = [c for c in target.nodes if c not in used]
            rng.shuffle(candidates)
            candidates.sort(key=lambda c: -score(node, c))
        for cand in candidates:
            trials += 1
            if trials > search_budget:
                raise MorphismError(f"search budget of {search_budget} trials exhausted")
            if cand in used or not feasible(node, cand):
                continue
            pi[node] = cand
            used.add(cand)
            if assign(depth + 1):
                return True
            del pi[node]
            used.discard(cand)
        return False

    if not assign(0):
        raise MorphismError("no injective node map exists for this target")
    logger.debug(f"Morphism found after {trials} trials")
    return Morphism(dict(pi))


def shortest_route(
    target: Cfg,
    start: int,
    end: int,
    rng: random.Random,
    avoid: set[int] | None = None,
) -> list[int] | None:
    """Randomized BFS for a walk of at least one edge from ``start`` to ``end``.

    Args:
        target: Graph to search
        start: First node
        end: Last node (may equal ``start``)
        rng: Source of tie-breaking
        avoid: Nodes that may not serve as intermediates

    Returns:
        The intermediates strictly between start and end, or None
    """
    avoid = avoid or set()
    parent: dict[int, int] = {}
    visited = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        successors = target.successors(node)
        rng.shuffle(successors)
        for nxt in successors:
            if nxt == end:
                walk: list[int] = []
                while node != start:
                    walk.append(node)
                    node = parent[node]
                return walk[::-1]
            if nxt in visited or nxt in avoid:
                continue
            visited.add(nxt)
            parent[nxt] = node
            queue.append(nxt)
    return None


def route_edges(source: Cfg, target: Cfg, morphism: Morphism, seed: int) -> Morphism:
    """Realize every source edge as a target path.

    Paths prefer to avoid images of other source nodes; when no such path
    exists any path is accepted.

    Args:
        source: Source CFG
        target: Target graph
        morphism: Node map from :func:`find_morphism`
        seed: Seed for tie-breaking

    Returns:
        A new Morphism with ``edge_paths`` filled

    Raises:
        RoutingError: If an edge has no path or its path exceeds the decision budget
    """
    rng = random.Random(seed)
    pi = morphism.pi
    images = morphism.images
    paths: dict[Edge, list[int]] = {}
    for a, b in source.edges:
        avoid = images - {pi[a], pi[b]}
        path = shortest_route(target, pi[a], pi[b], rng, avoid)
        if path is None:
            path = shortest_route(target, pi[a], pi[b], rng)
        if path is None:
            raise RoutingError(f"no target path from {pi[a]} to {pi[b]} for edge ({a}, {b})")
        if len(path) + 1 > MAX_ROUTE_DECISIONS:
            raise RoutingError(
                f"edge ({a}, {b}) needs {len(path) + 1} decisions, "
                f"budget is {MAX_ROUTE_DECISIONS}"
            )
        paths[(a, b)] = path
    logger.debug(
        f"Routed {len(paths)} edges, longest path {max((len(p) for p in paths.values()), default=0)}"
    )
    return Morphism(dict(pi), paths)


def morphism_to_json(morphism: Morphism) -> str:
    """Dump ``{"pi": {src: tgt}, "paths": {"a->b": [s1, ...]}}``."""
    return json.dumps(
        {
            "pi": {str(s): t for s, t in sorted(morphism.pi.items())},
            "paths": {f"{a}->{b}": p for (a, b), p in morphism.edge_paths.items()},
        }
    )
