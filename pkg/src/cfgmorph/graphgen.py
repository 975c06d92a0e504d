"""Random target graphs with bounded out-degree, and their code layout."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

import networkx as nx

from cfgmorph.cfg import Cfg
from cfgmorph.exceptions import GenerationError

logger = logging.getLogger(__name__)

MAX_OUT_DEGREE = 2


@dataclass
class TargetGraph(Cfg):
    """Random graph the source CFG is embedded into.

    Args:
        layout: Emission order of the nodes, entry first (empty until linearized)
    """

    layout: list[int] = field(default_factory=list)

    def position(self, node: int) -> int:
        """Index of a node in the layout."""
        return self.layout.index(node)

    def next_in_layout(self, node: int) -> int | None:
        """Node emitted right after ``node``, or None for the last one."""
        index = self.layout.index(node)
        return self.layout[index + 1] if index + 1 < len(self.layout) else None


def _reachable(succ: dict[int, list[int]], entry: int) -> set[int]:
    return nx.descendants(nx.DiGraph(succ), entry) | {entry}


def _source_components(succ: dict[int, list[int]], unreachable: set[int]) -> list[list[int]]:
    """Strongly connected components of the unreachable part with no incoming edge."""
    graph = nx.DiGraph()
    graph.add_nodes_from(unreachable)
    graph.add_edges_from(
        (a, b) for a in unreachable for b in succ[a] if b in unreachable
    )
    condensed = nx.condensation(graph)
    sources = [c for c in condensed.nodes if condensed.in_degree(c) == 0]
    components = [sorted(condensed.nodes[c]["members"]) for c in sources]
    return sorted(components)


def _attach(
    succ: dict[int, list[int]],
    reach: set[int],
    entry: int,
    target: int,
    rng: random.Random,
) -> None:
    """Add or redirect one edge from the reachable part to ``target``."""
    free = sorted(n for n in reach if len(succ[n]) < MAX_OUT_DEGREE and n != target)
    if free:
        succ[rng.choice(free)].append(target)
        return
    # Every reachable node is saturated: redirect an edge whose loss keeps reach intact
    candidates = [(n, i) for n in sorted(reach) for i in range(len(succ[n]))]
    rng.shuffle(candidates)
    for node, slot in candidates:
        old = succ[node][slot]
        if target in succ[node]:
            continue
        succ[node][slot] = target
        if reach <= _reachable(succ, entry):
            return
        succ[node][slot] = old
    raise GenerationError("cannot repair reachability under the out-degree cap")


def generate_target(
    n_nodes: int, seed: int, edge_budget_factor: float = 1.5
) -> TargetGraph:
    """Generate a random digraph with out-degree at most 2, all reachable from node 0.

    A random functional skeleton gives every node one successor; an
    augmentation pass then links every source component of the unreachable
    part to the reachable part; random extra edges fill the edge budget.

    Args:
        n_nodes: Number of nodes (at least 2)
        seed: Seed of the generator
        edge_budget_factor: Target edge count as a multiple of ``n_nodes``

    Returns:
        A TargetGraph with entry 0 and no layout

    Raises:
        GenerationError: If ``n_nodes`` < 2
    """
    if n_nodes < 2:
        raise GenerationError(f"n_nodes must be >= 2, got {n_nodes}")
    rng = random.Random(seed)
    entry = 0
    nodes = list(range(n_nodes))
    succ: dict[int, list[int]] = {n: [] for n in nodes}

    for node in nodes:
        succ[node].append(rng.choice([m for m in nodes if m != node]))

    # One unreachable source component is linked per round
    augmented = 0
    while True:
        reach = _reachable(succ, entry)
        unreachable = set(nodes) - reach
        if not unreachable:
            break
        component = _source_components(succ, unreachable)[0]
        _attach(succ, reach, entry, rng.choice(component), rng)
        augmented += 1

    cap = n_nodes * min(MAX_OUT_DEGREE, n_nodes - 1)
    budget = min(cap, round(edge_budget_factor * n_nodes))
    count = sum(len(s) for s in succ.values())
    while count < budget:
        open_nodes = [n for n in nodes if len(succ[n]) < MAX_OUT_DEGREE]
        node = rng.choice(open_nodes)
        options = [m for m in nodes if m != node and m not in succ[node]]
        if not options:
            break
        succ[node].append(rng.choice(options))
        count += 1

    edges = [(a, b) for a in nodes for b in succ[a]]
    logger.debug(
        f"Generated target: {n_nodes} nodes, {len(edges)} edges, "
        f"{augmented} augmentation edges"
    )
    return TargetGraph(nodes, edges, entry)


def linearize(graph: TargetGraph, seed: int) -> TargetGraph:
    """Choose a code layout by trace picking.

    Starting at the entry, a trace follows a random unplaced successor until
    none is left; the next trace starts at an unplaced successor of a placed
    node.

    Args:
        graph: Graph to lay out
        seed: Seed of the generator

    Returns:
        A copy of ``graph`` with ``layout`` filled
    """
    rng = random.Random(seed)
    placed: list[int] = []
    seen: set[int] = set()
    start: int | None = graph.entry
    while start is not None:
        current: int | None = start
        while current is not None:
            placed.append(current)
            seen.add(current)
            options = [s for s in graph.successors(current) if s not in seen]
            current = rng.choice(options) if options else None
        frontier = sorted(
            {s for n in placed for s in graph.successors(n) if s not in seen}
        )
        start = rng.choice(frontier) if frontier else None

    # Nodes unreachable from the entry still get emitted
    placed.extend(n for n in graph.nodes if n not in seen)
    return TargetGraph(list(graph.nodes), list(graph.edges), graph.entry, dict(graph.blocks), placed)
