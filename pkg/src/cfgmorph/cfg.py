"""Restricted control-flow graphs: extraction, isomorphism and dumps.

Nodes are maximal straight-line blocks; edges are the static transfers
(conditional fallthrough, jump or call to a block start, and the plain
fallthrough of a block that ends without a terminator). Returns are dynamic
and contribute no edges.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx

from cfgmorph.exceptions import CfgError, SizeLimitError
from cfgmorph.isa import (
    BLOCK_TERMINATORS,
    CONDITIONAL_JUMPS,
    LabelRef,
    Opcode,
    Program,
)

logger = logging.getLogger(__name__)

MAX_ISOMORPHISM_NODES = 512


class BlockKind(str, Enum):
    """Classification of a basic block by its final instruction."""

    STRAIGHT = "straight-line"
    CONDITIONAL = "conditional-jump"
    STATIC = "static-jump"
    RET = "ret"
    HALT = "halt"


@dataclass(frozen=True)
class BasicBlock:
    """A maximal run of instructions entered only at its first instruction.

    Args:
        id: Node identifier
        start: Index of the first instruction
        end: Index one past the last instruction
        kind: Classification by terminator
    """

    id: int
    start: int
    end: int
    kind: BlockKind

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError(f"block span must be non-empty, got [{self.start}, {self.end})")

    @property
    def span(self) -> range:
        """Instruction indexes covered by the block."""
        return range(self.start, self.end)

    @property
    def body_end(self) -> int:
        """End of the block without its terminator."""
        return self.end if self.kind == BlockKind.STRAIGHT else self.end - 1


@dataclass
class Cfg:
    """Directed graph with out-degree at most two and a distinguished entry.

    Edges are kept in insertion order; for a conditional block the jump
    target (left) precedes the fallthrough (right).

    Args:
        nodes: Node identifiers
        edges: Ordered (source, destination) pairs
        entry: Entry node
        blocks: Basic block of each node, when extracted from a program
    """

    nodes: list[int]
    edges: list[tuple[int, int]]
    entry: int
    blocks: dict[int, BasicBlock] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.nodes = list(self.nodes)
        self.edges = [(int(a), int(b)) for a, b in self.edges]
        if self.entry not in set(self.nodes):
            raise CfgError(f"entry {self.entry} is not a node")
        self._succ: dict[int, list[int]] = {n: [] for n in self.nodes}
        self._pred: dict[int, list[int]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            if a not in self._succ or b not in self._succ:
                raise CfgError(f"edge ({a}, {b}) references an unknown node")
            self._succ[a].append(b)
            self._pred[b].append(a)

    def successors(self, node: int) -> list[int]:
        """Successors of a node, left first."""
        return list(self._succ[node])

    def predecessors(self, node: int) -> list[int]:
        """Predecessors of a node."""
        return list(self._pred[node])

    def out_degree(self, node: int) -> int:
        return len(self._succ[node])

    def max_out_degree(self) -> int:
        """Largest out-degree in the graph (0 for edgeless graphs)."""
        return max((len(s) for s in self._succ.values()), default=0)

    def to_networkx(self) -> nx.DiGraph:
        """Directed networkx view; the entry carries ``entry=True``."""
        graph = nx.DiGraph()
        for node in self.nodes:
            graph.add_node(node, entry=node == self.entry)
        graph.add_edges_from(self.edges)
        return graph

    def reachable(self) -> set[int]:
        """Nodes reachable from the entry, entry included."""
        return {self.entry} | nx.descendants(self.to_networkx(), self.entry)

    def __len__(self) -> int:
        return len(self.nodes)


def _leaders(program: Program) -> list[int]:
    leaders = {0}
    for index, instr in enumerate(program):
        for operand in instr.operands:
            if isinstance(operand, LabelRef):
                leaders.add(program.address_of(operand.name))
        if instr.opcode in BLOCK_TERMINATORS and index + 1 < len(program):
            leaders.add(index + 1)
    return sorted(leaders)


def _classify(opcode: Opcode) -> BlockKind:
    if opcode in CONDITIONAL_JUMPS:
        return BlockKind.CONDITIONAL
    if opcode in (Opcode.JMP, Opcode.CALL):
        return BlockKind.STATIC
    if opcode == Opcode.RET:
        return BlockKind.RET
    if opcode == Opcode.HALT:
        return BlockKind.HALT
    return BlockKind.STRAIGHT


def extract_cfg(program: Program) -> Cfg:
    """Extract the restricted CFG of a program.

    A block starts at the entry, at every referenced label (jump and call
    targets, pushed return addresses), and right after every
    JMP/JZ/JNZ/CALL/RET/HALT. A call block gets an edge to the callee only.

    Args:
        program: A valid program

    Returns:
        The restricted CFG, with blocks numbered in program order
    """
    leaders = _leaders(program)
    bounds = leaders + [len(program)]
    blocks: dict[int, BasicBlock] = {}
    block_at: dict[int, int] = {}
    for node, (start, end) in enumerate(zip(bounds, bounds[1:])):
        blocks[node] = BasicBlock(node, start, end, _classify(program[end - 1].opcode))
        block_at[start] = node

    edges: list[tuple[int, int]] = []
    for node, block in blocks.items():
        last = program[block.end - 1]
        following = block_at.get(block.end)
        successors: list[int] = []
        if block.kind in (BlockKind.CONDITIONAL, BlockKind.STATIC):
            target = last.operands[0]
            assert isinstance(target, LabelRef)
            successors.append(block_at[program.address_of(target.name)])
        if block.kind in (BlockKind.CONDITIONAL, BlockKind.STRAIGHT) and following is not None:
            successors.append(following)
        for succ in dict.fromkeys(successors):
            edges.append((node, succ))

    cfg = Cfg(list(blocks), edges, 0, blocks)
    unreachable = sorted(set(cfg.nodes) - cfg.reachable())
    if unreachable:
        logger.warning(f"Unreachable blocks kept in CFG: {unreachable}")
    logger.debug(f"Extracted CFG: {len(cfg.nodes)} nodes, {len(cfg.edges)} edges")
    return cfg


def is_isomorphic(a: Cfg, b: Cfg) -> bool:
    """Exact isomorphism test mapping entry to entry.

    Degree sequences are compared first; the full check is a VF2
    backtracking search over the networkx views.

    Args:
        a: First graph
        b: Second graph

    Returns:
        True iff an edge-preserving bijection maps a's entry to b's entry

    Raises:
        SizeLimitError: If either graph exceeds the search bound
    """
    for graph in (a, b):
        if len(graph.nodes) > MAX_ISOMORPHISM_NODES:
            raise SizeLimitError(
                f"graph has {len(graph.nodes)} nodes, limit is {MAX_ISOMORPHISM_NODES}"
            )
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    ga, gb = a.to_networkx(), b.to_networkx()
    if ga.number_of_edges() != gb.number_of_edges():
        return False

    def degrees(g: nx.DiGraph) -> Counter[tuple[int, int]]:
        return Counter((g.in_degree(n), g.out_degree(n)) for n in g.nodes)

    if degrees(ga) != degrees(gb):
        return False
    if (ga.in_degree(a.entry), ga.out_degree(a.entry)) != (
        gb.in_degree(b.entry),
        gb.out_degree(b.entry),
    ):
        return False
    return nx.is_isomorphic(ga, gb, node_match=lambda x, y: x["entry"] == y["entry"])


def to_dot(graph: Cfg, name: str = "cfg") -> str:
    """Render a graph as a DOT digraph.

    Args:
        graph: Graph to render
        name: Digraph name

    Returns:
        DOT text; the entry node is drawn as a double circle
    """
    lines = [f"digraph {name} {{", "  node [shape=box];"]
    for node in graph.nodes:
        block = graph.blocks.get(node)
        if block is not None:
            label = f"{node}: {block.kind.value} [{block.start}..{block.end})"
        else:
            label = str(node)
        attrs = f'label="{label}"'
        if node == graph.entry:
            attrs += ", shape=doublecircle"
        lines.append(f"  n{node} [{attrs}];")
    for a, b in graph.edges:
        lines.append(f"  n{a} -> n{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(graph: Cfg) -> str:
    """Adjacency dump ``{"nodes": [...], "edges": [[x, y], ...], "entry": x}``."""
    payload: dict[str, object] = {
        "nodes": list(graph.nodes),
        "edges": [[a, b] for a, b in graph.edges],
        "entry": graph.entry,
    }
    if graph.blocks:
        payload["blocks"] = {
            str(n): {"start": b.start, "end": b.end, "kind": b.kind.value}
            for n, b in graph.blocks.items()
        }
    return json.dumps(payload)


def from_json(text: str) -> Cfg:
    """Load a graph written by :func:`to_json`.

    Raises:
        CfgError: If the document is not a valid adjacency dump
    """
    try:
        data = json.loads(text)
        blocks = {
            int(n): BasicBlock(int(n), b["start"], b["end"], BlockKind(b["kind"]))
            for n, b in data.get("blocks", {}).items()
        }
        return Cfg(
            [int(n) for n in data["nodes"]],
            [(int(a), int(b)) for a, b in data["edges"]],
            int(data["entry"]),
            blocks,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CfgError(f"invalid CFG JSON: {exc}") from exc
