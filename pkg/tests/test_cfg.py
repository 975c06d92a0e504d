"""Tests for CFG extraction, isomorphism and rendering."""

from __future__ import annotations

import json
import random

import pytest

from cfgmorph.cfg import BlockKind, Cfg, extract_cfg, from_json, is_isomorphic, to_dot, to_json
from cfgmorph.exceptions import CfgError, SizeLimitError
from cfgmorph.isa import Program, parse_program
from tests.conftest import CORPUS_NAMES, load_corpus


def _relabel(graph: Cfg, seed: int) -> Cfg:
    ids = list(range(100, 100 + len(graph.nodes)))
    random.Random(seed).shuffle(ids)
    rename = dict(zip(graph.nodes, ids))
    edges = [(rename[a], rename[b]) for a, b in graph.edges]
    random.Random(seed + 1).shuffle(edges)
    return Cfg([rename[n] for n in graph.nodes], edges, rename[graph.entry])


class TestExtract:
    """Tests for extract_cfg."""

    def test_diamond(self, diamond: Program) -> None:
        """If/else gives four blocks, the jump target on the left."""
        cfg = extract_cfg(diamond)
        assert cfg.nodes == [0, 1, 2, 3]
        assert cfg.entry == 0
        assert cfg.successors(0) == [2, 1]
        assert sorted(cfg.edges) == [(0, 1), (0, 2), (1, 3), (2, 3)]
        assert cfg.blocks[0].kind == BlockKind.CONDITIONAL
        assert cfg.blocks[1].kind == BlockKind.STATIC
        assert cfg.blocks[2].kind == BlockKind.STRAIGHT
        assert cfg.blocks[3].kind == BlockKind.HALT

    def test_loop_back_edge(self, loop: Program) -> None:
        """The loop body jumps back to the loop head."""
        cfg = extract_cfg(loop)
        assert sorted(cfg.edges) == [(0, 1), (1, 2), (1, 3), (2, 1)]
        assert cfg.predecessors(1) == [0, 2]

    def test_call_has_no_fallthrough(self, calls: Program) -> None:
        """A call block only reaches its callee; continuations start new blocks."""
        cfg = extract_cfg(calls)
        assert len(cfg.nodes) == 6
        assert sorted(cfg.edges) == [(0, 3), (1, 4), (4, 3)]
        assert cfg.blocks[3].kind == BlockKind.RET
        assert cfg.blocks[1].start == 2

    def test_unreachable_blocks_kept(self, caplog: pytest.LogCaptureFixture) -> None:
        """Dead code after HALT stays in the graph with a warning."""
        program = parse_program("halt\nmov r0, 1\nhalt\n")
        cfg = extract_cfg(program)
        assert cfg.nodes == [0, 1]
        assert cfg.reachable() == {0}
        assert "Unreachable" in caplog.text

    @pytest.mark.parametrize("name", CORPUS_NAMES)
    def test_out_degree_at_most_two(self, name: str) -> None:
        """Restricted CFGs never branch more than two ways."""
        assert extract_cfg(load_corpus(name)).max_out_degree() <= 2

    def test_single_block(self) -> None:
        """Straight-line code is one HALT block without edges."""
        cfg = extract_cfg(load_corpus("straight"))
        assert cfg.nodes == [0]
        assert cfg.edges == []
        assert cfg.blocks[0].span == range(0, 5)


class TestIsomorphism:
    """Tests for is_isomorphic."""

    @pytest.mark.parametrize("name", CORPUS_NAMES)
    def test_relabelled_graph_is_isomorphic(self, name: str) -> None:
        """Renaming nodes and reordering edges keeps the graph isomorphic."""
        cfg = extract_cfg(load_corpus(name))
        assert is_isomorphic(cfg, _relabel(cfg, seed=7))

    def test_same_size_different_shape(self, diamond: Program, loop: Program) -> None:
        """Diamond and loop share node and edge counts but differ."""
        assert not is_isomorphic(extract_cfg(diamond), extract_cfg(loop))

    def test_entry_must_match(self) -> None:
        """The entry of one graph must map to the entry of the other."""
        a = Cfg([0, 1], [(0, 1)], 0)
        b = Cfg([0, 1], [(0, 1)], 1)
        assert not is_isomorphic(a, b)

    def test_size_limit(self) -> None:
        """Graphs beyond the search bound are refused."""
        big = Cfg(list(range(600)), [(i, i + 1) for i in range(599)], 0)
        with pytest.raises(SizeLimitError):
            is_isomorphic(big, big)


class TestRendering:
    """Tests for to_dot and the JSON dump."""

    def test_dot_structure(self, diamond: Program) -> None:
        """DOT output is a digraph with the entry drawn as a double circle."""
        dot = to_dot(extract_cfg(diamond))
        assert dot.startswith("digraph cfg {")
        assert "n0 -> n2;" in dot
        assert "doublecircle" in dot
        assert dot.count("->") == 4
        assert dot.rstrip().endswith("}")

    def test_json_reload(self, loop: Program) -> None:
        """A JSON dump reloads to the same graph and blocks."""
        cfg = extract_cfg(loop)
        data = json.loads(to_json(cfg))
        assert data["entry"] == 0
        again = from_json(to_json(cfg))
        assert again.nodes == cfg.nodes
        assert again.edges == cfg.edges
        assert again.blocks == cfg.blocks

    def test_bad_json(self) -> None:
        """Malformed documents raise CfgError."""
        with pytest.raises(CfgError):
            from_json('{"nodes": [0]}')

    def test_edge_to_unknown_node(self) -> None:
        """Edges must connect declared nodes."""
        with pytest.raises(CfgError):
            Cfg([0], [(0, 1)], 0)
