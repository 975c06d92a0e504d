"""Tests for the end-to-end obfuscation pipeline."""

from __future__ import annotations

import logging

import pytest

from cfgmorph.cfg import extract_cfg
from cfgmorph.exceptions import MorphismError, ValidationError
from cfgmorph.isa import Instruction, LabelRef, Opcode, Program, parse_program
from cfgmorph.models import ObfuscationParams
from cfgmorph.pipeline import obfuscate, source_block_trace, target_size
from cfgmorph.vm import run
from tests.conftest import load_corpus


class TestTargetSize:
    """Tests for target_size."""

    def test_scales_with_factor(self) -> None:
        """The target has ceil(factor * |V|) nodes."""
        cfg = extract_cfg(load_corpus("diamond"))
        assert target_size(cfg, 4.0) == 4 * len(cfg.nodes)
        assert target_size(cfg, 1.5) == 6

    def test_minimum_two(self) -> None:
        """A single-block program still gets a two-node target."""
        assert target_size(extract_cfg(load_corpus("straight")), 1.0) == 2


class TestObfuscate:
    """Tests for obfuscate."""

    def test_target_graph_size(self, loop: Program) -> None:
        """The emitted node map covers the whole target graph."""
        ob = obfuscate(loop, ObfuscationParams(target_factor=3.0), seed=2)
        n = len(extract_cfg(loop).nodes)
        assert len(ob.target.nodes) == target_size(extract_cfg(loop), 3.0) == 3 * n
        assert set(ob.node_map) == set(ob.target.nodes)
        assert ob.morphism.pi[ob.source_cfg.entry] == ob.target.entry

    def test_node_spans_tile_program(self, diamond: Program) -> None:
        """Node spans are disjoint and ordered like the layout."""
        ob = obfuscate(diamond, seed=4)
        spans = [ob.node_map[n] for n in ob.target.layout]
        for span in spans:
            assert span.head < span.body_start <= span.body_end < span.trailer_start < span.end
        for first, second in zip(spans, spans[1:]):
            assert first.end == second.head
        assert spans[-1].end < len(ob.program)

    def test_straight_program(self) -> None:
        """A one-block program obfuscates and still runs."""
        program = load_corpus("straight")
        ob = obfuscate(program, seed=0)
        assert run(ob.program, {0: 2}).output == [27]

    def test_invalid_program(self) -> None:
        """Validation failures are reported before any transformation."""
        bad = Program((Instruction(Opcode.JMP, (LabelRef("nowhere"),)),))
        with pytest.raises(ValidationError) as info:
            obfuscate(bad)
        assert any("nowhere" in v for v in info.value.violations)

    def test_restarts_exhausted(self) -> None:
        """A hopeless search gives up after max_restarts targets."""
        params = ObfuscationParams(max_restarts=2, search_budget=1)
        with pytest.raises(MorphismError, match="after 2 target graphs"):
            obfuscate(load_corpus("nested"), params, seed=0)

    def test_logs_summary(self, loop: Program, caplog: pytest.LogCaptureFixture) -> None:
        """A successful run logs its size summary."""
        with caplog.at_level(logging.INFO, logger="cfgmorph.pipeline"):
            obfuscate(loop, seed=9)
        assert any("Obfuscated:" in r.getMessage() for r in caplog.records)


class TestSourceBlockTrace:
    """Tests for source_block_trace."""

    def test_loop_trace(self, loop: Program) -> None:
        """The head block is entered once per iteration plus the exit test."""
        cfg = extract_cfg(loop)
        trace = source_block_trace(loop, cfg, {0: 2})
        assert trace[0] == cfg.entry
        head = cfg.successors(cfg.entry)[0]
        assert trace.count(head) == 3

    def test_trace_follows_edges(self) -> None:
        """Consecutive blocks of a call-free run are CFG edges."""
        program = parse_program(
            "mov r1, 0\ntop: cmp r0, 0\njz done\nadd r1, r0\nsub r0, 1\njmp top\ndone: out r1\nhalt\n"
        )
        cfg = extract_cfg(program)
        trace = source_block_trace(program, cfg, {0: 3})
        edges = set(cfg.edges)
        assert all(pair in edges for pair in zip(trace, trace[1:]))
