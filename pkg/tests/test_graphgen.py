"""Tests for random target graph generation and layout."""

from __future__ import annotations

import pytest

from cfgmorph.exceptions import GenerationError
from cfgmorph.graphgen import TargetGraph, generate_target, linearize


class TestGenerateTarget:
    """Tests for generate_target."""

    @pytest.mark.parametrize("n_nodes", [2, 3, 8, 20, 64])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_shape_invariants(self, n_nodes: int, seed: int) -> None:
        """Out-degree 1..2, no self-loop, every node reachable from the entry."""
        graph = generate_target(n_nodes, seed)
        assert graph.entry == 0
        assert graph.nodes == list(range(n_nodes))
        assert graph.reachable() == set(graph.nodes)
        for node in graph.nodes:
            assert 1 <= graph.out_degree(node) <= 2
        assert all(a != b for a, b in graph.edges)
        assert len(set(graph.edges)) == len(graph.edges)

    def test_edge_budget(self) -> None:
        """The default budget asks for 1.5 edges per node; augmentation may add more."""
        graph = generate_target(40, seed=5)
        assert 60 <= len(graph.edges) <= 80

    def test_budget_capped_by_degree(self) -> None:
        """Two nodes hold at most one edge each."""
        graph = generate_target(2, seed=0, edge_budget_factor=3.0)
        assert sorted(graph.edges) == [(0, 1), (1, 0)]

    def test_deterministic(self) -> None:
        """The same seed gives the same graph."""
        assert generate_target(16, 9).edges == generate_target(16, 9).edges

    def test_seeds_differ(self) -> None:
        """Different seeds give different graphs."""
        assert generate_target(16, 1).edges != generate_target(16, 2).edges

    def test_many_samples(self) -> None:
        """A thousand 32-node samples all keep out-degree <= 2 and full reachability."""
        for seed in range(1000):
            graph = generate_target(32, seed)
            assert graph.reachable() == set(graph.nodes), seed
            assert max(graph.out_degree(n) for n in graph.nodes) <= 2, seed

    @pytest.mark.parametrize("n_nodes", [0, 1])
    def test_too_small(self, n_nodes: int) -> None:
        """Fewer than two nodes is rejected."""
        with pytest.raises(GenerationError):
            generate_target(n_nodes, 0)


class TestLinearize:
    """Tests for linearize."""

    def test_layout_is_permutation_starting_at_entry(self) -> None:
        """Every node is laid out exactly once, entry first."""
        graph = linearize(generate_target(30, 4), seed=4)
        assert sorted(graph.layout) == graph.nodes
        assert graph.layout[0] == graph.entry
        assert graph.edges == generate_target(30, 4).edges

    def test_traces_follow_edges(self) -> None:
        """Trace picking lays many edges out as fallthroughs."""
        graph = linearize(generate_target(30, 6), seed=1)
        edges = set(graph.edges)
        follow = sum(1 for a, b in zip(graph.layout, graph.layout[1:]) if (a, b) in edges)
        assert follow >= len(graph.layout) // 3

    def test_next_in_layout(self) -> None:
        """next_in_layout walks the layout and ends with None."""
        graph = linearize(generate_target(5, 0), seed=0)
        last = graph.layout[-1]
        assert graph.next_in_layout(graph.layout[0]) == graph.layout[1]
        assert graph.next_in_layout(last) is None
        assert graph.position(last) == 4

    def test_chain_is_laid_out_in_order(self) -> None:
        """A chain has a single trace."""
        chain = TargetGraph([0, 1, 2], [(0, 1), (1, 2)], 0)
        assert linearize(chain, seed=3).layout == [0, 1, 2]
