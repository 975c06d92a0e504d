"""Tests for the morphism search and edge routing."""

from __future__ import annotations

import random

import pytest

from cfgmorph.cfg import Cfg, extract_cfg
from cfgmorph.embed import (
    Morphism,
    find_morphism,
    morphism_to_json,
    path_is_valid,
    route_edges,
    shortest_route,
)
from cfgmorph.exceptions import MorphismError, RoutingError
from cfgmorph.graphgen import generate_target
from cfgmorph.layout import MAX_ROUTE_DECISIONS
from tests.conftest import CORPUS_NAMES, load_corpus


def _embed(source: Cfg, seed: int) -> tuple[Cfg, Morphism]:
    """First of a few random targets the source embeds into."""
    last: MorphismError | None = None
    for attempt in range(10):
        target = generate_target(4 * len(source.nodes) + 2, seed=seed + attempt)
        try:
            return target, find_morphism(source, target, seed=seed)
        except MorphismError as exc:
            last = exc
    raise AssertionError(f"no embedding in 10 targets: {last}")


class TestMorphism:
    """Tests for the Morphism container."""

    def test_injective(self) -> None:
        """Two source nodes cannot share an image."""
        with pytest.raises(MorphismError, match="injective"):
            Morphism({0: 1, 1: 1})

    def test_full_path_and_inverse(self) -> None:
        """full_path brackets the intermediates with the images."""
        morphism = Morphism({0: 3, 1: 5}, {(0, 1): [7, 2]})
        assert morphism.full_path((0, 1)) == [3, 7, 2, 5]
        assert morphism.inverse() == {3: 0, 5: 1}
        assert morphism.images == {3, 5}


class TestFindMorphism:
    """Tests for find_morphism."""

    @pytest.mark.parametrize("name", CORPUS_NAMES)
    def test_corpus_embeds(self, name: str) -> None:
        """Every corpus CFG embeds into a 4x random graph with entry on entry."""
        source = extract_cfg(load_corpus(name))
        target, morphism = _embed(source, seed=3)
        assert morphism.pi[source.entry] == target.entry
        assert len(morphism.images) == len(source.nodes)
        rng = random.Random(0)
        for a, b in source.edges:
            assert shortest_route(target, morphism.pi[a], morphism.pi[b], rng) is not None

    def test_target_too_small(self) -> None:
        """A target with fewer nodes than the source is refused."""
        source = extract_cfg(load_corpus("nested"))
        with pytest.raises(MorphismError, match="target has"):
            find_morphism(source, generate_target(3, 0), seed=0)

    def test_unsatisfiable(self) -> None:
        """A self-loop cannot map into an acyclic chain."""
        source = Cfg([0, 1], [(0, 1), (1, 1)], 0)
        target = Cfg([0, 1, 2], [(0, 1), (1, 2)], 0)
        with pytest.raises(MorphismError):
            find_morphism(source, target, seed=0)

    def test_budget(self) -> None:
        """A zero-ish budget runs out."""
        source = extract_cfg(load_corpus("nested"))
        target = generate_target(24, seed=1)
        with pytest.raises(MorphismError, match="budget"):
            find_morphism(source, target, seed=1, search_budget=1)


class TestRouting:
    """Tests for shortest_route and route_edges."""

    def test_shortest_route_on_chain(self) -> None:
        """The intermediates of a chain walk are returned in order."""
        chain = Cfg([0, 1, 2, 3], [(0, 1), (1, 2), (2, 3), (3, 0)], 0)
        assert shortest_route(chain, 0, 3, random.Random(0)) == [1, 2]
        assert shortest_route(chain, 0, 1, random.Random(0)) == []
        assert shortest_route(chain, 0, 0, random.Random(0)) == [1, 2, 3]

    def test_avoid(self) -> None:
        """Avoided nodes are never intermediates."""
        graph = Cfg([0, 1, 2, 3], [(0, 1), (0, 2), (1, 3), (2, 3)], 0)
        for seed in range(5):
            assert shortest_route(graph, 0, 3, random.Random(seed), avoid={1}) == [2]
        assert shortest_route(graph, 0, 3, random.Random(0), avoid={1, 2}) is None

    @pytest.mark.parametrize("name", CORPUS_NAMES)
    def test_route_edges_valid(self, name: str) -> None:
        """Every routed source edge is a valid target walk within the budget."""
        source = extract_cfg(load_corpus(name))
        target, found = _embed(source, seed=11)
        morphism = route_edges(source, target, found, seed=11)
        assert set(morphism.edge_paths) == set(source.edges)
        for (a, b), path in morphism.edge_paths.items():
            assert path_is_valid(target, morphism.pi[a], path, morphism.pi[b])
            assert len(path) + 1 <= MAX_ROUTE_DECISIONS

    def test_missing_path(self) -> None:
        """An edge with no target walk raises RoutingError."""
        source = Cfg([0, 1], [(0, 1)], 0)
        target = Cfg([0, 1], [(1, 0)], 0)
        with pytest.raises(RoutingError):
            route_edges(source, target, Morphism({0: 0, 1: 1}), seed=0)

    def test_json(self) -> None:
        """The JSON dump names edges as a->b."""
        text = morphism_to_json(Morphism({0: 2, 1: 0}, {(0, 1): [1]}))
        assert '"0->1": [1]' in text
