"""Tests for the recovery games and the dynamic-analysis attack."""

from __future__ import annotations

import itertools
from fractions import Fraction

import networkx as nx
import pytest

from cfgmorph.analysis import (
    attack_scaling,
    covered_cfg,
    dynamic_attack,
    fit_power_law,
    full_recovery_prob,
    mutate_node,
    neutral_filler,
    nodes_between,
    one_recovery_prob,
    reconstruct_cfg,
    scaling_csv,
    simulate_games,
    simulate_recovery_games,
)
from cfgmorph.cfg import extract_cfg, is_isomorphic
from cfgmorph.exceptions import InconsistentRecoveryError, MissingMetadataError
from cfgmorph.isa import Opcode, validate_program
from cfgmorph.models import AttackReport
from cfgmorph.pipeline import source_block_trace
from cfgmorph.transform import ObfuscatedProgram
from tests.conftest import CORPUS_CASES, CORPUS_NAMES, load_corpus, obfuscated


class TestClosedForms:
    """Tests for the exact success probabilities."""

    def test_full_recovery(self) -> None:
        """One subset among C(v, n)."""
        assert full_recovery_prob(20, 10) == Fraction(1, 184756)
        assert full_recovery_prob(5, 0) == 1
        assert full_recovery_prob(5, 5) == 1

    def test_one_recovery(self) -> None:
        """n hits among v nodes."""
        assert one_recovery_prob(20, 10) == Fraction(1, 2)
        assert one_recovery_prob(64, 8) == Fraction(1, 8)

    @pytest.mark.parametrize("v", range(1, 13))
    def test_matches_enumeration(self, v: int) -> None:
        """Both probabilities agree with counting over every n-subset."""
        for n in range(v + 1):
            active = tuple(range(n))
            subsets = list(itertools.combinations(range(v), n))
            assert full_recovery_prob(v, n) == Fraction(subsets.count(active), len(subsets))
            hits = sum(node in active for node in range(v))
            assert one_recovery_prob(v, n) == Fraction(hits, v)

    def test_half_of_84_is_negligible(self) -> None:
        """Guessing 42 active nodes among 84 succeeds with chance below 2^-80."""
        assert full_recovery_prob(84, 42) < Fraction(1, 2**80)

    @pytest.mark.parametrize(("v", "n"), [(3, 4), (3, -1), (-1, 0)])
    def test_full_rejects(self, v: int, n: int) -> None:
        """n must lie in [0, v]."""
        with pytest.raises(ValueError):
            full_recovery_prob(v, n)

    @pytest.mark.parametrize(("v", "n"), [(0, 0), (3, 4)])
    def test_one_rejects(self, v: int, n: int) -> None:
        """The one-recovery game needs at least one node."""
        with pytest.raises(ValueError):
            one_recovery_prob(v, n)


class TestGames:
    """Tests for the Monte-Carlo recovery games."""

    def test_empirical_near_closed_form(self) -> None:
        """Random guessing matches the closed forms on a small instance."""
        full, one = simulate_recovery_games(range(10), {0, 1}, trials=20_000, seed=0)
        assert full.closed_form == Fraction(1, 45)
        assert full.empirical == pytest.approx(1 / 45, abs=0.01)
        assert one.empirical == pytest.approx(0.2, abs=0.02)
        assert (full.v_size, full.n_size) == (10, 2)

    def test_full_recovery_is_hopeless(self) -> None:
        """Half of twenty nodes active: a random subset is almost never right."""
        full, _ = simulate_recovery_games(range(20), range(10), trials=100_000, seed=1)
        assert full.successes <= 2

    def test_seeded(self) -> None:
        """Equal seeds give equal counts."""
        a = simulate_recovery_games(range(12), {1, 4, 7}, trials=500, seed=3)
        b = simulate_recovery_games(range(12), {1, 4, 7}, trials=500, seed=3)
        assert [r.successes for r in a] == [r.successes for r in b]

    def test_active_outside_nodes(self) -> None:
        """Active nodes must belong to the graph."""
        with pytest.raises(ValueError):
            simulate_recovery_games(range(3), {5}, trials=1, seed=0)

    def test_on_obfuscation(self, ob_loop: ObfuscatedProgram) -> None:
        """Games over an obfuscation use |V'| and the image count."""
        full, one = simulate_games(ob_loop, trials=1000, seed=0)
        assert full.v_size == len(ob_loop.target.nodes)
        assert full.n_size == len(ob_loop.source_cfg.nodes)
        assert one.closed_form == Fraction(full.n_size, full.v_size)

    def test_needs_metadata(self) -> None:
        """Without ground truth the games refuse to run."""
        with pytest.raises(MissingMetadataError):
            simulate_games(None, trials=10, seed=0)


class TestMutation:
    """Tests for the neutral filler."""

    def test_filler_shape(self, ob_loop: ObfuscatedProgram) -> None:
        """The filler keeps length and labels and forces the passive mask."""
        for span in ob_loop.node_map.values():
            original = ob_loop.program.instructions[span.head : span.trailer_start]
            filler = neutral_filler(ob_loop.program, span)
            assert len(filler) == len(original)
            assert [i.label for i in filler] == [i.label for i in original]
            assert filler[0].opcode == Opcode.MOV

    def test_mutated_program_valid(self, ob_loop: ObfuscatedProgram) -> None:
        """A mutated program keeps its length, labels and trailers."""
        node = ob_loop.target.entry
        span = ob_loop.node_map[node]
        mutated = mutate_node(ob_loop.program, span)
        assert validate_program(mutated) == []
        assert len(mutated) == len(ob_loop.program)
        assert mutated.labels == ob_loop.program.labels
        tail = slice(span.trailer_start, len(mutated))
        assert mutated.instructions[tail] == ob_loop.program.instructions[tail]


class TestDynamicAttack:
    """Tests for dynamic_attack and reconstruct_cfg."""

    @pytest.mark.parametrize(
        ("name", "inputs"),
        [("diamond", {0: 5}), ("diamond", {0: 0}), ("loop", {0: 3}), ("straight", {0: 2})],
    )
    @pytest.mark.parametrize("extra_hops", [0, 2])
    def test_recovers_active_nodes(self, name: str, inputs: dict[int, int], extra_hops: int) -> None:
        """The recovered visits are exactly the images of the source run."""
        ob = obfuscated(name, extra_hops=extra_hops)
        report = dynamic_attack(ob, inputs)
        assert report.correct is True
        assert report.recovered_active == report.expected_active
        assert report.mutations_tested >= len(report.active_visits) - 1
        trace = source_block_trace(ob.source, ob.source_cfg, inputs)
        rebuilt = reconstruct_cfg(report, ob)
        assert is_isomorphic(rebuilt, covered_cfg(ob.source_cfg, trace))

    def test_full_coverage_rebuilds_source_cfg(self) -> None:
        """A run covering every edge rebuilds a graph isomorphic to the source CFG."""
        ob = obfuscated("loop")
        report = dynamic_attack(ob, {0: 2})
        assert is_isomorphic(reconstruct_cfg(report, ob), extract_cfg(load_corpus("loop")))
        assert report.complete is True
        assert report.recovered_active == set(ob.active_nodes)

    def test_partial_coverage_is_correct_but_incomplete(self, ob_diamond_flat: ObfuscatedProgram) -> None:
        """A run taking one branch recovers its own images and misses the other branch."""
        report = dynamic_attack(ob_diamond_flat, {0: 5})
        assert report.correct is True
        assert report.complete is False
        assert report.recovered_active < set(ob_diamond_flat.active_nodes)
        assert report.to_dict()["complete"] is False

    def test_every_segment_node_is_tested(
        self, ob_loop: ObfuscatedProgram, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Every node between the cuts of a segment gets a trial of its own."""
        sizes: list[int] = []

        def recording(graph: nx.DiGraph, start: int, end: int) -> list[int]:
            found = nodes_between(graph, start, end)
            sizes.append(len(found))
            return found

        monkeypatch.setattr("cfgmorph.analysis.nodes_between", recording)
        report = dynamic_attack(ob_loop, {0: 3})
        assert report.correct is True
        assert sizes
        assert report.mutations_tested >= sum(sizes) >= len(sizes)

    def test_cost_accounting(self, ob_diamond_flat: ObfuscatedProgram) -> None:
        """The attack runs the program more than twice over."""
        report = dynamic_attack(ob_diamond_flat, {0: 5})
        assert report.vm_steps_total > 2 * len(report.visits)
        assert report.to_dict()["correct"] is True

    def test_needs_node_map(self, ob_loop: ObfuscatedProgram) -> None:
        """Without a node map there is nothing to mutate."""
        bare = ObfuscatedProgram(
            program=ob_loop.program,
            node_map={},
            target=ob_loop.target,
            morphism=ob_loop.morphism,
            source=ob_loop.source,
            source_cfg=ob_loop.source_cfg,
            extra_hops=ob_loop.extra_hops,
        )
        with pytest.raises(MissingMetadataError):
            dynamic_attack(bare)

    @pytest.mark.slow
    @pytest.mark.parametrize("name", CORPUS_NAMES)
    def test_corpus(self, name: str) -> None:
        """Exact recovery on every corpus program."""
        ob = obfuscated(name)
        inputs, _ = CORPUS_CASES[name][0]
        assert dynamic_attack(ob, inputs).correct is True


class TestReconstruct:
    """Tests for reconstruct_cfg on hand-made reports."""

    def _report(self, visits: list[int], active: list[int], extra: set[int] | None = None) -> AttackReport:
        recovered = {visits[i] for i in active} | (extra or set())
        return AttackReport(recovered_active=recovered, visits=visits, active_visits=active)

    def test_contracts_passive_visits(self, ob_loop: ObfuscatedProgram) -> None:
        """Edges join consecutive active visits."""
        a, b, c, d = ob_loop.target.layout[:4]
        graph = reconstruct_cfg(self._report([a, c, b, d, a, c, b], [0, 2, 4, 6]), ob_loop)
        assert graph.entry == a
        assert sorted(graph.edges) == sorted([(a, b), (b, a)])

    def test_false_positive(self, ob_loop: ObfuscatedProgram) -> None:
        """A recovered node with no active visit is inconsistent."""
        a, b, c = ob_loop.target.layout[:3]
        with pytest.raises(InconsistentRecoveryError, match="never visited actively"):
            reconstruct_cfg(self._report([a, b], [0, 1], extra={c}), ob_loop)

    def test_out_degree(self, ob_loop: ObfuscatedProgram) -> None:
        """A node cannot have three successors."""
        a, b, c, d = ob_loop.target.layout[:4]
        visits = [a, b, a, c, a, d]
        with pytest.raises(InconsistentRecoveryError, match="more than two"):
            reconstruct_cfg(self._report(visits, list(range(6))), ob_loop)

    def test_empty(self, ob_loop: ObfuscatedProgram) -> None:
        """No active visit at all is inconsistent."""
        with pytest.raises(InconsistentRecoveryError):
            reconstruct_cfg(AttackReport(), ob_loop)


class TestScaling:
    """Tests for the cost fit."""

    def test_power_law_fit(self) -> None:
        """Exact power-law data gives back its exponent and constant."""
        sizes = [10, 20, 40, 80]
        k, c = fit_power_law(sizes, [3 * s**2.5 for s in sizes])
        assert k == pytest.approx(2.5)
        assert c == pytest.approx(3.0)

    def test_fit_needs_two_points(self) -> None:
        """One point does not determine a line."""
        with pytest.raises(ValueError):
            fit_power_law([10], [100])

    def test_csv(self) -> None:
        """The CSV has a header row and one row per size."""
        assert scaling_csv([(16, 100), (32, 900)]) == "v_prime,vm_steps_total\n16,100\n32,900\n"

    def test_scaling_with_size_dependent_inputs(self) -> None:
        """A callable workload is evaluated once per target size."""
        seen: list[int] = []

        def workload(size: int) -> dict[int, int]:
            seen.append(size)
            return {0: 1}

        rows = attack_scaling(load_corpus("loop"), workload, [8, 12], seed=0)
        assert seen == [8, 12]
        assert [size for size, _ in rows] == [8, 12]
        assert all(cost > 0 for _, cost in rows)

    @pytest.mark.slow
    def test_attack_cost_exponent(self) -> None:
        """With a workload growing with |V'| the cost grows between quadratically and cubically."""
        rows = attack_scaling(
            load_corpus("loop"), lambda size: {0: size // 4}, [16, 32, 64], seeds=[0, 1, 2]
        )
        assert [size for size, _ in rows] == [16, 32, 64]
        k, _ = fit_power_law([s for s, _ in rows], [c for _, c in rows])
        assert 2.0 <= k <= 3.3


class TestNodesBetween:
    """Tests for the candidate set of an attack segment."""

    def test_chain(self) -> None:
        """On a chain only the nodes after start and up to end qualify."""
        graph = nx.DiGraph([(0, 1), (1, 2), (2, 3), (3, 4)])
        assert nodes_between(graph, 1, 3) == [2, 3]

    def test_excludes_side_branches(self) -> None:
        """A node reachable from start that cannot reach end is left out."""
        graph = nx.DiGraph([(0, 1), (0, 2), (1, 3), (2, 4)])
        assert nodes_between(graph, 0, 3) == [1, 3]

    def test_start_on_a_cycle(self) -> None:
        """Start itself qualifies when a walk returns to it before end."""
        graph = nx.DiGraph([(0, 1), (1, 0), (1, 2)])
        assert nodes_between(graph, 0, 2) == [0, 1, 2]

    def test_unreachable_end(self) -> None:
        """No walk from start to end leaves no candidate."""
        graph = nx.DiGraph([(0, 1), (2, 3)])
        assert nodes_between(graph, 0, 3) == []
