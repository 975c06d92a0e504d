"""Security games and the dynamic-analysis attack."""

from __future__ import annotations

import csv
import io
import logging
import math
import random
import statistics
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction

import networkx as nx

from cfgmorph.cfg import BlockKind, Cfg, extract_cfg
from cfgmorph.exceptions import (
    AttackError,
    InconsistentRecoveryError,
    MissingMetadataError,
    VmError,
)
from cfgmorph.isa import Imm, Instruction, Mem, Opcode, Program, Reg
from cfgmorph.layout import (
    ALL_ONES,
    HOP_SLOT,
    NPM_SLOT,
    PM_SLOT,
    RESERVED_BASE,
    SLAB_BASE,
    SLAB_SP_OFFSET,
)
from cfgmorph.models import AttackReport, GameReport, ObfuscationParams, RunLimits
from cfgmorph.pipeline import obfuscate, obfuscated_limits, source_block_trace
from cfgmorph.transform import NodeSpan, ObfuscatedProgram
from cfgmorph.vm import Snapshot, Vm, resolve_program

logger = logging.getLogger(__name__)

SAVED_SLOTS = range(SLAB_BASE, SLAB_BASE + SLAB_SP_OFFSET + 1)

Inputs = Mapping[int, int] | Sequence[int] | None


def full_recovery_prob(v: int, n: int) -> Fraction:
    """Chance that a uniformly random n-subset of v nodes is the active set.

    Raises:
        ValueError: If n is outside [0, v]
    """
    if v < 0 or not 0 <= n <= v:
        raise ValueError(f"need 0 <= n <= v, got v={v}, n={n}")
    return Fraction(1, math.comb(v, n))


def one_recovery_prob(v: int, n: int) -> Fraction:
    """Chance that a uniformly random node is active, n active among v.

    Raises:
        ValueError: If v is 0 or n is outside [0, v]
    """
    if v <= 0:
        raise ValueError(f"v must be > 0, got {v}")
    if not 0 <= n <= v:
        raise ValueError(f"need 0 <= n <= v, got v={v}, n={n}")
    return Fraction(n, v)


def simulate_recovery_games(
    nodes: Iterable[int], active: Iterable[int], trials: int, seed: int
) -> tuple[GameReport, GameReport]:
    """Play both recovery games against a random-guess adversary.

    The full-recovery adversary guesses a random subset of the right size;
    the one-recovery adversary names a random node.

    Returns:
        (full-recovery report, one-recovery report)
    """
    universe = sorted(set(nodes))
    truth = set(active)
    if not truth <= set(universe):
        raise ValueError("active nodes must be a subset of nodes")
    rng = random.Random(seed)
    v, n = len(universe), len(truth)
    full_hits = sum(1 for _ in range(trials) if set(rng.sample(universe, n)) == truth)
    one_hits = sum(1 for _ in range(trials) if rng.choice(universe) in truth)
    logger.debug(f"Games over |V|={v}, |N|={n}: {full_hits} full, {one_hits} one hits")
    return (
        GameReport("full", v, n, full_recovery_prob(v, n), full_hits, trials),
        GameReport("one", v, n, one_recovery_prob(v, n), one_hits, trials),
    )


def simulate_games(
    ob: ObfuscatedProgram | None, trials: int, seed: int
) -> tuple[GameReport, GameReport]:
    """Recovery games over an obfuscation's target graph and its active images.

    Raises:
        MissingMetadataError: If the ground-truth active set is unavailable
    """
    if ob is None or not ob.morphism.pi:
        raise MissingMetadataError("the games need the sidecar metadata (active set)")
    return simulate_recovery_games(ob.target.nodes, ob.active_nodes, trials, seed)


def neutral_filler(program: Program, span: NodeSpan) -> list[Instruction]:
    """Effect-free replacement of a node's code before its trailer.

    The filler forces the passive mask, draws as many RAND values as the
    replaced code and pads to the same length; labels stay where they were.
    """
    original = program.instructions[span.head : span.trailer_start]
    rands = sum(1 for instr in original if instr.opcode == Opcode.RAND)
    r6 = Reg(6)
    code = [
        Instruction(Opcode.MOV, (r6, Imm(ALL_ONES))),
        Instruction(Opcode.STORE, (Mem(None, PM_SLOT), r6)),
        Instruction(Opcode.MOV, (r6, Imm(0))),
        Instruction(Opcode.STORE, (Mem(None, NPM_SLOT), r6)),
    ]
    code += [Instruction(Opcode.RAND, (r6,))] * rands
    if len(code) > len(original):
        raise AttackError(f"node at {span.head} is too short for a neutral filler")
    code += [Instruction(Opcode.XOR, (r6, Imm(0)))] * (len(original) - len(code))
    return [new.with_label(old.label) for new, old in zip(code, original)]


def mutate_node(program: Program, span: NodeSpan) -> Program:
    """Program with one node's pre-trailer code replaced by a neutral filler."""
    instructions = list(program.instructions)
    instructions[span.head : span.trailer_start] = neutral_filler(program, span)
    return Program(tuple(instructions))


@dataclass(frozen=True)
class _Variant:
    """A program together with its resolved code."""

    program: Program
    code: list[Instruction]


class _Mutants:
    """Genuine program plus lazily built single-node mutants."""

    def __init__(self, ob: ObfuscatedProgram) -> None:
        self.ob = ob
        self.genuine = _Variant(ob.program, resolve_program(ob.program))
        self._cache: dict[int, _Variant] = {}

    def __getitem__(self, node: int) -> _Variant:
        if node not in self._cache:
            span = self.ob.node_map[node]
            filler = neutral_filler(self.ob.program, span)
            code = list(self.genuine.code)
            code[span.head : span.trailer_start] = filler
            self._cache[node] = _Variant(mutate_node(self.ob.program, span), code)
        return self._cache[node]


def _state_key(snap: Snapshot) -> tuple[object, ...]:
    memory = snap.memory
    return (
        snap.pc,
        memory[:RESERVED_BASE],
        tuple(memory[a] for a in SAVED_SLOTS),
        snap.output,
    )


def _observe(
    ob: ObfuscatedProgram, inputs: Inputs, limits: RunLimits, seed: int,
) -> tuple[list[int], list[int], list[int], int]:
    """Node entries, their steps and the visits holding a HOP increase."""
    vm = Vm(ob.program, inputs, seed, limits)
    visits: list[int] = []
    visit_steps: list[int] = []
    swaps: list[int] = []
    hop = None
    while not vm.halted:
        node = ob.node_at_head(vm.pc)
        if node is not None:
            visits.append(node)
            visit_steps.append(vm.state.steps)
        entry = vm.step()
        if entry.write is not None and entry.write[0] == HOP_SLOT:
            value = entry.write[1]
            if hop is not None and value > hop and visits and (not swaps or swaps[-1] != len(visits) - 1):
                swaps.append(len(visits) - 1)
            hop = value
    return visits, visit_steps, swaps, vm.state.steps


def _segments(swaps: list[int], n_visits: int) -> list[tuple[int, int, int | None]]:
    """(A, B, horizon) per segment of the observed run.

    The visits strictly after A up to B hold the segment's candidates; a
    trial is compared with the genuine run at the horizon, the first node
    entry after the next swap (None: the end of the run).
    """
    bounds = [0, *(s for s in swaps if s > 0)]
    segments = []
    for k, lo in enumerate(bounds):
        hi = bounds[k + 1] if k + 1 < len(bounds) else n_visits - 1
        if hi <= lo:
            continue
        follow = bounds[k + 2] if k + 2 < len(bounds) else None
        horizon = follow + 1 if follow is not None and follow + 1 < n_visits else None
        segments.append((lo, hi, horizon))
    return segments


def nodes_between(graph: nx.DiGraph, start: int, end: int) -> list[int]:
    """Nodes on some walk of at least one edge from ``start`` to ``end``, ``end`` included."""
    ahead: set[int] = set()
    for succ in graph.successors(start):
        ahead.add(succ)
        ahead |= nx.descendants(graph, succ)
    behind = nx.ancestors(graph, end) | {end}
    return sorted(ahead & behind)


def dynamic_attack(
    ob: ObfuscatedProgram,
    inputs: Inputs = None,
    limits: RunLimits | None = None,
    seed: int = 0,
) -> AttackReport:
    """Recover the active node visits of a run by mutation testing.

    The first visit is active. The run is then cut at every observed route
    swap (a write that increases the HOP word): each cut B closes a segment
    opened by the previous cut A, and the segment holds an active visit.
    Every node lying on a walk from A to B in the obfuscated graph is a
    candidate. A candidate is tested by replacing its code with a neutral
    filler for the visits of the segment and running on from A; it is
    active when the node-entry sequence or the architectural state (pc,
    saved registers, non-reserved memory, output) differs from the genuine
    run at the comparison point, the first node entry after the next swap.
    A candidate visited several times in the segment has each visit tested
    on its own.

    ``correct`` judges the recovery against the active nodes this run
    exercises (the images of the source blocks it enters), which is all an
    attack on one run can see; ``complete`` tells whether that is every
    image of the obfuscation.

    Args:
        ob: Obfuscated program with its node map
        inputs: Input registers
        limits: Step limit for each run
        seed: RAND seed

    Returns:
        AttackReport; ``correct`` compares against the source run when known

    Raises:
        MissingMetadataError: If the node map is absent
        AttackError: If the genuine run does not terminate
    """
    if not ob.node_map:
        raise MissingMetadataError("the attack needs the node map of the obfuscated program")
    limits = limits or RunLimits()
    try:
        limits = obfuscated_limits(ob, inputs, limits, seed)
    except VmError as exc:
        logger.debug(f"Keeping the given step limit, source run failed: {exc}")
    try:
        visits, visit_steps, swaps, total = _observe(ob, inputs, limits, seed)
    except VmError as exc:
        raise AttackError(f"obfuscated program does not run to completion: {exc}") from exc

    segments = _segments(swaps, len(visits))
    graph = ob.target.to_networkx()
    mutants = _Mutants(ob)
    trial_limit = RunLimits(max_steps=min(limits.max_steps, 2 * total + 10_000))
    steps_total = total

    # Genuine state at every comparison point and at the end
    reference: dict[int, tuple[object, ...]] = {}
    ref_vm = Vm(ob.program, inputs, seed, limits)
    for h in sorted({h for _, _, h in segments if h is not None}):
        while ref_vm.state.steps < visit_steps[h]:
            ref_vm.step()
        reference[h] = _state_key(ref_vm.snapshot())
    while not ref_vm.halted:
        ref_vm.step()
    final_key = _state_key(ref_vm.snapshot())
    steps_total += ref_vm.state.steps

    main = Vm(ob.program, inputs, seed, limits)
    active = [0]
    tested = 0

    def trial(at: int, node: int, mutated_at: set[int], horizon: int | None) -> bool:
        nonlocal steps_total, tested
        while main.state.steps < visit_steps[at]:
            main.step()
        vm = main.fork()
        vm.limits = trial_limit
        changed, used = _run_trial(
            ob, vm, visits, at, mutated_at, mutants[node], mutants.genuine, horizon,
            reference, final_key,
        )
        steps_total += used
        tested += 1
        return changed

    for lo, hi, horizon in segments:
        window = range(lo + 1, hi + 1)
        found: list[int] = []
        ambiguous: list[tuple[int, int]] = []
        for node in nodes_between(graph, visits[lo], visits[hi]):
            occurrences = [i for i in window if visits[i] == node]
            if not trial(lo + 1, node, set(occurrences), horizon):
                continue
            if len(occurrences) == 1:
                found += occurrences
            else:
                ambiguous += [(i, node) for i in occurrences]
        # Forks only move forward through the run
        found += [i for i, node in sorted(ambiguous) if trial(i, node, {i}, horizon)]
        active += sorted(found)
    steps_total += main.state.steps

    recovered = {visits[i] for i in active}
    report = AttackReport(
        recovered_active=recovered,
        visits=visits,
        active_visits=active,
        vm_steps_total=steps_total,
        mutations_tested=tested,
        metadata_active=set(ob.active_nodes) if ob.morphism.pi else None,
    )
    try:
        trace = source_block_trace(ob.source, ob.source_cfg, inputs, limits, seed)
    except VmError:
        trace = []
    if trace:
        expected = [ob.morphism.pi[b] for b in trace]
        report.expected_active = set(expected)
        report.correct = report.recovered_active == report.expected_active and (
            report.active_sequence == expected
        )
    logger.info(
        f"Attack: {len(recovered)} active nodes from {len(visits)} visits, "
        f"{len(segments)} segments, {tested} mutations, {steps_total} VM steps"
    )
    return report


def _run_trial(
    ob: ObfuscatedProgram,
    trial: Vm,
    visits: list[int],
    start: int,
    mutated_at: set[int],
    mutant: _Variant,
    genuine: _Variant,
    horizon: int | None,
    reference: dict[int, tuple[object, ...]],
    final_key: tuple[object, ...],
) -> tuple[bool, int]:
    """Run from the entry of visit ``start``, mutating the visits in ``mutated_at``.

    Returns:
        (changed, steps executed)
    """
    begin = trial.state.steps
    seen = start
    try:
        while True:
            variant = mutant if seen in mutated_at else genuine
            trial.load_program(variant.program, variant.code)
            trial.step()
            while not trial.halted and ob.node_at_head(trial.pc) is None:
                trial.step()
            if trial.halted:
                break
            seen += 1
            if seen >= len(visits) or visits[seen] != ob.node_at_head(trial.pc):
                return True, trial.state.steps - begin
            if horizon is not None and seen == horizon:
                changed = _state_key(trial.snapshot()) != reference[horizon]
                return changed, trial.state.steps - begin
    except VmError:
        return True, trial.state.steps - begin
    if horizon is not None or seen != len(visits) - 1:
        return True, trial.state.steps - begin
    return _state_key(trial.snapshot()) != final_key, trial.state.steps - begin


def reconstruct_cfg(report: AttackReport, ob: ObfuscatedProgram) -> Cfg:
    """Contract the recovered active visits into a CFG.

    Consecutive active visits give an edge unless the earlier node ends in
    RET (returns are dynamic transfers). The result covers the part of the
    source CFG the attacked run exercised.

    Raises:
        InconsistentRecoveryError: If the active set and the active visits
            disagree or a node ends up with more than two successors
    """
    sequence = report.active_sequence
    if not sequence:
        raise InconsistentRecoveryError("no active visit recovered")
    if set(sequence) != report.recovered_active:
        extra = sorted(report.recovered_active - set(sequence))
        raise InconsistentRecoveryError(f"active nodes never visited actively: {extra}")
    edges: list[tuple[int, int]] = []
    for u, v in zip(sequence, sequence[1:]):
        span = ob.node_map.get(u)
        if span is not None and span.kind == BlockKind.RET.value:
            continue
        if (u, v) not in edges:
            edges.append((u, v))
    nodes = sorted(report.recovered_active)
    graph = Cfg(nodes, edges, sequence[0])
    if graph.max_out_degree() > 2:
        raise InconsistentRecoveryError("recovered graph has a node with more than two successors")
    return graph


def covered_cfg(cfg: Cfg, trace: Sequence[int]) -> Cfg:
    """Part of a source CFG exercised by a block trace."""
    nodes = sorted(set(trace))
    edges: list[tuple[int, int]] = []
    for u, v in zip(trace, trace[1:]):
        if cfg.blocks[u].kind == BlockKind.RET:
            continue
        if (u, v) not in edges:
            edges.append((u, v))
    return Cfg(nodes, edges, trace[0], {n: cfg.blocks[n] for n in nodes})


def fit_power_law(sizes: Sequence[float], costs: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of cost = c * size**k on log-log scale.

    Returns:
        (k, c)
    """
    if len(sizes) != len(costs) or len(sizes) < 2:
        raise ValueError("need at least two (size, cost) pairs of equal length")
    xs = [math.log(s) for s in sizes]
    ys = [math.log(c) for c in costs]
    slope, intercept = statistics.linear_regression(xs, ys)
    return slope, math.exp(intercept)


def scaling_csv(rows: Iterable[tuple[int, int]]) -> str:
    """CSV with header ``v_prime,vm_steps_total``."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["v_prime", "vm_steps_total"])
    for size, steps in rows:
        writer.writerow([size, steps])
    return buffer.getvalue()


def attack_scaling(
    program: Program,
    inputs: Inputs | Callable[[int], Inputs],
    sizes: Sequence[int],
    seed: int = 0,
    extra_hops: int = 0,
    limits: RunLimits | None = None,
    seeds: Sequence[int] | None = None,
) -> list[tuple[int, int]]:
    """Attack cost for obfuscations of one program at several target sizes.

    Args:
        program: Program to obfuscate
        inputs: Inputs of the attacked run, or a function of the target
            size giving them (a workload that grows with the graph)
        sizes: Target sizes |V'|
        seed: Obfuscation and RAND seed when ``seeds`` is not given
        extra_hops: Passive hops past every active node
        limits: Step limit for each run
        seeds: Obfuscation seeds to average the cost over

    Returns:
        (|V'|, mean vm_steps_total) per size
    """
    base = len(extract_cfg(program).nodes)
    rows = []
    for size in sizes:
        run_inputs = inputs(size) if callable(inputs) else inputs
        params = ObfuscationParams(target_factor=size / base, extra_hops=extra_hops)
        costs = []
        n_target = size
        for s in seeds if seeds is not None else [seed]:
            ob = obfuscate(program, params, s)
            costs.append(dynamic_attack(ob, run_inputs, limits, s).vm_steps_total)
            n_target = len(ob.target.nodes)
        mean = round(statistics.fmean(costs))
        rows.append((n_target, mean))
        logger.info(f"|V'|={n_target}: {mean} steps over {len(costs)} obfuscations")
    return rows
