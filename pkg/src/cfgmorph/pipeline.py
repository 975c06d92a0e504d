"""End-to-end obfuscation pipeline."""

from __future__ import annotations

import logging
import math
import random
from collections.abc import Mapping, Sequence

from cfgmorph.cfg import Cfg, extract_cfg
from cfgmorph.embed import find_morphism, route_edges
from cfgmorph.exceptions import BudgetExceededError, EmbeddingError, MorphismError, ValidationError
from cfgmorph.graphgen import generate_target, linearize
from cfgmorph.isa import Program, validate_program
from cfgmorph.models import ObfuscationParams, RunLimits
from cfgmorph.transform import (
    ObfuscatedProgram,
    assign_roles,
    check_supported,
    emit_program,
    hide_node_bits,
    hide_routes,
    permute_routing_bits,
    return_landings,
)
from cfgmorph.vm import RunResult, Vm, run

logger = logging.getLogger(__name__)


def target_size(cfg: Cfg, target_factor: float) -> int:
    """Number of target nodes for a source CFG."""
    return max(2, math.ceil(target_factor * len(cfg.nodes)))


def obfuscate(
    program: Program, params: ObfuscationParams | None = None, seed: int = 0
) -> ObfuscatedProgram:
    """Rewrite a program so that its CFG is a random graph.

    extract_cfg -> generate_target -> linearize -> find_morphism ->
    route_edges -> assign_roles -> permute_routing_bits -> hide_node_bits ->
    hide_routes -> emission. A failed embedding regenerates the target
    graph, up to ``params.max_restarts`` graphs.

    Args:
        program: Valid source program
        params: Pipeline parameters
        seed: Master seed; every random choice derives from it

    Returns:
        The ObfuscatedProgram

    Raises:
        ValidationError: If the program is invalid
        UnsupportedConstructError: If the program cannot be rewritten
        MorphismError: If every target graph failed
    """
    params = params or ObfuscationParams()
    violations = validate_program(program)
    if violations:
        raise ValidationError(violations)
    cfg = extract_cfg(program)
    check_supported(program, cfg)
    landings = return_landings(program, cfg)
    n_target = target_size(cfg, params.target_factor)
    rng = random.Random(seed)
    last_error: Exception | None = None

    for attempt in range(1, params.max_restarts + 1):
        seeds = [rng.getrandbits(64) for _ in range(9)]
        try:
            target = generate_target(n_target, seeds[0], params.edge_budget_factor)
            target = linearize(target, seeds[1])
            morphism = find_morphism(cfg, target, seeds[2], params.search_budget)
            morphism = route_edges(cfg, target, morphism, seeds[3])
            plan = assign_roles(morphism, cfg, target, seeds[4], landings)
            plan = permute_routing_bits(plan, seeds[5])
            plan = hide_node_bits(plan, seeds[6])
            plan = hide_routes(plan, params.extra_hops, seeds[7])
        except (EmbeddingError, BudgetExceededError) as exc:
            last_error = exc
            logger.info(f"Attempt {attempt}/{params.max_restarts} failed ({exc}), regenerating target")
            continue
        result = emit_program(plan, program, seeds[8])
        logger.info(
            f"Obfuscated: {len(cfg.nodes)} -> {len(target.nodes)} nodes, "
            f"{len(program)} -> {len(result.program)} instructions, attempt {attempt}"
        )
        return result

    raise MorphismError(
        f"no embedding found after {params.max_restarts} target graphs: {last_error}"
    )


def source_block_trace(
    program: Program,
    cfg: Cfg,
    inputs: Mapping[int, int] | Sequence[int] | None = None,
    limits: RunLimits | None = None,
    seed: int = 0,
) -> list[int]:
    """Blocks of ``cfg`` entered by a run of ``program``, in order.

    Raises:
        VmError: If the run faults
    """
    starts = {block.start: node for node, block in cfg.blocks.items()}
    vm = Vm(program, inputs, seed, limits)
    visited: list[int] = []
    while not vm.halted:
        node = starts.get(vm.pc)
        if node is not None:
            visited.append(node)
        vm.step()
    return visited


def obfuscated_limits(
    ob: ObfuscatedProgram,
    inputs: Mapping[int, int] | Sequence[int] | None = None,
    limits: RunLimits | None = None,
    seed: int = 0,
) -> RunLimits:
    """Step limit for running an obfuscated program, derived from its source run.

    ``limits`` bounds the source run; the obfuscated run gets the larger of
    that limit and :meth:`ObfuscatedProgram.step_bound` for the blocks the
    source run entered.

    Raises:
        VmError: If the source run faults or exceeds ``limits``
    """
    limits = limits or RunLimits()
    trace = source_block_trace(ob.source, ob.source_cfg, inputs, limits, seed)
    bound = ob.step_bound(len(trace))
    logger.debug(f"Source run entered {len(trace)} blocks, obfuscated step bound {bound}")
    return RunLimits(max_steps=max(limits.max_steps, bound))


def check_equivalence(
    ob: ObfuscatedProgram,
    inputs: Mapping[int, int] | Sequence[int] | None = None,
    limits: RunLimits | None = None,
    seed: int = 0,
) -> tuple[RunResult, RunResult]:
    """Run the source and the obfuscated program on the same inputs.

    Returns:
        (source result, obfuscated result); the program pair is equivalent on
        these inputs when both output logs match

    Raises:
        VmError: If either run faults
    """
    limits = limits or RunLimits()
    source = run(ob.source, inputs, limits, seed)
    obfuscated = run(ob.program, inputs, obfuscated_limits(ob, inputs, limits, seed), seed)
    if source.output != obfuscated.output:
        logger.warning(f"Output mismatch: source {source.output}, obfuscated {obfuscated.output}")
    return source, obfuscated
