"""Rewriting of a program into its obfuscated form.

The rewrite works in two phases. A RoutingPlan fixes every runtime constant
(roles, node keys, bit permutations, mask polarities, extended routes and the
route words derived from them); emission then turns the plan into code, one
node of the target graph at a time.

Runtime protocol (words live in the context slab, see ``layout``):

* HOP counts the decisions left in PATH. A node is active iff HOP equals
  ``extra_hops`` when it is entered.
* A trailer entered with HOP = 0 first swaps PATH <- NEXT and reloads HOP
  from the low six bits of the new route word.
* Each trailer reads direction bit ``5 + HOP`` of PATH, passes it through
  the node's bit permutation, decrements HOP, XORs its key into NEXT and
  hands the next node its (polarity-folded) mask through M.
"""

from __future__ import annotations

import hashlib
import logging
import random
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace

from cfgmorph.cfg import BasicBlock, BlockKind, Cfg, extract_cfg
from cfgmorph.embed import Edge, Morphism, shortest_route
from cfgmorph.exceptions import (
    BudgetExceededError,
    EmissionError,
    MissingMetadataError,
    RoutingError,
    TransformError,
    UnsupportedConstructError,
)
from cfgmorph.graphgen import TargetGraph
from cfgmorph.isa import (
    CONDITIONAL_JUMPS,
    Imm,
    Instruction,
    LabelRef,
    Mem,
    Opcode,
    Operand,
    Program,
    Reg,
    parse_program,
    serialize_program,
    validate_program,
)
from cfgmorph.layout import (
    ALL_ONES,
    CMPD_SLOT,
    EMPTY_RECORD,
    GENERAL_REGISTERS,
    HOP_SLOT,
    JUMP_SLOT,
    M_SLOT,
    MAX_ROUTE_DECISIONS,
    NEXT_SLOT,
    NPM_SLOT,
    OUTBUF_SLOT,
    PATH_SLOT,
    PM_SLOT,
    R_SLOT,
    ROUTE_COUNT_BITS,
    ROUTE_COUNT_MASK,
    SAVED_REGISTERS,
    SCRATCH_REGISTERS,
    SLAB_BASE,
    SLAB_SP_OFFSET,
    SP,
    SPILL_SLOT,
    STACK_SLOT,
    TRASH_ADDRESS,
    WORD_MASK,
    in_trash,
    is_reserved,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeContext:
    """Constants baked into one emitted node.

    Args:
        node: Target node
        node_key: XOR key folded into NEXT by the node's trailer
        route_to_left: Stored route word for the left source successor
        route_to_right: Stored route word for the right source successor
        trash_address: Address passive accesses are redirected to
        polarity: 1 when the mask handed to this node is stored complemented
        flip: 1 when the node's bit permutation is a negation
        spill: Whether the program keeps live values in r6/r7
    """

    node: int
    node_key: int
    route_to_left: int = 0
    route_to_right: int = 0
    trash_address: int = TRASH_ADDRESS
    polarity: int = 0
    flip: int = 0
    spill: bool = False

    def __post_init__(self) -> None:
        if self.node_key == 0:
            raise ValueError("node_key must be non-zero")
        if not in_trash(self.trash_address):
            raise ValueError(f"trash_address {self.trash_address:#x} is outside the trash region")
        if self.polarity not in (0, 1) or self.flip not in (0, 1):
            raise ValueError("polarity and flip must be 0 or 1")


@dataclass
class RoutingPlan:
    """Every runtime constant of an obfuscation, before emission.

    Args:
        source: Source CFG
        target: Linearized target graph
        morphism: Node map and edge paths
        roles: Per source edge, activity of each node of its traversal
        keys: Per target node XOR key
        flips: Per target node bit permutation (1 = negation)
        polarities: Per target node mask polarity
        landings: Source nodes entered without a route word (entry, return landings)
        noise_seed: Seed of the filler bits at single-successor decisions
        extra_hops: Decisions appended past every active node
        extensions: Per image node, the walk of ``extra_hops`` nodes following it
        routes: Per source edge, the decision walk ending at the destination image
        route_words: Per source edge, the stored (onion-masked) route word
        routes_hidden: Whether ``hide_routes`` has been applied
    """

    source: Cfg
    target: TargetGraph
    morphism: Morphism
    roles: dict[Edge, list[bool]]
    keys: dict[int, int]
    flips: dict[int, int]
    polarities: dict[int, int]
    landings: frozenset[int] = frozenset()
    noise_seed: int = 0
    extra_hops: int = 0
    extensions: dict[int, list[int]] = field(default_factory=dict)
    routes: dict[Edge, list[int]] = field(default_factory=dict)
    route_words: dict[Edge, int] = field(default_factory=dict)
    routes_hidden: bool = False

    def source_successor_edges(self, node: int) -> list[Edge]:
        """Outgoing source edges of a source node, left first."""
        return [(node, s) for s in self.source.successors(node)]

    def traversal(self, edge: Edge) -> list[int]:
        """Target nodes entered from the active source endpoint to the destination."""
        start = self.morphism.pi[edge[0]]
        return [start, *self.extensions.get(start, []), *self.routes[edge][1:]]

    def decisions(self, edge: Edge) -> list[tuple[int, int]]:
        """(node, chosen successor) pairs encoded in the route word of an edge."""
        _, b = edge
        walk = [*self.routes[edge], *self.extensions.get(self.morphism.pi[b], [])]
        return list(zip(walk, walk[1:]))

    def mask_constant(self, node: int) -> int:
        """Word XORed into a passed mask for ``node`` (all-ones for polarity 1)."""
        return ALL_ONES if self.polarities[node] else 0

    def onion_keys(self, edge: Edge) -> list[int]:
        """Nodes whose keys are folded into NEXT before the route word is swapped in."""
        a, _ = edge
        start = self.morphism.pi[a]
        ext = self.extensions.get(start, [])
        return [start, *ext[:-1]] if ext else []

    def context(self, node: int) -> NodeContext:
        """Context of a target node; non-image nodes get decoy route words."""
        inverse = self.morphism.inverse()
        edges = self.source_successor_edges(inverse[node]) if node in inverse else []
        if edges:
            left = self.route_words[edges[0]]
            right = self.route_words[edges[-1]]
        else:
            rng = random.Random(f"{self.noise_seed}:decoy:{node}")
            left = rng.getrandbits(64)
            right = rng.getrandbits(64)
        return NodeContext(
            node=node,
            node_key=self.keys[node],
            route_to_left=left,
            route_to_right=right,
            polarity=self.polarities[node],
            flip=self.flips[node],
        )


def decode_route(word: int) -> list[int]:
    """Stored direction bits of a plain route word, in consumption order."""
    count = word & ((1 << ROUTE_COUNT_BITS) - 1)
    return [(word >> (ROUTE_COUNT_BITS - 1 + count - i)) & 1 for i in range(count)]


def encode_route(plan: RoutingPlan, edge: Edge) -> int:
    """Plain route word of an edge under the plan's permutations.

    Raises:
        BudgetExceededError: If the route needs more decisions than a word holds
    """
    steps = plan.decisions(edge)
    count = len(steps)
    if count > MAX_ROUTE_DECISIONS:
        raise BudgetExceededError(
            f"edge {edge} needs {count} decisions, budget is {MAX_ROUTE_DECISIONS}"
        )
    noise = random.Random(f"{plan.noise_seed}:{edge[0]}:{edge[1]}")
    word = count
    for i, (node, chosen) in enumerate(steps):
        successors = plan.target.successors(node)
        if len(successors) == 2:
            direction = 1 if chosen == successors[0] else 0
            bit = direction ^ plan.flips[node]
        else:
            bit = noise.getrandbits(1)
        word |= bit << (ROUTE_COUNT_BITS - 1 + count - i)
    return word


def _encode_all(plan: RoutingPlan) -> dict[Edge, int]:
    words: dict[Edge, int] = {}
    for edge in plan.source.edges:
        stored = encode_route(plan, edge)
        for node in plan.onion_keys(edge):
            stored ^= plan.keys[node]
        words[edge] = stored & WORD_MASK
    return words


def _roles(plan: RoutingPlan) -> dict[Edge, list[bool]]:
    roles: dict[Edge, list[bool]] = {}
    for edge in plan.source.edges:
        walk = plan.traversal(edge)
        roles[edge] = [True] + [False] * (len(walk) - 2) + [True]
    return roles


def assign_roles(
    morphism: Morphism,
    source: Cfg,
    target: TargetGraph,
    seed: int,
    landings: Iterable[int] = (),
) -> RoutingPlan:
    """Build the initial plan: endpoints active, path intermediates passive.

    Args:
        morphism: Morphism with edge paths
        source: Source CFG
        target: Linearized target graph
        seed: Seed for node keys and filler bits
        landings: Source nodes entered without a route word

    Returns:
        A plan with identity permutations, zero polarities and no extension
    """
    rng = random.Random(seed)
    keys = {node: rng.getrandbits(64) or 1 for node in target.nodes}
    routes = {edge: morphism.full_path(edge) for edge in source.edges}
    plan = RoutingPlan(
        source=source,
        target=target,
        morphism=morphism,
        roles={},
        keys=keys,
        flips={node: 0 for node in target.nodes},
        polarities={node: 0 for node in target.nodes},
        landings=frozenset(landings) | {source.entry},
        noise_seed=rng.getrandbits(64),
        routes=routes,
    )
    plan.roles = _roles(plan)
    plan.route_words = _encode_all(plan)
    return plan


def permute_routing_bits(plan: RoutingPlan, seed: int, probability: float = 0.5) -> RoutingPlan:
    """Give every node a random bit permutation (identity or negation).

    Stored route words are re-encoded so that the permuted bits still yield
    the planned directions.

    Args:
        plan: Plan to permute; route hiding must not have been applied yet
        seed: Seed of the permutation draw
        probability: Chance that a node negates its bit

    Raises:
        TransformError: If routes are already hidden (their walks depend on the permutations)
    """
    if plan.routes_hidden:
        raise TransformError("bit permutations must be chosen before hiding routes")
    rng = random.Random(seed)
    flips = {node: int(rng.random() < probability) for node in plan.target.nodes}
    permuted = replace(plan, flips=flips)
    permuted.route_words = _encode_all(permuted)
    logger.debug(f"Permuted routing bits: {sum(flips.values())}/{len(flips)} negated")
    return permuted


def hide_node_bits(plan: RoutingPlan, seed: int) -> RoutingPlan:
    """Draw a random mask polarity per node.

    Images of landing nodes keep polarity 0: a genuine return hands over a
    plain zero mask.
    """
    rng = random.Random(seed)
    fixed = {plan.morphism.pi[n] for n in plan.landings}
    polarities = {
        node: 0 if node in fixed else rng.getrandbits(1) for node in plan.target.nodes
    }
    return replace(plan, polarities=polarities)


def zero_walk(plan: RoutingPlan, node: int, length: int) -> list[int]:
    """Walk taken from ``node`` when every stored bit reads 0."""
    walk: list[int] = []
    current = node
    for _ in range(length):
        successors = plan.target.successors(current)
        if not successors:
            raise RoutingError(f"extension walk stuck at sink {current}")
        if len(successors) == 2:
            current = successors[0] if plan.flips[current] else successors[1]
        else:
            current = successors[0]
        walk.append(current)
    return walk


def _random_walk(target: TargetGraph, node: int, length: int, rng: random.Random) -> list[int]:
    walk: list[int] = []
    current = node
    for _ in range(length):
        successors = target.successors(current)
        if not successors:
            raise RoutingError(f"extension walk stuck at sink {current}")
        current = rng.choice(successors)
        walk.append(current)
    return walk


def hide_routes(plan: RoutingPlan, extra_hops: int, seed: int) -> RoutingPlan:
    """Extend every route past its active node and mask route words as an onion.

    Each image node gets a fixed walk of ``extra_hops`` nodes (the all-zero
    walk for landing nodes). Every route word then encodes the decisions from
    the end of its source node's walk to the destination image, followed by
    the destination's own walk; the stored word is XORed with the keys met
    before the swap.

    Args:
        plan: Plan with permutations and polarities fixed
        extra_hops: Passive hops past every active node
        seed: Seed of the walks and re-routing

    Returns:
        The final plan

    Raises:
        RoutingError: If a walk or a re-routed path does not exist
        BudgetExceededError: If a route exceeds the decision budget
    """
    if extra_hops < 0:
        raise ValueError(f"extra_hops must be >= 0, got {extra_hops}")
    rng = random.Random(seed)
    pi = plan.morphism.pi
    images = plan.morphism.images
    extensions: dict[int, list[int]] = {}
    routes: dict[Edge, list[int]] = {}

    if extra_hops == 0:
        routes = {edge: plan.morphism.full_path(edge) for edge in plan.source.edges}
    else:
        for node, image in sorted(pi.items()):
            if node in plan.landings:
                extensions[image] = zero_walk(plan, image, extra_hops)
            else:
                extensions[image] = _random_walk(plan.target, image, extra_hops, rng)
        for a, b in plan.source.edges:
            start = extensions[pi[a]][-1]
            path = shortest_route(plan.target, start, pi[b], rng, images - {pi[b]})
            if path is None:
                path = shortest_route(plan.target, start, pi[b], rng)
            if path is None:
                raise RoutingError(f"no extended route from {start} to {pi[b]}")
            routes[(a, b)] = [start, *path, pi[b]]

    hidden = replace(
        plan, extra_hops=extra_hops, extensions=extensions, routes=routes, routes_hidden=True
    )
    hidden.roles = _roles(hidden)
    hidden.route_words = _encode_all(hidden)
    logger.debug(
        f"Hid routes: extra_hops={extra_hops}, longest route "
        f"{max((len(hidden.decisions(e)) for e in routes), default=0)} decisions"
    )
    return hidden


# Code generation

R0, R1, R2, R3, R4, R5, R6, R7 = (Reg(i) for i in range(8))
SP_REG = Reg(SP)
HALT_LABEL = "__halt"
# Opcodes passivate_block expands into code using r6/r7 as scratch
REWRITTEN_OPCODES = frozenset(
    {Opcode.LOAD, Opcode.STORE, Opcode.PUSH, Opcode.POP, Opcode.CMP, Opcode.DIV, Opcode.OUT}
)
INIT_LABEL = "__start"


def _ins(opcode: Opcode, *operands: Operand) -> Instruction:
    return Instruction(opcode, tuple(operands))


def _abs(address: int) -> Mem:
    return Mem(None, address)


def _at_r6(offset: int = 0) -> Mem:
    return Mem(6, offset)


class CodeBuffer:
    """Instruction list under construction; a pending label marks the next instruction."""

    def __init__(self) -> None:
        self.instructions: list[Instruction] = []
        self._pending: str | None = None

    def label(self, name: str) -> None:
        if self._pending is not None:
            raise TransformError(f"labels '{self._pending}' and '{name}' would share an instruction")
        self._pending = name

    def emit(self, instr: Instruction) -> None:
        self.instructions.append(instr.with_label(self._pending))
        self._pending = None

    def extend(self, instrs: Iterable[Instruction]) -> None:
        for instr in instrs:
            self.emit(instr)

    def __len__(self) -> int:
        return len(self.instructions)


def _mask_r6(alternative: int) -> list[Instruction]:
    """r6 <- (r6 & NPM) | (alternative & PM)."""
    return [
        _ins(Opcode.LOAD, R7, _abs(NPM_SLOT)),
        _ins(Opcode.AND, R6, R7),
        _ins(Opcode.LOAD, R7, _abs(PM_SLOT)),
        _ins(Opcode.AND, R7, Imm(alternative)),
        _ins(Opcode.OR, R6, R7),
    ]


def _address_to_r6(mem: Mem) -> list[Instruction]:
    if mem.base is None:
        return [_ins(Opcode.MOV, R6, Imm(mem.offset))]
    seq = [_ins(Opcode.MOV, R6, Reg(mem.base))]
    if mem.offset:
        seq.append(_ins(Opcode.ADD, R6, Imm(mem.offset)))
    return seq


def _store_masked(slot: int, reg: Reg, trash: int) -> list[Instruction]:
    return [_ins(Opcode.MOV, R6, Imm(slot)), *_mask_r6(trash), _ins(Opcode.STORE, _at_r6(), reg)]


def _redirect_sp(trash: int) -> list[Instruction]:
    """Keep the genuine sp in r6 and point sp at the trash when passive."""
    return [
        _ins(Opcode.MOV, R6, SP_REG),
        _ins(Opcode.LOAD, R7, _abs(NPM_SLOT)),
        _ins(Opcode.AND, SP_REG, R7),
        _ins(Opcode.LOAD, R7, _abs(PM_SLOT)),
        _ins(Opcode.AND, R7, Imm(trash)),
        _ins(Opcode.OR, SP_REG, R7),
    ]


def _compensate_sp(opcode: Opcode) -> list[Instruction]:
    """sp <- sp +/- (8 & PM)."""
    return [
        _ins(Opcode.LOAD, R7, _abs(PM_SLOT)),
        _ins(Opcode.AND, R7, Imm(STACK_SLOT)),
        _ins(opcode, SP_REG, R7),
    ]


def _restore_sp() -> list[Instruction]:
    """sp <- (sp & NPM) | (r6 & PM)."""
    return [
        _ins(Opcode.LOAD, R7, _abs(NPM_SLOT)),
        _ins(Opcode.AND, SP_REG, R7),
        _ins(Opcode.LOAD, R7, _abs(PM_SLOT)),
        _ins(Opcode.AND, R7, R6),
        _ins(Opcode.OR, SP_REG, R7),
    ]


def passive_push(operand: Operand, trash: int = TRASH_ADDRESS) -> list[Instruction]:
    """PUSH whose stack effect lands in the trash and is undone when passive."""
    return [
        *_redirect_sp(trash),
        _ins(Opcode.PUSH, operand),
        *_compensate_sp(Opcode.ADD),
        *_restore_sp(),
    ]


def passive_pop(operand: Operand, trash: int = TRASH_ADDRESS) -> list[Instruction]:
    """POP reading from the trash when passive, leaving sp untouched."""
    return [
        *_redirect_sp(trash),
        *_compensate_sp(Opcode.SUB),
        _ins(Opcode.POP, operand),
        *_restore_sp(),
    ]


def passivate_external_call(instr: Instruction, ctx: NodeContext) -> list[Instruction]:
    """Rewrite an OUT so that a passive traversal emits the empty record.

    Raises:
        UnsupportedConstructError: If the instruction is not the output primitive
    """
    if instr.opcode != Opcode.OUT:
        raise UnsupportedConstructError(f"unsupported external call '{instr}'")
    src = instr.operands[0]
    if isinstance(src, Mem):
        return [*_address_to_r6(src), *_mask_r6(EMPTY_RECORD), _ins(Opcode.OUT, _at_r6())]
    assert isinstance(src, Reg)
    return [
        _ins(Opcode.STORE, _abs(OUTBUF_SLOT + 1), src),
        _ins(Opcode.MOV, R6, Imm(OUTBUF_SLOT)),
        *_mask_r6(EMPTY_RECORD),
        _ins(Opcode.OUT, _at_r6()),
    ]


def _relabel(instr: Instruction, relabel: dict[str, str]) -> Instruction:
    operands = tuple(
        LabelRef(relabel[op.name]) if isinstance(op, LabelRef) else op for op in instr.operands
    )
    return Instruction(instr.opcode, operands)


def _rename(instr: Instruction, mapping: dict[int, int]) -> Instruction:
    operands: list[Operand] = []
    for op in instr.operands:
        if isinstance(op, Reg):
            op = Reg(mapping.get(op.index, op.index))
        elif isinstance(op, Mem) and op.base is not None:
            op = Mem(mapping.get(op.base, op.base), op.offset)
        operands.append(op)
    return Instruction(instr.opcode, tuple(operands))


def spill_around(
    instr: Instruction, lower: Callable[[Instruction], list[Instruction]]
) -> list[Instruction]:
    """Lower ``instr`` with the program's r6/r7 parked in two registers it does not touch.

    The parked registers are saved to the spill slots first and reloaded
    afterwards; whatever the lowered code leaves in them is moved back into
    r6/r7, so writes to r6/r7 survive the scratch use of the gadget.
    """
    free = [r for r in SAVED_REGISTERS if r not in instr.registers()]
    if len(free) < 2:
        raise TransformError(f"no free register to park r6/r7 around '{instr}'")
    x, y = free[:2]
    renamed = _rename(instr, {6: x, 7: y})
    return [
        _ins(Opcode.STORE, _abs(SPILL_SLOT), Reg(x)),
        _ins(Opcode.STORE, _abs(SPILL_SLOT + 1), Reg(y)),
        _ins(Opcode.MOV, Reg(x), R6),
        _ins(Opcode.MOV, Reg(y), R7),
        *lower(renamed),
        _ins(Opcode.MOV, R6, Reg(x)),
        _ins(Opcode.MOV, R7, Reg(y)),
        _ins(Opcode.LOAD, Reg(x), _abs(SPILL_SLOT)),
        _ins(Opcode.LOAD, Reg(y), _abs(SPILL_SLOT + 1)),
    ]


def _passivate(instr: Instruction, ctx: NodeContext) -> list[Instruction]:
    trash = ctx.trash_address
    op = instr.opcode
    if op == Opcode.LOAD:
        dst, src = instr.operands
        assert isinstance(src, Mem)
        return [*_address_to_r6(src), *_mask_r6(trash), _ins(Opcode.LOAD, dst, _at_r6())]
    if op == Opcode.STORE:
        dst, src = instr.operands
        assert isinstance(dst, Mem)
        return [*_address_to_r6(dst), *_mask_r6(trash), _ins(Opcode.STORE, _at_r6(), src)]
    if op == Opcode.PUSH:
        return passive_push(instr.operands[0], trash)
    if op == Opcode.POP:
        return passive_pop(instr.operands[0], trash)
    if op == Opcode.CMP:
        left, right = instr.operands
        return [
            _ins(Opcode.MOV, R6, left),
            _ins(Opcode.XOR, R6, right),
            _ins(Opcode.STORE, _abs(CMPD_SLOT), R6),
        ]
    if op == Opcode.DIV:
        dst, src = instr.operands
        # A passive divisor is forced to all-ones
        return [
            _ins(Opcode.MOV, R6, src),
            _ins(Opcode.LOAD, R7, _abs(PM_SLOT)),
            _ins(Opcode.OR, R6, R7),
            _ins(Opcode.DIV, dst, R6),
        ]
    if op == Opcode.OUT:
        return passivate_external_call(instr, ctx)
    return [instr]


def passivate_block(
    instructions: Sequence[Instruction],
    ctx: NodeContext,
    relabel: dict[str, str] | None = None,
) -> list[Instruction]:
    """Rewrite a jump-free block body so a passive mask makes it side-effect free.

    Memory addresses A become (A & NPM) | (trash & PM), stack operations run
    on a trash-redirected sp, CMP leaves its difference in the CMPD slot and
    OUT goes through :func:`passivate_external_call`. Register writes are
    left alone; the next node restores registers from the context slab.
    With ``ctx.spill`` every rewritten instruction goes through
    :func:`spill_around` so the program's r6/r7 outlive the scratch use.

    Args:
        instructions: Block body without its terminator
        ctx: Context of the emitting node
        relabel: Source label -> emitted label, for label-valued operands

    Returns:
        The rewritten body

    Raises:
        UnsupportedConstructError: On control transfers, or on r6/r7 when
            the context does not spill them
    """
    relabel = relabel or {}
    out: list[Instruction] = []
    for original in instructions:
        if not ctx.spill and original.registers() & set(SCRATCH_REGISTERS):
            raise UnsupportedConstructError(f"'{original}' uses r6 or r7 without spilling")
        instr = _relabel(original, relabel)
        if instr.opcode in (Opcode.JMP, Opcode.JZ, Opcode.JNZ, Opcode.CALL, Opcode.RET, Opcode.HALT):
            raise UnsupportedConstructError(f"control transfer '{instr}' inside a block body")
        if ctx.spill and instr.opcode in REWRITTEN_OPCODES:
            out += spill_around(instr, lambda i: _passivate(i, ctx))
        else:
            out += _passivate(instr, ctx)
    return out


def prologue(ctx: NodeContext) -> list[Instruction]:
    """Unfold the handed-over mask into PM/NPM and restore registers from the slab."""
    first, second = (NPM_SLOT, PM_SLOT) if ctx.polarity else (PM_SLOT, NPM_SLOT)
    seq = [
        _ins(Opcode.LOAD, R6, _abs(M_SLOT)),
        _ins(Opcode.STORE, _abs(first), R6),
        _ins(Opcode.NOT, R6),
        _ins(Opcode.STORE, _abs(second), R6),
    ]
    restored = SAVED_REGISTERS + SCRATCH_REGISTERS if ctx.spill else SAVED_REGISTERS
    seq += [_ins(Opcode.LOAD, Reg(r), _abs(SLAB_BASE + r)) for r in restored]
    seq.append(_ins(Opcode.LOAD, SP_REG, _abs(SLAB_BASE + SLAB_SP_OFFSET)))
    return seq


def epilogue(ctx: NodeContext, sp_adjust: int = 0) -> list[Instruction]:
    """Save registers and sp (plus ``sp_adjust``) to the slab, or to the trash when passive."""
    spilled = list(enumerate(SCRATCH_REGISTERS)) if ctx.spill else []
    seq = [_ins(Opcode.STORE, _abs(SPILL_SLOT + i), Reg(r)) for i, r in spilled]
    seq += [_ins(Opcode.MOV, R6, Imm(SLAB_BASE)), *_mask_r6(ctx.trash_address)]
    seq += [_ins(Opcode.STORE, _at_r6(r), Reg(r)) for r in SAVED_REGISTERS]
    seq.append(_ins(Opcode.MOV, R7, SP_REG))
    if sp_adjust:
        seq.append(_ins(Opcode.ADD, R7, Imm(sp_adjust)))
    seq.append(_ins(Opcode.STORE, _at_r6(SLAB_SP_OFFSET), R7))
    for i, r in spilled:
        seq += [_ins(Opcode.LOAD, R0, _abs(SPILL_SLOT + i)), _ins(Opcode.STORE, _at_r6(r), R0)]
    return seq


def lower_route(word: int, ctx: NodeContext) -> list[Instruction]:
    """Hand a single route word to the routing slots."""
    return [
        _ins(Opcode.MOV, R0, Imm(word)),
        *_store_masked(R_SLOT, R0, ctx.trash_address),
        *_store_masked(NEXT_SLOT, R0, ctx.trash_address),
    ]


def lower_jump(block: Sequence[Instruction], ctx: NodeContext) -> list[Instruction]:
    """Branch-free selection of the route word of a conditional block.

    The comparison difference d left by CMP gives nz = ((0 - d) | d) >> 63;
    the selector is all-ones when the jump is taken.

    Args:
        block: The block's instructions, ending with JZ or JNZ
        ctx: Context carrying both route words

    Raises:
        UnsupportedConstructError: If the block has no CMP before its jump
    """
    terminator = block[-1]
    if terminator.opcode not in CONDITIONAL_JUMPS:
        raise TransformError(f"block does not end with a conditional jump: '{terminator}'")
    if not any(i.opcode == Opcode.CMP for i in block[:-1]):
        raise UnsupportedConstructError(f"'{terminator}' has no preceding CMP in its block")
    seq = [
        _ins(Opcode.MOV, R0, Imm(ctx.route_to_right)),
        _ins(Opcode.MOV, R1, Imm(ctx.route_to_left)),
        _ins(Opcode.LOAD, R2, _abs(CMPD_SLOT)),
        _ins(Opcode.MOV, R3, Imm(0)),
        _ins(Opcode.SUB, R3, R2),
        _ins(Opcode.OR, R3, R2),
        _ins(Opcode.SHR, R3, Imm(63)),
    ]
    if terminator.opcode == Opcode.JZ:
        seq.append(_ins(Opcode.SUB, R3, Imm(1)))
    else:
        seq += [_ins(Opcode.MOV, R4, Imm(0)), _ins(Opcode.SUB, R4, R3), _ins(Opcode.MOV, R3, R4)]
    seq += [
        _ins(Opcode.AND, R1, R3),
        _ins(Opcode.NOT, R3),
        _ins(Opcode.AND, R0, R3),
        _ins(Opcode.OR, R0, R1),
        *_store_masked(R_SLOT, R0, ctx.trash_address),
        *_store_masked(NEXT_SLOT, R0, ctx.trash_address),
    ]
    return seq


def permutation_gadget(flip: int) -> list[Instruction]:
    """r3 <- r5 or 1 - r5 through t = (4 + flip)a + r5*a, r3 = (t / a) mod 2, a random odd."""
    return [
        _ins(Opcode.RAND, R4),
        _ins(Opcode.AND, R4, Imm(0xFFFF)),
        _ins(Opcode.OR, R4, Imm(1)),
        _ins(Opcode.MOV, R3, R4),
        _ins(Opcode.MUL, R3, Imm(4 + flip)),
        _ins(Opcode.MOV, R6, R5),
        _ins(Opcode.MUL, R6, R4),
        _ins(Opcode.ADD, R3, R6),
        _ins(Opcode.DIV, R3, R4),
        _ins(Opcode.AND, R3, Imm(1)),
    ]


def _nonzero_to_mask(src: Reg, tmp: Reg, dst: Reg) -> list[Instruction]:
    """dst <- all-ones if src != 0 else 0."""
    return [
        _ins(Opcode.MOV, tmp, Imm(0)),
        _ins(Opcode.SUB, tmp, src),
        _ins(Opcode.OR, tmp, src),
        _ins(Opcode.SHR, tmp, Imm(63)),
        _ins(Opcode.MOV, dst, Imm(0)),
        _ins(Opcode.SUB, dst, tmp),
    ]


def _dispatch_core(ctx: NodeContext, masks: Sequence[int], extra_hops: int) -> list[Instruction]:
    """Swap, decision and mask hand-over; leaves the direction in r3."""
    seq = [
        _ins(Opcode.LOAD, R0, _abs(HOP_SLOT)),
        *_nonzero_to_mask(R0, R1, R4),
        _ins(Opcode.MOV, R1, R4),
        _ins(Opcode.NOT, R1),
        _ins(Opcode.LOAD, R2, _abs(PATH_SLOT)),
        _ins(Opcode.AND, R2, R4),
        _ins(Opcode.LOAD, R3, _abs(NEXT_SLOT)),
        _ins(Opcode.AND, R3, R1),
        _ins(Opcode.OR, R2, R3),
        _ins(Opcode.STORE, _abs(PATH_SLOT), R2),
        _ins(Opcode.MOV, R3, R2),
        _ins(Opcode.AND, R3, Imm(ROUTE_COUNT_MASK)),
        _ins(Opcode.AND, R3, R1),
        _ins(Opcode.AND, R0, R4),
        _ins(Opcode.OR, R0, R3),
        _ins(Opcode.MOV, R3, R0),
        _ins(Opcode.ADD, R3, Imm(ROUTE_COUNT_BITS - 1)),
        _ins(Opcode.MOV, R5, R2),
        _ins(Opcode.SHR, R5, R3),
        _ins(Opcode.AND, R5, Imm(1)),
        *permutation_gadget(ctx.flip),
        _ins(Opcode.SUB, R0, Imm(1)),
        _ins(Opcode.STORE, _abs(HOP_SLOT), R0),
        _ins(Opcode.LOAD, R1, _abs(NEXT_SLOT)),
        _ins(Opcode.XOR, R1, Imm(ctx.node_key)),
        _ins(Opcode.STORE, _abs(NEXT_SLOT), R1),
        _ins(Opcode.MOV, R4, R0),
        _ins(Opcode.XOR, R4, Imm(extra_hops)),
        *_nonzero_to_mask(R4, R2, R1),
    ]
    if len(masks) == 2:
        seq += [
            _ins(Opcode.MOV, R2, R1),
            _ins(Opcode.XOR, R2, Imm(masks[0])),
            _ins(Opcode.XOR, R1, Imm(masks[1])),
            _ins(Opcode.MOV, R4, Imm(0)),
            _ins(Opcode.SUB, R4, R3),
            _ins(Opcode.AND, R2, R4),
            _ins(Opcode.NOT, R4),
            _ins(Opcode.AND, R1, R4),
            _ins(Opcode.OR, R1, R2),
        ]
    else:
        seq.append(_ins(Opcode.XOR, R1, Imm(masks[0])))
    seq.append(_ins(Opcode.STORE, _abs(M_SLOT), R1))
    return seq


def emit_dispatch(
    ctx: NodeContext,
    successors: Sequence[str],
    masks: Sequence[int],
    extra_hops: int,
    fallthrough: str | None = None,
) -> list[Instruction]:
    """Trailer of a node: consume one routing decision and jump to the chosen successor.

    Args:
        ctx: Context of the node
        successors: Head labels of the target successors, left first
        masks: Polarity constant of each successor
        extra_hops: Decisions appended past active nodes
        fallthrough: Head label of the node emitted next, if any

    Raises:
        EmissionError: If the node has no successor
        TransformError: If the node has more than two successors
    """
    if not successors:
        raise EmissionError(f"node {ctx.node} has no successor to dispatch to")
    if len(successors) > 2:
        raise TransformError(f"node {ctx.node} has {len(successors)} successors")
    seq = _dispatch_core(ctx, masks, extra_hops)
    if len(successors) == 2:
        seq += [_ins(Opcode.CMP, R3, Imm(0)), _ins(Opcode.JNZ, LabelRef(successors[0]))]
    if successors[-1] != fallthrough:
        seq.append(_ins(Opcode.JMP, LabelRef(successors[-1])))
    return seq


def lower_ret(
    ctx: NodeContext, successors: Sequence[str], masks: Sequence[int], extra_hops: int
) -> list[Instruction]:
    """Trailer of a RET node: genuine return when active, routed return when passive.

    The stack-top word p becomes (p & NPM) | (routed & PM), where routed is
    the head of the successor chosen by the routing decision. A passive node
    works on the jump slot instead of the real stack.

    Raises:
        EmissionError: If the node has no successor
    """
    if not successors:
        raise EmissionError(f"RET node {ctx.node} has no successor to route a passive return to")
    seq = _dispatch_core(ctx, masks, extra_hops)
    if len(successors) == 2:
        seq += [
            _ins(Opcode.MOV, R4, Imm(0)),
            _ins(Opcode.SUB, R4, R3),
            _ins(Opcode.MOV, R5, LabelRef(successors[0])),
            _ins(Opcode.AND, R5, R4),
            _ins(Opcode.NOT, R4),
            _ins(Opcode.MOV, R6, LabelRef(successors[1])),
            _ins(Opcode.AND, R6, R4),
            _ins(Opcode.OR, R5, R6),
        ]
    else:
        seq.append(_ins(Opcode.MOV, R5, LabelRef(successors[0])))
    seq += [
        _ins(Opcode.LOAD, R1, _abs(PM_SLOT)),
        _ins(Opcode.LOAD, R2, _abs(NPM_SLOT)),
        # An active return lands with a fresh zero route and an active mask
        _ins(Opcode.LOAD, R0, _abs(HOP_SLOT)),
        _ins(Opcode.AND, R0, R1),
        _ins(Opcode.MOV, R6, Imm(extra_hops)),
        _ins(Opcode.AND, R6, R2),
        _ins(Opcode.OR, R0, R6),
        _ins(Opcode.STORE, _abs(HOP_SLOT), R0),
        _ins(Opcode.LOAD, R6, _abs(PATH_SLOT)),
        _ins(Opcode.AND, R6, R1),
        _ins(Opcode.STORE, _abs(PATH_SLOT), R6),
        _ins(Opcode.LOAD, R6, _abs(M_SLOT)),
        _ins(Opcode.AND, R6, R1),
        _ins(Opcode.STORE, _abs(M_SLOT), R6),
        _ins(Opcode.MOV, R4, SP_REG),
        _ins(Opcode.AND, R4, R2),
        _ins(Opcode.MOV, R6, Imm(JUMP_SLOT)),
        _ins(Opcode.AND, R6, R1),
        _ins(Opcode.OR, R4, R6),
        _ins(Opcode.LOAD, R6, Mem(4, 0)),
        _ins(Opcode.AND, R6, R2),
        _ins(Opcode.AND, R5, R1),
        _ins(Opcode.OR, R6, R5),
        _ins(Opcode.STORE, Mem(4, 0), R6),
        _ins(Opcode.MOV, SP_REG, R4),
        _ins(Opcode.RET),
    ]
    return seq


def halt_jump(trailer_label: str) -> list[Instruction]:
    """Computed jump to the shared HALT when active, to the trailer when passive."""
    return [
        _ins(Opcode.LOAD, R1, _abs(PM_SLOT)),
        _ins(Opcode.LOAD, R2, _abs(NPM_SLOT)),
        _ins(Opcode.MOV, R4, LabelRef(HALT_LABEL)),
        _ins(Opcode.AND, R4, R2),
        _ins(Opcode.MOV, R6, LabelRef(trailer_label)),
        _ins(Opcode.AND, R6, R1),
        _ins(Opcode.OR, R4, R6),
        _ins(Opcode.STORE, _abs(JUMP_SLOT), R4),
        _ins(Opcode.MOV, SP_REG, Imm(JUMP_SLOT)),
        _ins(Opcode.RET),
    ]


def init_stub(plan: RoutingPlan) -> list[Instruction]:
    """Save the inputs to the slab and arm the routing words for the entry node."""
    seq = [_ins(Opcode.STORE, _abs(SLAB_BASE + r), Reg(r)) for r in range(GENERAL_REGISTERS)]
    seq += [
        _ins(Opcode.STORE, _abs(SLAB_BASE + SLAB_SP_OFFSET), SP_REG),
        _ins(Opcode.MOV, R0, Imm(plan.extra_hops)),
        _ins(Opcode.STORE, _abs(HOP_SLOT), R0),
        _ins(Opcode.MOV, R0, Imm(0)),
        _ins(Opcode.STORE, _abs(PATH_SLOT), R0),
        _ins(Opcode.STORE, _abs(NEXT_SLOT), R0),
        _ins(Opcode.MOV, R0, Imm(plan.mask_constant(plan.target.entry))),
        _ins(Opcode.STORE, _abs(M_SLOT), R0),
        _ins(Opcode.MOV, R0, Imm(1)),
        _ins(Opcode.STORE, _abs(OUTBUF_SLOT), R0),
    ]
    return seq


# Whole-program emission


@dataclass(frozen=True)
class NodeSpan:
    """Instruction layout of one emitted node.

    Args:
        head: First instruction (prologue)
        body_start: First instruction of the passivated body
        body_end: First instruction after the body (epilogue)
        trailer_start: First instruction of the dispatch trailer
        end: One past the node's last instruction
        kind: Kind of the embedded source block, or "filler"
        source_block: Embedded source block, None for fillers
    """

    head: int
    body_start: int
    body_end: int
    trailer_start: int
    end: int
    kind: str
    source_block: int | None = None

    @property
    def span(self) -> range:
        return range(self.head, self.end)

    def to_dict(self) -> dict[str, object]:
        return {
            "head": self.head,
            "body_start": self.body_start,
            "body_end": self.body_end,
            "trailer_start": self.trailer_start,
            "end": self.end,
            "kind": self.kind,
            "source_block": self.source_block,
        }


@dataclass
class ObfuscatedProgram:
    """An emitted program plus the metadata the test and analysis tools use.

    The program runs on its own; everything else is sidecar information.

    Args:
        program: The obfuscated program
        node_map: Target node -> instruction layout
        target: Linearized target graph
        morphism: Node map and edge paths
        source: The original program
        source_cfg: CFG of the original program
        extra_hops: Decisions appended past active nodes
        roles: Per source edge, activity along its traversal
        plan: Full routing plan (absent when loaded from a sidecar)
    """

    program: Program
    node_map: dict[int, NodeSpan]
    target: TargetGraph
    morphism: Morphism
    source: Program
    source_cfg: Cfg
    extra_hops: int
    roles: dict[Edge, list[bool]] = field(default_factory=dict)
    plan: RoutingPlan | None = None

    def __post_init__(self) -> None:
        self._heads = {span.head: node for node, span in self.node_map.items()}

    def node_at_head(self, pc: int) -> int | None:
        """Node whose first instruction is ``pc``."""
        return self._heads.get(pc)

    @property
    def active_nodes(self) -> set[int]:
        """Target nodes that are active on some traversal."""
        return self.morphism.images

    def step_bound(self, source_blocks: int) -> int:
        """Upper bound on the steps of a run whose source run enters ``source_blocks`` blocks.

        Between two active nodes the trailers consume what is left of one
        route word and the whole next one, and no node loops internally.
        """
        longest = max((span.end - span.head for span in self.node_map.values()), default=0)
        per_block = (2 * MAX_ROUTE_DECISIONS + 2) * longest
        return len(self.program) + max(source_blocks, 1) * per_block

    def to_metadata(self) -> dict[str, object]:
        """Sidecar document: ground truth for the games, the attack and tests.

        Node keys are not stored, only a digest of them.
        """
        keys = self.plan.keys if self.plan is not None else {}
        digest = hashlib.sha256(
            ",".join(f"{n}:{k:x}" for n, k in sorted(keys.items())).encode()
        ).hexdigest()
        return {
            "source": serialize_program(self.source),
            "pi": {str(s): t for s, t in sorted(self.morphism.pi.items())},
            "paths": [[a, b, p] for (a, b), p in self.morphism.edge_paths.items()],
            "roles": [[a, b, r] for (a, b), r in self.roles.items()],
            "target": {
                "nodes": list(self.target.nodes),
                "edges": [[a, b] for a, b in self.target.edges],
                "entry": self.target.entry,
                "layout": list(self.target.layout),
            },
            "nodes": {str(n): span.to_dict() for n, span in sorted(self.node_map.items())},
            "extra_hops": self.extra_hops,
            "keys_sha256": digest,
        }

    @classmethod
    def from_metadata(cls, program: Program, data: dict[str, object]) -> ObfuscatedProgram:
        """Rebuild an ObfuscatedProgram from its code and sidecar document.

        Raises:
            MissingMetadataError: If the document lacks a field or does not
                match the program
        """
        try:
            source = parse_program(data["source"])  # type: ignore[arg-type]
            target_doc: dict = data["target"]  # type: ignore[assignment]
            target = TargetGraph(
                [int(n) for n in target_doc["nodes"]],
                [(int(a), int(b)) for a, b in target_doc["edges"]],
                int(target_doc["entry"]),
                layout=[int(n) for n in target_doc["layout"]],
            )
            morphism = Morphism(
                {int(s): int(t) for s, t in data["pi"].items()},  # type: ignore[union-attr]
                {(int(a), int(b)): [int(x) for x in p] for a, b, p in data["paths"]},  # type: ignore[union-attr]
            )
            roles = {(int(a), int(b)): [bool(x) for x in r] for a, b, r in data["roles"]}  # type: ignore[union-attr]
            node_map = {
                int(n): NodeSpan(**span)
                for n, span in data["nodes"].items()  # type: ignore[union-attr]
            }
            extra_hops = int(data["extra_hops"])  # type: ignore[arg-type]
        except (KeyError, TypeError, ValueError) as exc:
            raise MissingMetadataError(f"incomplete sidecar metadata: {exc}") from exc
        if any(span.end > len(program) for span in node_map.values()):
            raise MissingMetadataError("sidecar node map does not fit the program")
        return cls(
            program=program,
            node_map=node_map,
            target=target,
            morphism=morphism,
            source=source,
            source_cfg=extract_cfg(source),
            extra_hops=extra_hops,
            roles=roles,
        )


def return_landings(program: Program, cfg: Cfg) -> set[int]:
    """Source blocks entered by a return: call continuations and label-valued operands."""
    by_start = {block.start: node for node, block in cfg.blocks.items()}
    landings: set[int] = set()
    for node, block in cfg.blocks.items():
        if program[block.end - 1].opcode == Opcode.CALL and block.end in by_start:
            landings.add(by_start[block.end])
    for instr in program:
        if instr.opcode in (Opcode.MOV, Opcode.PUSH):
            for op in instr.operands:
                if isinstance(op, LabelRef):
                    landings.add(by_start[program.address_of(op.name)])
    return landings


def uses_scratch_registers(program: Program) -> bool:
    """Whether any instruction reads or writes r6 or r7."""
    return any(instr.registers() & set(SCRATCH_REGISTERS) for instr in program)


def check_supported(program: Program, cfg: Cfg) -> None:
    """Reject programs the rewriter cannot keep equivalent.

    Raises:
        UnsupportedConstructError: On absolute accesses to reserved memory,
            blocks running off the end of the program, or calls without a
            continuation
    """
    for index, instr in enumerate(program):
        for op in instr.operands:
            if isinstance(op, Mem) and op.base is None and is_reserved(op.offset):
                raise UnsupportedConstructError(
                    f"instruction {index} '{instr}' addresses reserved memory"
                )
    for node, block in cfg.blocks.items():
        last = program[block.end - 1]
        if block.kind == BlockKind.STRAIGHT and cfg.out_degree(node) == 0:
            raise UnsupportedConstructError(f"block {node} runs off the end of the program")
        if last.opcode == Opcode.CALL and block.end >= len(program):
            raise UnsupportedConstructError(f"call at {block.end - 1} has no continuation")
        if block.kind == BlockKind.CONDITIONAL and not any(
            program[i].opcode == Opcode.CMP for i in range(block.start, block.end - 1)
        ):
            raise UnsupportedConstructError(f"'{last}' in block {node} has no preceding CMP")


def _body(program: Program, block: BasicBlock) -> list[Instruction]:
    return list(program.instructions[block.start : block.body_end])


def _emit_node(
    buf: CodeBuffer,
    plan: RoutingPlan,
    program: Program,
    node: int,
    relabel: dict[str, str],
    filler: BasicBlock,
    spill: bool = False,
) -> NodeSpan:
    ctx = replace(plan.context(node), spill=spill)
    inverse = plan.morphism.inverse()
    source_node = inverse.get(node)
    block = plan.source.blocks[source_node] if source_node is not None else filler
    kind = block.kind if source_node is not None else None
    trailer_label = f"n{node}_trailer"

    buf.label(f"n{node}")
    head = len(buf)
    buf.extend(prologue(ctx))
    body_start = len(buf)
    buf.label(f"n{node}_body")
    buf.extend(passivate_block(_body(program, block), ctx, relabel))
    if kind == BlockKind.STATIC and program[block.end - 1].opcode == Opcode.CALL:
        cont = next(n for n, b in plan.source.blocks.items() if b.start == block.end)
        push = _ins(Opcode.PUSH, LabelRef(f"n{plan.morphism.pi[cont]}"))
        if spill:
            buf.extend(spill_around(push, lambda i: passive_push(i.operands[0], ctx.trash_address)))
        else:
            buf.extend(passive_push(push.operands[0], ctx.trash_address))
    body_end = len(buf)
    buf.extend(epilogue(ctx, STACK_SLOT if kind == BlockKind.RET else 0))

    if kind == BlockKind.CONDITIONAL:
        buf.extend(lower_jump(program.instructions[block.start : block.end], ctx))
    elif kind == BlockKind.HALT:
        buf.extend(halt_jump(trailer_label))
    elif kind != BlockKind.RET:
        buf.extend(lower_route(ctx.route_to_left, ctx))

    successors = plan.target.successors(node)
    labels = [f"n{s}" for s in successors]
    masks = [plan.mask_constant(s) for s in successors]
    following = plan.target.next_in_layout(node)
    buf.label(trailer_label)
    trailer_start = len(buf)
    if kind == BlockKind.RET:
        buf.extend(lower_ret(ctx, labels, masks, plan.extra_hops))
    else:
        fallthrough = f"n{following}" if following is not None else None
        buf.extend(emit_dispatch(ctx, labels, masks, plan.extra_hops, fallthrough))
    return NodeSpan(
        head=head,
        body_start=body_start,
        body_end=body_end,
        trailer_start=trailer_start,
        end=len(buf),
        kind=kind.value if kind is not None else "filler",
        source_block=source_node,
    )


def emit_program(plan: RoutingPlan, program: Program, seed: int) -> ObfuscatedProgram:
    """Emit the obfuscated program for a finished plan.

    Layout: an init stub, then every target node in layout order (prologue,
    passivated body, epilogue, route hand-over, trailer), then the shared
    HALT. Non-image nodes carry the body of a random source block.

    Args:
        plan: Final routing plan
        program: The source program
        seed: Seed for filler choice

    Returns:
        The ObfuscatedProgram

    Raises:
        UnsupportedConstructError: If the source program cannot be rewritten
        TransformError: If the emitted program fails validation
    """
    check_supported(program, plan.source)
    spill = uses_scratch_registers(program)
    rng = random.Random(seed)
    pi = plan.morphism.pi
    by_start = {block.start: node for node, block in plan.source.blocks.items()}
    relabel = {
        label: f"n{pi[by_start[index]]}"
        for label, index in program.labels.items()
        if index in by_start
    }
    blocks = [plan.source.blocks[n] for n in sorted(plan.source.blocks)]

    buf = CodeBuffer()
    buf.label(INIT_LABEL)
    buf.extend(init_stub(plan))
    node_map: dict[int, NodeSpan] = {}
    for node in plan.target.layout:
        node_map[node] = _emit_node(buf, plan, program, node, relabel, rng.choice(blocks), spill)
    buf.label(HALT_LABEL)
    buf.emit(_ins(Opcode.HALT))

    emitted = Program(tuple(buf.instructions))
    violations = validate_program(emitted)
    if violations:
        raise TransformError(f"emitted program is invalid: {'; '.join(violations[:5])}")
    logger.info(
        f"Emitted {len(emitted)} instructions for {len(plan.target.nodes)} nodes "
        f"({len(pi)} active images)"
    )
    return ObfuscatedProgram(
        program=emitted,
        node_map=node_map,
        target=plan.target,
        morphism=plan.morphism,
        source=program,
        source_cfg=plan.source,
        extra_hops=plan.extra_hops,
        roles=dict(plan.roles),
        plan=plan,
    )
