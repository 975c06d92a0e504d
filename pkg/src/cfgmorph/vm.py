"""Deterministic interpreter for mini-ISA programs."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from cfgmorph.exceptions import (
    DivisionByZeroError,
    EmptyStackError,
    MemoryBoundsError,
    ProgramCounterError,
    StackUnderflowError,
    StepLimitExceeded,
    VmError,
)
from cfgmorph.isa import Imm, Instruction, LabelRef, Mem, Opcode, Operand, Program, Reg
from cfgmorph.layout import MAX_OUT_RECORD, MEMORY_WORDS, SP, STACK_SLOT, STACK_TOP, WORD_MASK
from cfgmorph.models import RunLimits

logger = logging.getLogger(__name__)

REGISTER_COUNT = 9


class XorShift64Star:
    """xorshift64* generator backing RAND.

    Args:
        seed: Any integer; zero is remapped since the all-zero state is fixed
    """

    MULTIPLIER = 0x2545F4914F6CDD1D

    def __init__(self, seed: int) -> None:
        self.state = (seed & WORD_MASK) or 0x9E3779B97F4A7C15

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & WORD_MASK
        x ^= x >> 27
        self.state = x
        return (x * self.MULTIPLIER) & WORD_MASK


@dataclass(frozen=True)
class TraceEntry:
    """One executed instruction.

    Args:
        pc: Index of the instruction
        write: (address, value) of a memory write, if any
        out: Words emitted by OUT, if any
    """

    pc: int
    write: tuple[int, int] | None = None
    out: tuple[int, ...] | None = None


@dataclass
class Trace:
    """Execution trace, one entry per step."""

    entries: list[TraceEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def pcs(self) -> list[int]:
        return [e.pc for e in self.entries]

    def to_jsonl(self) -> str:
        """JSON lines ``{"pc": N, "write": [addr, val], "out": [...]}``."""
        lines = []
        for entry in self.entries:
            record: dict[str, object] = {"pc": entry.pc}
            if entry.write is not None:
                record["write"] = list(entry.write)
            if entry.out is not None:
                record["out"] = list(entry.out)
            lines.append(json.dumps(record))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class Snapshot:
    """Frozen architectural state.

    Args:
        pc: Next instruction
        regs: r0..r7 and sp
        zero: Zero flag
        memory: Full memory image
        output: Output log
        steps: Instructions executed so far
    """

    pc: int
    regs: tuple[int, ...]
    zero: bool
    memory: tuple[int, ...]
    output: tuple[int, ...]
    steps: int


@dataclass
class VmState:
    """Mutable machine state.

    Args:
        regs: r0..r7 and sp
        zero: Zero flag, set only by CMP
        mem: Word-addressable memory
        pc: Next instruction
        steps: Instructions executed
        output: Output log
        rng: RAND generator
        halted: Whether HALT was executed
    """

    regs: list[int]
    zero: bool
    mem: list[int]
    pc: int
    steps: int
    output: list[int]
    rng: XorShift64Star
    halted: bool = False

    @classmethod
    def initial(cls, inputs: Mapping[int, int] | Sequence[int] | None, seed: int) -> VmState:
        """Fresh state with the given input registers and an empty stack."""
        regs = [0] * REGISTER_COUNT
        if isinstance(inputs, Mapping):
            items = list(inputs.items())
        else:
            items = list(enumerate(inputs or ()))
        for index, value in items:
            if not 0 <= index < SP:
                raise ValueError(f"input register must be r0..r7, got index {index}")
            regs[index] = value & WORD_MASK
        regs[SP] = STACK_TOP
        return cls(regs, False, [0] * MEMORY_WORDS, 0, 0, [], XorShift64Star(seed))


@dataclass
class RunResult:
    """Outcome of a complete run."""

    output: list[int]
    state: VmState
    trace: Trace | None

    @property
    def steps(self) -> int:
        return self.state.steps


def resolve_program(program: Program) -> list[Instruction]:
    """Replace label operands by their instruction index."""
    resolved = []
    for instr in program:
        operands: tuple[Operand, ...] = tuple(
            Imm(program.address_of(op.name)) if isinstance(op, LabelRef) else op
            for op in instr.operands
        )
        resolved.append(Instruction(instr.opcode, operands, instr.label))
    return resolved


class Vm:
    """Interpreter for one program run.

    Args:
        program: Program to execute
        inputs: Initial register values (missing registers are 0)
        seed: RAND seed
        limits: Step limit
        trace: Whether to record a Trace
    """

    def __init__(
        self,
        program: Program,
        inputs: Mapping[int, int] | Sequence[int] | None = None,
        seed: int = 0,
        limits: RunLimits | None = None,
        trace: bool = False,
    ) -> None:
        self.program = program
        self.code = resolve_program(program)
        self.limits = limits or RunLimits()
        self.state = VmState.initial(inputs, seed)
        self.trace: Trace | None = Trace() if trace else None
        self._write: tuple[int, int] | None = None
        self._out: tuple[int, ...] | None = None

    @property
    def pc(self) -> int:
        return self.state.pc

    @property
    def halted(self) -> bool:
        return self.state.halted

    def load_program(self, program: Program, code: list[Instruction] | None = None) -> None:
        """Continue the current state with another program of the same shape.

        Args:
            program: Replacement program
            code: Its resolved instructions, when already computed
        """
        if len(program) != len(self.program):
            raise VmError("replacement program must keep the instruction count")
        self.program = program
        self.code = code if code is not None else resolve_program(program)

    def fork(self, program: Program | None = None) -> Vm:
        """Independent copy of this machine, optionally running another program."""
        clone = Vm.__new__(Vm)
        clone.program = self.program
        clone.code = self.code
        clone.limits = self.limits
        rng = XorShift64Star(0)
        rng.state = self.state.rng.state
        clone.state = VmState(
            list(self.state.regs),
            self.state.zero,
            list(self.state.mem),
            self.state.pc,
            self.state.steps,
            list(self.state.output),
            rng,
            self.state.halted,
        )
        clone.trace = None
        clone._write = None
        clone._out = None
        if program is not None:
            clone.load_program(program)
        return clone

    def snapshot(self) -> Snapshot:
        s = self.state
        return Snapshot(s.pc, tuple(s.regs), s.zero, tuple(s.mem), tuple(s.output), s.steps)

    # Operand helpers

    def _value(self, op: Operand) -> int:
        if isinstance(op, Reg):
            return self.state.regs[op.index]
        assert isinstance(op, Imm)
        return op.value & WORD_MASK

    def _address(self, op: Mem) -> int:
        base = self.state.regs[op.base] if op.base is not None else 0
        address = (base + op.offset) & WORD_MASK
        if address >= MEMORY_WORDS:
            raise MemoryBoundsError(f"address {address:#x} out of bounds", self.state.pc)
        return address

    def _store(self, address: int, value: int) -> None:
        self.state.mem[address] = value
        self._write = (address, value)

    def _push(self, value: int) -> None:
        sp = (self.state.regs[SP] - STACK_SLOT) & WORD_MASK
        if sp >= MEMORY_WORDS:
            raise MemoryBoundsError(f"stack pointer {sp:#x} out of bounds", self.state.pc)
        self.state.regs[SP] = sp
        self._store(sp, value)

    def _pop(self) -> int:
        sp = self.state.regs[SP]
        if sp >= MEMORY_WORDS:
            raise MemoryBoundsError(f"stack pointer {sp:#x} out of bounds", self.state.pc)
        value = self.state.mem[sp]
        self.state.regs[SP] = (sp + STACK_SLOT) & WORD_MASK
        return value

    def _set(self, op: Operand, value: int) -> None:
        assert isinstance(op, Reg)
        self.state.regs[op.index] = value & WORD_MASK

    # Handlers

    def exec_mov(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(src))

    def exec_load(self, dst: Operand, src: Operand) -> None:
        assert isinstance(src, Mem)
        self._set(dst, self.state.mem[self._address(src)])

    def exec_store(self, dst: Operand, src: Operand) -> None:
        assert isinstance(dst, Mem)
        self._store(self._address(dst), self._value(src))

    def exec_add(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) + self._value(src))

    def exec_sub(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) - self._value(src))

    def exec_mul(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) * self._value(src))

    def exec_div(self, dst: Operand, src: Operand) -> None:
        divisor = self._value(src)
        if divisor == 0:
            raise DivisionByZeroError("division by zero", self.state.pc)
        self._set(dst, self._value(dst) // divisor)

    def exec_and(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) & self._value(src))

    def exec_or(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) | self._value(src))

    def exec_xor(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) ^ self._value(src))

    def exec_not(self, dst: Operand) -> None:
        self._set(dst, ~self._value(dst))

    def exec_shl(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) << (self._value(src) & 63))

    def exec_shr(self, dst: Operand, src: Operand) -> None:
        self._set(dst, self._value(dst) >> (self._value(src) & 63))

    def exec_cmp(self, left: Operand, right: Operand) -> None:
        self.state.zero = self._value(left) == self._value(right)

    def exec_jmp(self, target: Operand) -> None:
        self.state.pc = self._value(target)

    def exec_jz(self, target: Operand) -> None:
        if self.state.zero:
            self.state.pc = self._value(target)

    def exec_jnz(self, target: Operand) -> None:
        if not self.state.zero:
            self.state.pc = self._value(target)

    def exec_push(self, src: Operand) -> None:
        self._push(self._value(src))

    def exec_pop(self, dst: Operand) -> None:
        if self.state.regs[SP] == STACK_TOP:
            raise StackUnderflowError("pop from empty stack", self.state.pc)
        self._set(dst, self._pop())

    def exec_call(self, target: Operand) -> None:
        self._push(self.state.pc)
        self.state.pc = self._value(target)

    def exec_ret(self) -> None:
        if self.state.regs[SP] == STACK_TOP:
            raise EmptyStackError("ret with empty stack", self.state.pc)
        address = self._pop()
        if address >= len(self.code):
            raise ProgramCounterError(f"return to invalid address {address:#x}", self.state.pc)
        self.state.pc = address

    def exec_out(self, src: Operand) -> None:
        if isinstance(src, Mem):
            address = self._address(src)
            count = self.state.mem[address]
            if count > MAX_OUT_RECORD or address + count >= MEMORY_WORDS:
                raise MemoryBoundsError(f"bad output record of {count} words", self.state.pc)
            words = tuple(self.state.mem[address + 1 : address + 1 + count])
        else:
            words = (self._value(src),)
        self.state.output.extend(words)
        if words:
            self._out = words

    def exec_rand(self, dst: Operand) -> None:
        self._set(dst, self.state.rng.next())

    def exec_halt(self) -> None:
        self.state.halted = True

    imap = {
        Opcode.MOV: exec_mov,
        Opcode.LOAD: exec_load,
        Opcode.STORE: exec_store,
        Opcode.ADD: exec_add,
        Opcode.SUB: exec_sub,
        Opcode.MUL: exec_mul,
        Opcode.DIV: exec_div,
        Opcode.AND: exec_and,
        Opcode.OR: exec_or,
        Opcode.XOR: exec_xor,
        Opcode.NOT: exec_not,
        Opcode.SHL: exec_shl,
        Opcode.SHR: exec_shr,
        Opcode.CMP: exec_cmp,
        Opcode.JMP: exec_jmp,
        Opcode.JZ: exec_jz,
        Opcode.JNZ: exec_jnz,
        Opcode.PUSH: exec_push,
        Opcode.POP: exec_pop,
        Opcode.CALL: exec_call,
        Opcode.RET: exec_ret,
        Opcode.OUT: exec_out,
        Opcode.RAND: exec_rand,
        Opcode.HALT: exec_halt,
    }

    def step(self) -> TraceEntry:
        """Execute one instruction.

        Returns:
            The trace entry of the executed instruction

        Raises:
            StepLimitExceeded: If the step limit is already reached
            ProgramCounterError: If pc lies outside the program
        """
        state = self.state
        if state.halted:
            raise VmError("machine is halted", state.pc)
        if state.steps >= self.limits.max_steps:
            raise StepLimitExceeded(f"step limit {self.limits.max_steps} reached", state.pc)
        pc = state.pc
        if not 0 <= pc < len(self.code):
            raise ProgramCounterError("control left the program", pc)
        instr = self.code[pc]
        self._write = None
        self._out = None
        state.pc = pc + 1
        self.imap[instr.opcode](self, *instr.operands)
        state.steps += 1
        entry = TraceEntry(pc, self._write, self._out)
        if self.trace is not None:
            self.trace.entries.append(entry)
        return entry

    def run(self) -> RunResult:
        """Execute until HALT."""
        while not self.state.halted:
            self.step()
        logger.debug(f"Run finished: {self.state.steps} steps, {len(self.state.output)} words out")
        return RunResult(list(self.state.output), self.state, self.trace)


def run(
    program: Program,
    inputs: Mapping[int, int] | Sequence[int] | None = None,
    limits: RunLimits | None = None,
    seed: int = 0,
    trace: bool = False,
) -> RunResult:
    """Run a program from index 0 until HALT.

    Args:
        program: Program to execute
        inputs: Initial register values
        limits: Step limit
        seed: RAND seed
        trace: Whether to record the trace

    Returns:
        Output log, final state and trace (None unless requested)

    Raises:
        VmError: On step-limit, memory, stack or control faults
    """
    return Vm(program, inputs, seed, limits, trace).run()


def run_until(
    program: Program,
    inputs: Mapping[int, int] | Sequence[int] | None,
    span: range,
    occurrence: int = 1,
    limits: RunLimits | None = None,
    seed: int = 0,
) -> Snapshot | None:
    """Snapshot at the ``occurrence``-th entry into an instruction span.

    An entry is a step that moves pc into ``span`` from outside it (the
    initial pc counts as an entry).

    Returns:
        The snapshot before the first instruction of the span executes, or
        None if the program halts or hits the step limit first

    Raises:
        VmError: On memory, stack or control faults
    """
    vm = Vm(program, inputs, seed, limits)
    seen = 0
    previous_inside = False
    while True:
        inside = vm.pc in span
        if inside and not previous_inside:
            seen += 1
            if seen == occurrence:
                return vm.snapshot()
        previous_inside = inside
        if vm.halted:
            return None
        try:
            vm.step()
        except StepLimitExceeded:
            return None
