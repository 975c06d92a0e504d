"""Mini-ISA: instruction set, assembler text format and program model."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterator
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from cfgmorph.exceptions import ParseError
from cfgmorph.layout import SP

logger = logging.getLogger(__name__)


class Opcode(str, Enum):
    """Mini-ISA opcodes."""

    MOV = "mov"
    LOAD = "load"
    STORE = "store"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    AND = "and"
    OR = "or"
    XOR = "xor"
    NOT = "not"
    SHL = "shl"
    SHR = "shr"
    CMP = "cmp"
    JMP = "jmp"
    JZ = "jz"
    JNZ = "jnz"
    PUSH = "push"
    POP = "pop"
    CALL = "call"
    RET = "ret"
    OUT = "out"
    RAND = "rand"
    HALT = "halt"


class OperandKind(Enum):
    """Kinds of operand accepted by an opcode signature."""

    REG = "reg"
    IMM = "imm"
    MEM = "mem"
    LABEL = "label"


@dataclass(frozen=True)
class Reg:
    """Register operand; index 8 is the stack pointer."""

    index: int

    @property
    def kind(self) -> OperandKind:
        return OperandKind.REG

    def __str__(self) -> str:
        return "sp" if self.index == SP else f"r{self.index}"


@dataclass(frozen=True)
class Imm:
    """Immediate word operand."""

    value: int

    @property
    def kind(self) -> OperandKind:
        return OperandKind.IMM

    def __str__(self) -> str:
        return _format_int(self.value)


@dataclass(frozen=True)
class Mem:
    """Memory operand ``[base + offset]``; ``base`` is None for absolute addresses."""

    base: int | None
    offset: int = 0

    @property
    def kind(self) -> OperandKind:
        return OperandKind.MEM

    def __str__(self) -> str:
        if self.base is None:
            return f"[{_format_int(self.offset)}]"
        reg = str(Reg(self.base))
        if self.offset == 0:
            return f"[{reg}]"
        sign = "+" if self.offset > 0 else "-"
        return f"[{reg}{sign}{_format_int(abs(self.offset))}]"


@dataclass(frozen=True)
class LabelRef:
    """Reference to a program label (its instruction index when used as a value)."""

    name: str

    @property
    def kind(self) -> OperandKind:
        return OperandKind.LABEL

    def __str__(self) -> str:
        return self.name


Operand = Union[Reg, Imm, Mem, LabelRef]

_R = OperandKind.REG
_I = OperandKind.IMM
_M = OperandKind.MEM
_L = OperandKind.LABEL

_ALU_SIGNATURE: tuple[frozenset[OperandKind], ...] = (frozenset({_R}), frozenset({_R, _I}))

# Exactly one operand signature per opcode
SIGNATURES: dict[Opcode, tuple[frozenset[OperandKind], ...]] = {
    Opcode.MOV: (frozenset({_R}), frozenset({_R, _I, _L})),
    Opcode.LOAD: (frozenset({_R}), frozenset({_M})),
    Opcode.STORE: (frozenset({_M}), frozenset({_R})),
    Opcode.ADD: _ALU_SIGNATURE,
    Opcode.SUB: _ALU_SIGNATURE,
    Opcode.MUL: _ALU_SIGNATURE,
    Opcode.DIV: _ALU_SIGNATURE,
    Opcode.AND: _ALU_SIGNATURE,
    Opcode.OR: _ALU_SIGNATURE,
    Opcode.XOR: _ALU_SIGNATURE,
    Opcode.SHL: _ALU_SIGNATURE,
    Opcode.SHR: _ALU_SIGNATURE,
    Opcode.NOT: (frozenset({_R}),),
    Opcode.CMP: _ALU_SIGNATURE,
    Opcode.JMP: (frozenset({_L}),),
    Opcode.JZ: (frozenset({_L}),),
    Opcode.JNZ: (frozenset({_L}),),
    Opcode.PUSH: (frozenset({_R, _I, _L}),),
    Opcode.POP: (frozenset({_R}),),
    Opcode.CALL: (frozenset({_L}),),
    Opcode.RET: (),
    Opcode.OUT: (frozenset({_R, _M}),),
    Opcode.RAND: (frozenset({_R}),),
    Opcode.HALT: (),
}

JUMP_OPCODES = frozenset({Opcode.JMP, Opcode.JZ, Opcode.JNZ})
CONDITIONAL_JUMPS = frozenset({Opcode.JZ, Opcode.JNZ})
BLOCK_TERMINATORS = frozenset({Opcode.JMP, Opcode.JZ, Opcode.JNZ, Opcode.CALL, Opcode.RET, Opcode.HALT})


@dataclass(frozen=True)
class Instruction:
    """A single mini-ISA instruction, optionally labeled.

    Args:
        opcode: The operation
        operands: Up to two operands matching the opcode signature
        label: Label attached to this instruction, if any
    """

    opcode: Opcode
    operands: tuple[Operand, ...] = ()
    label: str | None = None

    def with_label(self, label: str | None) -> Instruction:
        """Return a copy carrying a different label."""
        return Instruction(self.opcode, self.operands, label)

    def registers(self) -> set[int]:
        """Register indexes read or written by this instruction."""
        regs: set[int] = set()
        for op in self.operands:
            if isinstance(op, Reg):
                regs.add(op.index)
            elif isinstance(op, Mem) and op.base is not None:
                regs.add(op.base)
        return regs

    def __str__(self) -> str:
        if not self.operands:
            return self.opcode.value
        return f"{self.opcode.value} " + ", ".join(str(op) for op in self.operands)


@dataclass(frozen=True)
class Program:
    """An ordered list of instructions; execution starts at index 0.

    Args:
        instructions: The instructions in program order
    """

    instructions: tuple[Instruction, ...]
    _labels: dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "instructions", tuple(self.instructions))
        for index, instr in enumerate(self.instructions):
            if instr.label is not None and instr.label not in self._labels:
                self._labels[instr.label] = index

    @property
    def labels(self) -> dict[str, int]:
        """Mapping from label name to instruction index."""
        return dict(self._labels)

    def address_of(self, label: str) -> int:
        """Instruction index of a label.

        Raises:
            KeyError: If the label is not defined
        """
        return self._labels[label]

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self) -> Iterator[Instruction]:
        return iter(self.instructions)

    def __getitem__(self, index: int) -> Instruction:
        return self.instructions[index]


_REG_RE = re.compile(r"^(r[0-7]|sp)$", re.IGNORECASE)
_INT_RE = re.compile(r"^-?(0x[0-9a-fA-F]+|\d+)$")
_IDENT_RE = re.compile(r"^[A-Za-z_.][A-Za-z0-9_.]*$")
_LABEL_LINE_RE = re.compile(r"^([A-Za-z_.][A-Za-z0-9_.]*)\s*:\s*(.*)$")
_MEM_RE = re.compile(r"^\[\s*(r[0-7]|sp)?\s*(?:([+-])?\s*(-?(?:0x[0-9a-fA-F]+|\d+)))?\s*\]$", re.IGNORECASE)


def _format_int(value: int) -> str:
    if -65536 < value < 65536:
        return str(value)
    return f"-{abs(value):#x}" if value < 0 else f"{value:#x}"


def _parse_int(token: str) -> int:
    negative = token.startswith("-")
    body = token[1:] if negative else token
    value = int(body, 16) if body.lower().startswith("0x") else int(body, 10)
    return -value if negative else value


def _parse_reg(token: str) -> Reg:
    token = token.lower()
    return Reg(SP if token == "sp" else int(token[1:]))


def _parse_operand(token: str, line: int) -> Operand:
    token = token.strip()
    if not token:
        raise ParseError("empty operand", line)
    if token.startswith("["):
        match = _MEM_RE.match(token)
        if match is None:
            raise ParseError(f"malformed memory operand '{token}'", line)
        base_text, sign, number = match.groups()
        if base_text is None and number is None:
            raise ParseError(f"empty memory operand '{token}'", line)
        if base_text is None and sign == "-":
            raise ParseError(f"negative absolute address '{token}'", line)
        base = _parse_reg(base_text).index if base_text else None
        if base is not None and number is not None and sign is None:
            raise ParseError(f"missing '+' or '-' in '{token}'", line)
        offset = _parse_int(number) if number is not None else 0
        if sign == "-":
            offset = -offset
        return Mem(base, offset)
    if _REG_RE.match(token):
        return _parse_reg(token)
    if _INT_RE.match(token):
        return Imm(_parse_int(token))
    if _IDENT_RE.match(token):
        return LabelRef(token)
    raise ParseError(f"cannot parse operand '{token}'", line)


def check_signature(opcode: Opcode, operands: tuple[Operand, ...]) -> str | None:
    """Check operands against the opcode's signature.

    Args:
        opcode: Opcode to check against
        operands: Operands supplied

    Returns:
        A description of the mismatch, or None if the operands fit
    """
    signature = SIGNATURES[opcode]
    if len(operands) != len(signature):
        return (
            f"arity: '{opcode.value}' takes {len(signature)} operand(s), got {len(operands)}"
        )
    for position, (operand, allowed) in enumerate(zip(operands, signature), start=1):
        if operand.kind not in allowed:
            names = "/".join(sorted(kind.value for kind in allowed))
            return (
                f"operand {position} of '{opcode.value}' must be {names}, "
                f"got {operand.kind.value} '{operand}'"
            )
    return None


def _parse_instruction(text: str, label: str | None, line: int) -> Instruction:
    parts = text.split(None, 1)
    mnemonic = parts[0].lower()
    try:
        opcode = Opcode(mnemonic)
    except ValueError:
        raise ParseError(f"unknown opcode '{parts[0]}'", line) from None
    operands: tuple[Operand, ...] = ()
    if len(parts) > 1 and parts[1].strip():
        operands = tuple(_parse_operand(tok, line) for tok in parts[1].split(","))
    problem = check_signature(opcode, operands)
    if problem is not None:
        raise ParseError(problem, line)
    return Instruction(opcode, operands, label)


def parse_program(text: str) -> Program:
    """Parse assembler source into a validated program.

    Args:
        text: Source text, one instruction or label per line, ``;`` comments

    Returns:
        The parsed Program

    Raises:
        ParseError: On syntax errors, unknown opcodes, bad operands,
            duplicate labels or unresolved label references
    """
    instructions: list[Instruction] = []
    label_lines: dict[str, int] = {}
    references: list[tuple[str, int]] = []
    pending: tuple[str, int] | None = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        content = raw.split(";", 1)[0].strip()
        if not content:
            continue
        match = _LABEL_LINE_RE.match(content)
        if match is not None:
            name, rest = match.group(1), match.group(2).strip()
            if _REG_RE.match(name):
                raise ParseError(f"label '{name}' shadows a register", line_no)
            if name.lower() in {op.value for op in Opcode}:
                raise ParseError(f"label '{name}' shadows an opcode", line_no)
            if name in label_lines:
                raise ParseError(
                    f"duplicate label '{name}' (first defined on line {label_lines[name]})",
                    line_no,
                )
            if pending is not None:
                raise ParseError(f"labels '{pending[0]}' and '{name}' share an instruction", line_no)
            label_lines[name] = line_no
            pending = (name, line_no)
            if not rest:
                continue
            content = rest
        label = pending[0] if pending is not None else None
        pending = None
        instr = _parse_instruction(content, label, line_no)
        for operand in instr.operands:
            if isinstance(operand, LabelRef):
                references.append((operand.name, line_no))
        instructions.append(instr)

    if pending is not None:
        raise ParseError(f"label '{pending[0]}' is not followed by an instruction", pending[1])
    for name, line_no in references:
        if name not in label_lines:
            raise ParseError(f"unresolved label '{name}'", line_no)
    if not instructions:
        raise ParseError("program has no instructions")

    program = Program(tuple(instructions))
    logger.debug(f"Parsed program: {len(program)} instructions, {len(label_lines)} labels")
    return program


def serialize_program(program: Program) -> str:
    """Render a program as assembler text.

    Labels are written on their own line before the instruction they mark.

    Args:
        program: Program to render

    Returns:
        Assembler text ending with a newline
    """
    lines: list[str] = []
    for instr in program:
        if instr.label is not None:
            lines.append(f"{instr.label}:")
        lines.append(str(instr))
    return "\n".join(lines) + "\n"


def validate_program(program: Program) -> list[str]:
    """Collect every invariant violation of a program.

    Args:
        program: Program to check

    Returns:
        Violation descriptions; empty when the program is valid
    """
    violations: list[str] = []
    if len(program) == 0:
        violations.append("program has no instructions")
    seen: set[str] = set()
    defined = {instr.label for instr in program if instr.label is not None}

    for index, instr in enumerate(program):
        if instr.label is not None:
            if instr.label in seen:
                violations.append(f"#{index}: duplicate label '{instr.label}'")
            seen.add(instr.label)
        problem = check_signature(instr.opcode, instr.operands)
        if problem is not None:
            violations.append(f"#{index}: {problem}")
        for operand in instr.operands:
            if isinstance(operand, Reg) and not 0 <= operand.index <= SP:
                violations.append(f"#{index}: bad register index {operand.index}")
            elif isinstance(operand, Mem) and operand.base is not None:
                if not 0 <= operand.base <= SP:
                    violations.append(f"#{index}: bad base register {operand.base}")
            elif isinstance(operand, LabelRef) and operand.name not in defined:
                violations.append(f"#{index}: unresolved label '{operand.name}'")
    return violations
