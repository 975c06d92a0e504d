"""Custom exceptions for cfgmorph."""

from __future__ import annotations


class CfgMorphError(Exception):
    """Base exception for all cfgmorph errors."""


class ProgramError(CfgMorphError):
    """Raised when a mini-ISA program is malformed."""


class ParseError(ProgramError):
    """Raised when assembler text cannot be parsed.

    Args:
        message: Description of the problem
        line: 1-based source line number (0 when not tied to a line)
    """

    def __init__(self, message: str, line: int = 0) -> None:
        self.line = line
        prefix = f"line {line}: " if line else ""
        super().__init__(f"{prefix}{message}")


class ValidationError(ProgramError):
    """Raised when a program violates an instruction or program invariant."""

    def __init__(self, violations: list[str]) -> None:
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CfgError(CfgMorphError):
    """Raised for control-flow graph failures."""


class SizeLimitError(CfgError):
    """Raised when a graph exceeds the isomorphism search bound."""


class GenerationError(CfgMorphError):
    """Raised when a target graph cannot be generated."""


class EmbeddingError(CfgMorphError):
    """Base class for morphism and routing failures."""


class MorphismError(EmbeddingError):
    """Raised when no injective node map is found within the search budget."""


class RoutingError(EmbeddingError):
    """Raised when a source edge has no usable path in the target graph."""


class TransformError(CfgMorphError):
    """Raised when the obfuscated program cannot be emitted."""


class UnsupportedConstructError(TransformError):
    """Raised when a source program uses a construct the rewriter rejects."""


class BudgetExceededError(TransformError):
    """Raised when a route word would exceed its decision budget."""


class EmissionError(TransformError):
    """Raised when a target node cannot be given a trailer."""


class VmError(CfgMorphError):
    """Base class for interpreter faults.

    Args:
        message: Description of the fault
        pc: Program counter at the time of the fault
    """

    def __init__(self, message: str, pc: int = -1) -> None:
        self.pc = pc
        super().__init__(f"{message} (pc={pc})" if pc >= 0 else message)


class StepLimitExceeded(VmError):
    """Raised when execution runs past the step limit."""


class MemoryBoundsError(VmError):
    """Raised on an access outside the word-addressable memory."""


class StackUnderflowError(VmError):
    """Raised when POP finds the program stack empty."""


class EmptyStackError(StackUnderflowError):
    """Raised when RET finds the program stack empty."""


class ProgramCounterError(VmError):
    """Raised when control leaves the program."""


class DivisionByZeroError(VmError):
    """Raised by DIV with a zero divisor."""


class AnalysisError(CfgMorphError):
    """Base class for analysis failures."""


class MissingMetadataError(AnalysisError):
    """Raised when an analysis needs the sidecar metadata and it is absent."""


class InconsistentRecoveryError(AnalysisError):
    """Raised when an attack report cannot describe a consistent CFG."""


class AttackError(AnalysisError):
    """Raised when the dynamic attack cannot proceed."""
