"""cfgmorph: control-flow obfuscation by embedding a program's CFG into a random graph."""

from __future__ import annotations

__version__ = "0.1.0"

from cfgmorph.analysis import (
    dynamic_attack,
    full_recovery_prob,
    one_recovery_prob,
    reconstruct_cfg,
    simulate_games,
)
from cfgmorph.cfg import Cfg, extract_cfg, is_isomorphic
from cfgmorph.exceptions import (
    CfgMorphError,
    EmbeddingError,
    ProgramError,
    TransformError,
    VmError,
)
from cfgmorph.isa import Program, parse_program, serialize_program
from cfgmorph.models import AttackReport, Config, GameReport, ObfuscationParams, RunLimits
from cfgmorph.pipeline import obfuscate
from cfgmorph.transform import ObfuscatedProgram
from cfgmorph.vm import Vm, run

__all__ = [
    "AttackReport",
    "Cfg",
    "CfgMorphError",
    "Config",
    "EmbeddingError",
    "GameReport",
    "ObfuscatedProgram",
    "ObfuscationParams",
    "Program",
    "ProgramError",
    "RunLimits",
    "TransformError",
    "Vm",
    "VmError",
    "dynamic_attack",
    "extract_cfg",
    "full_recovery_prob",
    "is_isomorphic",
    "obfuscate",
    "one_recovery_prob",
    "parse_program",
    "reconstruct_cfg",
    "run",
    "serialize_program",
    "simulate_games",
]
