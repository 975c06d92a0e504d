"""Shared test fixtures for cfgmorph."""

from __future__ import annotations

import functools
from pathlib import Path

import pytest

from cfgmorph.isa import Program, parse_program
from cfgmorph.models import ObfuscationParams
from cfgmorph.pipeline import obfuscate
from cfgmorph.transform import ObfuscatedProgram

CORPUS_DIR = Path(__file__).parent / "corpus"

# Inputs per corpus program, with the output log each must produce
CORPUS_CASES: dict[str, list[tuple[dict[int, int], list[int]]]] = {
    "straight": [({0: 2}, [27]), ({0: 0}, [21])],
    "diamond": [({0: 0}, [1]), ({0: 5}, [2])],
    "loop": [({0: 4}, [10]), ({0: 0}, [0])],
    "nested": [({0: 3, 1: 4}, [12]), ({0: 2, 1: 0}, [0])],
    "calls": [({}, [22])],
    "double_and_add": [({0: 7, 1: 181}, [1267]), ({0: 3, 1: 0}, [0])],
    "pushpop": [({0: 3, 1: 9}, [9, 3]), ({0: 4, 1: 4}, [0])],
    "memory": [({0: 5}, [15])],
    "record": [({0: 3}, [3, 9, 10])],
    "gcd": [({0: 48, 1: 18}, [6]), ({0: 7, 1: 5}, [1])],
    "fib": [({0: 10}, [55]), ({0: 1}, [1])],
    "callloop": [({0: 3}, [14])],
    "scratch": [({6: 9, 7: 4}, [2, 5, 4]), ({6: 3, 7: 3}, [3])],
}

# Programs whose run length grows with their input values
LONG_RUNNING = frozenset({"loop", "nested", "fib", "callloop"})

CORPUS_NAMES = sorted(CORPUS_CASES)


@functools.lru_cache(maxsize=None)
def load_corpus(name: str) -> Program:
    """Parse ``tests/corpus/<name>.asm``."""
    return parse_program((CORPUS_DIR / f"{name}.asm").read_text())


@functools.lru_cache(maxsize=None)
def obfuscated(
    name: str, seed: int = 1, extra_hops: int = 2, target_factor: float = 4.0
) -> ObfuscatedProgram:
    """Obfuscation of a corpus program, built once per parameter set."""
    params = ObfuscationParams(target_factor=target_factor, extra_hops=extra_hops)
    return obfuscate(load_corpus(name), params, seed)


@pytest.fixture
def diamond() -> Program:
    """If/else program."""
    return load_corpus("diamond")


@pytest.fixture
def loop() -> Program:
    """Counting loop."""
    return load_corpus("loop")


@pytest.fixture
def calls() -> Program:
    """Call/ret chain."""
    return load_corpus("calls")


@pytest.fixture
def ob_loop() -> ObfuscatedProgram:
    """Obfuscated counting loop, default parameters."""
    return obfuscated("loop")


@pytest.fixture
def ob_diamond_flat() -> ObfuscatedProgram:
    """Obfuscated if/else without extra hops."""
    return obfuscated("diamond", seed=3, extra_hops=0)
