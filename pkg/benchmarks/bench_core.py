"""Performance benchmarks for cfgmorph components."""

from __future__ import annotations

import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from cfgmorph.analysis import attack_scaling, fit_power_law, scaling_csv
from cfgmorph.isa import Program, parse_program
from cfgmorph.models import ObfuscationParams
from cfgmorph.pipeline import obfuscate
from cfgmorph.vm import run

logging.basicConfig(level=logging.WARNING)

NUM_ITERATIONS = 3
CORPUS_DIR = Path(__file__).resolve().parent.parent / "tests" / "corpus"
SCALING_SIZES = [16, 32, 64]
SCALING_SEEDS = [0, 1, 2]


@dataclass
class BenchResult:
    """Benchmark result."""

    name: str
    mean_seconds: float
    items_processed: int
    throughput_per_sec: float


def load(name: str) -> Program:
    """Parse a corpus program."""
    return parse_program((CORPUS_DIR / f"{name}.asm").read_text())


def bench_vm_source() -> BenchResult:
    """Benchmark interpreter speed on an unobfuscated loop."""
    program = load("nested")
    inputs = {0: 40, 1: 40}
    steps = run(program, inputs).steps

    timings: list[float] = []
    for _ in range(NUM_ITERATIONS):
        start = time.perf_counter()
        run(program, inputs)
        timings.append(time.perf_counter() - start)

    mean_time = sum(timings) / len(timings)
    return BenchResult(
        name=f"VM Source Run ({steps} steps)",
        mean_seconds=mean_time,
        items_processed=steps,
        throughput_per_sec=steps / mean_time,
    )


def bench_vm_obfuscated() -> BenchResult:
    """Benchmark interpreter speed on the obfuscated loop."""
    ob = obfuscate(load("nested"), ObfuscationParams(), seed=1)
    inputs = {0: 6, 1: 6}
    steps = run(ob.program, inputs).steps

    timings: list[float] = []
    for _ in range(NUM_ITERATIONS):
        start = time.perf_counter()
        run(ob.program, inputs)
        timings.append(time.perf_counter() - start)

    mean_time = sum(timings) / len(timings)
    return BenchResult(
        name=f"VM Obfuscated Run ({steps} steps)",
        mean_seconds=mean_time,
        items_processed=steps,
        throughput_per_sec=steps / mean_time,
    )


def bench_obfuscate() -> BenchResult:
    """Benchmark the full pipeline over the corpus."""
    programs = [load(path.stem) for path in sorted(CORPUS_DIR.glob("*.asm"))]

    timings: list[float] = []
    for i in range(NUM_ITERATIONS):
        start = time.perf_counter()
        for program in programs:
            obfuscate(program, seed=i)
        timings.append(time.perf_counter() - start)

    mean_time = sum(timings) / len(timings)
    return BenchResult(
        name=f"Obfuscate Corpus ({len(programs)} programs)",
        mean_seconds=mean_time,
        items_processed=len(programs),
        throughput_per_sec=len(programs) / mean_time,
    )


def bench_attack_scaling() -> tuple[BenchResult, list[tuple[int, int]]]:
    """Attack cost against |V'|; returns the timing and the (|V'|, steps) rows."""
    start = time.perf_counter()
    rows = attack_scaling(
        load("loop"), lambda size: {0: size // 4}, SCALING_SIZES, seeds=SCALING_SEEDS
    )
    elapsed = time.perf_counter() - start
    total_steps = sum(steps for _, steps in rows)
    result = BenchResult(
        name=f"Attack Scaling (|V'| = {', '.join(str(s) for s in SCALING_SIZES)})",
        mean_seconds=elapsed,
        items_processed=total_steps,
        throughput_per_sec=total_steps / elapsed,
    )
    return result, rows


def main() -> None:
    """Run all benchmarks."""
    benchmarks = [bench_vm_source, bench_vm_obfuscated, bench_obfuscate]

    results: list[BenchResult] = []
    for bench_fn in benchmarks:
        results.append(bench_fn())
    scaling, rows = bench_attack_scaling()
    results.append(scaling)

    header = f"{'Benchmark':<50} {'Time (s)':>10} {'Items':>10} {'Throughput':>14}"
    sep = "-" * len(header)

    print()
    print("=" * len(header))
    print("cfgmorph - Performance Benchmarks")
    print("=" * len(header))
    print()
    print(header)
    print(sep)

    for r in results:
        print(
            f"{r.name:<50} {r.mean_seconds:>10.4f} {r.items_processed:>10} "
            f"{r.throughput_per_sec:>12.2f}/s"
        )

    print(sep)
    print()
    k, c = fit_power_law([s for s, _ in rows], [steps for _, steps in rows])
    print(f"Attack cost fit: steps ~ {c:.1f} * |V'|^{k:.2f}")
    print()
    sys.stdout.write(scaling_csv(rows))


if __name__ == "__main__":
    main()
