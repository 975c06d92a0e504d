"""Utility functions for cfgmorph."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from pathlib import Path

from cfgmorph.layout import GENERAL_REGISTERS
from cfgmorph.models import AttackReport, GameReport
from cfgmorph.transform import ObfuscatedProgram

logger = logging.getLogger(__name__)


def format_obfuscation_summary(ob: ObfuscatedProgram) -> str:
    """Format an obfuscation run as a human-readable report.

    Args:
        ob: Result of the pipeline

    Returns:
        Formatted report string
    """
    fillers = sum(1 for span in ob.node_map.values() if span.source_block is None)
    longest = max((len(p) for p in ob.morphism.edge_paths.values()), default=0)
    lines = [
        "=== Obfuscation Summary ===",
        f"Source Blocks:    {len(ob.source_cfg.nodes)}",
        f"Source Edges:     {len(ob.source_cfg.edges)}",
        f"Target Nodes:     {len(ob.target.nodes)}",
        f"Target Edges:     {len(ob.target.edges)}",
        f"Filler Nodes:     {fillers}",
        f"Longest Path:     {longest} intermediates",
        f"Extra Hops:       {ob.extra_hops}",
        f"Instructions:     {len(ob.source)} -> {len(ob.program)}",
        "===========================",
    ]
    return "\n".join(lines)


def format_game_report(full: GameReport, one: GameReport) -> str:
    """Format the two recovery games side by side.

    Args:
        full: Full-recovery game
        one: One-recovery game

    Returns:
        Formatted report string
    """
    lines = [
        "=== Recovery Games ===",
        f"|V'|:             {full.v_size}",
        f"|N|:              {full.n_size}",
    ]
    for report in (full, one):
        empirical = f"{report.empirical:.6f}" if report.empirical is not None else "n/a"
        lines.append(
            f"{report.game:<5} closed form {float(report.closed_form):.6f} "
            f"({report.closed_form}), empirical {empirical} "
            f"over {report.trials} trials"
        )
    lines.append("======================")
    return "\n".join(lines)


def format_attack_report(report: AttackReport) -> str:
    """Format the outcome of the dynamic attack.

    Args:
        report: Attack result

    Returns:
        Formatted report string
    """
    lines = [
        "=== Dynamic Attack ===",
        f"Node Visits:      {len(report.visits)}",
        f"Active Visits:    {len(report.active_visits)}",
        f"Recovered Nodes:  {sorted(report.recovered_active)}",
        f"Mutations:        {report.mutations_tested}",
        f"VM Steps:         {report.vm_steps_total}",
    ]
    if report.correct is not None:
        lines.append(f"Correct:          {report.correct}")
    if report.complete is not None:
        lines.append(f"Complete:         {report.complete}")
    lines.append("======================")
    return "\n".join(lines)


def dump_json(data: Mapping[str, object], path: Path | str) -> None:
    """Write a JSON document with stable key order."""
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    logger.debug(f"Wrote {path}")


def load_json(path: Path | str) -> dict[str, object]:
    """Read a JSON document written by :func:`dump_json`."""
    return json.loads(Path(path).read_text())


def parse_inputs(pairs: tuple[str, ...]) -> dict[int, int]:
    """Parse ``r0=5`` assignments into register values.

    Each entry may hold several comma-separated assignments
    (``r0=3,r1=4``); later assignments win.

    Raises:
        ValueError: On a malformed assignment or unknown register
    """
    inputs: dict[int, int] = {}
    for entry in pairs:
        for pair in entry.split(","):
            name, sep, value = pair.partition("=")
            name = name.strip().lower()
            if not sep or not name.startswith("r") or not name[1:].isdigit():
                raise ValueError(f"expected rN=value, got {pair!r}")
            index = int(name[1:])
            if not 0 <= index < GENERAL_REGISTERS:
                raise ValueError(f"input register must be r0..r{GENERAL_REGISTERS - 1}, got {name}")
            inputs[index] = int(value.strip(), 0)
    return inputs
