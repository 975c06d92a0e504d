"""Tests for utility functions."""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import pytest

from cfgmorph.models import AttackReport, GameReport
from cfgmorph.transform import ObfuscatedProgram
from cfgmorph.utils import (
    dump_json,
    format_attack_report,
    format_game_report,
    format_obfuscation_summary,
    load_json,
    parse_inputs,
)


class TestParseInputs:
    """Tests for register assignments."""

    def test_basic(self) -> None:
        """Decimal and hex values are accepted."""
        assert parse_inputs(("r0=5", "R1=0x10")) == {0: 5, 1: 16}

    def test_empty(self) -> None:
        """No assignment gives no input."""
        assert parse_inputs(()) == {}

    @pytest.mark.parametrize("pair", ["r0", "x1=2", "r=3", "r0=abc"])
    def test_malformed(self, pair: str) -> None:
        """Malformed assignments raise ValueError."""
        with pytest.raises(ValueError):
            parse_inputs((pair,))

    def test_comma_separated(self) -> None:
        """One entry may assign several registers."""
        assert parse_inputs(("r0=3,r1=4", "r2=5")) == {0: 3, 1: 4, 2: 5}

    def test_upper_registers(self) -> None:
        """r6 and r7 take inputs like the others."""
        assert parse_inputs(("r6=1", "r7=0x2")) == {6: 1, 7: 2}

    @pytest.mark.parametrize("pair", ["r8=1", "r0=1,r9=2"])
    def test_register_out_of_range(self, pair: str) -> None:
        """Only r0..r7 take inputs."""
        with pytest.raises(ValueError, match="r0..r7"):
            parse_inputs((pair,))


class TestFormatting:
    """Tests for the text reports."""

    def test_obfuscation_summary(self, ob_loop: ObfuscatedProgram) -> None:
        """The summary names the source and target sizes."""
        text = format_obfuscation_summary(ob_loop)
        assert text.startswith("=== Obfuscation Summary ===")
        assert f"Target Nodes:     {len(ob_loop.target.nodes)}" in text
        assert f"Source Blocks:    {len(ob_loop.source_cfg.nodes)}" in text
        assert f"-> {len(ob_loop.program)}" in text

    def test_game_report(self) -> None:
        """Both games are listed with their closed forms."""
        full = GameReport("full", 20, 10, Fraction(1, 184756), successes=0, trials=100)
        one = GameReport("one", 20, 10, Fraction(1, 2))
        text = format_game_report(full, one)
        assert "1/184756" in text
        assert "empirical 0.000000 over 100 trials" in text
        assert "empirical n/a over 0 trials" in text

    def test_attack_report(self) -> None:
        """Correctness appears only when the ground truth is known."""
        report = AttackReport(recovered_active={4, 1}, visits=[1, 2, 4], active_visits=[0, 2])
        assert "Correct" not in format_attack_report(report)
        report.correct = True
        text = format_attack_report(report)
        assert "Recovered Nodes:  [1, 4]" in text
        assert "Correct:          True" in text
        assert "Complete" not in text
        report.metadata_active = {1, 4, 9}
        assert "Complete:         False" in format_attack_report(report)


class TestJson:
    """Tests for the JSON helpers."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Documents are written with sorted keys and read back."""
        path = tmp_path / "doc.json"
        dump_json({"b": 1, "a": [1, 2]}, path)
        assert load_json(path) == {"a": [1, 2], "b": 1}
        assert path.read_text().index('"a"') < path.read_text().index('"b"')
