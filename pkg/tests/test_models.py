"""Tests for data models."""

from __future__ import annotations

from fractions import Fraction

import pytest

from cfgmorph.models import (
    SEED_ENV_VAR,
    AttackReport,
    Config,
    GameReport,
    ObfuscationParams,
    RunLimits,
    default_seed,
)


class TestConfig:
    """Tests for Config validation."""

    def test_default_config(self) -> None:
        """Default config has valid defaults."""
        config = Config()
        assert config.seed == 0
        assert config.target_factor == 4.0
        assert config.edge_budget_factor == 1.5
        assert config.extra_hops == 2
        assert config.max_steps == 10_000_000

    def test_derived_params(self) -> None:
        """params and limits carry the config values."""
        config = Config(target_factor=2.5, extra_hops=0, max_steps=50)
        assert config.params == ObfuscationParams(target_factor=2.5, extra_hops=0)
        assert config.limits == RunLimits(max_steps=50)
        assert config.to_dict()["target_factor"] == 2.5

    @pytest.mark.parametrize(
        ("field", "value"),
        [
            ("seed", -1),
            ("seed", 1 << 64),
            ("target_factor", 0.5),
            ("edge_budget_factor", 0.9),
            ("extra_hops", -1),
            ("max_steps", 0),
            ("max_restarts", 0),
            ("search_budget", 0),
        ],
    )
    def test_invalid_value_raises(self, field: str, value: float) -> None:
        """Out-of-range values raise ValueError naming the field."""
        with pytest.raises(ValueError, match=field):
            Config(**{field: value})


class TestDefaultSeed:
    """Tests for the seed environment variable."""

    def test_unset(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """No variable means seed 0."""
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        assert default_seed() == 0

    @pytest.mark.parametrize(("raw", "seed"), [("42", 42), ("0x10", 16), ("-1", (1 << 64) - 1)])
    def test_parsed(self, monkeypatch: pytest.MonkeyPatch, raw: str, seed: int) -> None:
        """Decimal and hex values are accepted and reduced to 64 bits."""
        monkeypatch.setenv(SEED_ENV_VAR, raw)
        assert default_seed() == seed

    def test_garbage(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """A non-integer value is an error."""
        monkeypatch.setenv(SEED_ENV_VAR, "seven")
        with pytest.raises(ValueError, match=SEED_ENV_VAR):
            default_seed()


class TestObfuscationParams:
    """Tests for ObfuscationParams."""

    def test_frozen(self) -> None:
        """Params cannot be changed after creation."""
        params = ObfuscationParams()
        with pytest.raises(AttributeError):
            params.extra_hops = 5  # type: ignore[misc]

    def test_invalid_extra_hops(self) -> None:
        """Negative hops are rejected."""
        with pytest.raises(ValueError, match="extra_hops"):
            ObfuscationParams(extra_hops=-2)


class TestGameReport:
    """Tests for GameReport."""

    def test_empirical(self) -> None:
        """The empirical rate is successes over trials."""
        report = GameReport("one", 10, 5, Fraction(1, 2), successes=30, trials=60)
        assert report.empirical == 0.5

    def test_no_trials(self) -> None:
        """Without trials there is no empirical rate."""
        assert GameReport("full", 4, 2, Fraction(1, 6)).empirical is None

    def test_to_dict(self) -> None:
        """The closed form is written as p/q and as a float."""
        data = GameReport("full", 20, 10, Fraction(1, 184756)).to_dict()
        assert data["closed_form"] == "1/184756"
        assert data["closed_form_float"] == pytest.approx(1 / 184756)

    @pytest.mark.parametrize(
        ("kwargs", "fragment"),
        [
            ({"game": "half"}, "game"),
            ({"n_size": 11}, "n_size"),
            ({"trials": -1}, "trials"),
            ({"successes": 5, "trials": 4}, "successes"),
        ],
    )
    def test_validation(self, kwargs: dict[str, object], fragment: str) -> None:
        """Inconsistent reports raise ValueError."""
        base: dict[str, object] = {
            "game": "one",
            "v_size": 10,
            "n_size": 5,
            "closed_form": Fraction(1, 2),
        }
        with pytest.raises(ValueError, match=fragment):
            GameReport(**{**base, **kwargs})  # type: ignore[arg-type]


class TestAttackReport:
    """Tests for AttackReport."""

    def test_active_sequence(self) -> None:
        """Active visits index into the visit list."""
        report = AttackReport(recovered_active={3, 7}, visits=[3, 1, 7, 2, 3], active_visits=[0, 2, 4])
        assert report.active_sequence == [3, 7, 3]

    def test_to_dict(self) -> None:
        """Sets are written sorted; a missing ground truth stays None."""
        data = AttackReport(recovered_active={9, 2}, visits=[2, 9], active_visits=[0, 1]).to_dict()
        assert data["recovered_active"] == [2, 9]
        assert data["visits"] == 2
        assert data["expected_active"] is None
        assert data["correct"] is None

    def test_negative_steps(self) -> None:
        """A negative step count is rejected."""
        with pytest.raises(ValueError, match="vm_steps_total"):
            AttackReport(vm_steps_total=-1)
