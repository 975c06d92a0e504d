"""Data models for cfgmorph."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction

SEED_ENV_VAR = "CFGMORPH_SEED"
SEED_MASK = (1 << 64) - 1


def default_seed() -> int:
    """Seed taken from ``CFGMORPH_SEED`` when set, otherwise 0."""
    raw = os.environ.get(SEED_ENV_VAR, "").strip()
    if not raw:
        return 0
    try:
        return int(raw, 0) & SEED_MASK
    except ValueError:
        raise ValueError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'") from None


@dataclass
class Config:
    """Run configuration shared by every command.

    Args:
        seed: 64-bit seed driving every random choice
        target_factor: Target graph size as a multiple of the source CFG size
        edge_budget_factor: Target edge count as a multiple of its node count
        extra_hops: Passive hops appended past every active node
        max_steps: Interpreter step limit
        max_restarts: Target graphs to try before giving up on a morphism
        search_budget: Backtracking steps allowed per morphism search
    """

    seed: int = 0
    target_factor: float = 4.0
    edge_budget_factor: float = 1.5
    extra_hops: int = 2
    max_steps: int = 10_000_000
    max_restarts: int = 20
    search_budget: int = 1_000_000

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= SEED_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned word, got {self.seed}")
        if self.target_factor < 1.0:
            raise ValueError(f"target_factor must be >= 1, got {self.target_factor}")
        if self.edge_budget_factor < 1.0:
            raise ValueError(
                f"edge_budget_factor must be >= 1, got {self.edge_budget_factor}"
            )
        if self.extra_hops < 0:
            raise ValueError(f"extra_hops must be >= 0, got {self.extra_hops}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.max_restarts < 1:
            raise ValueError(f"max_restarts must be >= 1, got {self.max_restarts}")
        if self.search_budget < 1:
            raise ValueError(f"search_budget must be >= 1, got {self.search_budget}")

    @property
    def params(self) -> ObfuscationParams:
        """Obfuscation parameters carried by this config."""
        return ObfuscationParams(
            target_factor=self.target_factor,
            edge_budget_factor=self.edge_budget_factor,
            extra_hops=self.extra_hops,
            max_restarts=self.max_restarts,
            search_budget=self.search_budget,
        )

    @property
    def limits(self) -> RunLimits:
        """Interpreter limits carried by this config."""
        return RunLimits(max_steps=self.max_steps)

    def to_dict(self) -> dict[str, int | float]:
        """Plain dict echoed into every JSON report."""
        return asdict(self)


@dataclass(frozen=True)
class ObfuscationParams:
    """Knobs of the obfuscation pipeline.

    Args:
        target_factor: Target graph size as a multiple of the source CFG size
        edge_budget_factor: Target edge count as a multiple of its node count
        extra_hops: Passive hops appended past every active node
        max_restarts: Target graphs to try before giving up
        search_budget: Backtracking steps allowed per morphism search
    """

    target_factor: float = 4.0
    edge_budget_factor: float = 1.5
    extra_hops: int = 2
    max_restarts: int = 20
    search_budget: int = 1_000_000

    def __post_init__(self) -> None:
        if self.target_factor < 1.0:
            raise ValueError(f"target_factor must be >= 1, got {self.target_factor}")
        if self.edge_budget_factor < 1.0:
            raise ValueError(
                f"edge_budget_factor must be >= 1, got {self.edge_budget_factor}"
            )
        if self.extra_hops < 0:
            raise ValueError(f"extra_hops must be >= 0, got {self.extra_hops}")
        if self.max_restarts < 1:
            raise ValueError(f"max_restarts must be >= 1, got {self.max_restarts}")
        if self.search_budget < 1:
            raise ValueError(f"search_budget must be >= 1, got {self.search_budget}")


@dataclass(frozen=True)
class RunLimits:
    """Interpreter limits.

    Args:
        max_steps: Maximum instructions executed before StepLimitExceeded
    """

    max_steps: int = 10_000_000

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass
class GameReport:
    """Outcome of one security game.

    Args:
        game: "full" or "one"
        v_size: Number of nodes in the obfuscated graph
        n_size: Number of active nodes
        closed_form: Exact success probability of a random guess
        successes: Successful guesses observed
        trials: Number of sampled guesses
    """

    game: str
    v_size: int
    n_size: int
    closed_form: Fraction
    successes: int = 0
    trials: int = 0

    def __post_init__(self) -> None:
        if self.game not in ("full", "one"):
            raise ValueError(f"game must be 'full' or 'one', got '{self.game}'")
        if not 0 <= self.n_size <= self.v_size:
            raise ValueError(f"n_size must be in [0, v_size], got {self.n_size}")
        if self.trials < 0:
            raise ValueError(f"trials must be >= 0, got {self.trials}")
        if not 0 <= self.successes <= self.trials:
            raise ValueError(f"successes must be in [0, trials], got {self.successes}")

    @property
    def empirical(self) -> float | None:
        """Observed success rate, or None when no trial was run."""
        if self.trials == 0:
            return None
        return self.successes / self.trials

    def to_dict(self) -> dict[str, object]:
        """JSON-ready representation; the closed form is kept as 'p/q'."""
        return {
            "game": self.game,
            "v_size": self.v_size,
            "n_size": self.n_size,
            "closed_form": str(self.closed_form),
            "closed_form_float": float(self.closed_form),
            "empirical": self.empirical,
            "successes": self.successes,
            "trials": self.trials,
        }


@dataclass
class AttackReport:
    """Result of the dynamic-analysis attack.

    Args:
        recovered_active: Target nodes judged active
        visits: Node entries of the observed run, in order
        active_visits: Indexes into ``visits`` judged active
        vm_steps_total: Instructions executed across every run of the attack
        mutations_tested: Number of mutated programs executed
        expected_active: Active nodes the attacked run exercises, when the
            source program is known
        correct: Whether the recovered visits match those of the source run
        metadata_active: Every active image of the obfuscation, from the metadata
    """

    recovered_active: set[int] = field(default_factory=set)
    visits: list[int] = field(default_factory=list)
    active_visits: list[int] = field(default_factory=list)
    vm_steps_total: int = 0
    mutations_tested: int = 0
    expected_active: set[int] | None = None
    correct: bool | None = None
    metadata_active: set[int] | None = None

    def __post_init__(self) -> None:
        if self.vm_steps_total < 0:
            raise ValueError(f"vm_steps_total must be >= 0, got {self.vm_steps_total}")

    @property
    def active_sequence(self) -> list[int]:
        """Nodes of the active visits in execution order."""
        return [self.visits[i] for i in self.active_visits]

    @property
    def complete(self) -> bool | None:
        """Whether every active image of the obfuscation was recovered."""
        if self.metadata_active is None:
            return None
        return self.recovered_active == self.metadata_active

    def to_dict(self) -> dict[str, object]:
        """JSON-ready representation."""
        return {
            "recovered_active": sorted(self.recovered_active),
            "active_sequence": self.active_sequence,
            "visits": len(self.visits),
            "vm_steps_total": self.vm_steps_total,
            "mutations_tested": self.mutations_tested,
            "expected_active": (
                sorted(self.expected_active) if self.expected_active is not None else None
            ),
            "correct": self.correct,
            "complete": self.complete,
        }
