"""Command-line interface for cfgmorph."""

from __future__ import annotations

import functools
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

import click

from cfgmorph.analysis import dynamic_attack, reconstruct_cfg, simulate_games
from cfgmorph.cfg import extract_cfg, is_isomorphic, to_dot, to_json
from cfgmorph.exceptions import (
    CfgMorphError,
    MissingMetadataError,
    MorphismError,
    ProgramError,
    StepLimitExceeded,
    VmError,
)
from cfgmorph.isa import Program, parse_program, serialize_program
from cfgmorph.models import Config, default_seed
from cfgmorph.pipeline import obfuscate, obfuscated_limits
from cfgmorph.transform import ObfuscatedProgram
from cfgmorph.utils import (
    dump_json,
    format_attack_report,
    format_game_report,
    format_obfuscation_summary,
    load_json,
    parse_inputs,
)
from cfgmorph.vm import run

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_PARSE = 3
EXIT_TIMEOUT = 4
EXIT_VM = 5
EXIT_MORPHISM = 6
EXIT_NOT_ISOMORPHIC = 7

F = TypeVar("F", bound=Callable[..., Any])


def exit_code_for(exc: CfgMorphError) -> int:
    """Process exit code of an error family."""
    if isinstance(exc, ProgramError):
        return EXIT_PARSE
    if isinstance(exc, StepLimitExceeded):
        return EXIT_TIMEOUT
    if isinstance(exc, VmError):
        return EXIT_VM
    if isinstance(exc, MorphismError):
        return EXIT_MORPHISM
    return EXIT_FAILURE


def _reports_errors(func: F) -> F:
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except CfgMorphError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exit_code_for(exc))

    return wrapper  # type: ignore[return-value]


def _seed_option(func: F) -> F:
    return click.option(
        "--seed", type=int, default=None, help="Master seed (default: $CFGMORPH_SEED or 0)"
    )(func)


def _max_steps_option(func: F) -> F:
    return click.option(
        "--max-steps", default=10_000_000, show_default=True, help="Interpreter step limit"
    )(func)


def _read_program(path: str) -> Program:
    return parse_program(Path(path).read_text())


def _config(seed: int | None, **overrides: Any) -> Config:
    try:
        return Config(seed=default_seed() if seed is None else seed, **overrides)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def _inputs(pairs: tuple[str, ...]) -> dict[int, int]:
    try:
        return parse_inputs(pairs)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--input") from exc


def _metadata_path(out_file: str) -> Path:
    return Path(out_file).with_suffix(".meta.json")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log debug detail")
def main(verbose: bool) -> None:
    """cfgmorph - CFG obfuscation by embedding into random graphs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


@main.command("obfuscate")
@click.argument("in_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_file", type=click.Path(dir_okay=False))
@_seed_option
@click.option("--target-factor", default=4.0, show_default=True, help="|V'| / |V|")
@click.option("--edge-budget", default=1.5, show_default=True, help="Target edges per node")
@click.option("--extra-hops", default=2, show_default=True, help="Passive hops after each active node")
@_max_steps_option
@click.option("--no-metadata", is_flag=True, help="Do not write the sidecar metadata file")
@_reports_errors
def cmd_obfuscate(
    in_file: str,
    out_file: str,
    seed: int | None,
    target_factor: float,
    edge_budget: float,
    extra_hops: int,
    max_steps: int,
    no_metadata: bool,
) -> None:
    """Rewrite IN_FILE into OUT_FILE with a random control-flow graph."""
    config = _config(
        seed,
        target_factor=target_factor,
        edge_budget_factor=edge_budget,
        extra_hops=extra_hops,
        max_steps=max_steps,
    )
    ob = obfuscate(_read_program(in_file), config.params, config.seed)
    Path(out_file).write_text(serialize_program(ob.program))
    if not no_metadata:
        meta = ob.to_metadata()
        meta["config"] = config.to_dict()
        dump_json(meta, _metadata_path(out_file))
    click.echo(format_obfuscation_summary(ob))


@main.command("run")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "-i", "inputs", multiple=True, help="Register input, e.g. r0=5")
@_seed_option
@_max_steps_option
@click.option("--json", "as_json", is_flag=True, help="Print a JSON result")
@_reports_errors
def cmd_run(
    file: str, inputs: tuple[str, ...], seed: int | None, max_steps: int, as_json: bool
) -> None:
    """Execute FILE on the VM and print its output log.

    An obfuscated FILE with its sidecar next to it gets a step limit derived
    from the source run, so --max-steps bounds the source program.
    """
    config = _config(seed, max_steps=max_steps)
    values = _inputs(inputs)
    limits = config.limits
    if _metadata_path(file).exists():
        ob = _load_obfuscation(file, None)
        limits = obfuscated_limits(ob, values, limits, config.seed)
        logger.info(f"Obfuscated program, step limit {limits.max_steps}")
    result = run(_read_program(file), values, limits, config.seed)
    if as_json:
        click.echo(
            json.dumps(
                {
                    "output": list(result.output),
                    "steps": result.steps,
                    "step_limit": limits.max_steps,
                    "config": config.to_dict(),
                }
            )
        )
    else:
        click.echo(" ".join(str(word) for word in result.output))
        click.echo(f"steps: {result.steps}")


@main.command("cfg")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--dot", "fmt", flag_value="dot", default=True, help="Graphviz output (default)")
@click.option("--json", "fmt", flag_value="json", help="Adjacency JSON output")
@_reports_errors
def cmd_cfg(file: str, fmt: str) -> None:
    """Print the control-flow graph of FILE."""
    graph = extract_cfg(_read_program(file))
    click.echo(to_json(graph) if fmt == "json" else to_dot(graph))


@main.command("compare")
@click.argument("file_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("file_b", type=click.Path(exists=True, dir_okay=False))
@_reports_errors
def cmd_compare(file_a: str, file_b: str) -> None:
    """Exit 0 iff the CFGs of FILE_A and FILE_B are isomorphic."""
    a = extract_cfg(_read_program(file_a))
    b = extract_cfg(_read_program(file_b))
    if is_isomorphic(a, b):
        click.echo("isomorphic")
        return
    click.echo(f"not isomorphic ({len(a.nodes)} vs {len(b.nodes)} nodes)")
    sys.exit(EXIT_NOT_ISOMORPHIC)


def _load_obfuscation(file: str, metadata: str | None) -> ObfuscatedProgram:
    meta_path = Path(metadata) if metadata else _metadata_path(file)
    try:
        data = load_json(meta_path)
    except (OSError, json.JSONDecodeError) as exc:
        raise MissingMetadataError(f"cannot read sidecar metadata {meta_path}: {exc}") from exc
    return ObfuscatedProgram.from_metadata(_read_program(file), data)


@main.command("attack")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.argument("metadata", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "-i", "inputs", multiple=True, help="Register input, e.g. r0=5")
@_seed_option
@_max_steps_option
@click.option("--summary", is_flag=True, help="Print a text summary instead of JSON")
@_reports_errors
def cmd_attack(
    file: str,
    metadata: str | None,
    inputs: tuple[str, ...],
    seed: int | None,
    max_steps: int,
    summary: bool,
) -> None:
    """Recover the active nodes of FILE by dynamic analysis."""
    config = _config(seed, max_steps=max_steps)
    ob = _load_obfuscation(file, metadata)
    report = dynamic_attack(ob, _inputs(inputs), config.limits, config.seed)
    recovered = reconstruct_cfg(report, ob)
    if summary:
        click.echo(format_attack_report(report))
        return
    payload = report.to_dict()
    payload["reconstructed"] = json.loads(to_json(recovered))
    payload["config"] = config.to_dict()
    click.echo(json.dumps(payload))


@main.command("games")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.argument("metadata", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", default=100_000, show_default=True, help="Monte-Carlo trials per game")
@_seed_option
@click.option("--json", "as_json", is_flag=True, help="Print JSON reports")
@_reports_errors
def cmd_games(
    file: str, metadata: str | None, trials: int, seed: int | None, as_json: bool
) -> None:
    """Play the recovery games against the obfuscation of FILE."""
    config = _config(seed)
    ob = _load_obfuscation(file, metadata)
    full, one = simulate_games(ob, trials, config.seed)
    if as_json:
        click.echo(
            json.dumps(
                {"full": full.to_dict(), "one": one.to_dict(), "config": config.to_dict()}
            )
        )
    else:
        click.echo(format_game_report(full, one))


if __name__ == "__main__":
    main()
