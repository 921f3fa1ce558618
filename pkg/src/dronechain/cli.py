"""Command-line entry point.

Exit codes: 0 success, 1 reports differ, 2 scenario schema error,
3 runtime or usage error, 4 chain integrity failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .chainfile import ChainFileError, audit_chain, chain_graph, describe_block
from .crypto import PROVIDER_ENV_VAR
from .simnet import ScenarioError, SimulationError, diff_reports, load_scenario, run_scenario
from .trust_graph import to_dot, to_json

EXIT_DIFF = 1
EXIT_SCHEMA = 2
EXIT_RUNTIME = 3
EXIT_INTEGRITY = 4


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Tamper-evident ledger, trust-graph authentication and fleet simulator."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False), help="Scenario JSON file.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the scenario's master seed.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the MetricsReport JSON.")
@click.option("--trace", type=click.Path(dir_okay=False), default=None, help="Optional JSON-lines event trace.")
def run(scenario_path: str, seed: int | None, out: str, trace: str | None) -> None:
    """Run a simulation scenario and write its metrics report."""
    try:
        scenario = load_scenario(scenario_path, seed)
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot read scenario: {exc}")
    except ScenarioError as exc:
        _fail(EXIT_SCHEMA, f"invalid scenario field {exc}")
    provider = os.environ.get(PROVIDER_ENV_VAR) or None
    trace_file = None
    try:
        if trace:
            trace_file = open(trace, "w")
        report = run_scenario(scenario, provider=provider, trace=trace_file)
    except SimulationError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    except (OSError, ValueError) as exc:
        _fail(EXIT_RUNTIME, str(exc))
    finally:
        if trace_file is not None:
            trace_file.close()
    try:
        Path(out).write_text(report.to_json())
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot write report: {exc}")
    click.echo(report.to_csv(), nl=False)


def _load_chain(path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot read chain: {exc}")
    try:
        return audit_chain(data)
    except ChainFileError as exc:
        where = "config record" if exc.height < 0 else f"first bad height {exc.height}"
        _fail(EXIT_INTEGRITY, f"integrity failure at {where}: {exc}")


@main.command()
@click.option("--chain", "chain_path", required=True, type=click.Path(dir_okay=False), help="Persisted chain file.")
@click.option("--height", type=int, default=None, help="Block height to show (default: tip).")
def inspect(chain_path: str, height: int | None) -> None:
    """Verify a persisted chain and print one block's header and state digest."""
    audit = _load_chain(chain_path)
    try:
        info = describe_block(audit, height)
    except IndexError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    for key, value in info.items():
        click.echo(f"{key}: {value}")


@main.command()
@click.option("--chain", "chain_path", required=True, type=click.Path(dir_okay=False), help="Persisted chain file.")
@click.option("--format", "fmt", type=click.Choice(["dot", "json"]), default="dot", show_default=True)
@click.option("--anchors", default=None, help="Comma-separated hex account keys.")
def graph(chain_path: str, fmt: str, anchors: str | None) -> None:
    """Export the trust graph, or the subgraph relevant to the given anchors."""
    audit = _load_chain(chain_path)
    keys = []
    for item in (anchors or "").split(","):
        item = item.strip()
        if not item:
            continue
        try:
            keys.append(bytes.fromhex(item))
        except ValueError:
            _fail(EXIT_RUNTIME, f"anchor {item!r} is not hex")
    try:
        g = chain_graph(audit, keys)
    except KeyError as exc:
        _fail(EXIT_RUNTIME, f"unknown anchor {exc.args[0]}")
    if fmt == "dot":
        click.echo(to_dot(g), nl=False)
    else:
        click.echo(json.dumps(to_json(g), indent=2, sort_keys=True))


@main.command("report-diff")
@click.argument("a", type=click.Path(dir_okay=False))
@click.argument("b", type=click.Path(dir_okay=False))
def report_diff(a: str, b: str) -> None:
    """Compare two MetricsReports, ignoring wall-clock time."""
    try:
        ra = json.loads(Path(a).read_text())
        rb = json.loads(Path(b).read_text())
    except (OSError, ValueError) as exc:
        _fail(EXIT_RUNTIME, f"cannot load report: {exc}")
    diffs = diff_reports(ra, rb)
    if diffs:
        for path in diffs:
            click.echo(f"differs: {path}")
        sys.exit(EXIT_DIFF)
    click.echo("reports identical")


if __name__ == "__main__":
    main()
