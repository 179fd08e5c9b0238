"""Command line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import json
import logging
import sys

import click

from .config import load_config
from .errors import ConfigError, SpecforgeError
from .harness.mockpop3 import DEFAULT_PORT, MockConfig, MockPop3Server
from .pipeline import Pipeline, format_report

EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 1, 2


def _options(f):
    f = click.option("--seed", type=int, default=None, help="Override the configured seed.")(f)
    f = click.option("--provider", "provider", type=click.Choice(["live", "replay", "record"]), default=None,
                     help="Override the configured provider mode.")(f)
    f = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                     help="TOML run configuration.")(f)
    return f


def _execute(stage: str, config_path: str, provider, seed, naive: bool = False) -> None:
    try:
        cfg = load_config(config_path, provider=provider, seed=seed)
        pipe = Pipeline(cfg, naive=naive)
        out = pipe.run() if stage == "run" else pipe.run_stage(stage)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SpecforgeError as exc:
        click.echo(f"{stage} failed: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_STAGE)
    if stage in ("report", "run"):
        click.echo(format_report(out))
    elif stage == "repair":
        click.echo(f"repair {out.status} after {len(out.outcomes)} round(s): {' '.join(out.outcomes) or '-'}")
    elif isinstance(out, list):
        for p in out:
            click.echo(str(p))
    else:
        click.echo(str(out))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Protocol documents to I/O grammars, tested against servers."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


def _stage_command(name: str, help_text: str):
    @_options
    def cmd(config_path, provider, seed):
        _execute(name, config_path, provider, seed)

    cmd.__name__ = f"cmd_{name}"
    cmd.__doc__ = help_text
    main.command(name)(cmd)


for _name, _help in (
    ("ingest", "Split the configured RFCs into section records."),
    ("extract", "Classify sections and extract per-section micrographs."),
    ("graph", "Merge micrographs and compute minimal transition paths."),
    ("test", "Run every MTP against the SUT with the latest grammar."),
    ("repair", "Repair the synthesized grammar against the SUT."),
    ("report", "Summarize metrics and round logs."),
):
    _stage_command(_name, _help)


@main.command("synthesize")
@_options
@click.option("--naive", is_flag=True, help="Prompt with the protocol name only (no paths, no retrieval).")
def cmd_synthesize(config_path, provider, seed, naive):
    """Generate the round-0 grammar from MTPs and retrieved sections."""
    _execute("synthesize", config_path, provider, seed, naive=naive)


@main.command("run")
@_options
def cmd_run(config_path, provider, seed):
    """Every stage in order: ingest to report."""
    _execute("run", config_path, provider, seed)


@main.command("mock-server")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=DEFAULT_PORT, show_default=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Optional run configuration; its [sut] host and port are used.")
def cmd_mock_server(host, port, config_path):
    """Serve the bundled POP3 mock until interrupted."""
    try:
        if config_path:
            cfg = load_config(config_path)
            host, port = cfg.sut.host, cfg.sut.port or port
        srv = MockPop3Server(MockConfig(host=host, port=port))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SpecforgeError as exc:
        click.echo(f"mock-server failed: {exc}", err=True)
        sys.exit(EXIT_STAGE)
    click.echo(json.dumps({"listening": list(srv.address)}), err=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()


if __name__ == "__main__":
    main()
