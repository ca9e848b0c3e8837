"""Command-line client for the fitting service.

By default commands run against an in-process instance of the HTTP service;
``--server`` points them at a remote one instead. Exit codes: 0 success,
2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import json
import sys

import click

from .config import resolve_config
from .errors import ConfigError, InvalidConfig, IoError, PosefitError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _client(server):
    import httpx

    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # In-process ASGI client; no socket involved.
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _fail(exit_code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(exit_code)


def _run(subcommand, config_path, sets, seed, server):
    try:
        # Resolve locally first so config errors surface without a round
        # trip; the resolved tree is sent verbatim.
        cfg = resolve_config(subcommand, config_path=config_path, sets=sets,
                             seed=seed)
    except (ConfigError, InvalidConfig) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except IoError as exc:
        _fail(EXIT_IO, str(exc))
    try:
        with _client(server) as client:
            resp = client.post(f"/{subcommand}", json={"config": cfg})
    except Exception as exc:  # connection-level failure
        _fail(EXIT_IO, f"cannot reach service: {exc}")
    payload = resp.json()
    if resp.status_code != 200 or not payload.get("ok", False):
        err = payload.get("error", {})
        _fail(err.get("exit_code", EXIT_NUMERIC),
              f"{err.get('type', 'Error')}: {err.get('message', resp.text)}")
    click.echo(json.dumps(payload["summary"], indent=2, sort_keys=True))


def _command(name, help_text):
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="JSON config file.")
    @click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                  help="Override a config key (dotted paths, JSON values).")
    @click.option("--seed", type=int, default=None, help="Override the seed.")
    @click.option("--server", default=None, metavar="URL",
                  help="Remote service URL (default: run in-process).")
    def cmd(config_path, sets, seed, server):
        _run(name, config_path, sets, seed, server)

    cmd.__name__ = f"cmd_{name.replace('-', '_')}"
    cmd = click.command(name=name, help=help_text)(cmd)
    return cmd


@click.group()
def main():
    """Pose-prior training and 3D body fitting from 2D evidence."""


main.add_command(_command(
    "synth", "Generate a synthetic body model, pose corpus and evidence."))
main.add_command(_command(
    "train-prior", "Train a normalizing-flow or GMM pose prior."))
main.add_command(_command(
    "fit", "Fit pose/shape/translation to keypoints and part masks."))
main.add_command(_command(
    "eval", "Write MPJPE/MPVPE/MPJPE-PA metrics for a fit result."))
main.add_command(_command(
    "sample", "Draw poses from a trained flow prior."))
main.add_command(_command(
    "interp", "Interpolate between two corpus poses in latent space."))


if __name__ == "__main__":
    main()
