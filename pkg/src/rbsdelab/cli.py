"""Thin command-line client for the laboratory service.

Commands talk to the HTTP API.  Without ``--server`` the app is mounted
in process over an ASGI transport, so single-machine runs need no network
and still exercise the exact service surface; with ``--server URL`` the
same commands drive a remote instance and artifacts are written locally.

Exit codes follow the CI contract: 0 pass, 1 tolerance failure, 2 bad
configuration or arguments, 3 resource limits.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # In-process default: drive the ASGI app through starlette's sync
    # portal, so single-machine runs hit the real HTTP surface without a
    # socket.
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code >= 400:
        detail = response.json().get("detail", response.text)
        click.echo(f"error: {detail}", err=True)
        sys.exit(2)
    return response.json()


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; defaults to the in-process app.")
@click.pass_context
def main(ctx, server):
    """Reflected-BSDE laboratory client."""
    ctx.obj = {"server": server}


@main.command("list")
@click.pass_context
def list_cmd(ctx):
    """List built-in scenarios."""
    with make_client(ctx.obj["server"]) as client:
        response = client.get("/scenarios")
        response.raise_for_status()
        for entry in response.json()["scenarios"]:
            click.echo(f"{entry['name']:28s} {entry['description']}")


@main.command("run")
@click.argument("config", metavar="<config>")
@click.option("--out", default=".", type=click.Path(), help="Artifact directory.")
@click.pass_context
def run_cmd(ctx, config, out):
    """Run a scenario: a config JSON file or a built-in name."""
    path = Path(config)
    if path.exists():
        try:
            payload = {"config": json.loads(path.read_text(encoding="utf-8"))}
        except json.JSONDecodeError as exc:
            click.echo(f"error: config does not parse: {exc}", err=True)
            sys.exit(2)
    else:
        payload = {"name": config}

    with make_client(ctx.obj["server"]) as client:
        data = _post(client, "/scenarios/run", payload)

    out_dir = Path(out)
    if data["exit_code"] != 2:
        out_dir.mkdir(parents=True, exist_ok=True)
        for artifact in data["artifacts"]:
            (out_dir / artifact["name"]).write_text(artifact["content"], encoding="utf-8")
    status = "PASS" if data["passed"] else "FAIL"
    click.echo(f"{data['scenario']}: {status} (exit {data['exit_code']})")
    if "error" in data["summary"]:
        click.echo(f"  {data['summary']['error']}", err=True)
    sys.exit(data["exit_code"])


@main.command("run-all")
@click.option("--out", default=".", type=click.Path(), help="Parent artifact directory.")
@click.option("--parallel/--serial", default=False, show_default=True,
              help="Run scenarios concurrently (outputs are identical either way).")
@click.pass_context
def run_all_cmd(ctx, out, parallel):
    """Run every built-in scenario into per-scenario output directories."""
    with make_client(ctx.obj["server"]) as client:
        response = client.get("/scenarios")
        response.raise_for_status()
        names = [s["name"] for s in response.json()["scenarios"]]

        def run_one(name):
            return name, _post(client, "/scenarios/run", {"name": name})

        if parallel:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor() as pool:
                results = list(pool.map(run_one, names))
        else:
            results = [run_one(name) for name in names]

    worst = 0
    for name, data in results:
        scenario_dir = Path(out) / name
        scenario_dir.mkdir(parents=True, exist_ok=True)
        for artifact in data["artifacts"]:
            (scenario_dir / artifact["name"]).write_text(
                artifact["content"], encoding="utf-8"
            )
        status = "PASS" if data["passed"] else "FAIL"
        click.echo(f"{name}: {status} (exit {data['exit_code']})")
        worst = max(worst, data["exit_code"])
    sys.exit(worst)


@main.command("dump-model")
@click.argument("config", type=click.Path(exists=True), metavar="<config>")
@click.option("--out", default=None, type=click.Path(), help="CSV output path.")
@click.pass_context
def dump_model_cmd(ctx, config, out):
    """Build the lattice for a model config and dump its nodes to CSV."""
    try:
        spec = json.loads(Path(config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        click.echo(f"error: config does not parse: {exc}", err=True)
        sys.exit(2)
    model_spec = spec.get("model", spec)

    with make_client(ctx.obj["server"]) as client:
        data = _post(client, "/model/dump", {"model": model_spec})

    if out:
        Path(out).write_text(data["csv"], encoding="utf-8")
        click.echo(f"wrote {out}: {data['nodes']} nodes on {data['levels']} levels")
    else:
        click.echo(data["csv"], nl=False)
    sys.exit(0 if data["diagnostics_passed"] else 1)


@main.command("verify")
@click.argument("quadruple_csv", type=click.Path(exists=True))
@click.argument("barrier_csv", type=click.Path(exists=True))
@click.option("--tolerance", default=1e-12, show_default=True)
@click.pass_context
def verify_cmd(ctx, quadruple_csv, barrier_csv, tolerance):
    """Check a dumped solution quadruple against a dumped barrier."""
    payload = {
        "quadruple_csv": Path(quadruple_csv).read_text(encoding="utf-8"),
        "barrier_csv": Path(barrier_csv).read_text(encoding="utf-8"),
        "tolerance": tolerance,
    }
    with make_client(ctx.obj["server"]) as client:
        data = _post(client, "/verify", payload)
    for check, value in sorted(data["checks"].items()):
        click.echo(f"{check}: {value!r}")
    click.echo("PASS" if data["passed"] else "FAIL")
    sys.exit(0 if data["passed"] else 1)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve_cmd(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
