"""Thin command-line client of the experiment service.

Subcommands POST resolved configs to the service endpoints and write the
returned reports to disk. By default requests run against an in-process
instance of the app (no server needed); `--server URL` targets a remote
instance started elsewhere with `bevkit serve`.

Reports are JSON (stable key order) plus CSV sidecars; a run's wall-clock
timestamp lives only in the separate `generated_at` field, so identical
config + seed reproduces byte-identical reports apart from it. The exit
code is nonzero iff a declared invariant check inside the run failed.
"""

from __future__ import annotations

import asyncio
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import httpx

from .configs import ConfigError, default_config_path, load_config


class ServiceClient:
    """POSTs to a remote server, or to the app in-process when no URL given."""

    def __init__(self, server: str | None):
        self.server = server

    def post(self, path: str, payload: dict) -> dict:
        if self.server:
            resp = httpx.post(self.server.rstrip("/") + path, json=payload,
                              timeout=600.0)
        else:
            from .service.app import app

            async def _call():
                transport = httpx.ASGITransport(app=app)
                async with httpx.AsyncClient(transport=transport,
                                             base_url="http://bevkit") as client:
                    return await client.post(path, json=payload, timeout=600.0)

            resp = asyncio.run(_call())
        if resp.status_code != 200:
            raise click.ClickException(f"service error {resp.status_code}: {resp.text}")
        return resp.json()


def _write_report(out_dir: Path, name: str, response: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = dict(response["report"])
    rows = report.pop("rows", [])
    document = {
        "ok": response["ok"],
        "checks": response["checks"],
        "report": report,
        "rows": rows,
    }
    path = out_dir / f"{name}_report.json"
    body = json.dumps(document, sort_keys=True, indent=2)
    # Timestamp appended outside the deterministic payload, as its own field.
    stamped = json.loads(body)
    stamped["generated_at"] = datetime.now(timezone.utc).isoformat()
    path.write_text(json.dumps(stamped, sort_keys=True, indent=2) + "\n")

    if rows:
        csv_path = out_dir / f"{name}_rows.csv"
        fields = sorted({k for row in rows for k in row})
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    return path


def _finish(command: str, response: dict, out: str | None) -> None:
    for name, passed in sorted(response["checks"].items()):
        click.echo(f"[{'PASS' if passed else 'FAIL'}] {name}")
    if out:
        path = _write_report(Path(out), command, response)
        click.echo(f"report: {path}")
    if not response["ok"]:
        sys.exit(1)


def _load(config_path: str | None, seed: int | None):
    path = Path(config_path) if config_path else default_config_path()
    try:
        return load_config(path, seed_override=seed)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; defaults to running in-process.")
@click.pass_context
def main(ctx, server):
    """Temporal-stereo depth, BEV pooling, and NMS experiments."""
    ctx.obj = ServiceClient(server)


def _run_command(name):
    @main.command(name=name, help=f"Run the {name} experiment and write its report.")
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="Experiment config YAML (bundled default when omitted).")
    @click.option("--seed", type=int, default=None, help="Override the global seed.")
    @click.option("--out", type=click.Path(), default=None, help="Report directory.")
    @click.option("--workers", type=int, default=None,
                  help="Override worker count for pooling.")
    @click.pass_obj
    def cmd(client, config_path, seed, out, workers):
        config = _load(config_path, seed)
        if workers is not None:
            config.pool.workers = workers
        response = client.post(f"/v1/{name}", {"config": config.model_dump(mode="json")})
        _finish(name, response, out)

    return cmd


_run_command("depth")
_run_command("nms")
_run_command("pool")


@main.command(name="gen-scene")
@click.option("--preset", type=str, default="static-planes",
              help="static-planes, moving-object, or random.")
@click.option("--seed", type=int, default=42)
@click.option("--out", type=click.Path(), default=".",
              help="Directory the scene YAML is written to.")
@click.pass_obj
def gen_scene(client, preset, seed, out):
    """Write a scene spec file for a named preset."""
    response = client.post("/v1/scene", {"preset": preset, "seed": seed})
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{preset.replace('-', '_')}.yaml"
    path.write_text(response["yaml_text"])
    click.echo(f"scene: {path}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the experiment service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
