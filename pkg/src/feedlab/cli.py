"""feedlab command line: serve the platform, administer studies, simulate.

Admin subcommands (create, upload-entities, export, figure-data) talk to a
running service over HTTP; simulate hosts an embedded service unless
--base-url points at a deployment. Configuration comes from flags or
FEEDLAB_* environment variables (FEEDLAB_DB_PATH, FEEDLAB_API_KEY,
FEEDLAB_BIND_ADDR, FEEDLAB_BASE_URL, FEEDLAB_UI_DIR).
"""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import httpx
import uvicorn

from .export import FIGURE_SESSION_COLUMNS, figure_rows_from_records
from .sim import AgentModel, simulate
from .store import Store


def _client(base_url: str, api_key: str | None) -> httpx.Client:
    headers = {"X-API-Key": api_key} if api_key else {}
    return httpx.Client(base_url=base_url, headers=headers, timeout=60.0)


def _fail_on_error(response: httpx.Response) -> httpx.Response:
    if response.status_code >= 400:
        try:
            body = response.json()
            message = f"{body.get('code')}: {body.get('message')}"
        except ValueError:
            message = response.text
        raise click.ClickException(f"HTTP {response.status_code} — {message}")
    return response


@click.group()
def main():
    """Feed-based social-media experiments: serve, administer, simulate."""


@main.command()
@click.option("--bind", envvar="FEEDLAB_BIND_ADDR", default="127.0.0.1:8000", show_default=True)
@click.option("--db", envvar="FEEDLAB_DB_PATH", default="feedlab.db", show_default=True)
@click.option("--api-key", envvar="FEEDLAB_API_KEY", default=None)
@click.option("--ui-dir", envvar="FEEDLAB_UI_DIR", default=None)
def serve(bind: str, db: str, api_key: str | None, ui_dir: str | None):
    """Run the platform service."""
    from .service import create_app

    host, _, port = bind.partition(":")
    store = Store(db)
    app = create_app(store, api_key=api_key, ui_dir=ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="info")


@main.command()
@click.option("-f", "--file", "config_path", required=True, type=click.Path(exists=True))
@click.option("--base-url", envvar="FEEDLAB_BASE_URL", default="http://127.0.0.1:8000")
@click.option("--api-key", envvar="FEEDLAB_API_KEY", default=None)
def create(config_path: str, base_url: str, api_key: str | None):
    """Create an experiment from a JSON config; prints its slug URL."""
    config = json.loads(Path(config_path).read_text())
    with _client(base_url, api_key) as client:
        reply = _fail_on_error(client.post("/api/experiments", json=config)).json()
    click.echo(json.dumps(reply, indent=2))


@main.command("upload-entities")
@click.option("-f", "--file", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--set-id", required=True)
@click.option("--name", default=None)
@click.option("--base-url", envvar="FEEDLAB_BASE_URL", default="http://127.0.0.1:8000")
@click.option("--api-key", envvar="FEEDLAB_API_KEY", default=None)
def upload_entities(csv_path: str, set_id: str, name: str | None, base_url: str, api_key: str | None):
    """Upload an entity-set CSV."""
    raw = Path(csv_path).read_bytes()
    params = {"set_id": set_id}
    if name:
        params["name"] = name
    with _client(base_url, api_key) as client:
        reply = _fail_on_error(
            client.post("/api/entity-sets", params=params, content=raw)
        ).json()
    click.echo(json.dumps(reply, indent=2))


@main.command("simulate")
@click.option("-f", "--file", "config_path", required=True, type=click.Path(exists=True))
@click.option("--agents", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--parallel", default=0, show_default=True,
              help="worker threads; >1 relaxes determinism for load testing")
@click.option("--base-url", default=None, help="target a running deployment instead of embedding")
@click.option("--api-key", envvar="FEEDLAB_API_KEY", default=None)
@click.option("--db", envvar="FEEDLAB_DB_PATH", default=":memory:", show_default=True,
              help="database for the embedded service")
@click.option("--report", "report_path", default=None, type=click.Path(),
              help="also write the report JSON here")
@click.option("--share-prob", default=0.077, show_default=True)
@click.option("--like-prob", default=0.121, show_default=True)
@click.option("--social-proof", default=0.0, show_default=True)
@click.option("--position-decay", default=1.0, show_default=True)
@click.option("--dwell-base-ms", default=3000, show_default=True)
@click.option("--dwell-noise", default=0.35, show_default=True)
def simulate_cmd(config_path, agents, seed, parallel, base_url, api_key, db, report_path,
                 share_prob, like_prob, social_proof, position_decay, dwell_base_ms, dwell_noise):
    """Run synthetic agents through a study, end to end."""
    config = json.loads(Path(config_path).read_text())
    model = AgentModel(
        base_share_prob=share_prob,
        base_like_prob=like_prob,
        social_proof_coef=social_proof,
        position_decay=position_decay,
        dwell_base_ms=dwell_base_ms,
        dwell_noise=dwell_noise,
    )
    report = simulate(
        config,
        model,
        n_agents=agents,
        seed=seed,
        base_url=base_url,
        api_key=api_key,
        db_path=db,
        parallel=parallel,
    )
    payload = json.dumps(report.to_dict(), indent=2)
    if report_path:
        Path(report_path).write_text(payload)
    click.echo(payload)


@main.command()
@click.option("--id", "experiment_id", required=True)
@click.option("--kind", default="interactions", show_default=True,
              type=click.Choice(["interactions", "surveys", "diversity"]))
@click.option("--format", "fmt", default="csv", show_default=True,
              type=click.Choice(["csv", "jsonl"]))
@click.option("-o", "--out", default=None, type=click.Path())
@click.option("--base-url", envvar="FEEDLAB_BASE_URL", default="http://127.0.0.1:8000")
@click.option("--api-key", envvar="FEEDLAB_API_KEY", default=None)
def export(experiment_id, kind, fmt, out, base_url, api_key):
    """Download experiment data."""
    with _client(base_url, api_key) as client:
        reply = _fail_on_error(
            client.get(
                f"/api/experiments/{experiment_id}/export",
                params={"kind": kind, "format": fmt},
            )
        )
    if out:
        Path(out).write_bytes(reply.content)
        click.echo(f"wrote {out}")
    else:
        sys.stdout.write(reply.text)


@main.command("figure-data")
@click.option("--id", "experiment_id", required=True)
@click.option("--out", "out_dir", default=".", show_default=True, type=click.Path())
@click.option("--base-url", envvar="FEEDLAB_BASE_URL", default="http://127.0.0.1:8000")
@click.option("--api-key", envvar="FEEDLAB_API_KEY", default=None)
def figure_data(experiment_id, out_dir, base_url, api_key):
    """Plot-ready CSVs: per-session dwell series and the mean-dwell curve."""
    with _client(base_url, api_key) as client:
        export_reply = _fail_on_error(
            client.get(
                f"/api/experiments/{experiment_id}/export",
                params={"kind": "interactions", "format": "jsonl"},
            )
        )
        curve_reply = _fail_on_error(
            client.get(f"/api/experiments/{experiment_id}/dwell-by-position")
        )
    records = [json.loads(line) for line in export_reply.text.splitlines() if line]
    rows = figure_rows_from_records(records)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    sessions_path = out / "figure_sessions.csv"
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIGURE_SESSION_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in FIGURE_SESSION_COLUMNS])
    sessions_path.write_text(buf.getvalue())

    curve_path = out / "figure_mean_dwell.csv"
    curve_path.write_bytes(curve_reply.content)
    click.echo(f"wrote {sessions_path} and {curve_path}")


if __name__ == "__main__":
    main()
