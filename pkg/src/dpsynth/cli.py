"""Command-line client for the curation service.

Every subcommand builds the same request models the HTTP service accepts and
either dispatches to the in-process handlers (default) or POSTs them to a
running server (--server).  Exit codes: 0 ok, 2 configuration error,
3 infeasible selection plan, 4 external-service failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import httpx
import pydantic

from .errors import ConfigError, DpSynthError, ExternalServiceError, InfeasiblePlanError
from .pipeline import EXPLAINED_DEFAULTS, PipelineConfig, load_config
from .service.app import (
    handle_account,
    handle_calibrate,
    handle_mauve,
    handle_report,
    handle_run_all,
    handle_stage,
)
from .service.schemas import (
    AccountRequest,
    CalibrateRequest,
    MauveRequest,
    ReportRequest,
    RunAllRequest,
    StageRunRequest,
)

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_EXTERNAL = 4

_ROUTES = {
    AccountRequest: "/account",
    CalibrateRequest: "/account/calibrate",
    StageRunRequest: "/stages/run",
    RunAllRequest: "/runs",
    ReportRequest: "/report",
    MauveRequest: "/mauve",
}

_HANDLERS = {
    AccountRequest: handle_account,
    CalibrateRequest: handle_calibrate,
    StageRunRequest: handle_stage,
    RunAllRequest: handle_run_all,
    ReportRequest: handle_report,
    MauveRequest: handle_mauve,
}


def dispatch(ctx, request):
    """Run a request locally or against --server; returns a plain dict."""
    server = ctx.obj.get("server")
    if server is None:
        result = _HANDLERS[type(request)](request)
        return result if isinstance(result, dict) else result.model_dump()
    url = server.rstrip("/") + _ROUTES[type(request)]
    try:
        resp = httpx.post(url, json=json.loads(request.model_dump_json()), timeout=600.0)
    except httpx.HTTPError as exc:
        raise ExternalServiceError(f"cannot reach server {server}: {exc}") from exc
    if resp.status_code >= 400:
        body = resp.json() if resp.headers.get("content-type", "").startswith("application/json") else {}
        kind = body.get("error") or body.get("detail") or resp.text
        if body.get("kind") == "InfeasiblePlanError":
            err = InfeasiblePlanError(body.get("deficits") or [])
            raise err
        if resp.status_code == 502:
            raise ExternalServiceError(str(kind))
        raise ConfigError(str(kind))
    return resp.json()


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InfeasiblePlanError as exc:
            click.echo(str(exc), err=True)
            click.echo(f"per-cluster deficits: {list(map(int, exc.deficits))}", err=True)
            sys.exit(EXIT_INFEASIBLE)
        except ExternalServiceError as exc:
            click.echo(f"external service failure: {exc}", err=True)
            sys.exit(EXIT_EXTERNAL)
        except (ConfigError, pydantic.ValidationError, DpSynthError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


def _pipeline_config(config_path: str | None) -> PipelineConfig:
    if config_path is None:
        return PipelineConfig()
    return load_config(config_path)


@click.group()
@click.option("--server", default=None, help="Base URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Curate differentially private synthetic instruction corpora."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


def _stage_command(name: str, help_text: str):
    @main.command(name=name, help=help_text)
    @click.option("--workspace", "-w", required=True, type=click.Path())
    @click.option("--config", "-c", "config_path", default=None, type=click.Path(exists=True))
    @click.pass_context
    @cli_errors
    def cmd(ctx, workspace, config_path):
        req = StageRunRequest(workspace=workspace, stage=name, config=_pipeline_config(config_path))
        out = dispatch(ctx, req)
        click.echo(json.dumps(out, indent=1))

    return cmd


_stage_command("preprocess", "Deduplicate and filter the raw real corpus.")
_stage_command("train", "Train the private generator on the preprocessed corpus.")
_stage_command("sample", "Draw the initial synthetic pool from the trained generator.")
_stage_command("cluster", "Group synthetic embeddings with k-means.")
_stage_command("histogram", "Vote real embeddings into clusters and privatize the counts.")
_stage_command("plan", "Compute per-cluster selection quotas from the private histogram.")
_stage_command("resample", "Select the matching synthetic subset per the plan.")
_stage_command("canary", "Inject the configured canary, retrain, and measure leakage.")
_stage_command("pii-scan", "Screen the real corpus with the configured endpoint.")


@main.command("embed")
@click.option("--workspace", "-w", required=True, type=click.Path())
@click.option("--config", "-c", "config_path", default=None, type=click.Path(exists=True))
@click.pass_context
@cli_errors
def embed(ctx, workspace, config_path):
    """Embed both corpora with the builtin hashing featurizer."""
    config = _pipeline_config(config_path)
    config.embedding.method = "hash"
    out = dispatch(ctx, StageRunRequest(workspace=workspace, stage="embed", config=config))
    click.echo(json.dumps(out, indent=1))


@main.command("embed-import")
@click.option("--workspace", "-w", required=True, type=click.Path())
@click.option("--config", "-c", "config_path", default=None, type=click.Path(exists=True))
@click.option("--real", "real_path", required=True, type=click.Path(exists=True), help="External real-corpus embedding file.")
@click.option("--synthetic", "synthetic_path", required=True, type=click.Path(exists=True), help="External synthetic-corpus embedding file.")
@click.pass_context
@cli_errors
def embed_import(ctx, workspace, config_path, real_path, synthetic_path):
    """Import externally computed embedding files after alignment checks."""
    config = _pipeline_config(config_path)
    config.embedding.method = "import"
    config.embedding.real_path = str(Path(real_path).resolve())
    config.embedding.synthetic_path = str(Path(synthetic_path).resolve())
    out = dispatch(ctx, StageRunRequest(workspace=workspace, stage="embed", config=config))
    click.echo(json.dumps(out, indent=1))


@main.command("mauve")
@click.option("--workspace", "-w", required=True, type=click.Path())
@click.option("--config", "-c", "config_path", default=None, type=click.Path(exists=True))
@click.option("--rep", type=click.Choice(["unigram", "embedding"]), default="unigram", show_default=True)
@click.option("--c", "c_value", type=float, default=None, help="Frontier scaling constant override.")
@click.pass_context
@cli_errors
def mauve(ctx, workspace, config_path, rep, c_value):
    """Score closeness of the selected set against the real corpus."""
    config = _pipeline_config(config_path)
    if c_value is not None:
        if rep == "unigram":
            config.mauve.c_unigram = c_value
        else:
            config.mauve.c_embedding = c_value
    dispatch(ctx, StageRunRequest(workspace=workspace, stage="mauve", config=config))
    obj = dispatch(ctx, ReportRequest(workspace=workspace, artifact="mauve"))
    key = "unigram" if rep == "unigram" else "embedding_cluster"
    section = obj[key]
    click.echo(f"representation: {key}")
    click.echo(f"c: {section['c']}")
    click.echo(f"score: {section['score']:.6f}")
    click.echo("frontier:")
    for x, y in section["frontier"]:
        click.echo(f"  {x:.9f} {y:.9f}")


@main.group("account", invoke_without_command=True)
@click.option("--sigma", type=float, default=None, help="Training noise multiplier.")
@click.option("--q", type=float, default=None, help="Subsampling rate B/N.")
@click.option("--steps", type=int, default=None)
@click.option("--delta", type=float, default=None)
@click.option("--hist-sigma", type=float, default=None, help="Optional histogram release noise.")
@click.option("--grid-spacing", type=float, default=1e-4, show_default=True)
@click.pass_context
@cli_errors
def account(ctx, sigma, q, steps, delta, hist_sigma, grid_spacing):
    """Compose the training and histogram privacy costs into an (epsilon, delta) budget."""
    if ctx.invoked_subcommand is not None:
        return
    missing = [name for name, val in (("--sigma", sigma), ("--q", q), ("--steps", steps), ("--delta", delta)) if val is None]
    if missing:
        raise ConfigError(f"missing required options: {', '.join(missing)}")
    req = AccountRequest(sigma=sigma, q=q, steps=steps, delta=delta, hist_sigma=hist_sigma, grid_spacing=grid_spacing)
    out = dispatch(ctx, req)
    click.echo(f"epsilon: {out['epsilon']:.6f}")
    click.echo(f"delta: {out['delta']:.3e}")
    click.echo(f"discretization error bound: {out['error_bound']:.4f}")
    click.echo(f"directions: remove={out['direction_epsilons']['remove']:.6f} add={out['direction_epsilons']['add']:.6f}")
    click.echo("mechanisms:")
    for m in out["per_mechanism"]:
        extra = f" q={m['sampling_rate']}" if m.get("sampling_rate") is not None else f" sensitivity={m.get('sensitivity')}"
        click.echo(f"  - {m['kind']} sigma={m['sigma']} reps={m['repetitions']}{extra} standalone_eps={m['standalone_epsilon']:.6f}")


@account.command("calibrate")
@click.option("--epsilon", type=float, required=True, help="Target epsilon for the training mechanism.")
@click.option("--delta", type=float, required=True)
@click.option("--q", type=float, required=True)
@click.option("--steps", type=int, required=True)
@click.option("--grid-spacing", type=float, default=1e-4, show_default=True)
@click.pass_context
@cli_errors
def account_calibrate(ctx, epsilon, delta, q, steps, grid_spacing):
    """Find the noise multiplier that meets a target epsilon."""
    req = CalibrateRequest(epsilon=epsilon, delta=delta, q=q, steps=steps, grid_spacing=grid_spacing)
    out = dispatch(ctx, req)
    click.echo(f"sigma: {out['sigma']:.6f}")
    click.echo(f"achieved epsilon: {out['achieved_epsilon']:.6f}")
    click.echo(f"delta: {out['delta']:.3e}")


@main.command("run-all")
@click.option("--workspace", "-w", required=True, type=click.Path())
@click.option("--config", "-c", "config_path", default=None, type=click.Path(exists=True))
@click.pass_context
@cli_errors
def run_all_cmd(ctx, workspace, config_path):
    """Run every configured stage in order."""
    req = RunAllRequest(workspace=workspace, config=_pipeline_config(config_path))
    out = dispatch(ctx, req)
    for name, entry in out["stages"].items():
        click.echo(f"{name}: {', '.join(entry['outputs'])}")


@main.command("report")
@click.option("--workspace", "-w", required=True, type=click.Path())
@click.pass_context
@cli_errors
def report(ctx, workspace):
    """Print the consolidated run report."""
    out = dispatch(ctx, ReportRequest(workspace=workspace))
    click.echo(json.dumps(out, indent=1))


@main.command("explain")
@cli_errors
def explain():
    """List named defaults and what they control."""
    for key, value, description in EXPLAINED_DEFAULTS:
        click.echo(f"{key} = {value}  # {description}")


if __name__ == "__main__":
    main()
