"""Command-line interface.

run        full experiment from a JSON config
unlearn    remove a client from a finished session directory
audit      verify a chain export, a certificate, or a client's unlearning
cost-model closed-form simulated-time totals and the reference table
script     replay a scripted session of raw contract operations
"""

from __future__ import annotations

import os
import sys

import click

from . import __version__
from .harness.config import ConfigError, CostParams, ExperimentConfig, apply_env_overrides
from .harness.costs import estimate_time_cost, reference_table
from .harness.runner import RunnerError, run_experiment, run_script, unlearn_session
from .ledger import ChainDecodeError, import_chain, import_chain_jsonl, verify_chain
from .unlearn import NoRequestFound, UnlearnCertificate, audit_unlearning, verify_certificate


@click.group()
@click.version_option(__version__)
def main():
    """Ledger-certified federated learning with exact unlearning."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--parallel-clients", is_flag=True, help="Train clients in a thread pool.")
def run_cmd(config_path: str, out_dir: str, parallel_clients: bool):
    """Run a full session and write its artifacts to OUT."""
    try:
        config = apply_env_overrides(ExperimentConfig.load(config_path), os.environ)
        session, metrics = run_experiment(config, out_dir, parallel_clients=parallel_clients)
    except (ConfigError, RunnerError) as exc:
        raise click.ClickException(str(exc))
    final = metrics[-1]
    click.echo(f"rounds: {len(metrics)}")
    click.echo(f"final test accuracy: {final.test_accuracy:.4f}")
    click.echo(f"simulated time with chain: {final.time_with_chain}")
    click.echo(f"simulated time without chain: {final.time_without_chain}")
    if session.certificate is not None:
        click.echo(f"unlearned client: {session.certificate.client_id}")
    click.echo(f"artifacts in {out_dir}")


@main.command("unlearn")
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--client", "client_id", required=True)
def unlearn_cmd(session_dir: str, client_id: str):
    """Unlearn CLIENT from the session stored in SESSION."""
    try:
        certificate = unlearn_session(session_dir, client_id)
    except (ConfigError, RunnerError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"unlearned {client_id}; rollback round {certificate.rollback_round}")
    click.echo(f"certificate: {os.path.join(session_dir, 'certificate.json')}")
    click.echo(f"chain_ok: {certificate.chain_ok}")


def _load_chain(path: str):
    if path.endswith(".jsonl"):
        return import_chain_jsonl(path)
    return import_chain(path)


@main.command("audit")
@click.option("--chain", "chain_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cert", "cert_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--client", "client_id")
def audit_cmd(chain_path: str, cert_path: str | None, client_id: str | None):
    """Verify a chain export; optionally check a certificate or report a
    client's unlearning evidence."""
    try:
        chain = _load_chain(chain_path)
    except ChainDecodeError as exc:
        raise click.ClickException(f"cannot decode chain: {exc}")
    report = verify_chain(chain)
    if report.ok:
        click.echo(f"chain OK: {len(chain.blocks)} blocks, {len(chain.all_txs())} transactions")
    else:
        click.echo(f"chain BROKEN at block {report.first_bad_height}: {report.reason}")
    failed = not report.ok

    if cert_path is not None:
        certificate = UnlearnCertificate.load(cert_path)
        ok, problems = verify_certificate(certificate, chain)
        if ok:
            click.echo(f"certificate OK: client {certificate.client_id}, "
                       f"request seq {certificate.request_seq}, complete seq {certificate.complete_seq}")
        else:
            click.echo("certificate INVALID:")
            for problem in problems:
                click.echo(f"  - {problem}")
            failed = True

    if client_id is not None:
        try:
            audit = audit_unlearning(chain, client_id)
        except NoRequestFound as exc:
            raise click.ClickException(str(exc))
        click.echo(audit.to_json(), nl=False)
        failed = failed or not audit.chain_ok

    if failed:
        sys.exit(1)


@main.command("cost-model")
@click.option("--epochs", type=int, help="Epoch count E to estimate.")
@click.option("--init", "init_cost", type=int, default=35, show_default=True)
@click.option("--consensus", "consensus_cost", type=int, default=3, show_default=True)
@click.option("--tx", "tx_cost", type=int, default=2, show_default=True)
@click.option("--epoch-cost", type=int, default=26, show_default=True)
@click.option("--table", is_flag=True, help="Check the model against the published reference rows.")
def cost_model_cmd(epochs: int | None, init_cost: int, consensus_cost: int, tx_cost: int, epoch_cost: int, table: bool):
    """Simulated-time totals with and without the ledger."""
    params = CostParams(init_cost=init_cost, consensus_cost=consensus_cost, tx_cost=tx_cost, epoch_cost=epoch_cost)
    if not table and epochs is None:
        raise click.ClickException("pass --epochs E or --table")
    if epochs is not None:
        est = estimate_time_cost(epochs, params)
        click.echo(f"epochs: {est.epochs}")
        click.echo(f"normal: {est.normal}")
        click.echo(f"ours: {est.ours}")
        click.echo(f"overhead: {est.overhead} ({est.overhead_ratio:.4%})")
    if table:
        click.echo(f"{'row':>8} {'epochs':>7} {'reported':>15} {'computed':>15} verdict")
        for row in reference_table(params):
            reported = f"{row.reported_normal}/{row.reported_ours}"
            computed = f"{row.computed_normal}/{row.computed_ours}"
            verdict = "reproduced" if row.consistent else "inconsistent (reported row does not fit its own constants)"
            click.echo(f"{row.label:>8} {row.epochs:>7} {reported:>15} {computed:>15} {verdict}")


@main.command("script")
@click.option("--file", "script_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
def script_cmd(script_path: str, out_dir: str | None):
    """Replay a scripted session ({op, actor, args, expect_error} records)."""
    runner = run_script(script_path, out_dir=out_dir)
    for outcome in runner.outcomes:
        if outcome.ok:
            click.echo(f"[{outcome.index}] {outcome.op} {outcome.actor}: ok")
        else:
            click.echo(f"[{outcome.index}] {outcome.op} {outcome.actor}: rejected as expected ({outcome.error_type})")
    click.echo(f"chain: {len(runner.contract.chain.blocks)} blocks")


if __name__ == "__main__":
    main()
