"""Harness: config files, cost model, experiment runner, scripts, CLI."""

import csv
import json
import os

import pytest
from click.testing import CliRunner

from fedledger.cli import main as cli_main
from fedledger.contract import replay_chain
from fedledger.harness.config import (
    ConfigError,
    CostParams,
    DataConfig,
    DPConfig,
    ExperimentConfig,
    ModelConfig,
    PartitionConfig,
    apply_env_overrides,
)
from fedledger.harness.costs import REFERENCE_MEASUREMENTS, estimate_time_cost, reference_table
from fedledger.harness.plots import OVERHEAD_EPOCH_GRID, EmptyMetrics, emit_plots_data
from fedledger.harness.runner import (
    RunnerError,
    ScriptError,
    ScriptRunner,
    build_datasets,
    metrics_header,
    run_experiment,
    run_script,
    unlearn_session,
)
from fedledger.ledger import TxKind, import_chain, import_chain_jsonl, query, verify_chain
from fedledger.unlearn import UnlearnCertificate


def tiny_config(**overrides):
    base = dict(
        n_clients=3,
        rounds=4,
        aggregation_interval=1,
        batch_size=8,
        lr=0.3,
        seed=1,
        data=DataConfig(source="synthetic", n_features=5, n_classes=3, train_per_client=12, test_examples=30),
        dp=DPConfig(clip_norm=100.0),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# -- config ------------------------------------------------------------------


def test_config_roundtrips_through_json(tmp_path):
    config = tiny_config(unlearn_at=2)
    path = tmp_path / "config.json"
    config.save(path)
    assert ExperimentConfig.load(path) == config


def test_config_from_dict_fills_defaults():
    config = ExperimentConfig.from_dict({"n_clients": 2, "rounds": 3})
    assert config.n_clients == 2
    assert config.model == ModelConfig()
    assert config.client_ids() == ["C1", "C2"]
    assert config.agent_id == "A1"
    assert config.epochs == 3


def test_config_rejects_unknown_and_malformed_fields():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"n_cilents": 2})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": "logistic"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"data": {"source": "carrier-pigeon"}})


def test_config_load_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_config_field_validation():
    cases = [
        dict(n_clients=0),
        dict(rounds=0),
        dict(aggregation_interval=0),
        dict(batch_size=0),
        dict(lr=0.0),
        dict(token_ttl=0),
        dict(quorum=0.0),
        dict(quorum=1.5),
        dict(unlearn_at=0),
        dict(unlearn_at=4),  # must precede the last round
    ]
    for overrides in cases:
        with pytest.raises(ConfigError):
            tiny_config(**overrides)
    with pytest.raises(ConfigError):  # sharded partition must name a client
        tiny_config(partition=PartitionConfig(kind="class_sharded", unlearn_client="C9"))
    with pytest.raises(ConfigError):
        DataConfig(source="csv")  # paths missing
    with pytest.raises(ConfigError):
        DPConfig(clip_norm=0.0)
    with pytest.raises(ConfigError):
        CostParams(tx_cost=-1)


def test_env_overrides():
    config = tiny_config()
    out = apply_env_overrides(
        config, {"FEDLEDGER_ROUNDS": "9", "FEDLEDGER_LR": "0.5", "FEDLEDGER_QUORUM": "0.8", "PATH": "/bin"}
    )
    assert (out.rounds, out.lr, out.quorum) == (9, 0.5, 0.8)
    assert out.n_clients == config.n_clients
    assert apply_env_overrides(config, {}) is config
    assert apply_env_overrides(config, {"FEDLEDGER_ROUNDS": ""}) is config  # empty = unset
    with pytest.raises(ConfigError):
        apply_env_overrides(config, {"FEDLEDGER_ROUNDS": "many"})
    with pytest.raises(ConfigError):  # override must still validate
        apply_env_overrides(config, {"FEDLEDGER_ROUNDS": "0"})


# -- cost model -----------------------------------------------------------------


def test_estimate_matches_independent_arithmetic():
    params = CostParams(init_cost=35, consensus_cost=3, tx_cost=2, epoch_cost=26)
    for epochs in (1, 10, 200, 2000, 7):
        est = estimate_time_cost(epochs, params)
        assert est.normal == epochs * 26
        assert est.ours == epochs * 26 + 35 + 3 + epochs * 2
        assert est.overhead == est.ours - est.normal
        assert est.overhead_ratio == est.overhead / est.normal


def test_estimate_with_explicit_transaction_count():
    params = CostParams()
    est = estimate_time_cost(10, params, n_tx=4)
    assert est.ours == 260 + 35 + 3 + 8


def test_estimate_rejects_nonpositive_epochs():
    with pytest.raises(ValueError):
        estimate_time_cost(0, CostParams())


def test_reference_rows_reproduce_except_the_largest():
    rows = reference_table()
    assert [row.consistent for row in rows] == [True, True, True, False]
    by_label = {row.label: row for row in rows}
    assert by_label["t=9"].computed_normal == 260
    assert by_label["t=9"].computed_ours == 318
    # the inconsistent row reports totals that fit 1000 epochs exactly,
    # yet sits in the 2000-epoch column; computed at 2000 it lands double
    bad = by_label["t=1999"]
    assert (bad.reported_normal, bad.reported_ours) == (26000, 28038)
    assert bad.reported_normal == 1000 * 26
    assert bad.reported_ours == 1000 * 26 + 35 + 3 + 1000 * 2
    assert (bad.computed_normal, bad.computed_ours) == (52000, 56038)


def test_reference_measurements_are_frozen():
    assert REFERENCE_MEASUREMENTS[0] == ("t=0", 1, 26, 66)
    assert len(REFERENCE_MEASUREMENTS) == 4


# -- experiment runner -----------------------------------------------------------


@pytest.fixture(scope="module")
def finished_session(tmp_path_factory):
    out = tmp_path_factory.mktemp("session")
    config = tiny_config(unlearn_at=2)
    session, metrics = run_experiment(config, str(out))
    return config, session, metrics, out


def test_artifacts_are_written(finished_session):
    _, _, _, out = finished_session
    for name in ("config.json", "metrics.csv", "chain.bin", "chain.jsonl", "certificate.json"):
        assert (out / name).is_file(), name
    assert (out / "blobs").is_dir()
    for name in ("loss_curves.csv", "accuracy_curves.csv", "per_class.csv", "overhead_vs_epochs.csv"):
        assert (out / "plots" / name).is_file(), name


def test_metrics_csv_schema(finished_session):
    config, session, metrics, out = finished_session
    with open(out / "metrics.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == metrics_header(config.client_ids(), session.spec.n_classes)
    assert len(rows) == 1 + config.rounds
    for row in rows[1:]:
        assert len(row) == len(rows[0])
    # C1 was unlearned after round 2: its per-client cells go empty after
    header = rows[0]
    loss_col = header.index("loss_C1")
    acc_col = header.index("acc_C1")
    assert rows[2][loss_col] != "" and rows[2][acc_col] != ""
    for row in rows[3:]:
        assert row[loss_col] == "" and row[acc_col] == ""


def test_chain_export_verifies_and_replays(finished_session):
    _, session, _, out = finished_session
    chain = import_chain(str(out / "chain.bin"))
    assert verify_chain(chain).ok
    assert chain.tip_hash == session.contract.chain.tip_hash
    assert replay_chain(chain).digest() == session.contract.state.digest()
    jsonl = import_chain_jsonl(str(out / "chain.jsonl"))
    assert jsonl.tip_hash == chain.tip_hash


def test_transaction_census(finished_session):
    config, session, _, _ = finished_session
    chain = session.contract.chain
    n, R, u = config.n_clients, config.rounds, config.unlearn_at
    retrain = u  # iid: everyone contributes from round 1, so rollback is to 0
    assert len(list(query(chain, kind=TxKind.REGISTER))) == n + 1
    assert len(list(query(chain, kind=TxKind.MODEL_UPLOAD))) == 1
    assert len(list(query(chain, kind=TxKind.CONFIG_SET))) == 1
    # rounds 1..u with n clients, the rest with n-1, one epoch per round
    assert len(list(query(chain, kind=TxKind.GRADIENT_PUBLISH))) == u * n + (R - u) * (n - 1)
    assert len(list(query(chain, kind=TxKind.AGGREGATE))) == R + retrain
    assert len(list(query(chain, kind=TxKind.UNLEARN_REQUEST))) == 1
    assert len(list(query(chain, kind=TxKind.UNLEARN_COMPLETE))) == 1


def test_simulated_time_accounting(finished_session):
    config, session, metrics, _ = finished_session
    c = config.costs
    n, R, u, k = config.n_clients, config.rounds, config.unlearn_at, config.aggregation_interval
    commit = lambda n_tx: c.consensus_cost + c.tx_cost * n_tx

    expected = c.init_cost
    expected += (n + 1) * commit(1)  # registrations
    expected += 2 * commit(1)  # model upload, configuration
    for r in range(1, R + 1):
        active = n if r <= u else n - 1
        expected += active * k * commit(1)  # one commit per epoch gradient
        expected += c.epoch_cost * k  # local training
        expected += commit(1)  # aggregation
        if r == u:
            retrain_rounds = u
            expected += commit(1)  # unlearning request
            expected += commit(retrain_rounds + 1)  # one block: retrain aggregates + completion
            expected += c.epoch_cost * k * retrain_rounds  # retraining compute
    assert metrics[-1].time_with_chain == expected == session.clock.now
    assert metrics[-1].time_without_chain == c.epoch_cost * k * R
    # the two timelines are monotone and with-chain dominates
    for a, b in zip(metrics, metrics[1:]):
        assert b.time_with_chain > a.time_with_chain
        assert b.time_without_chain > a.time_without_chain
    assert all(m.time_with_chain > m.time_without_chain for m in metrics)


def test_certificate_artifact_matches_session(finished_session):
    config, session, _, out = finished_session
    release = UnlearnCertificate.load(str(out / "certificate.json"))
    assert release == session.certificate
    assert release.client_id == config.unlearn_client == "C1"
    assert release.chain_ok


def test_rerunning_a_config_reproduces_every_artifact_byte(tmp_path):
    config = tiny_config(rounds=3, unlearn_at=1)
    run_experiment(config, str(tmp_path / "a"))
    run_experiment(config, str(tmp_path / "b"))
    for name in ("metrics.csv", "chain.bin", "chain.jsonl", "certificate.json", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_run_without_unlearning_has_no_certificate(tmp_path):
    config = tiny_config(rounds=2)
    session, metrics = run_experiment(config, str(tmp_path / "s"))
    assert session.certificate is None
    assert not (tmp_path / "s" / "certificate.json").exists()
    assert len(metrics) == 2


def test_parallel_client_training_is_bit_identical(tmp_path):
    config = tiny_config(rounds=3)
    run_experiment(config, str(tmp_path / "serial"))
    run_experiment(config, str(tmp_path / "parallel"), parallel_clients=True)
    for name in ("chain.bin", "metrics.csv"):
        a = (tmp_path / "serial" / name).read_bytes()
        b = (tmp_path / "parallel" / name).read_bytes()
        assert a == b, name


def test_build_datasets_class_sharded_and_capped():
    config = tiny_config(
        partition=PartitionConfig(kind="class_sharded", unlearn_client="C2", sharded_class=1),
        data=DataConfig(
            source="synthetic", n_features=5, n_classes=3, train_per_client=20, test_examples=40, train_total=45
        ),
    )
    datasets, test_set, spec = build_datasets(config)
    assert sum(len(ds) for ds in datasets.values()) == 45
    assert set(datasets["C2"].y.tolist()) == {1}
    assert spec.n_classes == 3 and spec.n_features == 5
    assert len(test_set) == 40


def test_unlearn_session_extends_a_finished_run(tmp_path):
    out = tmp_path / "s"
    config = tiny_config(rounds=3)
    session, _ = run_experiment(config, str(out))
    tip_before = session.contract.chain.tip_hash

    certificate = unlearn_session(str(out), "C2")
    assert certificate.client_id == "C2"
    chain = import_chain(str(out / "chain.bin"))
    assert verify_chain(chain).ok
    assert chain.tip_hash != tip_before
    assert (out / "certificate.json").is_file()
    assert len(list(query(chain, kind=TxKind.UNLEARN_COMPLETE))) == 1
    # the rebuild no longer matches the extended chain, so a second
    # extension is refused rather than silently rewriting history
    with pytest.raises(RunnerError, match="rebuild"):
        unlearn_session(str(out), "C3")


def test_unlearn_session_rejects_bad_targets(tmp_path):
    out = tmp_path / "s"
    config = tiny_config(rounds=3, unlearn_at=1)
    run_experiment(config, str(out))
    with pytest.raises(RunnerError, match="not a client"):
        unlearn_session(str(out), "C9")
    with pytest.raises(RunnerError, match="already unlearned"):
        unlearn_session(str(out), "C1")
    # a different client can still be unlearned: the rebuild replays the
    # configured unlearning and matches the stored chain
    certificate = unlearn_session(str(out), "C3")
    assert certificate.client_id == "C3"


def test_unlearn_session_refuses_a_tampered_chain(tmp_path):
    out = tmp_path / "s"
    run_experiment(tiny_config(rounds=2), str(out))
    blob = bytearray((out / "chain.bin").read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    (out / "chain.bin").write_bytes(bytes(blob))
    with pytest.raises(RunnerError, match="rebuild"):
        unlearn_session(str(out), "C2")


# -- plots -------------------------------------------------------------------------


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def test_plot_csv_schemas(finished_session):
    config, session, metrics, out = finished_session
    plots = out / "plots"

    header, rows = read_csv(plots / "loss_curves.csv")
    assert header == ["round", "global_loss"] + [f"loss_{c}" for c in config.client_ids()]
    assert len(rows) == config.rounds

    header, rows = read_csv(plots / "accuracy_curves.csv")
    assert header == ["round", "train_accuracy", "test_accuracy"] + [f"acc_{c}" for c in config.client_ids()]
    assert [r[0] for r in rows] == [str(m.round_no) for m in metrics]

    header, rows = read_csv(plots / "per_class.csv")
    assert header == ["class", "accuracy_final", "accuracy_before", "accuracy_after"]
    assert len(rows) == session.spec.n_classes
    assert all(r[2] != "" and r[3] != "" for r in rows)  # certificate present

    header, rows = read_csv(plots / "overhead_vs_epochs.csv")
    assert header == ["epochs", "normal", "ours", "overhead", "overhead_ratio"]
    assert [int(r[0]) for r in rows] == list(OVERHEAD_EPOCH_GRID)
    for r in rows:
        est = estimate_time_cost(int(r[0]), config.costs)
        assert int(r[1]) == est.normal and int(r[2]) == est.ours


def test_emit_plots_requires_metrics(tmp_path):
    with pytest.raises(EmptyMetrics):
        emit_plots_data([], str(tmp_path), client_ids=["C1"], n_classes=2, cost_params=CostParams())


# -- scripted sessions ------------------------------------------------------------


def happy_script():
    return [
        {"op": "register", "actor": "A1", "args": {"role": "agent"}},
        {"op": "register", "actor": "C1", "args": {"role": "client"}},
        {"op": "upload_global_model", "actor": "A1", "args": {"dim": 4}},
        {"op": "configure_training", "actor": "A1", "args": {"epochs": 1, "lr": 0.1}},
        {"op": "submit_gradient", "actor": "C1", "args": {"epoch": 0, "values": [1, 0, 0, 0]}},
        {"op": "aggregate", "actor": "A1", "args": {"round": 1}},
    ]


def test_script_happy_path():
    runner = ScriptRunner()
    outcomes = runner.run(happy_script())
    assert all(o.ok for o in outcomes)
    assert runner.contract.state.completed_rounds == 1
    assert verify_chain(runner.contract.chain).ok


def test_script_expected_errors_are_recorded_not_raised():
    records = happy_script()[:2] + [
        {"op": "register", "actor": "C1", "args": {"role": "client"}, "expect_error": "AlreadyExists"},
    ]
    runner = ScriptRunner()
    outcomes = runner.run(records)
    assert outcomes[-1].ok is False
    assert outcomes[-1].error_type == "AlreadyExists"
    assert "already existed" in outcomes[-1].error


def test_script_unexpected_success_fails():
    records = happy_script()
    records[1]["expect_error"] = "AlreadyExists"  # first registration will succeed
    with pytest.raises(ScriptError, match="succeeded"):
        ScriptRunner().run(records)


def test_script_wrong_error_type_fails():
    records = happy_script()[:2] + [
        {"op": "register", "actor": "C1", "args": {"role": "client"}, "expect_error": "WrongPhase"},
    ]
    with pytest.raises(ScriptError, match="AlreadyExists, expected WrongPhase"):
        ScriptRunner().run(records)


def test_script_unexpected_failure_fails():
    records = happy_script()[:2] + [{"op": "register", "actor": "C1", "args": {"role": "client"}}]
    with pytest.raises(ScriptError, match="unexpectedly"):
        ScriptRunner().run(records)


def test_script_validation_errors():
    with pytest.raises(ScriptError, match="unknown op"):
        ScriptRunner().run([{"op": "mine_block", "actor": "A1"}])
    with pytest.raises(ScriptError, match="no token"):
        ScriptRunner().run([{"op": "aggregate", "actor": "A1", "args": {"round": 1}}])
    with pytest.raises(ScriptError, match="vector"):
        ScriptRunner().run(happy_script()[:2] + [{"op": "upload_global_model", "actor": "A1", "args": {}}])


def test_script_empty_plan_unlearning_roundtrip():
    records = happy_script() + [
        {"op": "register", "actor": "C2", "args": {"role": "client"}},
        {"op": "request_unlearning", "actor": "C2"},
        {"op": "complete_unlearning", "actor": "A1"},
    ]
    runner = ScriptRunner(quorum=0.5)
    # C2 registered after round 1 and never contributed: empty plan
    runner.run(records)
    assert runner.contract.state.unlearned.keys() == {"C2"}


def test_script_clock_and_expiry():
    records = happy_script()[:2] + [
        {"op": "advance_clock", "actor": "", "args": {"ticks": 5000}},
        {"op": "upload_global_model", "actor": "A1", "args": {"dim": 4}, "expect_error": "TokenExpired"},
    ]
    runner = ScriptRunner(token_ttl=1000)
    outcomes = runner.run(records)
    assert outcomes[-1].error_type == "TokenExpired"


def test_run_script_forms(tmp_path):
    # list form
    assert run_script(happy_script()).contract.state.completed_rounds == 1
    # dict form with settings
    obj = {"settings": {"quorum": 0.5, "token_ttl": 777}, "ops": happy_script()}
    runner = run_script(obj)
    assert runner.contract.quorum == 0.5
    # file form plus chain export
    path = tmp_path / "script.json"
    path.write_text(json.dumps(obj))
    runner = run_script(str(path), out_dir=str(tmp_path / "out"))
    assert (tmp_path / "out" / "chain.bin").is_file()
    chain = import_chain(str(tmp_path / "out" / "chain.bin"))
    assert chain.tip_hash == runner.contract.chain.tip_hash
    # JSON text form
    assert run_script(json.dumps(happy_script())).outcomes[-1].ok


# -- CLI ---------------------------------------------------------------------------


def write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    tiny_config(**overrides).save(path)
    return str(path)


def test_cli_version():
    result = CliRunner().invoke(cli_main, ["--version"])
    assert result.exit_code == 0


def test_cli_cost_model():
    result = CliRunner().invoke(cli_main, ["cost-model", "--epochs", "10"])
    assert result.exit_code == 0
    assert "normal: 260" in result.output
    assert "ours: 318" in result.output

    result = CliRunner().invoke(cli_main, ["cost-model", "--table"])
    assert result.exit_code == 0
    assert result.output.count("reproduced") == 3
    assert result.output.count("inconsistent") == 1

    result = CliRunner().invoke(cli_main, ["cost-model"])
    assert result.exit_code != 0


def test_cli_run_unlearn_audit_flow(tmp_path):
    config_path = write_config(tmp_path, rounds=3)
    out = str(tmp_path / "session")
    result = CliRunner().invoke(cli_main, ["run", "--config", config_path, "--out", out])
    assert result.exit_code == 0, result.output
    assert "final test accuracy" in result.output

    result = CliRunner().invoke(cli_main, ["unlearn", "--session", out, "--client", "C2"])
    assert result.exit_code == 0, result.output
    assert "unlearned C2" in result.output

    chain_path = os.path.join(out, "chain.bin")
    cert_path = os.path.join(out, "certificate.json")
    result = CliRunner().invoke(
        cli_main, ["audit", "--chain", chain_path, "--cert", cert_path, "--client", "C2"]
    )
    assert result.exit_code == 0, result.output
    assert "chain OK" in result.output
    assert "certificate OK" in result.output
    assert '"client_id": "C2"' in result.output

    # the jsonl export audits identically
    result = CliRunner().invoke(cli_main, ["audit", "--chain", os.path.join(out, "chain.jsonl")])
    assert result.exit_code == 0
    assert "chain OK" in result.output


def test_cli_run_env_override(tmp_path):
    config_path = write_config(tmp_path, rounds=4)
    out = str(tmp_path / "session")
    result = CliRunner().invoke(
        cli_main, ["run", "--config", config_path, "--out", out], env={"FEDLEDGER_ROUNDS": "2"}
    )
    assert result.exit_code == 0, result.output
    assert "rounds: 2" in result.output


def test_cli_audit_flags_a_tampered_chain(tmp_path):
    config_path = write_config(tmp_path, rounds=2)
    out = str(tmp_path / "session")
    assert CliRunner().invoke(cli_main, ["run", "--config", config_path, "--out", out]).exit_code == 0
    chain_path = os.path.join(out, "chain.bin")
    blob = bytearray(open(chain_path, "rb").read())
    blob[len(blob) // 2] ^= 0x01
    open(chain_path, "wb").write(bytes(blob))
    result = CliRunner().invoke(cli_main, ["audit", "--chain", chain_path])
    assert result.exit_code == 1
    assert "BROKEN" in result.output or "cannot decode" in result.output


def test_cli_audit_unknown_client(tmp_path):
    config_path = write_config(tmp_path, rounds=2)
    out = str(tmp_path / "session")
    CliRunner().invoke(cli_main, ["run", "--config", config_path, "--out", out])
    result = CliRunner().invoke(
        cli_main, ["audit", "--chain", os.path.join(out, "chain.bin"), "--client", "C1"]
    )
    assert result.exit_code != 0
    assert "no unlearning request" in result.output


def test_cli_run_reports_config_errors(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"rounds": 0}\n')
    result = CliRunner().invoke(cli_main, ["run", "--config", str(path), "--out", str(tmp_path / "x")])
    assert result.exit_code != 0
    assert "rounds" in result.output


def test_cli_script(tmp_path):
    path = tmp_path / "script.json"
    records = happy_script()[:2] + [
        {"op": "register", "actor": "C1", "args": {"role": "client"}, "expect_error": "AlreadyExists"},
    ]
    path.write_text(json.dumps(records))
    result = CliRunner().invoke(cli_main, ["script", "--file", str(path), "--out", str(tmp_path / "o")])
    assert result.exit_code == 0, result.output
    assert "rejected as expected (AlreadyExists)" in result.output
    assert (tmp_path / "o" / "chain.bin").is_file()
