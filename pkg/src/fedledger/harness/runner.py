"""Session runner: drives register → upload → configure → rounds →
optional unlearning, records metrics, and exports every artifact.

A session owns one contract, one simulated clock, and the client
datasets. Two simulated timelines are tracked: time_without_chain counts
only training compute (epoch_cost per epoch), time_with_chain adds the
ledger's setup, consensus, and per-transaction costs, plus the retraining
epochs an unlearning triggers.

The scripted-session entry point replays an ordered list of {op, actor,
args} records against a fresh contract, with per-record expected-error
assertions, which is how the error-path conformance suite drives every
failure branch.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..auth import Role, SessionToken
from ..blobs import FileBlobStore
from ..clock import SimClock
from ..contract import Contract, ContractError, UnlearnPlan
from ..fl.data import Dataset, load_csv, load_idx_pair, make_blobs, partition_class_sharded, partition_iid
from ..fl.params import ModelSpec, init_params, params_from_bytes
from ..fl.train import client_epoch_gradients, evaluate
from ..ledger import export_chain, export_chain_jsonl
from ..seeds import derive_seed
from ..unlearn import UnlearnCertificate, execute_plan
from .config import ExperimentConfig
from .plots import emit_plots_data


class RunnerError(Exception):
    pass


class ScriptError(RunnerError):
    pass


@dataclass(frozen=True)
class MetricsRecord:
    round_no: int
    global_loss: float
    train_accuracy: float
    test_accuracy: float
    per_class: tuple[float, ...]
    per_client: dict[str, tuple[float, float] | None]
    time_with_chain: int
    time_without_chain: int


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def metrics_header(client_ids: list[str], n_classes: int) -> list[str]:
    cols = ["round", "global_loss", "train_accuracy", "test_accuracy",
            "time_with_chain", "time_without_chain"]
    cols += [f"acc_class_{c}" for c in range(n_classes)]
    for cid in client_ids:
        cols += [f"loss_{cid}", f"acc_{cid}"]
    return cols


def metrics_row(record: MetricsRecord, client_ids: list[str]) -> list[str]:
    cells = [
        _fmt(record.round_no),
        _fmt(record.global_loss),
        _fmt(record.train_accuracy),
        _fmt(record.test_accuracy),
        _fmt(record.time_with_chain),
        _fmt(record.time_without_chain),
    ]
    cells += [_fmt(v) for v in record.per_class]
    for cid in client_ids:
        entry = record.per_client.get(cid)
        if entry is None:
            cells += ["", ""]
        else:
            cells += [_fmt(entry[0]), _fmt(entry[1])]
    return cells


def build_datasets(config: ExperimentConfig) -> tuple[dict[str, Dataset], Dataset, ModelSpec]:
    """Load or synthesize the pool, split train across clients, and fix
    the model shape from what the data actually looks like."""
    data = config.data
    if data.source == "synthetic":
        train_pool = make_blobs(
            data.train_per_client * config.n_clients,
            data.n_features,
            data.n_classes,
            derive_seed(config.seed, "data", "train"),
        )
        test_set = make_blobs(
            data.test_examples, data.n_features, data.n_classes, derive_seed(config.seed, "data", "test")
        )
    elif data.source == "csv":
        train_pool = load_csv(data.train_path)
        test_set = load_csv(data.test_path)
    else:
        train_pool = load_idx_pair(data.train_images, data.train_labels)
        test_set = load_idx_pair(data.test_images, data.test_labels)

    if data.feature_scale:
        train_pool = Dataset(X=train_pool.X / data.feature_scale, y=train_pool.y)
        test_set = Dataset(X=test_set.X / data.feature_scale, y=test_set.y)

    def cap(ds: Dataset, total: int | None, tag: str) -> Dataset:
        if total is None or total >= len(ds):
            return ds
        order = np.random.default_rng(derive_seed(config.seed, "cap", tag)).permutation(len(ds))[:total]
        return Dataset(X=ds.X[order], y=ds.y[order])

    train_pool = cap(train_pool, data.train_total, "train")
    test_set = cap(test_set, data.test_total, "test")

    n_classes = data.n_classes
    if data.source != "synthetic":
        n_classes = int(max(train_pool.y.max(), test_set.y.max())) + 1
    spec = ModelSpec(
        arch=config.model.arch,
        n_features=train_pool.X.shape[1],
        n_classes=n_classes,
        hidden=config.model.hidden,
    )

    ids = config.client_ids()
    if config.partition.kind == "class_sharded":
        datasets = partition_class_sharded(
            train_pool,
            ids,
            exclusive_client=config.unlearn_client,
            exclusive_class=config.partition.sharded_class,
            seed=derive_seed(config.seed, "partition"),
        )
    else:
        datasets = partition_iid(train_pool, ids, derive_seed(config.seed, "partition"))
    for cid, ds in datasets.items():
        ds.require_nonempty()
    return datasets, test_set, spec


class Session:
    """One experiment: contract, datasets, tokens, metric stream."""

    def __init__(self, config: ExperimentConfig, blobs=None, parallel_clients: bool = False):
        self.config = config
        self.datasets, self.test_set, self.spec = build_datasets(config)
        self.clock = SimClock()
        self.contract = Contract(
            blobs=blobs,
            clock=self.clock,
            auth_seed=derive_seed(config.seed, "auth"),
            token_ttl=config.token_ttl,
            consensus_cost=config.costs.consensus_cost,
            tx_cost=config.costs.tx_cost,
            quorum=config.quorum,
        )
        self.parallel_clients = parallel_clients
        self.tokens: dict[str, SessionToken] = {}
        self.active: list[str] = list(config.client_ids())
        self.metrics: list[MetricsRecord] = []
        self.certificate: UnlearnCertificate | None = None
        self.epochs_trained = 0

    # -- lifecycle --------------------------------------------------------

    def setup(self) -> None:
        config = self.config
        self.clock.advance(config.costs.init_cost)
        for cid in config.client_ids():
            self.tokens[cid] = self.contract.register(cid, Role.CLIENT)
        self.tokens[config.agent_id] = self.contract.register(config.agent_id, Role.AGENT)
        if config.model.arch == "logistic":
            model0 = init_params(self.spec)
        else:
            model0 = init_params(self.spec, derive_seed(config.seed, "init"))
        self.contract.upload_global_model(config.agent_id, self.tokens[config.agent_id], model0)
        self.contract.configure_training(
            config.agent_id,
            self.tokens[config.agent_id],
            epochs=config.epochs,
            batch_size=config.batch_size,
            aggregation_interval=config.aggregation_interval,
            lr=config.lr,
            clip_norm=config.dp.clip_norm,
            noise_multiplier=config.dp.noise_multiplier,
            base_seed=config.seed,
        )

    def global_model(self) -> np.ndarray:
        return params_from_bytes(self.contract.blobs.get(self.contract.state.global_model_digest))

    def run_round(self, round_no: int) -> None:
        """All active clients train locally from the same global model,
        publish their epoch gradients, and the agent aggregates."""
        config = self.config
        k = config.aggregation_interval
        theta = self.global_model()

        def train(cid: str) -> list[np.ndarray]:
            return client_epoch_gradients(
                theta, self.spec, self.datasets[cid], round_no, k, config.batch_size, config.lr, config.seed
            )

        if self.parallel_clients and len(self.active) > 1:
            with ThreadPoolExecutor(max_workers=len(self.active)) as pool:
                gradients = dict(zip(self.active, pool.map(train, self.active)))
        else:
            gradients = {cid: train(cid) for cid in self.active}

        lo = (round_no - 1) * k
        for cid in self.active:
            for e, grad in enumerate(gradients[cid]):
                self.contract.submit_gradient(cid, self.tokens[cid], lo + e, grad, len(self.datasets[cid]))
        self.clock.advance(config.costs.epoch_cost * k)
        self.epochs_trained += k
        self.contract.aggregate(config.agent_id, self.tokens[config.agent_id], round_no)

    def record_metrics(self, round_no: int) -> MetricsRecord:
        theta = self.global_model()
        per_client: dict[str, tuple[float, float] | None] = {}
        weighted_loss = 0.0
        weighted_acc = 0.0
        total = 0
        for cid in self.config.client_ids():
            if cid not in self.active:
                per_client[cid] = None
                continue
            report = evaluate(theta, self.spec, self.datasets[cid])
            per_client[cid] = (report.loss, report.overall_accuracy)
            n = len(self.datasets[cid])
            weighted_loss += n * report.loss
            weighted_acc += n * report.overall_accuracy
            total += n
        test_report = evaluate(theta, self.spec, self.test_set)
        record = MetricsRecord(
            round_no=round_no,
            global_loss=weighted_loss / total,
            train_accuracy=weighted_acc / total,
            test_accuracy=test_report.overall_accuracy,
            per_class=test_report.per_class_accuracy,
            per_client=per_client,
            time_with_chain=self.clock.now,
            time_without_chain=self.epochs_trained * self.config.costs.epoch_cost,
        )
        self.metrics.append(record)
        return record

    def unlearn(self, client_id: str) -> UnlearnCertificate:
        """Request, retrain, complete, certify; retraining compute is
        charged to the with-chain timeline."""
        plan = self.contract.request_unlearning(client_id, self.tokens[client_id])
        _, certificate = execute_plan(
            self.contract,
            plan,
            self.datasets,
            self.spec,
            self.config.agent_id,
            self.tokens[self.config.agent_id],
            eval_dataset=self.test_set,
        )
        self.clock.advance(self.config.costs.epoch_cost * self.config.aggregation_interval * len(plan.rounds))
        self.active = [cid for cid in self.active if cid != client_id]
        self.certificate = certificate
        return certificate


def run_experiment(
    config: ExperimentConfig, out_dir: str, parallel_clients: bool = False
) -> tuple[Session, list[MetricsRecord]]:
    """Run a full session and write every artifact under out_dir:
    config.json, metrics.csv, chain.bin, chain.jsonl, blobs/,
    certificate.json when unlearning ran, and plots/*.csv."""
    os.makedirs(out_dir, exist_ok=True)
    blobs = FileBlobStore(os.path.join(out_dir, "blobs"))
    session = Session(config, blobs=blobs, parallel_clients=parallel_clients)
    config.save(os.path.join(out_dir, "config.json"))

    session.setup()
    client_ids = config.client_ids()
    n_classes = session.spec.n_classes
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(",".join(metrics_header(client_ids, n_classes)) + "\n")
        for round_no in range(1, config.rounds + 1):
            session.run_round(round_no)
            record = session.record_metrics(round_no)
            f.write(",".join(metrics_row(record, client_ids)) + "\n")
            if config.unlearn_at == round_no:
                session.unlearn(config.unlearn_client)

    export_chain(session.contract.chain, os.path.join(out_dir, "chain.bin"))
    export_chain_jsonl(session.contract.chain, os.path.join(out_dir, "chain.jsonl"))
    if session.certificate is not None:
        session.certificate.save(os.path.join(out_dir, "certificate.json"))
    emit_plots_data(
        session.metrics,
        os.path.join(out_dir, "plots"),
        client_ids=client_ids,
        n_classes=n_classes,
        cost_params=config.costs,
        certificate=session.certificate,
    )
    return session, session.metrics


def unlearn_session(session_dir: str, client_id: str) -> UnlearnCertificate:
    """Unlearn a client from a finished session.

    The session is rebuilt deterministically from its saved config (the
    rebuild must reproduce the stored chain bit for bit, which is
    checked), then the request and retraining are appended and the
    session artifacts rewritten.
    """
    config = ExperimentConfig.load(os.path.join(session_dir, "config.json"))
    if client_id not in config.client_ids():
        raise RunnerError(f"{client_id!r} is not a client of this session")
    with open(os.path.join(session_dir, "chain.bin"), "rb") as f:
        stored = f.read()

    blobs = FileBlobStore(os.path.join(session_dir, "blobs"))
    session = Session(config, blobs=blobs)
    session.setup()
    unlearned_during_run = None
    for round_no in range(1, config.rounds + 1):
        session.run_round(round_no)
        session.record_metrics(round_no)
        if config.unlearn_at == round_no:
            unlearned_during_run = config.unlearn_client
            session.unlearn(config.unlearn_client)

    rebuilt = os.path.join(session_dir, "chain.bin")
    export_chain(session.contract.chain, rebuilt + ".rebuild")
    with open(rebuilt + ".rebuild", "rb") as f:
        rebuilt_bytes = f.read()
    os.remove(rebuilt + ".rebuild")
    if rebuilt_bytes != stored:
        raise RunnerError("session rebuild does not match the stored chain; refusing to extend it")
    if unlearned_during_run == client_id:
        raise RunnerError(f"{client_id!r} was already unlearned in this session")

    certificate = session.unlearn(client_id)
    export_chain(session.contract.chain, os.path.join(session_dir, "chain.bin"))
    export_chain_jsonl(session.contract.chain, os.path.join(session_dir, "chain.jsonl"))
    certificate.save(os.path.join(session_dir, "certificate.json"))
    return certificate


# -- scripted sessions ----------------------------------------------------


@dataclass(frozen=True)
class OpOutcome:
    index: int
    op: str
    actor: str
    ok: bool
    error_type: str | None = None
    error: str | None = None


class ScriptRunner:
    """Replays {op, actor, args, expect_error} records against a fresh
    contract. A record either succeeds, or fails with exactly the error
    type it declared; anything else is a script failure."""

    def __init__(self, auth_seed: int = 0, token_ttl: int = 1000, quorum: float = 1.0):
        self.contract = Contract(auth_seed=auth_seed, token_ttl=token_ttl, quorum=quorum)
        self.tokens: dict[str, SessionToken] = {}
        self.plan: UnlearnPlan | None = None
        self.outcomes: list[OpOutcome] = []

    def _vector(self, args: dict) -> np.ndarray:
        if "values" in args:
            return np.asarray(args["values"], dtype=np.float64)
        if "dim" in args:
            return np.full(int(args["dim"]), float(args.get("fill", 0.0)))
        raise ScriptError("vector argument needs 'values' or 'dim'")

    _OPS = (
        "register",
        "advance_clock",
        "upload_global_model",
        "configure_training",
        "submit_gradient",
        "aggregate",
        "request_unlearning",
        "complete_unlearning",
    )

    def _apply(self, op: str, actor: str, args: dict):
        contract = self.contract
        if op not in self._OPS:
            raise ScriptError(f"unknown op {op!r}")
        if op == "register":
            role = Role(args.get("role", "client"))
            token = contract.register(actor, role)
            self.tokens[actor] = token
            return
        if op == "advance_clock":
            contract.clock.advance(int(args["ticks"]))
            return
        token = self.tokens.get(actor)
        if token is None:
            raise ScriptError(f"actor {actor!r} has no token; register first")
        if op == "upload_global_model":
            contract.upload_global_model(actor, token, self._vector(args))
        elif op == "configure_training":
            contract.configure_training(
                actor,
                token,
                epochs=int(args["epochs"]),
                batch_size=int(args.get("batch_size", 1)),
                aggregation_interval=int(args.get("aggregation_interval", 1)),
                lr=float(args.get("lr", 0.1)),
                clip_norm=float(args.get("clip_norm", 1.0)),
                noise_multiplier=float(args.get("noise_multiplier", 0.0)),
                base_seed=int(args.get("base_seed", 0)),
            )
        elif op == "submit_gradient":
            contract.submit_gradient(
                actor, token, int(args["epoch"]), self._vector(args), int(args.get("n_examples", 1))
            )
        elif op == "aggregate":
            contract.aggregate(actor, token, int(args["round"]))
        elif op == "request_unlearning":
            self.plan = contract.request_unlearning(actor, token)
        elif op == "complete_unlearning":
            plan = self.plan
            if plan is None:
                raise ScriptError("no plan recorded; request_unlearning first")
            if plan.rounds:
                raise ScriptError("scripted completion supports only empty retrain plans")
            model = params_from_bytes(contract.blobs.get(plan.checkpoint_digest))
            contract.complete_unlearning(actor, token, model, plan, [])

    def run(self, records: list[dict]) -> list[OpOutcome]:
        for index, record in enumerate(records):
            op = record.get("op")
            actor = record.get("actor", "")
            args = record.get("args", {})
            expected = record.get("expect_error")
            before = self.contract.state.digest()
            chain_before = self.contract.chain.tip_hash
            try:
                self._apply(op, actor, args)
            except ContractError as exc:
                name = type(exc).__name__
                if expected is None:
                    raise ScriptError(f"op {index} ({op}) failed unexpectedly: {name}: {exc}") from exc
                if name != expected:
                    raise ScriptError(f"op {index} ({op}) raised {name}, expected {expected}") from exc
                if self.contract.state.digest() != before or self.contract.chain.tip_hash != chain_before:
                    raise ScriptError(f"op {index} ({op}) failed but mutated state or chain")
                self.outcomes.append(OpOutcome(index, op, actor, ok=False, error_type=name, error=str(exc)))
                continue
            if expected is not None:
                raise ScriptError(f"op {index} ({op}) succeeded but expected {expected}")
            self.outcomes.append(OpOutcome(index, op, actor, ok=True))
        return self.outcomes


def run_script(path_or_records, out_dir: str | None = None) -> ScriptRunner:
    """Run a scripted session from a JSON file path, JSON text, or a list
    of records. Optionally export the resulting chain."""
    if isinstance(path_or_records, str):
        if os.path.exists(path_or_records):
            with open(path_or_records, "r", encoding="utf-8") as f:
                obj = json.load(f)
        else:
            obj = json.loads(path_or_records)
    else:
        obj = path_or_records
    if isinstance(obj, dict):
        settings = obj.get("settings", {})
        records = obj["ops"]
    else:
        settings, records = {}, obj
    runner = ScriptRunner(
        auth_seed=int(settings.get("auth_seed", 0)),
        token_ttl=int(settings.get("token_ttl", 1000)),
        quorum=float(settings.get("quorum", 1.0)),
    )
    runner.run(records)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        export_chain(runner.contract.chain, os.path.join(out_dir, "chain.bin"))
        export_chain_jsonl(runner.contract.chain, os.path.join(out_dir, "chain.jsonl"))
    return runner
