"""Unlearning execution, certificates, and third-party audit.

execute_plan carries an unlearning request end to end: load the rollback
checkpoint, retrain over the surviving clients, publish the retraining
through the contract, and issue a certificate. The certificate is a
ledger-evidence bundle; everything it claims can be re-checked from a
chain export alone, with no access to contract state, which is what
verify_certificate and audit_unlearning do.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .contract import (
    AggregatePayload,
    Contract,
    ModelUploadPayload,
    UnlearnCompletePayload,
    UnlearnPlan,
    UnlearnRequestPayload,
)
from .fl.data import Dataset
from .fl.dp import DPParams
from .fl.params import ModelSpec, params_from_bytes
from .fl.train import TrainingPlan, evaluate, retrain_from
from .ledger import Chain, TxKind, query, verify_chain


class UnlearnError(Exception):
    pass


class MissingCheckpoint(UnlearnError):
    def __init__(self, round_no: int):
        super().__init__(f"checkpoint for round {round_no} does not resolve in the blob store")
        self.round_no = round_no


class NoRequestFound(UnlearnError):
    def __init__(self, client_id: str):
        super().__init__(f"no unlearning request on chain for {client_id!r}")
        self.client_id = client_id


class CertificateError(UnlearnError):
    pass


@dataclass(frozen=True)
class UnlearnCertificate:
    """Minimal evidence bundle for one unlearning action."""

    client_id: str
    request_seq: int
    complete_seq: int
    rollback_round: int
    pre_model_digest: bytes
    post_model_digest: bytes
    per_class_accuracy_before: tuple[float, ...] | None
    per_class_accuracy_after: tuple[float, ...] | None
    chain_ok: bool

    def to_json(self) -> str:
        def acc(values):
            if values is None:
                return None
            return [None if math.isnan(v) else v for v in values]

        obj = {
            "client_id": self.client_id,
            "request_seq": self.request_seq,
            "complete_seq": self.complete_seq,
            "rollback_round": self.rollback_round,
            "pre_model_digest": self.pre_model_digest.hex(),
            "post_model_digest": self.post_model_digest.hex(),
            "per_class_accuracy_before": acc(self.per_class_accuracy_before),
            "per_class_accuracy_after": acc(self.per_class_accuracy_after),
            "chain_ok": self.chain_ok,
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "UnlearnCertificate":
        try:
            obj = json.loads(text)
            acc = lambda vals: None if vals is None else tuple(
                float("nan") if v is None else float(v) for v in vals
            )
            return cls(
                client_id=obj["client_id"],
                request_seq=obj["request_seq"],
                complete_seq=obj["complete_seq"],
                rollback_round=obj["rollback_round"],
                pre_model_digest=bytes.fromhex(obj["pre_model_digest"]),
                post_model_digest=bytes.fromhex(obj["post_model_digest"]),
                per_class_accuracy_before=acc(obj["per_class_accuracy_before"]),
                per_class_accuracy_after=acc(obj["per_class_accuracy_after"]),
                chain_ok=obj["chain_ok"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise CertificateError(f"malformed certificate: {exc}") from exc

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "UnlearnCertificate":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())


def _model_digest_before(chain: Chain, seq_no: int) -> bytes | None:
    """Global model digest in effect just before the given transaction:
    the last model-bearing transaction at a smaller seq_no."""
    digest = None
    for tx in chain.all_txs():
        if tx.seq_no >= seq_no:
            break
        if tx.kind is TxKind.MODEL_UPLOAD:
            digest = ModelUploadPayload.decode(tx.payload).model_digest
        elif tx.kind is TxKind.AGGREGATE:
            digest = AggregatePayload.decode(tx.payload).model_digest
        elif tx.kind is TxKind.UNLEARN_REQUEST:
            digest = UnlearnRequestPayload.decode(tx.payload).rollback_digest
        elif tx.kind is TxKind.UNLEARN_COMPLETE:
            digest = UnlearnCompletePayload.decode(tx.payload).model_digest
    return digest


def execute_plan(
    contract: Contract,
    plan: UnlearnPlan,
    datasets: dict[str, Dataset],
    spec: ModelSpec,
    agent_id: str,
    agent_token,
    eval_dataset: Dataset | None = None,
) -> tuple[np.ndarray, UnlearnCertificate]:
    """Retrain without the unlearned client and publish the result.

    datasets may still contain the unlearned client; it is excluded here.
    If eval_dataset is given, per-class accuracy is recorded before and
    after against the same held-out data.
    """
    try:
        checkpoint_blob = contract.blobs.get(plan.checkpoint_digest)
    except KeyError:
        raise MissingCheckpoint(plan.rollback_round) from None
    checkpoint_model = params_from_bytes(checkpoint_blob)

    pre_digest = _model_digest_before(contract.chain, plan.request_seq)
    if pre_digest is None:
        pre_digest = plan.checkpoint_digest
    before = None
    after = None
    if eval_dataset is not None:
        before = evaluate(params_from_bytes(contract.blobs.get(pre_digest)), spec, eval_dataset).per_class_accuracy

    surviving = {cid: ds for cid, ds in datasets.items() if cid != plan.client_id}
    training_plan = TrainingPlan(
        rounds=plan.rounds,
        local_epochs=plan.config.aggregation_interval,
        batch_size=plan.config.batch_size,
        lr=plan.config.lr,
        base_seed=plan.config.base_seed,
        dp=DPParams(plan.config.clip_norm, plan.config.noise_multiplier, 0),
    )
    final_model, history = retrain_from(checkpoint_model, spec, surviving, training_plan)
    round_models = [(round_no, model) for round_no, model, _ in history]
    post_digest = contract.complete_unlearning(agent_id, agent_token, final_model, plan, round_models)

    if eval_dataset is not None:
        after = evaluate(final_model, spec, eval_dataset).per_class_accuracy

    complete_seq = None
    for tx in query(contract.chain, kind=TxKind.UNLEARN_COMPLETE):
        if UnlearnCompletePayload.decode(tx.payload).request_seq == plan.request_seq:
            complete_seq = tx.seq_no
    assert complete_seq is not None

    certificate = UnlearnCertificate(
        client_id=plan.client_id,
        request_seq=plan.request_seq,
        complete_seq=complete_seq,
        rollback_round=plan.rollback_round,
        pre_model_digest=pre_digest,
        post_model_digest=post_digest,
        per_class_accuracy_before=before,
        per_class_accuracy_after=after,
        chain_ok=verify_chain(contract.chain).ok,
    )
    return final_model, certificate


@dataclass(frozen=True)
class AuditReport:
    client_id: str
    request_seq: int
    complete_seq: int | None
    rollback_round: int
    rollback_digest: bytes
    post_model_digest: bytes | None
    chain_ok: bool

    def to_json(self) -> str:
        obj = {
            "client_id": self.client_id,
            "request_seq": self.request_seq,
            "complete_seq": self.complete_seq,
            "rollback_round": self.rollback_round,
            "rollback_digest": self.rollback_digest.hex(),
            "post_model_digest": None if self.post_model_digest is None else self.post_model_digest.hex(),
            "chain_ok": self.chain_ok,
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def audit_unlearning(chain: Chain, client_id: str) -> AuditReport:
    """Pure ledger read: pair a client's request with its completion and
    re-verify the chain. Reconstructable by anyone holding the export."""
    request_tx = None
    for tx in query(chain, kind=TxKind.UNLEARN_REQUEST, actor_id=client_id):
        request_tx = tx
        break
    if request_tx is None:
        raise NoRequestFound(client_id)
    request = UnlearnRequestPayload.decode(request_tx.payload)
    complete_seq = None
    post_digest = None
    for tx in query(chain, kind=TxKind.UNLEARN_COMPLETE):
        payload = UnlearnCompletePayload.decode(tx.payload)
        if payload.request_seq == request_tx.seq_no:
            complete_seq = tx.seq_no
            post_digest = payload.model_digest
    return AuditReport(
        client_id=client_id,
        request_seq=request_tx.seq_no,
        complete_seq=complete_seq,
        rollback_round=request.rollback_round,
        rollback_digest=request.rollback_digest,
        post_model_digest=post_digest,
        chain_ok=verify_chain(chain).ok,
    )


def verify_certificate(certificate: UnlearnCertificate, chain: Chain) -> tuple[bool, list[str]]:
    """Revalidate a certificate against a chain export alone.

    Checks chain integrity, that the referenced transactions exist with
    the right kinds and actors, and that the digests the certificate
    claims match the on-chain payloads.
    """
    problems: list[str] = []
    report = verify_chain(chain)
    if not report.ok:
        problems.append(f"chain fails verification at height {report.first_bad_height}: {report.reason}")
    txs = {tx.seq_no: tx for tx in chain.all_txs()}

    request_tx = txs.get(certificate.request_seq)
    if request_tx is None or request_tx.kind is not TxKind.UNLEARN_REQUEST:
        problems.append(f"seq {certificate.request_seq} is not an unlearning request")
    else:
        if request_tx.actor_id != certificate.client_id:
            problems.append(f"request actor {request_tx.actor_id!r} != {certificate.client_id!r}")
        request = UnlearnRequestPayload.decode(request_tx.payload)
        if request.client_id != certificate.client_id:
            problems.append("request payload names a different client")
        if request.rollback_round != certificate.rollback_round:
            problems.append(
                f"rollback round on chain {request.rollback_round} != certificate {certificate.rollback_round}"
            )

    complete_tx = txs.get(certificate.complete_seq)
    if complete_tx is None or complete_tx.kind is not TxKind.UNLEARN_COMPLETE:
        problems.append(f"seq {certificate.complete_seq} is not an unlearning completion")
    else:
        payload = UnlearnCompletePayload.decode(complete_tx.payload)
        if payload.request_seq != certificate.request_seq:
            problems.append("completion does not reference the certificate's request")
        if payload.model_digest != certificate.post_model_digest:
            problems.append("post-unlearning model digest differs from chain")
    if certificate.request_seq >= certificate.complete_seq:
        problems.append("request_seq must precede complete_seq")
    return (not problems, problems)
