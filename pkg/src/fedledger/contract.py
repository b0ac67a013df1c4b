"""Smart-contract state machine gating every protocol action.

One logical actor processes transitions in arrival order. A transition
validates completely before touching anything; on success it appends
exactly one block to the ledger and applies its state changes, on failure
state and chain are left byte-identical. The ledger is therefore an event
log: replaying a chain through a fresh state machine reconstructs the
same ContractState.

Unlearning is the one transition that moves the model backwards: the
request rolls the global model to the checkpoint preceding the client's
first effective contribution and forgets everything after it; completion
re-publishes the retrained rounds (computed off-chain by the agent over
the surviving clients) as fresh aggregation checkpoints. The ledger keeps
the full history; only the state machine forgets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .auth import Identity, Role, SessionToken, TokenIssuer, TokenStatus, key_generate
from .blobs import MemoryBlobStore
from .clock import SimClock
from .codec import Reader, Writer, sha256
from .fl.dp import DPParams, dp_apply, submission_seed
from .fl.params import params_from_bytes, params_to_bytes
from .fl.train import RoundSchedule, apply_round
from .ledger import (
    Chain,
    FaultHook,
    Transaction,
    TxKind,
    append_block,
    consensus_commit,
    make_tx,
)


class ContractError(Exception):
    pass


class AlreadyExists(ContractError):
    pass


class UnregisteredActor(ContractError):
    pass


class NotAnAgent(ContractError):
    pass


class NotAClient(ContractError):
    pass


class TokenExpired(ContractError):
    pass


class InvalidToken(ContractError):
    pass


class WrongPhase(ContractError):
    pass


class NoGlobalModel(ContractError):
    pass


class InvalidConfig(ContractError):
    def __init__(self, field_name: str, message: str = ""):
        super().__init__(f"invalid {field_name}" + (f": {message}" if message else ""))
        self.field_name = field_name


class UnlearnedClient(ContractError):
    pass


class EpochOutOfWindow(ContractError):
    pass


class DuplicateSubmission(ContractError):
    def __init__(self, epoch: int, client_id: str):
        super().__init__(f"client {client_id} already submitted for epoch {epoch}")
        self.epoch = epoch
        self.client_id = client_id


class InvalidSubmission(ContractError):
    pass


class IncompleteRound(ContractError):
    def __init__(self, missing: tuple[str, ...]):
        super().__init__(f"round incomplete; missing full submissions from {list(missing)}")
        self.missing = missing


class UnknownRound(ContractError):
    pass


class UnknownClient(ContractError):
    pass


class AlreadyUnlearned(ContractError):
    pass


class NoOpenRequest(ContractError):
    pass


class PlanMismatch(ContractError):
    pass


class Phase(enum.Enum):
    IDLE = "idle"
    CONFIGURED = "configured"
    TRAINING = "training"
    UNLEARNING = "unlearning"


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    batch_size: int
    aggregation_interval: int
    lr: float
    clip_norm: float
    noise_multiplier: float
    base_seed: int

    def encode(self) -> bytes:
        w = Writer()
        w.u64(self.epochs)
        w.u64(self.batch_size)
        w.u64(self.aggregation_interval)
        w.f64(self.lr)
        w.f64(self.clip_norm)
        w.f64(self.noise_multiplier)
        w.u64(self.base_seed)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "TrainingConfig":
        r = Reader(data)
        out = cls(r.u64(), r.u64(), r.u64(), r.f64(), r.f64(), r.f64(), r.u64())
        r.expect_end()
        return out

    @property
    def n_rounds(self) -> int:
        return self.epochs // self.aggregation_interval


@dataclass(frozen=True)
class Checkpoint:
    round_no: int
    model_digest: bytes
    ledger_seq: int


@dataclass(frozen=True)
class UnlearnPlan:
    """The agent's retraining instruction, auditable and replayable:
    where to roll back to, whom to exclude, and which rounds to rerun
    with which surviving participants."""

    client_id: str
    request_seq: int
    rollback_round: int
    checkpoint_digest: bytes
    rounds: tuple[RoundSchedule, ...]
    config: TrainingConfig


# Ledger payloads, one per transaction kind. Canonical encodings so a
# payload digest is reproducible across processes.


@dataclass(frozen=True)
class RegisterPayload:
    participant_id: str
    role: Role
    public_key: bytes

    def encode(self) -> bytes:
        w = Writer()
        w.str_(self.participant_id)
        w.str_(self.role.value)
        w.bytes_(self.public_key)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "RegisterPayload":
        r = Reader(data)
        out = cls(r.str_(), Role(r.str_()), r.bytes_())
        r.expect_end()
        return out


@dataclass(frozen=True)
class ModelUploadPayload:
    model_digest: bytes
    dim: int

    def encode(self) -> bytes:
        w = Writer()
        w.digest(self.model_digest)
        w.u64(self.dim)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "ModelUploadPayload":
        r = Reader(data)
        out = cls(r.digest(), r.u64())
        r.expect_end()
        return out


@dataclass(frozen=True)
class GradientPublishPayload:
    epoch: int
    client_id: str
    gradient_digest: bytes
    n_examples: int

    def encode(self) -> bytes:
        w = Writer()
        w.u64(self.epoch)
        w.str_(self.client_id)
        w.digest(self.gradient_digest)
        w.u64(self.n_examples)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "GradientPublishPayload":
        r = Reader(data)
        out = cls(r.u64(), r.str_(), r.digest(), r.u64())
        r.expect_end()
        return out


@dataclass(frozen=True)
class AggregatePayload:
    round_no: int
    model_digest: bytes
    participants: tuple[str, ...]

    def encode(self) -> bytes:
        w = Writer()
        w.u64(self.round_no)
        w.digest(self.model_digest)
        w.u32(len(self.participants))
        for pid in self.participants:
            w.str_(pid)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "AggregatePayload":
        r = Reader(data)
        round_no = r.u64()
        digest = r.digest()
        participants = tuple(r.str_() for _ in range(r.u32()))
        r.expect_end()
        return cls(round_no, digest, participants)


@dataclass(frozen=True)
class UnlearnRequestPayload:
    client_id: str
    rollback_round: int
    rollback_digest: bytes
    first_epoch: int | None

    def encode(self) -> bytes:
        w = Writer()
        w.str_(self.client_id)
        w.u64(self.rollback_round)
        w.digest(self.rollback_digest)
        w.opt_u64(self.first_epoch)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "UnlearnRequestPayload":
        r = Reader(data)
        out = cls(r.str_(), r.u64(), r.digest(), r.opt_u64())
        r.expect_end()
        return out


@dataclass(frozen=True)
class UnlearnCompletePayload:
    request_seq: int
    model_digest: bytes
    n_retrain_rounds: int

    def encode(self) -> bytes:
        w = Writer()
        w.u64(self.request_seq)
        w.digest(self.model_digest)
        w.u64(self.n_retrain_rounds)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "UnlearnCompletePayload":
        r = Reader(data)
        out = cls(r.u64(), r.digest(), r.u64())
        r.expect_end()
        return cls(out.request_seq, out.model_digest, out.n_retrain_rounds)


@dataclass
class ContractState:
    """Everything the state machine remembers. Mappings iterate in
    insertion order, which replay reproduces, so two equal histories give
    equal digests."""

    user_pool: dict[str, Identity] = field(default_factory=dict)
    global_model_digest: bytes | None = None
    config: TrainingConfig | None = None
    gradient_log: dict[tuple[int, str], bytes] = field(default_factory=dict)
    declared_sizes: dict[str, int] = field(default_factory=dict)
    checkpoints: dict[int, Checkpoint] = field(default_factory=dict)
    round_participants: dict[int, tuple[str, ...]] = field(default_factory=dict)
    first_contribution: dict[str, int] = field(default_factory=dict)
    unlearned: dict[str, int] = field(default_factory=dict)
    phase: Phase = Phase.IDLE
    completed_rounds: int = 0
    open_plan: UnlearnPlan | None = None

    def digest(self) -> bytes:
        """Canonical digest of the whole state, for replay and atomicity
        checks. Sorted keys, so equality does not hinge on insertion order."""
        w = Writer()
        w.u32(len(self.user_pool))
        for pid in sorted(self.user_pool):
            ident = self.user_pool[pid]
            w.str_(pid)
            w.str_(ident.role.value)
            w.bytes_(ident.public_key)
        w.boolean(self.global_model_digest is not None)
        if self.global_model_digest is not None:
            w.digest(self.global_model_digest)
        w.boolean(self.config is not None)
        if self.config is not None:
            w.raw(self.config.encode())
        w.u32(len(self.gradient_log))
        for (epoch, cid) in sorted(self.gradient_log):
            w.u64(epoch)
            w.str_(cid)
            w.digest(self.gradient_log[(epoch, cid)])
        w.u32(len(self.declared_sizes))
        for cid in sorted(self.declared_sizes):
            w.str_(cid)
            w.u64(self.declared_sizes[cid])
        w.u32(len(self.checkpoints))
        for rnd in sorted(self.checkpoints):
            cp = self.checkpoints[rnd]
            w.u64(rnd)
            w.digest(cp.model_digest)
            w.u64(cp.ledger_seq)
        w.u32(len(self.round_participants))
        for rnd in sorted(self.round_participants):
            w.u64(rnd)
            w.u32(len(self.round_participants[rnd]))
            for pid in self.round_participants[rnd]:
                w.str_(pid)
        w.u32(len(self.first_contribution))
        for cid in sorted(self.first_contribution):
            w.str_(cid)
            w.u64(self.first_contribution[cid])
        w.u32(len(self.unlearned))
        for cid in sorted(self.unlearned):
            w.str_(cid)
            w.u64(self.unlearned[cid])
        w.str_(self.phase.value)
        w.u64(self.completed_rounds)
        w.boolean(self.open_plan is not None)
        if self.open_plan is not None:
            plan = self.open_plan
            w.str_(plan.client_id)
            w.u64(plan.request_seq)
            w.u64(plan.rollback_round)
            w.digest(plan.checkpoint_digest)
            w.u32(len(plan.rounds))
            for sched in plan.rounds:
                w.u64(sched.round_no)
                w.u32(len(sched.participants))
                for pid in sched.participants:
                    w.str_(pid)
            w.raw(plan.config.encode())
        return sha256(w.getvalue())

    def client_ids(self) -> list[str]:
        return [pid for pid, ident in self.user_pool.items() if ident.role is Role.CLIENT]

    def active_clients(self) -> list[str]:
        return [cid for cid in self.client_ids() if cid not in self.unlearned]


class Contract:
    """Single-writer facade over (state, chain, blobs, clock).

    Successful transitions cost consensus_cost plus tx_cost per
    transaction on the simulated clock; failed ones cost nothing.
    """

    def __init__(
        self,
        blobs=None,
        clock: SimClock | None = None,
        auth_seed: int = 0,
        token_ttl: int = 1_000_000,
        n_endorsers: int = 4,
        consensus_cost: int = 3,
        tx_cost: int = 2,
        quorum: float = 1.0,
        fault_hook: FaultHook | None = None,
    ):
        if not 0.0 < quorum <= 1.0:
            raise ValueError("quorum must be in (0, 1]")
        self.state = ContractState()
        self.chain = Chain()
        self.blobs = blobs if blobs is not None else MemoryBlobStore()
        self.clock = clock if clock is not None else SimClock()
        self.auth_seed = auth_seed
        self.issuer = TokenIssuer(token_ttl)
        self.n_endorsers = n_endorsers
        self.consensus_cost = consensus_cost
        self.tx_cost = tx_cost
        self.quorum = quorum
        self.fault_hook = fault_hook

    # -- plumbing ---------------------------------------------------------

    def _commit(self, txs: list[Transaction]) -> None:
        # Consensus may veto; nothing has been mutated if it does.
        consensus_commit(txs, self.n_endorsers, self.consensus_cost, self.fault_hook)
        self.chain = append_block(self.chain, txs)
        self.clock.advance(self.consensus_cost + self.tx_cost * len(txs))

    def _require_identity(self, actor_id: str, role: Role) -> Identity:
        ident = self.state.user_pool.get(actor_id)
        if ident is None:
            raise UnregisteredActor(f"{actor_id!r} is not registered")
        if ident.role is not role:
            if role is Role.AGENT:
                raise NotAnAgent(f"{actor_id!r} has role {ident.role.value}")
            raise NotAClient(f"{actor_id!r} has role {ident.role.value}")
        return ident

    def _require_token(self, ident: Identity, token: SessionToken) -> None:
        if token.participant_id != ident.participant_id:
            raise InvalidToken("token subject does not match actor")
        status = TokenIssuer.check(token, ident.public_key, self.clock.now)
        if status is TokenStatus.BAD_SIGNATURE:
            raise InvalidToken("token signature does not verify")
        if status is TokenStatus.EXPIRED:
            raise TokenExpired(f"token for {ident.participant_id!r} expired")

    def _store_params(self, theta: np.ndarray) -> bytes:
        return self.blobs.put(params_to_bytes(theta))

    def _load_params(self, digest: bytes) -> np.ndarray:
        return params_from_bytes(self.blobs.get(digest))

    # -- transitions ------------------------------------------------------

    def register(self, participant_id: str, role: Role) -> SessionToken:
        """Add an identity to the pool and hand back its session token.

        The keypair is generated here and only the public half retained,
        so the secret key lives with the registrant alone.
        """
        if not participant_id:
            raise ContractError("participant id must be non-empty")
        if participant_id in self.state.user_pool:
            raise AlreadyExists(f"{participant_id!r} already existed")
        keypair = key_generate(self.auth_seed, participant_id)
        ident = Identity(participant_id, role, keypair.public_bytes)
        token = self.issuer.issue(keypair, participant_id, role, self.clock.now)
        payload = RegisterPayload(participant_id, role, keypair.public_bytes)
        tx = make_tx(self.chain.next_seq(), TxKind.REGISTER, participant_id, payload.encode(), self.clock.now)
        self._commit([tx])
        self.state.user_pool[participant_id] = ident
        return token

    def upload_global_model(self, agent_id: str, token: SessionToken, model: np.ndarray) -> bytes:
        """Store the initial global model and record it as checkpoint 0."""
        ident = self._require_identity(agent_id, Role.AGENT)
        self._require_token(ident, token)
        if self.state.phase is not Phase.IDLE or self.state.completed_rounds != 0:
            raise WrongPhase("the global model can only be uploaded before training starts")
        digest = self._store_params(np.asarray(model, dtype=np.float64))
        payload = ModelUploadPayload(digest, int(np.asarray(model).size))
        seq = self.chain.next_seq()
        tx = make_tx(seq, TxKind.MODEL_UPLOAD, agent_id, payload.encode(), self.clock.now)
        self._commit([tx])
        self.state.global_model_digest = digest
        self.state.checkpoints[0] = Checkpoint(0, digest, seq)
        return digest

    def configure_training(
        self,
        agent_id: str,
        token: SessionToken,
        epochs: int,
        batch_size: int,
        aggregation_interval: int,
        lr: float,
        clip_norm: float = 1.0,
        noise_multiplier: float = 0.0,
        base_seed: int = 0,
    ) -> TrainingConfig:
        ident = self._require_identity(agent_id, Role.AGENT)
        self._require_token(ident, token)
        if self.state.global_model_digest is None:
            raise NoGlobalModel("upload a global model before configuring training")
        if self.state.phase is not Phase.IDLE:
            raise WrongPhase(f"cannot reconfigure in phase {self.state.phase.value}")
        if epochs < 1:
            raise InvalidConfig("epochs", "must be >= 1")
        if batch_size < 1:
            raise InvalidConfig("batch_size", "must be >= 1")
        if aggregation_interval < 1:
            raise InvalidConfig("aggregation_interval", "must be >= 1")
        if epochs % aggregation_interval != 0:
            raise InvalidConfig("epochs", "must be a multiple of aggregation_interval")
        if not lr > 0:
            raise InvalidConfig("lr", "must be positive")
        if not clip_norm > 0:
            raise InvalidConfig("clip_norm", "must be positive")
        if noise_multiplier < 0:
            raise InvalidConfig("noise_multiplier", "must be non-negative")
        config = TrainingConfig(epochs, batch_size, aggregation_interval, lr, clip_norm, noise_multiplier, base_seed)
        tx = make_tx(self.chain.next_seq(), TxKind.CONFIG_SET, agent_id, config.encode(), self.clock.now)
        self._commit([tx])
        self.state.config = config
        self.state.phase = Phase.CONFIGURED
        return config

    def submit_gradient(
        self,
        client_id: str,
        token: SessionToken,
        epoch: int,
        gradient: np.ndarray,
        n_examples: int,
    ) -> bytes:
        """Privatize and publish one client epoch gradient.

        The raw gradient never reaches the chain or the agent: clipping
        and (seeded) noise are applied here, and only the privatized blob
        is stored and logged.
        """
        ident = self._require_identity(client_id, Role.CLIENT)
        if client_id in self.state.unlearned:
            raise UnlearnedClient(f"{client_id!r} has been unlearned")
        self._require_token(ident, token)
        if self.state.phase not in (Phase.CONFIGURED, Phase.TRAINING):
            raise WrongPhase(f"cannot submit in phase {self.state.phase.value}")
        config = self.state.config
        assert config is not None
        k = config.aggregation_interval
        lo = self.state.completed_rounds * k
        if not lo <= epoch < min(lo + k, config.epochs):
            raise EpochOutOfWindow(f"epoch {epoch} outside open window [{lo}, {min(lo + k, config.epochs)})")
        if (epoch, client_id) in self.state.gradient_log:
            raise DuplicateSubmission(epoch, client_id)
        if n_examples < 1:
            raise InvalidSubmission("n_examples must be >= 1")
        declared = self.state.declared_sizes.get(client_id)
        if declared is not None and declared != n_examples:
            raise InvalidSubmission(f"declared dataset size changed from {declared} to {n_examples}")
        gradient = np.asarray(gradient, dtype=np.float64)
        if not np.all(np.isfinite(gradient)):
            raise InvalidSubmission("gradient contains non-finite values")
        dp = DPParams(
            clip_norm=config.clip_norm,
            noise_multiplier=config.noise_multiplier,
            rng_seed=submission_seed(config.base_seed, client_id, epoch),
        )
        noised = dp_apply(gradient, dp)
        digest = self.blobs.put(params_to_bytes(noised))
        payload = GradientPublishPayload(epoch, client_id, digest, n_examples)
        tx = make_tx(
            self.chain.next_seq(), TxKind.GRADIENT_PUBLISH, client_id, payload.encode(), self.clock.now, epoch=epoch
        )
        self._commit([tx])
        self.state.gradient_log[(epoch, client_id)] = digest
        self.state.declared_sizes[client_id] = n_examples
        self.state.first_contribution.setdefault(client_id, epoch)
        self.state.phase = Phase.TRAINING
        return digest

    def _round_window(self, round_no: int) -> tuple[int, int]:
        k = self.state.config.aggregation_interval
        return (round_no - 1) * k, round_no * k

    def _round_submitters(self, round_no: int) -> list[str]:
        """Clients with a full set of epoch submissions for the round, in
        first-appearance order within the round."""
        lo, hi = self._round_window(round_no)
        seen: dict[str, None] = {}
        for (epoch, cid) in self.state.gradient_log:
            if lo <= epoch < hi and cid not in seen:
                seen[cid] = None
        complete = []
        for cid in seen:
            if all((e, cid) in self.state.gradient_log for e in range(lo, hi)):
                complete.append(cid)
        return complete

    def aggregate(self, agent_id: str, token: SessionToken, round_no: int) -> bytes:
        """Fold the round's published gradients into a new global model."""
        ident = self._require_identity(agent_id, Role.AGENT)
        self._require_token(ident, token)
        if self.state.phase is not Phase.TRAINING:
            raise WrongPhase(f"cannot aggregate in phase {self.state.phase.value}")
        config = self.state.config
        assert config is not None
        if round_no != self.state.completed_rounds + 1 or round_no > config.n_rounds:
            raise UnknownRound(f"round {round_no}; next aggregatable round is {self.state.completed_rounds + 1}")
        expected = self.state.active_clients()
        complete = self._round_submitters(round_no)
        needed = max(1, math.ceil(self.quorum * len(expected) - 1e-9))
        if len(complete) < needed:
            missing = tuple(cid for cid in expected if cid not in complete)
            raise IncompleteRound(missing)
        lo, hi = self._round_window(round_no)
        submissions = []
        for cid in complete:
            grads = [self._load_params(self.state.gradient_log[(e, cid)]) for e in range(lo, hi)]
            submissions.append((cid, grads))
        weights = {cid: float(self.state.declared_sizes[cid]) for cid in complete}
        current = self._load_params(self.state.global_model_digest)
        new_model = apply_round(current, submissions, weights, config.lr)
        digest = self._store_params(new_model)
        payload = AggregatePayload(round_no, digest, tuple(complete))
        seq = self.chain.next_seq()
        tx = make_tx(seq, TxKind.AGGREGATE, agent_id, payload.encode(), self.clock.now, epoch=hi - 1)
        self._commit([tx])
        self.state.global_model_digest = digest
        self.state.checkpoints[round_no] = Checkpoint(round_no, digest, seq)
        self.state.round_participants[round_no] = tuple(complete)
        self.state.completed_rounds = round_no
        return digest

    def request_unlearning(self, client_id: str, token: SessionToken) -> UnlearnPlan:
        """Roll back to the checkpoint preceding the client's first
        effective contribution and open a retraining plan.

        The plan's rounds carry the surviving participants in their
        original aggregation order, which is what makes the retrain
        arithmetic identical to a run that never included the client.
        """
        ident = self.state.user_pool.get(client_id)
        if ident is None or ident.role is not Role.CLIENT:
            raise UnknownClient(f"{client_id!r} is not a registered client")
        if client_id in self.state.unlearned:
            raise AlreadyUnlearned(f"{client_id!r} was already unlearned")
        self._require_token(ident, token)
        if self.state.phase not in (Phase.CONFIGURED, Phase.TRAINING):
            raise WrongPhase(f"cannot request unlearning in phase {self.state.phase.value}")
        config = self.state.config
        assert config is not None
        k = config.aggregation_interval
        first_epoch = self.state.first_contribution.get(client_id)
        if first_epoch is None:
            e0 = self.state.completed_rounds
        else:
            e0 = first_epoch // k
        checkpoint = self.state.checkpoints.get(e0)
        if checkpoint is None:
            # Contributions inside a not-yet-aggregated round roll back to
            # the last committed checkpoint.
            e0 = min(e0, self.state.completed_rounds)
            checkpoint = self.state.checkpoints[e0]
        rounds = tuple(
            RoundSchedule(r, tuple(cid for cid in self.state.round_participants.get(r, ()) if cid != client_id))
            for r in range(e0 + 1, self.state.completed_rounds + 1)
        )
        payload = UnlearnRequestPayload(client_id, e0, checkpoint.model_digest, first_epoch)
        seq = self.chain.next_seq()
        tx = make_tx(seq, TxKind.UNLEARN_REQUEST, client_id, payload.encode(), self.clock.now)
        self._commit([tx])
        plan = UnlearnPlan(client_id, seq, e0, checkpoint.model_digest, rounds, config)
        self._apply_rollback(client_id, e0, seq)
        self.state.open_plan = plan
        return plan

    def _apply_rollback(self, client_id: str, e0: int, request_seq: int) -> None:
        """Forget everything after checkpoint e0: model reference, later
        checkpoints, gradient log entries, and contribution marks."""
        k = self.state.config.aggregation_interval
        cutoff = e0 * k
        self.state.unlearned[client_id] = request_seq
        self.state.global_model_digest = self.state.checkpoints[e0].model_digest
        for key in [key for key in self.state.gradient_log if key[0] >= cutoff]:
            del self.state.gradient_log[key]
        for rnd in [r for r in self.state.checkpoints if r > e0]:
            del self.state.checkpoints[rnd]
        for rnd in [r for r in self.state.round_participants if r > e0]:
            del self.state.round_participants[rnd]
        for cid in [c for c, e in self.state.first_contribution.items() if e >= cutoff]:
            del self.state.first_contribution[cid]
        self.state.completed_rounds = e0
        self.state.phase = Phase.UNLEARNING

    def complete_unlearning(
        self,
        agent_id: str,
        token: SessionToken,
        retrained_model: np.ndarray,
        plan: UnlearnPlan,
        round_models: list[tuple[int, np.ndarray]],
    ) -> bytes:
        """Publish the agent's retraining as fresh aggregation rounds plus
        a completion record tied to the request.

        round_models pairs each plan round with the model the retraining
        produced after it; the last one must equal retrained_model, and
        with an empty plan the model must equal the rollback checkpoint.
        """
        ident = self._require_identity(agent_id, Role.AGENT)
        self._require_token(ident, token)
        if self.state.phase is not Phase.UNLEARNING or self.state.open_plan is None:
            raise NoOpenRequest("no unlearning request is open")
        if plan != self.state.open_plan:
            raise PlanMismatch("plan does not match the open request")
        if [r for r, _ in round_models] != [s.round_no for s in plan.rounds]:
            raise PlanMismatch("round models do not cover the plan's rounds")
        retrained_model = np.asarray(retrained_model, dtype=np.float64)
        final_bytes = params_to_bytes(retrained_model)
        if round_models:
            if params_to_bytes(np.asarray(round_models[-1][1], dtype=np.float64)) != final_bytes:
                raise PlanMismatch("final round model differs from the retrained model")
        else:
            if sha256(final_bytes) != plan.checkpoint_digest:
                raise PlanMismatch("empty plan must return the rollback checkpoint model")

        txs = []
        seq = self.chain.next_seq()
        staged: list[tuple[int, bytes, int]] = []
        for sched, (round_no, model) in zip(plan.rounds, round_models):
            digest = self.blobs.put(params_to_bytes(np.asarray(model, dtype=np.float64)))
            payload = AggregatePayload(round_no, digest, sched.participants)
            epoch = round_no * plan.config.aggregation_interval - 1
            txs.append(make_tx(seq, TxKind.AGGREGATE, agent_id, payload.encode(), self.clock.now, epoch=epoch))
            staged.append((round_no, digest, seq))
            seq += 1
        final_digest = self.blobs.put(final_bytes)
        complete_payload = UnlearnCompletePayload(plan.request_seq, final_digest, len(plan.rounds))
        txs.append(make_tx(seq, TxKind.UNLEARN_COMPLETE, agent_id, complete_payload.encode(), self.clock.now))
        self._commit(txs)

        k = plan.config.aggregation_interval
        for (round_no, digest, tx_seq), sched in zip(staged, plan.rounds):
            self.state.checkpoints[round_no] = Checkpoint(round_no, digest, tx_seq)
            self.state.round_participants[round_no] = sched.participants
            for cid in sched.participants:
                self.state.first_contribution.setdefault(cid, (round_no - 1) * k)
            self.state.completed_rounds = round_no
            self.state.global_model_digest = digest
        if not staged:
            self.state.global_model_digest = final_digest
        self.state.phase = Phase.TRAINING
        self.state.open_plan = None
        return final_digest


def replay_chain(chain: Chain) -> ContractState:
    """Reconstruct contract state purely from the event log.

    Applies each transaction's recorded effects in order; no blobs, no
    keys, no clock. The result must match the live machine's state
    exactly, which is what the replay tests assert.
    """
    state = ContractState()
    for tx in chain.all_txs():
        if tx.kind is TxKind.REGISTER:
            p = RegisterPayload.decode(tx.payload)
            state.user_pool[p.participant_id] = Identity(p.participant_id, p.role, p.public_key)
        elif tx.kind is TxKind.MODEL_UPLOAD:
            p = ModelUploadPayload.decode(tx.payload)
            state.global_model_digest = p.model_digest
            state.checkpoints[0] = Checkpoint(0, p.model_digest, tx.seq_no)
        elif tx.kind is TxKind.CONFIG_SET:
            state.config = TrainingConfig.decode(tx.payload)
            state.phase = Phase.CONFIGURED
        elif tx.kind is TxKind.GRADIENT_PUBLISH:
            p = GradientPublishPayload.decode(tx.payload)
            state.gradient_log[(p.epoch, p.client_id)] = p.gradient_digest
            state.declared_sizes[p.client_id] = p.n_examples
            state.first_contribution.setdefault(p.client_id, p.epoch)
            state.phase = Phase.TRAINING
        elif tx.kind is TxKind.AGGREGATE:
            p = AggregatePayload.decode(tx.payload)
            state.checkpoints[p.round_no] = Checkpoint(p.round_no, p.model_digest, tx.seq_no)
            state.round_participants[p.round_no] = p.participants
            if state.phase is Phase.UNLEARNING:
                k = state.config.aggregation_interval
                for cid in p.participants:
                    state.first_contribution.setdefault(cid, (p.round_no - 1) * k)
            state.completed_rounds = p.round_no
            state.global_model_digest = p.model_digest
        elif tx.kind is TxKind.UNLEARN_REQUEST:
            p = UnlearnRequestPayload.decode(tx.payload)
            k = state.config.aggregation_interval
            cutoff = p.rollback_round * k
            rounds = tuple(
                RoundSchedule(
                    r, tuple(cid for cid in state.round_participants.get(r, ()) if cid != p.client_id)
                )
                for r in range(p.rollback_round + 1, state.completed_rounds + 1)
            )
            state.unlearned[p.client_id] = tx.seq_no
            state.global_model_digest = p.rollback_digest
            for key in [key for key in state.gradient_log if key[0] >= cutoff]:
                del state.gradient_log[key]
            for rnd in [r for r in state.checkpoints if r > p.rollback_round]:
                del state.checkpoints[rnd]
            for rnd in [r for r in state.round_participants if r > p.rollback_round]:
                del state.round_participants[rnd]
            for cid in [c for c, e in state.first_contribution.items() if e >= cutoff]:
                del state.first_contribution[cid]
            state.completed_rounds = p.rollback_round
            state.phase = Phase.UNLEARNING
            state.open_plan = UnlearnPlan(
                p.client_id, tx.seq_no, p.rollback_round, p.rollback_digest, rounds, state.config
            )
        elif tx.kind is TxKind.UNLEARN_COMPLETE:
            p = UnlearnCompletePayload.decode(tx.payload)
            state.global_model_digest = p.model_digest
            state.phase = Phase.TRAINING
            state.open_plan = None
    return state
