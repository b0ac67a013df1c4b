"""Append-only, hash-chained transaction ledger.

The chain is the source of truth for every protocol action: registrations,
model uploads, gradient publications, aggregations, and unlearning events.
Blocks link by hash, transactions carry digests of their payloads, and the
only mutation ever offered is appending a new block. Tamper evidence falls
out of the construction: flip any byte of any committed block and either
its payload digest, its transaction digest, or its block hash stops
recomputing.

Consensus is a latency-and-fault stub: the default endorser set always
approves after a fixed number of simulated ticks, and a fault hook can be
installed to model a rejecting endorser.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .codec import ZERO_DIGEST, CodecError, Reader, Writer, sha256

CHAIN_MAGIC = b"FLCHAIN1"


class LedgerError(Exception):
    """Base class for ledger violations."""


class EmptyTxList(LedgerError):
    pass


class DigestMismatch(LedgerError):
    def __init__(self, seq_no: int):
        super().__init__(f"payload digest mismatch at seq_no {seq_no}")
        self.seq_no = seq_no


class SequenceGap(LedgerError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected seq_no {expected}, got {got}")
        self.expected = expected
        self.got = got


class EndorsementRejected(LedgerError):
    def __init__(self, endorser: int):
        super().__init__(f"endorser {endorser} rejected the commit")
        self.endorser = endorser


class ChainDecodeError(LedgerError):
    def __init__(self, message: str, height: int | None = None):
        super().__init__(message if height is None else f"block {height}: {message}")
        self.height = height


class TxKind(enum.IntEnum):
    REGISTER = 1
    MODEL_UPLOAD = 2
    GRADIENT_PUBLISH = 3
    AGGREGATE = 4
    UNLEARN_REQUEST = 5
    UNLEARN_COMPLETE = 6
    CONFIG_SET = 7


KIND_NAMES = {
    TxKind.REGISTER: "Register",
    TxKind.MODEL_UPLOAD: "ModelUpload",
    TxKind.GRADIENT_PUBLISH: "GradientPublish",
    TxKind.AGGREGATE: "Aggregate",
    TxKind.UNLEARN_REQUEST: "UnlearnRequest",
    TxKind.UNLEARN_COMPLETE: "UnlearnComplete",
    TxKind.CONFIG_SET: "ConfigSet",
}
KINDS_BY_NAME = {name: kind for kind, name in KIND_NAMES.items()}


@dataclass(frozen=True)
class Transaction:
    """One protocol action. The payload is an opaque canonical encoding."""

    seq_no: int
    kind: TxKind
    actor_id: str
    epoch: int | None
    payload_digest: bytes
    payload: bytes
    timestamp: int

    def encode(self) -> bytes:
        w = Writer()
        w.u64(self.seq_no)
        w.u8(int(self.kind))
        w.str_(self.actor_id)
        w.opt_u64(self.epoch)
        w.digest(self.payload_digest)
        w.bytes_(self.payload)
        w.u64(self.timestamp)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        seq_no = r.u64()
        kind_raw = r.u8()
        try:
            kind = TxKind(kind_raw)
        except ValueError:
            raise CodecError(f"unknown tx kind {kind_raw}") from None
        actor_id = r.str_()
        epoch = r.opt_u64()
        payload_digest = r.digest()
        payload = r.bytes_()
        timestamp = r.u64()
        r.expect_end()
        return cls(seq_no, kind, actor_id, epoch, payload_digest, payload, timestamp)

    def tx_hash(self) -> bytes:
        return sha256(self.encode())

    def digest_ok(self) -> bool:
        return sha256(self.payload) == self.payload_digest


def make_tx(
    seq_no: int,
    kind: TxKind,
    actor_id: str,
    payload: bytes,
    timestamp: int,
    epoch: int | None = None,
) -> Transaction:
    return Transaction(seq_no, kind, actor_id, epoch, sha256(payload), payload, timestamp)


def _txs_digest(txs: Sequence[Transaction]) -> bytes:
    # Merkle-style commitment: hash over the concatenated per-tx hashes.
    w = Writer()
    w.u32(len(txs))
    for tx in txs:
        w.digest(tx.tx_hash())
    return sha256(w.getvalue())


def _block_hash(height: int, prev_hash: bytes, txs_digest: bytes) -> bytes:
    w = Writer()
    w.u64(height)
    w.digest(prev_hash)
    w.digest(txs_digest)
    return sha256(w.getvalue())


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    block_hash: bytes

    def hash_ok(self) -> bool:
        return self.block_hash == _block_hash(self.height, self.prev_hash, _txs_digest(self.txs))

    def encode(self) -> bytes:
        w = Writer()
        w.u64(self.height)
        w.digest(self.prev_hash)
        w.digest(self.block_hash)
        w.u32(len(self.txs))
        for tx in self.txs:
            w.bytes_(tx.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        height = r.u64()
        prev_hash = r.digest()
        block_hash = r.digest()
        n = r.u32()
        txs = tuple(Transaction.decode(r.bytes_()) for _ in range(n))
        r.expect_end()
        return cls(height, prev_hash, txs, block_hash)


def make_block(height: int, prev_hash: bytes, txs: Sequence[Transaction]) -> Block:
    txs = tuple(txs)
    return Block(height, prev_hash, txs, _block_hash(height, prev_hash, _txs_digest(txs)))


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...] = ()

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else ZERO_DIGEST

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def next_seq(self) -> int:
        if not self.blocks:
            return 0
        return self.blocks[-1].txs[-1].seq_no + 1

    def __iter__(self) -> Iterable[Transaction]:
        for block in self.blocks:
            yield from block.txs

    def all_txs(self) -> list[Transaction]:
        return [tx for block in self.blocks for tx in block.txs]


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_height: int | None = None
    reason: str | None = None


@dataclass(frozen=True)
class CommitReceipt:
    approved: bool
    latency: int
    n_endorsers: int


def append_block(chain: Chain, txs: Sequence[Transaction]) -> Chain:
    """Extend the chain by one block; the sole mutation the ledger offers.

    Raises EmptyTxList, DigestMismatch, or SequenceGap; on success no prior
    block is touched and the new block links to the previous tip.
    """
    if not txs:
        raise EmptyTxList("cannot append a block with no transactions")
    expected = chain.next_seq()
    for tx in txs:
        if not tx.digest_ok():
            raise DigestMismatch(tx.seq_no)
        if tx.seq_no != expected:
            raise SequenceGap(expected, tx.seq_no)
        expected += 1
    block = make_block(len(chain.blocks), chain.tip_hash, txs)
    return Chain(chain.blocks + (block,))


def verify_chain(chain: Chain) -> VerificationReport:
    """Recompute every hash and link; report the first violation, if any."""
    prev = ZERO_DIGEST
    expected_seq = 0
    for idx, block in enumerate(chain.blocks):
        if block.height != idx:
            return VerificationReport(False, idx, f"height {block.height} at position {idx}")
        if block.prev_hash != prev:
            return VerificationReport(False, idx, "previous-hash link broken")
        if not block.txs:
            return VerificationReport(False, idx, "empty block")
        if not block.hash_ok():
            return VerificationReport(False, idx, "block hash does not recompute")
        for tx in block.txs:
            if tx.seq_no != expected_seq:
                return VerificationReport(False, idx, f"seq_no {tx.seq_no}, expected {expected_seq}")
            if not tx.digest_ok():
                return VerificationReport(False, idx, f"payload digest mismatch at seq {tx.seq_no}")
            expected_seq += 1
        prev = block.block_hash
    return VerificationReport(True)


def query(
    chain: Chain,
    kind: TxKind | None = None,
    actor_id: str | None = None,
    epoch_range: tuple[int, int] | None = None,
) -> list[Transaction]:
    """All matching transactions in seq_no order. Pure read."""
    out = []
    for tx in chain.all_txs():
        if kind is not None and tx.kind != kind:
            continue
        if actor_id is not None and tx.actor_id != actor_id:
            continue
        if epoch_range is not None:
            lo, hi = epoch_range
            if tx.epoch is None or not (lo <= tx.epoch <= hi):
                continue
        out.append(tx)
    return out


FaultHook = Callable[[int, Sequence[Transaction]], bool]


def consensus_commit(
    pending: Sequence[Transaction],
    n_endorsers: int,
    consensus_cost: int = 3,
    fault_hook: FaultHook | None = None,
) -> CommitReceipt:
    """Endorsement stub: all endorsers approve after a fixed latency.

    The latency does not depend on the endorser count; it models the
    fixed per-commit cost of the all-nodes approval round. A fault hook
    may veto: the first endorser it rejects aborts the commit.
    """
    if n_endorsers < 1:
        raise ValueError("n_endorsers must be >= 1")
    if fault_hook is not None:
        for endorser in range(n_endorsers):
            if not fault_hook(endorser, pending):
                raise EndorsementRejected(endorser)
    return CommitReceipt(approved=True, latency=consensus_cost, n_endorsers=n_endorsers)


def export_chain(chain: Chain, path: str) -> None:
    """Length-prefixed binary file of canonical block encodings."""
    with open(path, "wb") as f:
        w = Writer()
        w.raw(CHAIN_MAGIC)
        w.u32(len(chain.blocks))
        for block in chain.blocks:
            w.bytes_(block.encode())
        f.write(w.getvalue())


def import_chain(path: str) -> Chain:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(CHAIN_MAGIC)] != CHAIN_MAGIC:
        raise ChainDecodeError("bad magic; not a chain export")
    r = Reader(data[len(CHAIN_MAGIC) :])
    try:
        n = r.u32()
    except CodecError as exc:
        raise ChainDecodeError(str(exc)) from exc
    blocks = []
    for idx in range(n):
        try:
            blocks.append(Block.decode(r.bytes_()))
        except CodecError as exc:
            raise ChainDecodeError(str(exc), height=idx) from exc
    try:
        r.expect_end()
    except CodecError as exc:
        raise ChainDecodeError(str(exc)) from exc
    return Chain(tuple(blocks))


def tx_to_json(tx: Transaction) -> dict:
    return {
        "seq_no": tx.seq_no,
        "kind": KIND_NAMES[tx.kind],
        "actor_id": tx.actor_id,
        "epoch": tx.epoch,
        "payload_digest": tx.payload_digest.hex(),
        "payload": tx.payload.hex(),
        "timestamp": tx.timestamp,
    }


def tx_from_json(obj: dict) -> Transaction:
    return Transaction(
        seq_no=obj["seq_no"],
        kind=KINDS_BY_NAME[obj["kind"]],
        actor_id=obj["actor_id"],
        epoch=obj["epoch"],
        payload_digest=bytes.fromhex(obj["payload_digest"]),
        payload=bytes.fromhex(obj["payload"]),
        timestamp=obj["timestamp"],
    )


def export_chain_jsonl(chain: Chain, path: str) -> None:
    """Human-readable export: one block per line."""
    with open(path, "w", encoding="utf-8") as f:
        for block in chain.blocks:
            obj = {
                "height": block.height,
                "prev_hash": block.prev_hash.hex(),
                "block_hash": block.block_hash.hex(),
                "txs": [tx_to_json(tx) for tx in block.txs],
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def import_chain_jsonl(path: str) -> Chain:
    blocks = []
    with open(path, "r", encoding="utf-8") as f:
        for idx, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                block = Block(
                    height=obj["height"],
                    prev_hash=bytes.fromhex(obj["prev_hash"]),
                    txs=tuple(tx_from_json(t) for t in obj["txs"]),
                    block_hash=bytes.fromhex(obj["block_hash"]),
                )
            except (KeyError, ValueError) as exc:
                raise ChainDecodeError(str(exc), height=idx) from exc
            blocks.append(block)
    return Chain(tuple(blocks))
