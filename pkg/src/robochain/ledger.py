"""Append-only hash-chained ledger with permission modes, signatures and
network-key payload encryption.

Three permission modes gate access: public (anyone reads/appends),
semi-private (anyone reads, registered writers append), private (members
only, both directions).  Every append seals one single-transaction block;
block hashes chain each block to its predecessor, so any byte-level
tampering is detectable by revalidation.

Timestamps are simulation ticks, never wall-clock.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature as _BadSig
from cryptography.exceptions import InvalidTag as _BadTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import (
    AuthenticationFailure,
    InvalidSignature,
    PermissionDenied,
    UnknownBlockRef,
)
from .wire import DIGEST_SIZE, ZERO_DIGEST, Reader, enc_str, enc_u64, lp, sha256

TAG_QUERY_AUDIT = 0x01
TAG_MODEL_CONSENSUS = 0x02

NONCE_SIZE = 12
NETWORK_KEY_SIZE = 32


class PermissionMode(enum.Enum):
    PUBLIC = "public"
    SEMI_PRIVATE = "semi-private"
    PRIVATE = "private"


@dataclass(frozen=True)
class Identity:
    """A network participant: opaque id plus Ed25519 key pair.

    ``private_key`` is ``None`` for identities we only know publicly.
    """

    id: str
    public_key: bytes
    private_key: bytes | None = None

    @classmethod
    def generate(cls, id_: str, seed: bytes) -> "Identity":
        if len(seed) != 32:
            raise ValueError("identity seed must be 32 bytes")
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(id=id_, public_key=pk, private_key=seed)

    def public_only(self) -> "Identity":
        return Identity(id=self.id, public_key=self.public_key)


def sign(message: bytes, identity: Identity) -> bytes:
    if identity.private_key is None:
        raise ValueError(f"identity {identity.id!r} holds no signing key")
    return Ed25519PrivateKey.from_private_bytes(identity.private_key).sign(message)


def verify(message: bytes, signature: bytes, public_key: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (_BadSig, ValueError):
        return False


def encrypt_payload(payload: bytes, network_key: bytes, nonce: bytes | None = None) -> bytes:
    """Authenticated encryption under the shared network key.

    The nonce must never repeat for one key; deterministic callers supply
    it from their seeded stream, otherwise a random one is drawn.
    Returns ``nonce || ciphertext``.
    """
    if nonce is None:
        nonce = os.urandom(NONCE_SIZE)
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    return nonce + ChaCha20Poly1305(network_key).encrypt(nonce, payload, None)


def decrypt_payload(ciphertext: bytes, network_key: bytes) -> bytes:
    if len(ciphertext) < NONCE_SIZE + 16:
        raise AuthenticationFailure("ciphertext too short")
    nonce, body = ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:]
    try:
        return ChaCha20Poly1305(network_key).decrypt(nonce, body, None)
    except _BadTag as exc:
        raise AuthenticationFailure("payload authentication failed") from exc


# --- transactions -----------------------------------------------------------


@dataclass(frozen=True)
class QueryAudit:
    """Hash-only record of one query/answer pair; never the raw content."""

    pair_hash: bytes
    querier_id: str
    timestamp: int

    def canonical(self) -> bytes:
        return (
            bytes([TAG_QUERY_AUDIT])
            + lp(self.pair_hash)
            + lp(enc_str(self.querier_id))
            + lp(enc_u64(self.timestamp))
        )


@dataclass(frozen=True)
class ModelConsensus:
    """Signed, partially encrypted record of a resolved consensus round."""

    timestamp: int
    model_update_hash: bytes
    encrypted_payload: bytes
    signer_id: str
    signature: bytes

    @staticmethod
    def signed_bytes(timestamp: int, model_update_hash: bytes, encrypted_payload: bytes) -> bytes:
        return enc_u64(timestamp) + model_update_hash + encrypted_payload

    def canonical(self) -> bytes:
        return (
            bytes([TAG_MODEL_CONSENSUS])
            + lp(enc_u64(self.timestamp))
            + lp(self.model_update_hash)
            + lp(self.encrypted_payload)
            + lp(enc_str(self.signer_id))
            + lp(self.signature)
        )


Transaction = QueryAudit | ModelConsensus


def decode_transaction(data: bytes) -> Transaction:
    r = Reader(data)
    tag = r.take(1)[0]
    if tag == TAG_QUERY_AUDIT:
        pair_hash = r.field()
        querier = r.field().decode("utf-8")
        ts = r.field()
        r.expect_end()
        if len(pair_hash) != DIGEST_SIZE:
            raise ValueError("pair_hash must be a 32-byte digest")
        return QueryAudit(pair_hash=pair_hash, querier_id=querier, timestamp=Reader(ts).u64())
    if tag == TAG_MODEL_CONSENSUS:
        ts = r.field()
        update_hash = r.field()
        payload = r.field()
        signer = r.field().decode("utf-8")
        signature = r.field()
        r.expect_end()
        if len(update_hash) != DIGEST_SIZE:
            raise ValueError("model_update_hash must be a 32-byte digest")
        return ModelConsensus(
            timestamp=Reader(ts).u64(),
            model_update_hash=update_hash,
            encrypted_payload=payload,
            signer_id=signer,
            signature=signature,
        )
    raise ValueError(f"unknown transaction tag 0x{tag:02x}")


# --- blocks -----------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    timestamp: int
    transactions: tuple[Transaction, ...]
    block_hash: bytes

    def header_bytes(self) -> bytes:
        txs = enc_u64(len(self.transactions)) + b"".join(
            lp(tx.canonical()) for tx in self.transactions
        )
        return enc_u64(self.index) + self.prev_hash + enc_u64(self.timestamp) + txs

    def recomputed_hash(self) -> bytes:
        return sha256(self.header_bytes())

    def serialized(self) -> bytes:
        return self.header_bytes() + self.block_hash


def seal_block(index: int, prev_hash: bytes, timestamp: int,
               transactions: tuple[Transaction, ...]) -> Block:
    unsealed = Block(index, prev_hash, timestamp, transactions, b"")
    return Block(index, prev_hash, timestamp, transactions, unsealed.recomputed_hash())


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    index = r.u64()
    prev_hash = r.take(DIGEST_SIZE)
    timestamp = r.u64()
    ntx = r.u64()
    txs = tuple(decode_transaction(r.field()) for _ in range(ntx))
    block_hash = r.take(DIGEST_SIZE)
    r.expect_end()
    return Block(index, prev_hash, timestamp, txs, block_hash)


@dataclass(frozen=True)
class BlockRef:
    block_index: int
    tx_index: int = 0


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    broken_index: int | None
    length: int


# --- the chain --------------------------------------------------------------


class Ledger:
    """One logical chain with mode-gated access.

    ``writers`` gates appends in semi-private mode, ``members`` gates all
    access in private mode.  Appends are serialized by the caller (single
    event loop or external lock); reads are safe on a snapshot.
    """

    def __init__(
        self,
        mode: PermissionMode = PermissionMode.PUBLIC,
        writers: set[str] | frozenset[str] = frozenset(),
        members: set[str] | frozenset[str] = frozenset(),
        genesis_timestamp: int = 0,
    ):
        self.mode = mode
        self.writers = frozenset(writers)
        self.members = frozenset(members)
        self.known_keys: dict[str, bytes] = {}
        self._blocks: list[Block] = [seal_block(0, ZERO_DIGEST, genesis_timestamp, ())]

    def __len__(self) -> int:
        return len(self._blocks)

    def register_identity(self, identity: Identity) -> None:
        self.known_keys[identity.id] = identity.public_key

    # permission rules

    def may_append(self, caller: Identity) -> bool:
        if self.mode is PermissionMode.PUBLIC:
            return True
        if self.mode is PermissionMode.SEMI_PRIVATE:
            return caller.id in self.writers
        return caller.id in self.members

    def may_read(self, caller: Identity) -> bool:
        if self.mode is PermissionMode.PRIVATE:
            return caller.id in self.members
        return True

    # operations

    def append_transaction(self, tx: Transaction, caller: Identity,
                           now: int | None = None) -> BlockRef:
        if not self.may_append(caller):
            raise PermissionDenied(
                f"{caller.id!r} may not append in {self.mode.value} mode"
            )
        if isinstance(tx, ModelConsensus):
            key = self.known_keys.get(tx.signer_id)
            if key is None:
                raise InvalidSignature(f"unknown signer {tx.signer_id!r}")
            msg = ModelConsensus.signed_bytes(
                tx.timestamp, tx.model_update_hash, tx.encrypted_payload
            )
            if not verify(msg, tx.signature, key):
                raise InvalidSignature(f"bad signature from {tx.signer_id!r}")
        timestamp = tx.timestamp if now is None else now
        tip = self._blocks[-1]
        if timestamp < tip.timestamp:
            raise ValueError(
                f"timestamp {timestamp} precedes chain tip {tip.timestamp}"
            )
        block = seal_block(tip.index + 1, tip.block_hash, timestamp, (tx,))
        self._blocks.append(block)
        return BlockRef(block_index=block.index, tx_index=0)

    def read_block(self, index: int, caller: Identity) -> Block:
        if not self.may_read(caller):
            raise PermissionDenied(
                f"{caller.id!r} may not read in {self.mode.value} mode"
            )
        if not 0 <= index < len(self._blocks):
            raise UnknownBlockRef(f"no block at index {index}")
        return self._blocks[index]

    def read_transaction(self, ref: BlockRef, caller: Identity) -> Transaction:
        block = self.read_block(ref.block_index, caller)
        if not 0 <= ref.tx_index < len(block.transactions):
            raise UnknownBlockRef(f"no transaction {ref.tx_index} in block {ref.block_index}")
        return block.transactions[ref.tx_index]

    # local (replica-holder) access, outside the permission model

    def blocks_snapshot(self) -> tuple[Block, ...]:
        return tuple(self._blocks)

    def tip(self) -> Block:
        return self._blocks[-1]


def validate_chain(chain: Ledger | tuple[Block, ...] | list[Block]) -> ValidationReport:
    """Recompute every block hash and link; report the earliest break."""
    blocks = chain.blocks_snapshot() if isinstance(chain, Ledger) else tuple(chain)
    for i, block in enumerate(blocks):
        expected_prev = ZERO_DIGEST if i == 0 else blocks[i - 1].block_hash
        if block.index != i or block.prev_hash != expected_prev:
            return ValidationReport(ok=False, broken_index=i, length=len(blocks))
        if block.recomputed_hash() != block.block_hash:
            return ValidationReport(ok=False, broken_index=i, length=len(blocks))
    return ValidationReport(ok=True, broken_index=None, length=len(blocks))


# --- persistence ------------------------------------------------------------


def save_chain(chain: Ledger, path: str | Path) -> None:
    """Write the chain as an append-only file of length-prefixed blocks."""
    with open(path, "wb") as fh:
        for block in chain.blocks_snapshot():
            fh.write(lp(block.serialized()))


def read_chain_records(path: str | Path) -> list[bytes]:
    """Split the chain file into raw block records (framing only)."""
    data = Path(path).read_bytes()
    records: list[bytes] = []
    r = Reader(data)
    while not r.exhausted:
        records.append(r.field())
    return records


def load_chain_blocks(path: str | Path) -> list[Block]:
    """Parse all blocks; raises ValueError on any framing/structure damage."""
    return [decode_block(rec) for rec in read_chain_records(path)]


def validate_chain_file(path: str | Path) -> ValidationReport:
    """Validate a persisted chain, treating parse damage as corruption.

    A record that cannot be framed or decoded marks the earliest broken
    index; blocks past a framing failure are unrecoverable and ignored.
    """
    data = Path(path).read_bytes()
    r = Reader(data)
    blocks: list[Block] = []
    while not r.exhausted:
        try:
            blocks.append(decode_block(r.field()))
        except ValueError:
            return ValidationReport(ok=False, broken_index=len(blocks), length=len(blocks) + 1)
    return validate_chain(blocks)
