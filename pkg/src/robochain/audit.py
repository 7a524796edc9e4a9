"""Query/answer auditing: the raw pair stays at the data service, only its
digest goes on the chain.

The pair store is a content-addressed directory; each file holds exactly
``canonical(query) || canonical(answer)``, so its digest recomputes from
the file bytes alone.  Verification compares that digest against the
on-chain record, which makes after-the-fact edits to either side
detectable by anyone holding the chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import MismatchedIds, UnknownBlockRef
from .ledger import Block, BlockRef, Identity, Ledger, QueryAudit
from .opal import AggregatedAnswer, Query, decode_answer, decode_query
from .wire import Reader, sha256


@dataclass(frozen=True)
class AuditedPair:
    query: Query
    answer: AggregatedAnswer
    pair_hash: bytes
    stored_at: str
    ledger_ref: BlockRef


def _pair_bytes(query: Query, answer: AggregatedAnswer) -> bytes:
    return query.canonical() + answer.canonical()


def _split_pair(data: bytes) -> tuple[Query, AggregatedAnswer]:
    r = Reader(data)
    q_fields = [r.field() for _ in range(6)]
    rest = r.take(r.remaining)
    from .wire import lp  # reassemble the consumed fields

    query = decode_query(b"".join(lp(f) for f in q_fields))
    answer = decode_answer(rest)
    return query, answer


class PairStore:
    """Content-addressed on-disk map from pair digest to raw pair bytes."""

    SUFFIX = ".pair"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, pair_hash: bytes) -> Path:
        return self.root / (pair_hash.hex() + self.SUFFIX)

    def put(self, query: Query, answer: AggregatedAnswer) -> bytes:
        data = _pair_bytes(query, answer)
        digest = sha256(data)
        self._path(digest).write_bytes(data)
        return digest

    def raw(self, pair_hash: bytes) -> bytes:
        path = self._path(pair_hash)
        if not path.exists():
            raise KeyError(f"no stored pair {pair_hash.hex()}")
        return path.read_bytes()

    def get(self, pair_hash: bytes) -> tuple[Query, AggregatedAnswer]:
        return _split_pair(self.raw(pair_hash))

    def __contains__(self, pair_hash: bytes) -> bool:
        return self._path(pair_hash).exists()

    def keys(self) -> list[bytes]:
        return sorted(
            bytes.fromhex(p.name[: -len(self.SUFFIX)])
            for p in self.root.glob(f"*{self.SUFFIX}")
        )


def record_pair(query: Query, answer: AggregatedAnswer, store: PairStore) -> bytes:
    """Persist the pair at the data service; returns its digest."""
    if query.query_id != answer.query_id:
        raise MismatchedIds(
            f"answer {answer.query_id!r} does not match query {query.query_id!r}"
        )
    return store.put(query, answer)


def submit_audit_tx(chain: Ledger, pair_hash: bytes, querier: Identity, t: int) -> BlockRef:
    tx = QueryAudit(pair_hash=pair_hash, querier_id=querier.id, timestamp=t)
    return chain.append_transaction(tx, querier, now=t)


def _block_at(chain: Ledger, ref: BlockRef) -> Block:
    blocks = chain.blocks_snapshot()
    if not 0 <= ref.block_index < len(blocks):
        raise UnknownBlockRef(f"no block at index {ref.block_index}")
    return blocks[ref.block_index]


def verify_pair(chain: Ledger, candidate: AuditedPair) -> bool:
    """True iff the candidate's pair re-hashes to the on-chain digest."""
    block = _block_at(chain, candidate.ledger_ref)
    if not 0 <= candidate.ledger_ref.tx_index < len(block.transactions):
        raise UnknownBlockRef(
            f"no transaction {candidate.ledger_ref.tx_index} "
            f"in block {candidate.ledger_ref.block_index}"
        )
    tx = block.transactions[candidate.ledger_ref.tx_index]
    if not isinstance(tx, QueryAudit):
        return False
    return sha256(_pair_bytes(candidate.query, candidate.answer)) == tx.pair_hash


@dataclass(frozen=True)
class PairAuditSummary:
    """Outcome of re-verifying every on-chain audit digest against a store."""

    total: int
    verified: int
    mismatched: tuple[str, ...]  # hex digests whose stored bytes re-hash differently
    missing: tuple[str, ...]     # on-chain digests absent from the store
    orphaned: tuple[str, ...]    # stored pairs without an on-chain record

    @property
    def ok(self) -> bool:
        return not (self.mismatched or self.missing or self.orphaned)


def verify_store_against_chain(chain_blocks, store: PairStore) -> PairAuditSummary:
    """Cross-check the pair store against every QueryAudit on the chain."""
    on_chain: list[bytes] = [
        tx.pair_hash
        for block in chain_blocks
        for tx in block.transactions
        if isinstance(tx, QueryAudit)
    ]
    verified = 0
    mismatched: list[str] = []
    missing: list[str] = []
    for digest in on_chain:
        if digest not in store:
            missing.append(digest.hex())
            continue
        if sha256(store.raw(digest)) == digest:
            verified += 1
        else:
            mismatched.append(digest.hex())
    known = set(on_chain)
    orphaned = [d.hex() for d in store.keys() if d not in known]
    return PairAuditSummary(
        total=len(on_chain),
        verified=verified,
        mismatched=tuple(mismatched),
        missing=tuple(missing),
        orphaned=tuple(orphaned),
    )
