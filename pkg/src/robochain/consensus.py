"""Candidate-model lifecycle: one proposal at a time, windowed feedback
collection, a strict mean-comparison decision, then network-wide promotion
or rollback, notarized on the ledger.

Each destination robot evaluates the candidate and the incumbent baseline
on the same local session data and submits one score per model.  A round
accepts only if the candidate's mean score strictly exceeds the baseline's
(ties reject); fewer candidate scores than the quorum expires the round.
Mean comparison is exact (rational arithmetic over the submitted floats),
so the decision never hinges on summation order.

The notarized transaction carries the adopted (or discarded) delta's hash
and an encrypted payload listing participants and scores: candidate-score
entries first, then the paired baseline entries, each half sorted by robot
id — so any network member can re-derive the decision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from math import fsum
from typing import Callable, Mapping

from .errors import (
    DuplicateFeedback,
    LateFeedback,
    NotAccepted,
    OrphanCandidate,
    RoundClosed,
    RoundInProgress,
    RoundNotOpen,
    RoundNotResolved,
    WrongSigner,
)
from .ledger import BlockRef, Identity, Ledger, ModelConsensus, encrypt_payload, sign
from .modelstore import Hub, ModelDelta, ModelVersion
from .wire import Reader, enc_f64, enc_str, enc_u64, lp


class RoundState(enum.Enum):
    OPEN = "open"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    EXPIRED = "expired"


_DECISION_BYTE = {
    RoundState.ACCEPTED: 0x01,
    RoundState.REJECTED: 0x02,
    RoundState.EXPIRED: 0x03,
}
_BYTE_DECISION = {v: k for k, v in _DECISION_BYTE.items()}


@dataclass(frozen=True)
class CandidateModel:
    """A freshly trained version locked at its source for network validation."""

    model: ModelVersion
    source_hub: str
    source_robot: str
    locked_score: float
    announced_at: int


@dataclass(frozen=True)
class FeedbackScore:
    robot_id: str
    model_hash: bytes
    score: float
    received_at: int

    def __post_init__(self):
        if not 0.0 < self.score <= 1.0:
            raise ValueError(f"score must lie in (0, 1], got {self.score}")


@dataclass
class ConsensusRound:
    round_id: int
    candidate: CandidateModel
    baseline: ModelVersion
    deadline: int
    quorum: int
    state: RoundState = RoundState.OPEN
    candidate_scores: list[FeedbackScore] = field(default_factory=list)
    baseline_scores: list[FeedbackScore] = field(default_factory=list)


@dataclass(frozen=True)
class Decision:
    round_id: int
    state: RoundState
    candidate_mean: float | None
    baseline_mean: float | None


def _mean_float(scores: list[FeedbackScore]) -> float | None:
    if not scores:
        return None
    return fsum(s.score for s in scores) / len(scores)


def _candidate_mean_exceeds(candidate: list[float], baseline: list[float]) -> bool:
    """Strict mean comparison in exact arithmetic; empty baseline never loses."""
    if not candidate or not baseline:
        return False
    lhs = sum(Fraction(s) for s in candidate) * len(baseline)
    rhs = sum(Fraction(s) for s in baseline) * len(candidate)
    return lhs > rhs


class Coordinator:
    """Owns round state for the network; enforces the one-open-round rule."""

    def __init__(self):
        self._open_round: ConsensusRound | None = None
        self._next_round_id = 1

    @property
    def open_round(self) -> ConsensusRound | None:
        return self._open_round

    def open(self, candidate: CandidateModel, baseline: ModelVersion,
             window: int, quorum: int, now: int,
             versions: Mapping[bytes, ModelVersion] | None = None) -> ConsensusRound:
        if self._open_round is not None and self._open_round.state is RoundState.OPEN:
            raise RoundInProgress(
                f"round {self._open_round.round_id} is still open"
            )
        if not _descends_from(candidate.model, baseline, versions):
            raise OrphanCandidate(
                "candidate does not descend from the baseline it challenges"
            )
        if window < 1 or quorum < 1:
            raise ValueError("window and quorum must be positive")
        rnd = ConsensusRound(
            round_id=self._next_round_id,
            candidate=candidate,
            baseline=baseline,
            deadline=now + window,
            quorum=quorum,
        )
        self._next_round_id += 1
        self._open_round = rnd
        return rnd

    def resolve(self, rnd: ConsensusRound, now: int,
                expected_reporters: int | None = None) -> Decision:
        if rnd.state is not RoundState.OPEN:
            raise RoundNotOpen(f"round {rnd.round_id} is {rnd.state.value}")
        everyone_in = (
            expected_reporters is not None
            and len(rnd.candidate_scores) >= expected_reporters
        )
        if now < rnd.deadline and not everyone_in:
            raise ValueError(
                f"round {rnd.round_id}: deadline {rnd.deadline} not reached at {now}"
            )
        if len(rnd.candidate_scores) < rnd.quorum:
            rnd.state = RoundState.EXPIRED
        elif _candidate_mean_exceeds([s.score for s in rnd.candidate_scores],
                                     [s.score for s in rnd.baseline_scores]):
            rnd.state = RoundState.ACCEPTED
        else:
            rnd.state = RoundState.REJECTED
        self._open_round = None
        return Decision(
            round_id=rnd.round_id,
            state=rnd.state,
            candidate_mean=_mean_float(rnd.candidate_scores),
            baseline_mean=_mean_float(rnd.baseline_scores),
        )


def _descends_from(model: ModelVersion, baseline: ModelVersion,
                   versions: Mapping[bytes, ModelVersion] | None) -> bool:
    cursor = model.parent_id
    while cursor is not None:
        if cursor == baseline.version_id:
            return True
        if versions is None or cursor not in versions:
            return False
        cursor = versions[cursor].parent_id
    return False


def open_round(network: Coordinator, candidate: CandidateModel, baseline: ModelVersion,
               window: int, quorum: int, now: int,
               versions: Mapping[bytes, ModelVersion] | None = None) -> ConsensusRound:
    return network.open(candidate, baseline, window, quorum, now, versions)


def submit_feedback(rnd: ConsensusRound, fb: FeedbackScore) -> bool:
    """Route one score to the matching model's list; duplicates and late
    submissions are rejected (the deadline tick itself is still in-window)."""
    if rnd.state is not RoundState.OPEN:
        raise RoundClosed(f"round {rnd.round_id} is {rnd.state.value}")
    if fb.received_at > rnd.deadline:
        raise LateFeedback(
            f"score at {fb.received_at} after deadline {rnd.deadline}"
        )
    if fb.model_hash == rnd.candidate.model.version_id:
        bucket = rnd.candidate_scores
    elif fb.model_hash == rnd.baseline.version_id:
        bucket = rnd.baseline_scores
    else:
        raise ValueError("score targets neither the candidate nor the baseline")
    if any(s.robot_id == fb.robot_id for s in bucket):
        raise DuplicateFeedback(
            f"robot {fb.robot_id!r} already scored this model in round {rnd.round_id}"
        )
    bucket.append(fb)
    return True


def resolve(network: Coordinator, rnd: ConsensusRound, now: int,
            expected_reporters: int | None = None) -> Decision:
    return network.resolve(rnd, now, expected_reporters)


def install_promoted(hub: Hub, candidate: ModelVersion, promoted: ModelVersion) -> None:
    """Commit the network-accepted version at one hub and advance its baseline."""
    if candidate.version_id not in hub.repo.versions:
        hub.repo.insert(candidate)
    if promoted.version_id not in hub.repo.versions:
        hub.repo.insert(promoted)
    hub.repo.mark_consensual(promoted.version_id)
    hub.reset_working_copies()


def promote(hubs: list[Hub], rnd: ConsensusRound,
            folded: ModelVersion | None = None) -> ModelVersion:
    """Install the accepted model as every hub's new consensual head.

    ``folded`` (candidate plus averaged destination updates) replaces the
    raw candidate when update folding is configured; it must be a child of
    the candidate.  Working copies move to the promoted version.
    """
    if rnd.state is not RoundState.ACCEPTED:
        raise NotAccepted(f"round {rnd.round_id} is {rnd.state.value}")
    candidate = rnd.candidate.model
    if folded is not None and folded.parent_id != candidate.version_id:
        raise ValueError("folded model must descend from the candidate")
    promoted = folded if folded is not None else candidate
    for hub in hubs:
        install_promoted(hub, candidate, promoted)
    return promoted


def rollback_round(hubs: list[Hub]) -> None:
    """Return every hub to the incumbent baseline after a failed round."""
    for hub in hubs:
        hub.repo.rollback()
        hub.reset_working_copies()


# --- notarization ------------------------------------------------------------


def encode_feedback_payload(rnd: ConsensusRound) -> bytes:
    """Participants, scores and decision in the fixed plaintext layout."""
    if rnd.state is RoundState.OPEN:
        raise RoundNotResolved(f"round {rnd.round_id} is still open")
    if len(rnd.candidate_scores) != len(rnd.baseline_scores):
        raise ValueError(
            "unpaired feedback: candidate and baseline score counts differ"
        )
    entries = sorted(rnd.candidate_scores, key=lambda s: s.robot_id)
    entries += sorted(rnd.baseline_scores, key=lambda s: s.robot_id)
    out = enc_u64(len(entries))
    for score in entries:
        out += lp(enc_str(score.robot_id)) + enc_f64(score.score)
    return out + bytes([_DECISION_BYTE[rnd.state]])


@dataclass(frozen=True)
class DecodedPayload:
    candidate_entries: tuple[tuple[str, float], ...]
    baseline_entries: tuple[tuple[str, float], ...]
    decision: RoundState

    def recompute_decision(self, quorum: int | None = None) -> RoundState:
        if quorum is not None and len(self.candidate_entries) < quorum:
            return RoundState.EXPIRED
        if _candidate_mean_exceeds([s for _, s in self.candidate_entries],
                                   [s for _, s in self.baseline_entries]):
            return RoundState.ACCEPTED
        return RoundState.REJECTED


def decode_feedback_payload(data: bytes) -> DecodedPayload:
    r = Reader(data)
    count = r.u64()
    if count % 2 != 0:
        raise ValueError("payload entry count must pair candidate and baseline")
    entries = []
    for _ in range(count):
        robot_id = r.field().decode("utf-8")
        entries.append((robot_id, r.f64()))
    decision = _BYTE_DECISION.get(r.take(1)[0])
    r.expect_end()
    if decision is None:
        raise ValueError("unknown decision byte")
    half = count // 2
    return DecodedPayload(
        candidate_entries=tuple(entries[:half]),
        baseline_entries=tuple(entries[half:]),
        decision=decision,
    )


def notarize(chain: Ledger, rnd: ConsensusRound, delta: ModelDelta,
             network_key: bytes, signer: Identity, now: int,
             nonce: bytes | None = None) -> BlockRef:
    """Append the signed, partially encrypted round record to the chain.

    ``delta`` is whatever the network actually adopted (or discarded):
    its hash is the public commitment that lets members check the model
    they hold is the agreed one.
    """
    if rnd.state is RoundState.OPEN:
        raise RoundNotResolved(f"round {rnd.round_id} is still open")
    if signer.id != rnd.candidate.source_robot:
        raise WrongSigner(
            f"only the proposer {rnd.candidate.source_robot!r} may notarize"
        )
    payload = encode_feedback_payload(rnd)
    encrypted = encrypt_payload(payload, network_key, nonce)
    message = ModelConsensus.signed_bytes(now, delta.update_hash, encrypted)
    tx = ModelConsensus(
        timestamp=now,
        model_update_hash=delta.update_hash,
        encrypted_payload=encrypted,
        signer_id=signer.id,
        signature=sign(message, signer),
    )
    return chain.append_transaction(tx, signer, now=now)
