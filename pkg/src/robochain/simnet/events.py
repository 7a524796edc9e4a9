"""Seeded discrete-event queue with a total, deterministic order."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

SESSION_START = "SessionStart"
QUERY_ISSUED = "QueryIssued"
ANSWER_DELIVERED = "AnswerDelivered"
TRAIN_COMPLETE = "TrainComplete"
CANDIDATE_ANNOUNCED = "CandidateAnnounced"
FEEDBACK_DUE = "FeedbackDue"
ROUND_RESOLVE = "RoundResolve"
PROMOTION_BROADCAST = "PromotionBroadcast"

EVENT_KINDS = (
    SESSION_START,
    QUERY_ISSUED,
    ANSWER_DELIVERED,
    TRAIN_COMPLETE,
    CANDIDATE_ANNOUNCED,
    FEEDBACK_DUE,
    ROUND_RESOLVE,
    PROMOTION_BROADCAST,
)


@dataclass(frozen=True)
class SimEvent:
    at: int
    kind: str
    payload: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


class EventQueue:
    """Events run in (tick, insertion order); scheduling into the past is a bug."""

    def __init__(self):
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self.now = 0

    def schedule(self, at: int, kind: str, **payload) -> SimEvent:
        if at < self.now:
            raise ValueError(f"cannot schedule {kind} at {at}, clock is at {self.now}")
        event = SimEvent(at=at, kind=kind, payload=payload)
        heapq.heappush(self._heap, (at, self._seq, event))
        self._seq += 1
        return event

    def pop(self) -> SimEvent:
        at, _, event = heapq.heappop(self._heap)
        self.now = at
        return event

    def __bool__(self) -> bool:
        return bool(self._heap)

    def __len__(self) -> int:
        return len(self._heap)
