"""Vetted-algorithm query service over protected patient databases.

Queries never see records.  An expert-verified algorithm runs inside the
owning party's boundary and only a k-thresholded aggregate leaves it:
groups smaller than the algorithm's minimum size are suppressed outright.
Federation merges the per-party aggregation states exactly (rational
arithmetic internally), so a merged answer equals the aggregate someone
would compute over the pooled records — without ever pooling them.

Filter language: a conjunction of ``(field, op, constant)`` clauses with
op in ``= < <= > >= in``.  For scalar fields ``in`` tests membership of
the field value in a constant set; for the set-valued ``condition_tags``
field it tests whether the constant tag is present on the record.
Addressable fields: ``age``, ``gender_code``, ``score_<i>`` (the i-th
assessment score) and ``condition_tags``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from .errors import (
    DisallowedField,
    DuplicateId,
    NotVerified,
    SuppressedInput,
    UnknownAlgorithm,
    ZeroBaseline,
)
from .wire import Reader, enc_f64, enc_str, enc_u64, lp, sha256

AGGREGATIONS = ("count", "mean", "variance", "proportion-above-threshold")
OPS = ("=", "<", "<=", ">", ">=", "in")

#: group_size value reported by suppressed answers ("< k", never the count)
GROUP_BELOW_K = -1

_VALUE_FLOAT = 0x01
_VALUE_STR = 0x02
_VALUE_SET = 0x03


@dataclass(frozen=True)
class PatientRecord:
    record_id: str
    age: int
    gender_code: int
    assessment_scores: tuple[float, ...]
    condition_tags: frozenset[str]
    party_id: str

    def __post_init__(self):
        if self.age < 0:
            raise ValueError(f"record {self.record_id!r}: negative age")
        if not all(math.isfinite(s) for s in self.assessment_scores):
            raise ValueError(f"record {self.record_id!r}: non-finite score")


@dataclass(frozen=True)
class VettedAlgorithm:
    algo_id: str
    aggregation: str
    allowed_fields: frozenset[str]
    min_group_size: int
    expert_verified: bool
    threshold: float = 0.0  # used by proportion-above-threshold only

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


FilterClause = tuple[str, str, object]


@dataclass(frozen=True)
class Query:
    query_id: str
    algo_id: str
    filter: tuple[FilterClause, ...]
    target_field: str
    requester_id: str
    timestamp: int

    def canonical(self) -> bytes:
        return (
            lp(enc_str(self.query_id))
            + lp(enc_str(self.algo_id))
            + lp(_encode_filter(self.filter))
            + lp(enc_str(self.target_field))
            + lp(enc_str(self.requester_id))
            + lp(enc_u64(self.timestamp))
        )


@dataclass(frozen=True)
class AggregatedAnswer:
    """Group-level result; suppressed answers carry no numeric content.

    ``party_failures`` is requester-side diagnostics from federation and is
    excluded from the canonical (hashed/audited) serialization.
    """

    query_id: str
    group_size: int
    statistic: float | None
    contributing_parties: int
    relative_comparison_pct: float | None = None
    party_failures: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    @property
    def suppressed(self) -> bool:
        return self.statistic is None

    def canonical(self) -> bytes:
        if self.suppressed:
            group = b""
            stat = b""
        else:
            group = enc_u64(self.group_size)
            stat = enc_f64(self.statistic)
        pct = b"" if self.relative_comparison_pct is None else enc_f64(self.relative_comparison_pct)
        return (
            lp(enc_str(self.query_id))
            + lp(group)
            + lp(stat)
            + lp(pct)
            + lp(enc_u64(self.contributing_parties))
        )


def _encode_value(value: object) -> bytes:
    if isinstance(value, bool):
        raise ValueError("boolean filter constants are not supported")
    if isinstance(value, (int, float)):
        return bytes([_VALUE_FLOAT]) + enc_f64(float(value))
    if isinstance(value, str):
        return bytes([_VALUE_STR]) + enc_str(value)
    if isinstance(value, (set, frozenset, tuple, list)):
        items = sorted(_encode_value(v) for v in value)
        return bytes([_VALUE_SET]) + enc_u64(len(items)) + b"".join(lp(i) for i in items)
    raise ValueError(f"unsupported filter constant {value!r}")


def _decode_value(data: bytes) -> object:
    r = Reader(data)
    tag = r.take(1)[0]
    if tag == _VALUE_FLOAT:
        return r.f64()
    if tag == _VALUE_STR:
        return r.take(r.remaining).decode("utf-8")
    if tag == _VALUE_SET:
        n = r.u64()
        return frozenset(_decode_value(r.field()) for _ in range(n))
    raise ValueError(f"unknown filter value tag 0x{tag:02x}")


def _encode_filter(clauses: tuple[FilterClause, ...]) -> bytes:
    out = enc_u64(len(clauses))
    for fld, op, value in clauses:
        if op not in OPS:
            raise ValueError(f"unknown filter op {op!r}")
        out += lp(enc_str(fld)) + lp(enc_str(op)) + lp(_encode_value(value))
    return out


def _decode_filter(data: bytes) -> tuple[FilterClause, ...]:
    r = Reader(data)
    n = r.u64()
    clauses = []
    for _ in range(n):
        fld = r.field().decode("utf-8")
        op = r.field().decode("utf-8")
        clauses.append((fld, op, _decode_value(r.field())))
    r.expect_end()
    return tuple(clauses)


def decode_query(data: bytes) -> Query:
    r = Reader(data)
    query_id = r.field().decode("utf-8")
    algo_id = r.field().decode("utf-8")
    filt = _decode_filter(r.field())
    target = r.field().decode("utf-8")
    requester = r.field().decode("utf-8")
    ts = Reader(r.field()).u64()
    r.expect_end()
    return Query(query_id, algo_id, filt, target, requester, ts)


def decode_answer(data: bytes) -> AggregatedAnswer:
    r = Reader(data)
    query_id = r.field().decode("utf-8")
    group = r.field()
    stat = r.field()
    pct = r.field()
    parties = Reader(r.field()).u64()
    r.expect_end()
    if stat == b"":
        return AggregatedAnswer(query_id, GROUP_BELOW_K, None, parties,
                                None if pct == b"" else Reader(pct).f64())
    return AggregatedAnswer(query_id, Reader(group).u64(), Reader(stat).f64(), parties,
                            None if pct == b"" else Reader(pct).f64())


def pair_digest(query: Query, answer: AggregatedAnswer) -> bytes:
    return sha256(query.canonical() + answer.canonical())


# --- registry ---------------------------------------------------------------


class AlgorithmRegistry:
    """Expert-verified algorithms, resolvable by id. Registration is gated."""

    def __init__(self):
        self._algos: dict[str, VettedAlgorithm] = {}

    def register(self, algo: VettedAlgorithm) -> str:
        if not algo.expert_verified:
            raise NotVerified(f"algorithm {algo.algo_id!r} lacks expert verification")
        if algo.min_group_size < 2:
            raise ValueError("min_group_size must be at least 2")
        if algo.algo_id in self._algos:
            raise DuplicateId(f"algorithm {algo.algo_id!r} already registered")
        self._algos[algo.algo_id] = algo
        return algo.algo_id

    def resolve(self, algo_id: str) -> VettedAlgorithm:
        try:
            return self._algos[algo_id]
        except KeyError:
            raise UnknownAlgorithm(f"no algorithm {algo_id!r}") from None

    def __contains__(self, algo_id: str) -> bool:
        return algo_id in self._algos

    def algorithm_ids(self) -> tuple[str, ...]:
        return tuple(self._algos)


def register_vetted_algorithm(registry: AlgorithmRegistry, algo: VettedAlgorithm) -> str:
    return registry.register(algo)


# --- record field access and matching ---------------------------------------

_SCALAR_FIELDS = ("age", "gender_code")


def _field_value(record: PatientRecord, name: str):
    if name == "age":
        return float(record.age)
    if name == "gender_code":
        return float(record.gender_code)
    if name == "condition_tags":
        return record.condition_tags
    if name.startswith("score_"):
        try:
            return record.assessment_scores[int(name[6:])]
        except (ValueError, IndexError):
            raise DisallowedField(f"record has no field {name!r}") from None
    raise DisallowedField(f"record has no field {name!r}")


def _matches(record: PatientRecord, clauses: tuple[FilterClause, ...]) -> bool:
    for fld, op, constant in clauses:
        value = _field_value(record, fld)
        if isinstance(value, frozenset):
            if op != "in" or not isinstance(constant, str):
                raise ValueError("condition_tags supports only: tag constant with op 'in'")
            if constant not in value:
                return False
            continue
        if op == "in":
            if not isinstance(constant, (set, frozenset, tuple, list)):
                raise ValueError("op 'in' needs a set constant for scalar fields")
            if value not in set(float(c) for c in constant):
                return False
        elif op == "=":
            if value != float(constant):
                return False
        elif op == "<":
            if not value < float(constant):
                return False
        elif op == "<=":
            if not value <= float(constant):
                return False
        elif op == ">":
            if not value > float(constant):
                return False
        elif op == ">=":
            if not value >= float(constant):
                return False
        else:
            raise ValueError(f"unknown filter op {op!r}")
    return True


# --- aggregation ------------------------------------------------------------


@dataclass
class _AggState:
    """Exactly mergeable aggregation state (rational accumulators)."""

    n: int = 0
    total: Fraction = Fraction(0)
    total_sq: Fraction = Fraction(0)
    above: int = 0

    def add(self, value: float, threshold: float) -> None:
        v = Fraction(value)
        self.n += 1
        self.total += v
        self.total_sq += v * v
        if value > threshold:
            self.above += 1

    def merge(self, other: "_AggState") -> None:
        self.n += other.n
        self.total += other.total
        self.total_sq += other.total_sq
        self.above += other.above

    def statistic(self, aggregation: str) -> float:
        if aggregation == "count":
            return float(self.n)
        if self.n == 0:
            raise ValueError("no records to aggregate")
        if aggregation == "mean":
            return float(self.total / self.n)
        if aggregation == "variance":
            mean = self.total / self.n
            return float(self.total_sq / self.n - mean * mean)
        if aggregation == "proportion-above-threshold":
            return float(Fraction(self.above, self.n))
        raise ValueError(f"unknown aggregation {aggregation!r}")


@dataclass
class ProtectedDatabase:
    """One trusted party's records plus the registry its boundary enforces."""

    party_id: str
    records: list[PatientRecord]
    registry: AlgorithmRegistry


def _check_fields(algo: VettedAlgorithm, q: Query) -> None:
    used = {q.target_field} | {fld for fld, _, _ in q.filter}
    bad = used - algo.allowed_fields
    if bad:
        raise DisallowedField(
            f"fields {sorted(bad)} not allowed for algorithm {algo.algo_id!r}"
        )
    if q.target_field == "condition_tags":
        raise DisallowedField("condition_tags cannot be a numeric target field")


def _aggregate_inside(db: ProtectedDatabase, q: Query) -> tuple[VettedAlgorithm, _AggState]:
    algo = db.registry.resolve(q.algo_id)
    _check_fields(algo, q)
    state = _AggState()
    for record in db.records:
        if _matches(record, q.filter):
            state.add(float(_field_value(record, q.target_field)), algo.threshold)
    return algo, state


def _answer_from_state(q: Query, algo: VettedAlgorithm, state: _AggState,
                       contributing: int,
                       failures: tuple[tuple[str, str], ...] = ()) -> AggregatedAnswer:
    if state.n < algo.min_group_size:
        return AggregatedAnswer(q.query_id, GROUP_BELOW_K, None, 0, party_failures=failures)
    return AggregatedAnswer(q.query_id, state.n, state.statistic(algo.aggregation),
                            contributing, party_failures=failures)


def execute_query(db: ProtectedDatabase, q: Query) -> AggregatedAnswer:
    """Run the vetted algorithm inside the database boundary."""
    algo, state = _aggregate_inside(db, q)
    return _answer_from_state(q, algo, state, contributing=1)


def federate_query(parties: list[ProtectedDatabase], q: Query) -> AggregatedAnswer:
    """Merge per-party aggregates; per-party suppression contributes nothing.

    Party errors do not abort the merge: they are attached to the returned
    answer as ``party_failures``.  If every party fails, the first error
    propagates.
    """
    if not parties:
        raise ValueError("federation needs at least one party")
    merged = _AggState()
    algo: VettedAlgorithm | None = None
    contributing = 0
    failures: list[tuple[str, str]] = []
    first_error: Exception | None = None
    for db in parties:
        try:
            party_algo, state = _aggregate_inside(db, q)
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            failures.append((db.party_id, f"{type(exc).__name__}: {exc}"))
            first_error = first_error or exc
            continue
        algo = algo or party_algo
        if state.n >= party_algo.min_group_size:
            merged.merge(state)
            contributing += 1
    if algo is None:
        assert first_error is not None
        raise first_error
    return _answer_from_state(q, algo, merged, contributing, tuple(failures))


def render_answer_template(ans: AggregatedAnswer, baseline: AggregatedAnswer) -> str:
    """Relative-comparison sentence: how much higher the queried group sits."""
    if ans.suppressed or baseline.suppressed:
        raise SuppressedInput("cannot compare suppressed answers")
    if baseline.statistic == 0:
        raise ZeroBaseline("baseline statistic is zero")
    pct = 100.0 * (ans.statistic - baseline.statistic) / baseline.statistic
    return (
        f"Relative to the baseline group, the queried statistic is "
        f"{pct:.1f}% higher for the matched group "
        f"(group size {ans.group_size}, {ans.contributing_parties} contributing parties)."
    )


# --- file formats -----------------------------------------------------------


def load_database(path: str | Path, registry: AlgorithmRegistry) -> ProtectedDatabase:
    """Load records from a line-delimited file (one JSON object per line)."""
    records: list[PatientRecord] = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            records.append(PatientRecord(
                record_id=raw["record_id"],
                age=int(raw["age"]),
                gender_code=int(raw["gender_code"]),
                assessment_scores=tuple(float(s) for s in raw["assessment_scores"]),
                condition_tags=frozenset(raw["condition_tags"]),
                party_id=raw["party_id"],
            ))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}:{line_no}: bad record: {exc}") from exc
    parties = {r.party_id for r in records}
    if len(parties) > 1:
        raise ValueError(f"{path}: records span multiple parties {sorted(parties)}")
    party_id = parties.pop() if parties else Path(path).stem
    return ProtectedDatabase(party_id=party_id, records=records, registry=registry)


def dump_database(db: ProtectedDatabase, path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in db.records:
            fh.write(json.dumps({
                "record_id": r.record_id,
                "age": r.age,
                "gender_code": r.gender_code,
                "assessment_scores": list(r.assessment_scores),
                "condition_tags": sorted(r.condition_tags),
                "party_id": r.party_id,
            }, sort_keys=True) + "\n")


def load_algorithm_registry(path: str | Path) -> AlgorithmRegistry:
    """Load a registry from a declarative config: a list of algorithm maps."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, list):
        raise ValueError(f"{path}: expected a list of algorithm entries")
    registry = AlgorithmRegistry()
    for entry in raw:
        registry.register(VettedAlgorithm(
            algo_id=entry["algo_id"],
            aggregation=entry["aggregation"],
            allowed_fields=frozenset(entry["allowed_fields"]),
            min_group_size=int(entry["min_group_size"]),
            expert_verified=bool(entry["expert_verified"]),
            threshold=float(entry.get("threshold", 0.0)),
        ))
    return registry
