"""Per-hub version-controlled model repository with hub-level publish/subscribe.

Versions are content-addressed: the id is a digest of (params, hyperparams,
parent id), so independently built identical versions collide on purpose —
that is how every hub ends up holding the *same* promoted version id.

Deltas must reconstruct the target bitwise.  Plain IEEE-754 subtraction
cannot guarantee ``from + (to - from) == to`` (it fails for roughly a third
of random operand pairs), so a delta carries the rounded difference plus
its exact rounding residual (an error-free transformation); applying both
reproduces the target exactly.

Robots receive published updates into working copies only; nothing reaches
a repository until an explicit commit or promotion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    NoConsensualVersion,
    NonFiniteParams,
    StaleBase,
    UnknownVersion,
)
from .wire import Reader, enc_f64, enc_str, enc_u64, lp, sha256

HYPERPARAM_KEYS = ("epochs", "epsilon", "learning_rate", "rho")


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _params_bytes(params: np.ndarray) -> bytes:
    return params.astype("<f8").tobytes()


def _params_from_bytes(data: bytes) -> np.ndarray:
    return _frozen_array(np.frombuffer(data, dtype="<f8"))


def _hyper_bytes(hyperparams: dict) -> bytes:
    out = b""
    for key in sorted(hyperparams):
        value = hyperparams[key]
        enc = enc_u64(int(value)) if key == "epochs" else enc_f64(float(value))
        out += lp(enc_str(key)) + lp(enc)
    return out


def _hyper_from_bytes(data: bytes) -> dict:
    r = Reader(data)
    out = {}
    while not r.exhausted:
        key = r.field().decode("utf-8")
        raw = r.field()
        out[key] = Reader(raw).u64() if key == "epochs" else Reader(raw).f64()
    return out


def _check_hyperparams(hyperparams: dict) -> None:
    if set(hyperparams) != set(HYPERPARAM_KEYS):
        raise ValueError(
            f"hyperparams must have exactly keys {HYPERPARAM_KEYS}, "
            f"got {sorted(hyperparams)}"
        )


@dataclass(frozen=True, eq=False)
class ModelVersion:
    version_id: bytes
    params: np.ndarray
    hyperparams: dict
    parent_id: bytes | None
    created_at: int
    consensual: bool

    def __eq__(self, other) -> bool:
        return isinstance(other, ModelVersion) and self.version_id == other.version_id

    def __hash__(self) -> int:
        return hash(self.version_id)

    @property
    def dim(self) -> int:
        return int(self.params.shape[0])


def version_digest(params: np.ndarray, hyperparams: dict, parent_id: bytes | None) -> bytes:
    return sha256(
        lp(_params_bytes(params)) + lp(_hyper_bytes(hyperparams)) + lp(parent_id or b"")
    )


def make_version(params, hyperparams: dict, parent_id: bytes | None,
                 created_at: int, consensual: bool = False) -> ModelVersion:
    """Build a content-addressed version; the id never depends on created_at."""
    _check_hyperparams(hyperparams)
    arr = _frozen_array(params)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise DimensionMismatch(f"params must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteParams("params contain non-finite values")
    return ModelVersion(
        version_id=version_digest(arr, hyperparams, parent_id),
        params=arr,
        hyperparams=dict(hyperparams),
        parent_id=parent_id,
        created_at=created_at,
        consensual=consensual,
    )


# --- exact difference vectors -------------------------------------------------


def _two_sum(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Error-free sum: returns (s, t) with a + b == s + t exactly."""
    s = a + b
    bb = s - a
    t = (a - (s - bb)) + (b - bb)
    return s, t


@dataclass(frozen=True, eq=False)
class ModelDelta:
    from_id: bytes
    to_id: bytes
    param_diff: np.ndarray       # rounded to - from
    param_diff_low: np.ndarray   # exact residual; diff + low == to - from
    hyper_diff: dict             # changed entries, values at the target
    update_hash: bytes

    def canonical(self) -> bytes:
        return delta_preimage(self.from_id, self.to_id, self.param_diff,
                              self.param_diff_low, self.hyper_diff)


def delta_preimage(from_id: bytes, to_id: bytes, hi: np.ndarray, lo: np.ndarray,
                   hyper_diff: dict) -> bytes:
    return (
        lp(from_id)
        + lp(to_id)
        + lp(_params_bytes(hi))
        + lp(_params_bytes(lo))
        + lp(_hyper_bytes(hyper_diff))
    )


def make_delta(from_version: ModelVersion, to_version: ModelVersion) -> ModelDelta:
    if from_version.dim != to_version.dim:
        raise DimensionMismatch(
            f"cannot diff dim {from_version.dim} against dim {to_version.dim}"
        )
    hi, lo = _two_sum(to_version.params, -from_version.params)
    if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
        raise NonFiniteParams("parameter difference overflows float64")
    hi = _frozen_array(hi)
    lo = _frozen_array(lo)
    hyper_diff = {
        k: to_version.hyperparams[k]
        for k in HYPERPARAM_KEYS
        if to_version.hyperparams[k] != from_version.hyperparams[k]
    }
    return ModelDelta(
        from_id=from_version.version_id,
        to_id=to_version.version_id,
        param_diff=hi,
        param_diff_low=lo,
        hyper_diff=hyper_diff,
        update_hash=sha256(delta_preimage(from_version.version_id, to_version.version_id,
                                          hi, lo, hyper_diff)),
    )


def apply_delta(base: ModelVersion, delta: ModelDelta) -> np.ndarray:
    """Reconstruct the target parameter vector, bitwise."""
    if delta.from_id != base.version_id:
        raise StaleBase(
            f"delta expects base {delta.from_id.hex()[:12]}, "
            f"got {base.version_id.hex()[:12]}"
        )
    if base.dim != delta.param_diff.shape[0]:
        raise DimensionMismatch("delta dimension does not match base")
    s, t = _two_sum(base.params, delta.param_diff)
    return s + (t + delta.param_diff_low)


def decode_delta(data: bytes) -> ModelDelta:
    r = Reader(data)
    from_id = r.field()
    to_id = r.field()
    hi = _params_from_bytes(r.field())
    lo = _params_from_bytes(r.field())
    hyper_diff = _hyper_from_bytes(r.field())
    r.expect_end()
    return ModelDelta(
        from_id=from_id, to_id=to_id, param_diff=hi, param_diff_low=lo,
        hyper_diff=hyper_diff,
        update_hash=sha256(delta_preimage(from_id, to_id, hi, lo, hyper_diff)),
    )


# --- the repository -----------------------------------------------------------


class Repository:
    """Versions plus head pointers for one hub; mutations are serialized."""

    def __init__(self, dim: int):
        if dim < 1:
            raise DimensionMismatch("repository dimension must be positive")
        self.dim = dim
        self.versions: dict[bytes, ModelVersion] = {}
        self.head: bytes | None = None
        self.consensual_head: bytes | None = None
        self.subscribers: set[str] = set()

    def commit(self, params, hyperparams: dict, now: int = 0) -> ModelVersion:
        version = make_version(params, hyperparams, parent_id=self.head, created_at=now)
        if version.dim != self.dim:
            raise DimensionMismatch(
                f"repository holds dim {self.dim}, commit has dim {version.dim}"
            )
        self.versions[version.version_id] = version
        self.head = version.version_id
        return version

    def insert(self, version: ModelVersion) -> None:
        """Store a version built elsewhere (promotion broadcast path)."""
        if version.dim != self.dim:
            raise DimensionMismatch("version dimension does not match repository")
        if version.parent_id is not None and version.parent_id not in self.versions:
            raise UnknownVersion(
                f"parent {version.parent_id.hex()[:12]} not in repository"
            )
        self.versions[version.version_id] = version

    def checkout(self, version_id: bytes) -> ModelVersion:
        try:
            return self.versions[version_id]
        except KeyError:
            raise UnknownVersion(f"no version {version_id.hex()[:12]}") from None

    def diff(self, from_id: bytes, to_id: bytes) -> ModelDelta:
        return make_delta(self.checkout(from_id), self.checkout(to_id))

    def mark_consensual(self, version_id: bytes) -> ModelVersion:
        version = self.checkout(version_id)
        if not version.consensual:
            version = ModelVersion(
                version_id=version.version_id, params=version.params,
                hyperparams=version.hyperparams, parent_id=version.parent_id,
                created_at=version.created_at, consensual=True,
            )
            self.versions[version_id] = version
        self.consensual_head = version_id
        self.head = version_id
        return version

    def rollback(self) -> ModelVersion:
        if self.consensual_head is None:
            raise NoConsensualVersion("repository has no consensus-accepted version")
        self.head = self.consensual_head
        return self.checkout(self.consensual_head)

    def head_version(self) -> ModelVersion:
        if self.head is None:
            raise UnknownVersion("repository is empty")
        return self.checkout(self.head)

    def consensual_version(self) -> ModelVersion:
        if self.consensual_head is None:
            raise NoConsensualVersion("repository has no consensus-accepted version")
        return self.checkout(self.consensual_head)

    def consensual_chain_linear(self) -> bool:
        """All consensual versions lie on the parent path of the consensual head."""
        marked = {vid for vid, v in self.versions.items() if v.consensual}
        if not marked:
            return True
        if self.consensual_head is None:
            return False
        seen: set[bytes] = set()
        cursor = self.consensual_head
        while cursor is not None:
            version = self.versions.get(cursor)
            if version is None:
                return False
            if version.consensual:
                seen.add(cursor)
            cursor = version.parent_id
        return seen == marked


# --- hub publish/subscribe ------------------------------------------------------


@dataclass
class WorkingCopy:
    """A robot's uncommitted model state: applied updates live here first."""

    base_id: bytes
    params: np.ndarray


@dataclass(frozen=True)
class Announcement:
    update_hash: bytes
    delta: ModelDelta
    source_hub: str

    @property
    def announcement_id(self) -> str:
        return self.update_hash.hex()

    def wire(self) -> bytes:
        return lp(self.update_hash) + lp(self.delta.canonical()) + lp(enc_str(self.source_hub))


def decode_announcement(data: bytes) -> Announcement:
    r = Reader(data)
    update_hash = r.field()
    delta = decode_delta(r.field())
    source = r.field().decode("utf-8")
    r.expect_end()
    if delta.update_hash != update_hash:
        raise ValueError("announcement hash does not match its delta")
    return Announcement(update_hash=update_hash, delta=delta, source_hub=source)


class Hub:
    """A site's node: one repository plus its subscribed robots' working copies."""

    def __init__(self, hub_id: str, dim: int):
        self.hub_id = hub_id
        self.repo = Repository(dim)
        self.working: dict[str, WorkingCopy] = {}
        self.seen_announcements: set[str] = set()

    def subscribe(self, robot_id: str) -> None:
        self.repo.subscribers.add(robot_id)
        if self.repo.consensual_head is not None:
            version = self.repo.consensual_version()
            self.working[robot_id] = WorkingCopy(version.version_id, version.params.copy())

    def reset_working_copies(self) -> None:
        """Point every robot's working copy back at the consensual head."""
        version = self.repo.consensual_version()
        for robot_id in self.repo.subscribers:
            self.working[robot_id] = WorkingCopy(version.version_id, version.params.copy())

    def already_seen(self, announcement: Announcement) -> bool:
        return announcement.announcement_id in self.seen_announcements


def publish_update(hub: Hub, delta: ModelDelta) -> Announcement:
    """Wrap a delta for network announcement; it must build on the hub's baseline."""
    if delta.from_id != hub.repo.consensual_head:
        raise StaleBase("delta is not based on this hub's consensual head")
    return Announcement(update_hash=delta.update_hash, delta=delta, source_hub=hub.hub_id)


def notify_subscribers(hub: Hub, announcement: Announcement, fetch_full=None) -> int:
    """Deliver an announced update to this hub's robots' working copies.

    The repository is never touched.  If the delta's base is not this hub's
    consensual head, recovery fetches the full version via ``fetch_full``
    (a callable of the target version id); without one, StaleBase surfaces.
    Duplicate deliveries of one announcement are no-ops.
    """
    if hub.already_seen(announcement):
        return 0
    hub.seen_announcements.add(announcement.announcement_id)
    delta = announcement.delta
    if delta.from_id != hub.repo.consensual_head:
        if fetch_full is None:
            raise StaleBase(
                f"hub {hub.hub_id}: update base {delta.from_id.hex()[:12]} "
                "is not the local consensual head"
            )
        full = fetch_full(delta.to_id)
        new_params, new_id = full.params, full.version_id
    else:
        base = hub.repo.consensual_version()
        new_params, new_id = apply_delta(base, delta), delta.to_id
    delivered = 0
    for robot_id in sorted(hub.repo.subscribers):
        hub.working[robot_id] = WorkingCopy(new_id, np.array(new_params, dtype=np.float64))
        delivered += 1
    return delivered


# --- persistence -----------------------------------------------------------------

_VERSION_SUFFIX = ".ver"
_HEAD_FILE = "HEAD"


def save_repository(repo: Repository, root: str | Path) -> None:
    """Directory of content-addressed version files plus a head file."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for vid, version in repo.versions.items():
        blob = (
            lp(_params_bytes(version.params))
            + lp(_hyper_bytes(version.hyperparams))
            + lp(version.parent_id or b"")
            + enc_u64(version.created_at)
            + (b"\x01" if version.consensual else b"\x00")
        )
        (root / (vid.hex() + _VERSION_SUFFIX)).write_bytes(blob)
    head = repo.head.hex() if repo.head else "none"
    cons = repo.consensual_head.hex() if repo.consensual_head else "none"
    (root / _HEAD_FILE).write_text(f"head {head}\nconsensual {cons}\n")


def load_repository(root: str | Path) -> Repository:
    root = Path(root)
    versions: dict[bytes, ModelVersion] = {}
    for path in sorted(root.glob(f"*{_VERSION_SUFFIX}")):
        r = Reader(path.read_bytes())
        params = _params_from_bytes(r.field())
        hyper = _hyper_from_bytes(r.field())
        parent_raw = r.field()
        created_at = r.u64()
        consensual = r.take(1) == b"\x01"
        r.expect_end()
        parent_id = parent_raw or None
        version = ModelVersion(
            version_id=version_digest(params, hyper, parent_id),
            params=params, hyperparams=hyper, parent_id=parent_id,
            created_at=created_at, consensual=consensual,
        )
        if version.version_id.hex() != path.name[: -len(_VERSION_SUFFIX)]:
            raise ValueError(f"{path}: content does not match its address")
        versions[version.version_id] = version
    if not versions:
        raise ValueError(f"{root}: no version files")
    dim = next(iter(versions.values())).dim
    repo = Repository(dim)
    repo.versions = versions
    head_text = (root / _HEAD_FILE).read_text().split()
    head, cons = head_text[1], head_text[3]
    repo.head = bytes.fromhex(head) if head != "none" else None
    repo.consensual_head = bytes.fromhex(cons) if cons != "none" else None
    return repo
