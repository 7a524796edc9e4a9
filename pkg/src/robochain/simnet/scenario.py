"""End-to-end scenario execution on the discrete-event queue.

One proposal round per therapy session: the rotating source robot queries
the protected databases (every answer audited on the chain before release),
generates session data against a seeded ground-truth engagement model,
fine-tunes a candidate from the consensual baseline, and announces it.
Destination robots evaluate candidate and incumbent on their own fresh
sessions and submit paired feedback; the round resolves by strict mean
comparison, promotes or rolls back network-wide, and is notarized.

Everything — keys, nonces, populations, features, noise — derives from the
scenario seed, so a run is a pure function of its configuration.  Invariant
violations halt the run rather than degrade it.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import consensus, learner
from ..audit import AuditedPair, PairStore, record_pair, submit_audit_tx, verify_pair
from ..errors import LateFeedback
from ..ledger import Identity, Ledger, save_chain, validate_chain
from ..modelstore import (
    Announcement,
    Hub,
    ModelVersion,
    make_delta,
    make_version,
    notify_subscribers,
    publish_update,
    save_repository,
)
from ..opal import (
    AlgorithmRegistry,
    PatientRecord,
    ProtectedDatabase,
    Query,
    VettedAlgorithm,
    federate_query,
)
from . import events as ev
from .config import ScenarioConfig, save_config
from .events import EventQueue
from .report import (
    CONFIG_FILE,
    KEY_FILE,
    LEDGER_FILE,
    PAIRS_DIR,
    REPOS_DIR,
    RoundRecord,
    RunReport,
    SensitiveIndex,
)
from .topology import Topology, build_topology

_TAG_POOL = ("cond-a", "cond-b", "cond-c", "cond-d", "cond-e")


@dataclass(frozen=True)
class SimTuning:
    """Fixed internal scenario parameters; the config file never carries these.

    Tests override them to force edge cases (a 0-epoch candidate equals the
    baseline bitwise, guaranteeing a tie and a rollback).
    """

    d_id: int = 6
    d_bd: int = 2
    num_parties: int = 3
    db_records_per_party: int = 30
    train_points_base: int = 20
    train_points_growth: int = 10
    eval_points: int = 40
    heldout_points: int = 256
    epochs: int = 300
    learning_rate: float = 1.0
    rho: float = 0.95
    epsilon: float = 1e-6
    train_ticks: int = 3
    edge_latency: int = 1
    inter_round_gap: int = 2
    id_weight_scale: float = 1.2
    bd_weight_scale: float = 1.0
    bias_scale: float = 0.5
    scan_sample_cap: int = 800

    @property
    def model_dim(self) -> int:
        return self.d_id + self.d_bd + 1  # features plus bias


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


@dataclass
class _Session:
    sid: str
    robot: str
    hub: str
    purpose: str  # "train" | "eval"
    round_index: int
    queries: list = field(default_factory=list)
    answers: dict = field(default_factory=dict)


@dataclass
class _RoundCtx:
    index: int
    source_robot: str
    source_hub: str
    eval_robots: frozenset
    candidate: consensus.CandidateModel | None = None
    rnd: consensus.ConsensusRound | None = None
    baseline: ModelVersion | None = None
    announced_delta=None
    announcement: Announcement | None = None
    returned: list = field(default_factory=list)  # (delta, weight) from destinations
    promoted: ModelVersion | None = None
    promo_delivered: set = field(default_factory=set)


class _Scenario:
    def __init__(self, config: ScenarioConfig, out_dir: Path, tuning: SimTuning):
        self.config = config
        self.tuning = tuning
        self.out = out_dir
        self.queue = EventQueue()

        self.rng_ident = _rng(config.seed, 0x1D)
        self.rng_pop = _rng(config.seed, 0xP0 if False else 0xB0)
        self.rng_truth = _rng(config.seed, 0x67)
        self.rng_heldout = _rng(config.seed, 0xHE if False else 0xAE)
        self.rng_session = _rng(config.seed, 0x5E)
        self.rng_nonce = _rng(config.seed, 0xCE)

        self.topology = build_topology(config, num_parties=tuning.num_parties)
        self.sensitive = SensitiveIndex(sample_cap=tuning.scan_sample_cap)

        self._setup_identities()
        self._setup_ledger()
        self._setup_data_service()
        self._setup_hubs()
        self._setup_ground_truth()

        self.coordinator = consensus.Coordinator()
        self.store = PairStore(self.out / PAIRS_DIR)
        self.audited: list[AuditedPair] = []
        self.rounds: list[_RoundCtx] = []
        self.records: list[RoundRecord] = []
        self.counters = {
            "queries_issued": 0, "answers_delivered": 0, "answers_suppressed": 0,
            "audit_txs": 0, "late_feedback_drops": 0,
            "promotions": 0, "rejections": 0, "expirations": 0,
        }
        self._query_seq = 0
        self._session_seq = 0
        self._last_promoted_mse: float | None = None
        self._monotonicity_violations = 0
        self._diameter = self.topology.diameter_bound()
