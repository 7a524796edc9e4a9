"""Scenario configuration: a key-value file with a fixed field set."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import yaml

from ..errors import InvalidConfig
from ..ledger import PermissionMode

#: algorithm ids every scenario registers (k values come from the config)
SCENARIO_ALGORITHM_IDS = ("mean-assessment", "share-above-threshold")

_FIELDS = (
    "seed",
    "num_hubs",
    "robots_per_hub",
    "edge_density",
    "num_patients",
    "sessions_per_patient",
    "k_per_algorithm",
    "consensus_window",
    "quorum",
    "feedback_noise_stddev",
    "fold_destination_updates",
    "ledger_mode",
)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    num_hubs: int
    robots_per_hub: int
    edge_density: float
    num_patients: int
    sessions_per_patient: int
    k_per_algorithm: dict
    consensus_window: int
    quorum: int
    feedback_noise_stddev: float
    fold_destination_updates: bool
    ledger_mode: PermissionMode

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfig("seed must fit in 64 bits")
        for name in ("num_hubs", "robots_per_hub", "num_patients",
                     "sessions_per_patient", "consensus_window", "quorum"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if not 0.0 <= self.edge_density <= 1.0:
            raise InvalidConfig("edge_density must lie in [0, 1]")
        if self.feedback_noise_stddev < 0.0:
            raise InvalidConfig("feedback_noise_stddev must be non-negative")
        ks = self.k_per_algorithm
        if set(ks) != set(SCENARIO_ALGORITHM_IDS):
            raise InvalidConfig(
                f"k_per_algorithm must cover exactly {SCENARIO_ALGORITHM_IDS}"
            )
        for algo_id, k in ks.items():
            if not isinstance(k, int) or k < 2:
                raise InvalidConfig(f"k for {algo_id!r} must be an integer >= 2")

    @property
    def num_rounds(self) -> int:
        """One proposal round per therapy session."""
        return self.num_patients * self.sessions_per_patient

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["ledger_mode"] = self.ledger_mode.value
        raw["k_per_algorithm"] = dict(sorted(self.k_per_algorithm.items()))
        return {name: raw[name] for name in _FIELDS}


def _normalize(raw: dict) -> ScenarioConfig:
    unknown = set(raw) - set(_FIELDS)
    if unknown:
        raise InvalidConfig(f"unknown config fields {sorted(unknown)}")
    missing = set(_FIELDS) - set(raw)
    if missing:
        raise InvalidConfig(f"missing config fields {sorted(missing)}")
    k_raw = raw["k_per_algorithm"]
    if isinstance(k_raw, int):
        ks = {algo_id: k_raw for algo_id in SCENARIO_ALGORITHM_IDS}
    elif isinstance(k_raw, dict):
        ks = dict(k_raw)
    else:
        raise InvalidConfig("k_per_algorithm must be an integer or a mapping")
    try:
        mode = PermissionMode(raw["ledger_mode"])
    except ValueError:
        raise InvalidConfig(
            f"ledger_mode must be one of {[m.value for m in PermissionMode]}"
        ) from None
    try:
        return ScenarioConfig(
            seed=int(raw["seed"]),
            num_hubs=int(raw["num_hubs"]),
            robots_per_hub=int(raw["robots_per_hub"]),
            edge_density=float(raw["edge_density"]),
            num_patients=int(raw["num_patients"]),
            sessions_per_patient=int(raw["sessions_per_patient"]),
            k_per_algorithm=ks,
            consensus_window=int(raw["consensus_window"]),
            quorum=int(raw["quorum"]),
            feedback_noise_stddev=float(raw["feedback_noise_stddev"]),
            fold_destination_updates=bool(raw["fold_destination_updates"]),
            ledger_mode=mode,
        )
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad config value: {exc}") from exc


def load_config(path: str | Path) -> ScenarioConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: expected a key-value mapping")
    return _normalize(raw)


def save_config(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def default_config(seed: int = 7) -> ScenarioConfig:
    """The documented 4-hub baseline scenario."""
    return _normalize({
        "seed": seed,
        "num_hubs": 4,
        "robots_per_hub": 2,
        "edge_density": 0.3,
        "num_patients": 5,
        "sessions_per_patient": 4,
        "k_per_algorithm": 5,
        "consensus_window": 40,
        "quorum": 3,
        "feedback_noise_stddev": 0.05,
        "fold_destination_updates": False,
        "ledger_mode": "semi-private",
    })
