"""Run reporting and post-hoc verification.

The run report serializes to tab-delimited sections with stable field
ordering (floats via ``repr``, so equal runs give byte-equal reports), and
``emit_report`` renders the learning trajectory and per-round score figures
next to it.  ``replay`` re-validates a finished run purely from its on-disk
artifacts: chain hashes, every audited pair, and — given the network key —
every notarized consensus decision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

from ..audit import PairAuditSummary, PairStore, verify_store_against_chain
from ..consensus import RoundState, decode_feedback_payload
from ..errors import AuthenticationFailure, KeyRequired, MissingArtifacts
from ..ledger import (
    ModelConsensus,
    decrypt_payload,
    load_chain_blocks,
    validate_chain_file,
)
from .config import ScenarioConfig, load_config

LEDGER_FILE = "ledger.bin"
PAIRS_DIR = "pairs"
REPOS_DIR = "repos"
CONFIG_FILE = "config.yaml"
KEY_FILE = "network.key"
REPORT_FILE = "report.txt"
FIGURES_DIR = "figures"


class SensitiveIndex:
    """Byte patterns that must never appear in a persisted artifact.

    Each value is tracked as its shortest-repr text and its raw 8-byte
    little-endian float encoding.  Low-entropy fields (small integers such
    as ages) are excluded: a one-digit pattern matches everywhere and means
    nothing; the distinctive identifiers and float values cover the leak
    surface.
    """

    def __init__(self, sample_cap: int = 2000):
        self._patterns: list[tuple[str, bytes]] = []
        self._sample_cap = sample_cap
        self._sampled = 0

    def add_text(self, label: str, text: str) -> None:
        self._patterns.append((label, text.encode("utf-8")))

    def add_float(self, label: str, value: float) -> None:
        self._patterns.append((label, repr(float(value)).encode("utf-8")))
        self._patterns.append((label, struct.pack("<d", value)))

    def add_sampled_float(self, label: str, value: float) -> None:
        if self._sampled < self._sample_cap:
            self._sampled += 1
            self.add_float(label, value)

    @property
    def pattern_count(self) -> int:
        return len(self._patterns)

    def scan_file(self, path: Path) -> list[str]:
        blob = path.read_bytes()
        return [label for label, pattern in self._patterns if pattern in blob]

    def scan_tree(self, root: Path, exclude: tuple[str, ...] = ()) -> tuple[int, list[str]]:
        """Returns (files scanned, hit labels) over every file under root."""
        scanned = 0
        hits: list[str] = []
        for path in sorted(root.rglob("*")):
            if not path.is_file() or path.name in exclude:
                continue
            scanned += 1
            for label in self.scan_file(path):
                hits.append(f"{path.relative_to(root)}: {label}")
        return scanned, hits


@dataclass(frozen=True)
class RoundRecord:
    round_id: int
    source_hub: str
    source_robot: str
    decision: str
    candidate_mean: float | None
    baseline_mean: float | None
    candidate_scores: int
    update_hash: str
    block_index: int
    consensual_version: str
    heldout_mse: float


@dataclass
class RunReport:
    config: ScenarioConfig
    hubs: int
    edges: int
    robots: int
    parties: int
    rounds: tuple[RoundRecord, ...]
    queries_issued: int
    answers_delivered: int
    answers_suppressed: int
    audit_txs: int
    late_feedback_drops: int
    pairs_total: int
    pairs_verified: int
    audit_complete: bool
    ledger_blocks: int
    ledger_ok: bool
    initial_heldout_mse: float
    final_heldout_mse: float
    promotions: int
    rejections: int
    expirations: int
    monotonicity_violations: int
    artifacts_scanned: int
    leak_hits: tuple[str, ...]
    final_consensual_version: str
    sensitive_index: SensitiveIndex | None = field(default=None, repr=False, compare=False)

    def to_text(self) -> str:
        def fmt(value) -> str:
            if value is None:
                return "-"
            if isinstance(value, bool):
                return "true" if value else "false"
            if isinstance(value, float):
                return repr(value)
            return str(value)

        lines = ["# run-report v1", "# config"]
        for key, value in self.config.to_dict().items():
            if isinstance(value, dict):
                value = ",".join(f"{k}={v}" for k, v in sorted(value.items()))
            lines.append(f"{key}\t{fmt(value)}")
        lines.append("# network")
        for key in ("hubs", "edges", "robots", "parties"):
            lines.append(f"{key}\t{fmt(getattr(self, key))}")
        lines.append("# rounds")
        lines.append(
            "round_id\tsource_hub\tsource_robot\tdecision\tcandidate_mean"
            "\tbaseline_mean\tcandidate_scores\tupdate_hash\tblock_index"
            "\tconsensual_version\theldout_mse"
        )
        for r in self.rounds:
            lines.append("\t".join(fmt(v) for v in (
                r.round_id, r.source_hub, r.source_robot, r.decision,
                r.candidate_mean, r.baseline_mean, r.candidate_scores,
                r.update_hash, r.block_index, r.consensual_version, r.heldout_mse,
            )))
        lines.append("# counters")
        for key in ("queries_issued", "answers_delivered", "answers_suppressed",
                    "audit_txs", "late_feedback_drops"):
            lines.append(f"{key}\t{fmt(getattr(self, key))}")
        lines.append("# audit")
        for key in ("pairs_total", "pairs_verified", "audit_complete"):
            lines.append(f"{key}\t{fmt(getattr(self, key))}")
        lines.append("# ledger")
        lines.append(f"blocks\t{fmt(self.ledger_blocks)}")
        lines.append(f"ok\t{fmt(self.ledger_ok)}")
        lines.append("# learning")
        for key in ("initial_heldout_mse", "final_heldout_mse", "promotions",
                    "rejections", "expirations", "monotonicity_violations"):
            lines.append(f"{key}\t{fmt(getattr(self, key))}")
        lines.append("# privacy-scan")
        lines.append(f"artifacts_scanned\t{fmt(self.artifacts_scanned)}")
        lines.append(f"leak_hits\t{fmt(len(self.leak_hits))}")
        for hit in self.leak_hits:
            lines.append(f"leak\t{hit}")
        lines.append(f"final_consensual_version\t{self.final_consensual_version}")
        return "\n".join(lines) + "\n"


def _render_figures(report: RunReport, figures_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figures_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    rounds = [r.round_id for r in report.rounds]
    mse = [r.heldout_mse for r in report.rounds]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([0] + rounds, [report.initial_heldout_mse] + mse, marker="o", lw=1.5)
    promo = [(r.round_id, r.heldout_mse) for r in report.rounds if r.decision == "accepted"]
    if promo:
        ax.scatter(*zip(*promo), color="tab:green", zorder=3, label="promotion")
        ax.legend()
    ax.set_xlabel("consensus round")
    ax.set_ylabel("held-out MSE of consensual baseline")
    ax.set_title("Learning trajectory")
    ax.grid(alpha=0.3)
    path = figures_dir / "loss_trajectory.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    colors = {"accepted": "tab:green", "rejected": "tab:red", "expired": "tab:gray"}
    for r in report.rounds:
        if r.candidate_mean is not None:
            ax.scatter(r.round_id, r.candidate_mean, color=colors[r.decision],
                       marker="^", zorder=3)
        if r.baseline_mean is not None:
            ax.scatter(r.round_id, r.baseline_mean, color="tab:blue", marker="v", zorder=2)
    ax.set_xlabel("consensus round")
    ax.set_ylabel("mean feedback score")
    ax.set_title("Candidate (^, by decision) vs baseline (v) feedback")
    ax.grid(alpha=0.3)
    path = figures_dir / "round_scores.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def emit_report(report: RunReport, path: str | Path, figures: bool = True) -> Path:
    """Write the delimited report; render figures beside it."""
    path = Path(path)
    if path.is_dir() or path.suffix == "":
        path.mkdir(parents=True, exist_ok=True)
        report_path = path / REPORT_FILE
    else:
        report_path = path
    report_path.write_text(report.to_text())
    if figures:
        _render_figures(report, report_path.parent / FIGURES_DIR)
    return report_path


# --- replay -------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationSummary:
    chain_ok: bool
    chain_broken_index: int | None
    blocks: int
    pairs: PairAuditSummary
    rounds_total: int
    payload_checked: bool
    payload_failures: tuple[str, ...]
    notes: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.chain_ok and self.pairs.ok and not self.payload_failures


def replay(out_dir: str | Path, key: bytes | None = None,
           require_key: bool = False) -> VerificationSummary:
    """Re-verify a finished run from its artifacts alone."""
    out = Path(out_dir)
    ledger_path = out / LEDGER_FILE
    pairs_path = out / PAIRS_DIR
    if not ledger_path.exists() or not pairs_path.is_dir():
        raise MissingArtifacts(f"{out} lacks {LEDGER_FILE} and/or {PAIRS_DIR}/")
    if require_key and key is None:
        raise KeyRequired("payload re-check requested without the network key")

    notes: list[str] = []
    chain_report = validate_chain_file(ledger_path)
    if chain_report.ok:
        blocks = load_chain_blocks(ledger_path)
    else:
        blocks = []
        notes.append(f"chain broken at block {chain_report.broken_index}; "
                     "pair/payload checks limited")
    pairs = verify_store_against_chain(blocks, PairStore(pairs_path))

    consensus_txs = [
        tx for b in blocks for tx in b.transactions if isinstance(tx, ModelConsensus)
    ]
    payload_failures: list[str] = []
    payload_checked = False
    if key is None:
        notes.append("no network key: payload decision checks skipped")
    else:
        quorum = None
        config_path = out / CONFIG_FILE
        if config_path.exists():
            quorum = load_config(config_path).quorum
        else:
            notes.append("no config.yaml: quorum (expiry) re-check skipped")
        payload_checked = True
        for i, tx in enumerate(consensus_txs, start=1):
            try:
                payload = decode_feedback_payload(
                    decrypt_payload(tx.encrypted_payload, key)
                )
            except (AuthenticationFailure, ValueError) as exc:
                payload_failures.append(f"round {i}: {exc}")
                continue
            if payload.decision is RoundState.EXPIRED and quorum is None:
                continue
            recomputed = payload.recompute_decision(quorum)
            if recomputed is not payload.decision:
                payload_failures.append(
                    f"round {i}: recorded {payload.decision.value}, "
                    f"recomputed {recomputed.value}"
                )

    return VerificationSummary(
        chain_ok=chain_report.ok,
        chain_broken_index=chain_report.broken_index,
        blocks=chain_report.length,
        pairs=pairs,
        rounds_total=len(consensus_txs),
        payload_checked=payload_checked,
        payload_failures=tuple(payload_failures),
        notes=tuple(notes),
    )
