"""Triage loop: submission, clinician vetting, and corpus incorporation.

The case store is an append-only JSONL event log; current case state is
derived by replay. Nothing is ever mutated in place, which makes the
audit trail trivial and incorporation idempotent.

Status lifecycle: PENDING_VETTING -> VETTED -> INCORPORATED, with
REJECTED as a terminal branch for out-of-scope submissions. A rejected
case is never incorporated.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from PIL import Image

from dermatriage.corpus.manifest import DatasetManifest, ImageRecord, Origin, Split
from dermatriage.labels import DiseaseLabel, parse_label
from dermatriage.modelzoo import (
    CheckpointError,
    ModelHandle,
    ScoreVector,
    file_digest,
    load_checkpoint,
    load_image,
    read_checkpoint_meta,
)

log = logging.getLogger(__name__)


class ServiceError(Exception):
    pass


class CaseNotFoundError(ServiceError):
    pass


class AlreadyVettedError(ServiceError):
    pass


class InvalidDecisionError(ServiceError):
    pass


class NoActiveModelError(ServiceError):
    pass


class CaseStatus(str, Enum):
    PENDING_VETTING = "PENDING_VETTING"
    VETTED = "VETTED"
    REJECTED = "REJECTED"
    INCORPORATED = "INCORPORATED"

    def __str__(self) -> str:
        return self.value


class Verdict(str, Enum):
    CONFIRM = "CONFIRM"
    CORRECT = "CORRECT"
    REJECT = "REJECT"


# Legal transitions; anything else is a lifecycle violation.
_TRANSITIONS: dict[CaseStatus, set[CaseStatus]] = {
    CaseStatus.PENDING_VETTING: {CaseStatus.VETTED, CaseStatus.REJECTED},
    CaseStatus.VETTED: {CaseStatus.INCORPORATED},
    CaseStatus.REJECTED: set(),
    CaseStatus.INCORPORATED: set(),
}


@dataclass
class Case:
    case_id: str
    image_ref: str
    submitted_at: str
    scores: ScoreVector
    predicted_label: DiseaseLabel
    model_digest: str
    status: CaseStatus = CaseStatus.PENDING_VETTING
    final_label: DiseaseLabel | None = None
    seq: int = 0  # event-log position; stable queue ordering

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "image_ref": self.image_ref,
            "submitted_at": self.submitted_at,
            "scores": list(self.scores.probabilities),
            "predicted_label": self.predicted_label.value,
            "model_digest": self.model_digest,
            "status": self.status.value,
            "final_label": self.final_label.value if self.final_label else None,
        }

    @classmethod
    def from_dict(cls, data: dict, seq: int = 0) -> "Case":
        return cls(
            case_id=data["case_id"],
            image_ref=data["image_ref"],
            submitted_at=data["submitted_at"],
            scores=ScoreVector(tuple(data["scores"])),
            predicted_label=parse_label(data["predicted_label"]),
            model_digest=data["model_digest"],
            status=CaseStatus(data["status"]),
            final_label=parse_label(data["final_label"]) if data.get("final_label") else None,
            seq=seq,
        )


@dataclass(frozen=True)
class VettingDecision:
    case_id: str
    verdict: Verdict
    vetter_id: str
    corrected_label: DiseaseLabel | None = None
    note: str = ""

    def __post_init__(self) -> None:
        if not self.case_id:
            raise InvalidDecisionError("decision requires a case_id")
        if not self.vetter_id:
            raise InvalidDecisionError("decision requires a vetter_id")
        if self.verdict is Verdict.CORRECT and self.corrected_label is None:
            raise InvalidDecisionError("CORRECT verdict requires a corrected_label")
        if self.verdict is not Verdict.CORRECT and self.corrected_label is not None:
            raise InvalidDecisionError(f"{self.verdict.value} verdict must not carry a corrected_label")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "verdict": self.verdict.value,
            "vetter_id": self.vetter_id,
            "corrected_label": self.corrected_label.value if self.corrected_label else None,
            "note": self.note,
        }


class CaseStore:
    """Append-only event log of cases and decisions, with derived indexes.

    Writers must hold the store's lock; readers see consistent snapshots
    because state dictionaries are only ever extended, never rewritten.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.cases: dict[str, Case] = {}
        self.decisions: dict[str, VettingDecision] = {}
        self._seq = 0
        self.lock = threading.Lock()
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                self._apply(json.loads(line), persisted=True)

    def _apply(self, event: dict, persisted: bool) -> None:
        kind = event["event"]
        self._seq += 1
        if kind == "case_submitted":
            case = Case.from_dict(event["case"], seq=self._seq)
            self.cases[case.case_id] = case
        elif kind == "vetting_recorded":
            decision = event["decision"]
            case = self.cases[decision["case_id"]]
            case.status = CaseStatus(event["status"])
            case.final_label = parse_label(event["final_label"]) if event["final_label"] else None
            self.decisions[case.case_id] = VettingDecision(
                case_id=decision["case_id"],
                verdict=Verdict(decision["verdict"]),
                vetter_id=decision["vetter_id"],
                corrected_label=parse_label(decision["corrected_label"])
                if decision.get("corrected_label")
                else None,
                note=decision.get("note", ""),
            )
        elif kind == "case_incorporated":
            self.cases[event["case_id"]].status = CaseStatus.INCORPORATED
        else:
            raise ServiceError(f"unknown event type in store: {kind!r}")

    def append(self, event: dict) -> None:
        """Persist one event, then apply it to the derived state."""
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")
            f.flush()
        self._apply(event, persisted=False)

    def by_status(self, status: CaseStatus) -> list[Case]:
        out = [c for c in self.cases.values() if c.status is status]
        out.sort(key=lambda c: c.seq)  # oldest first
        return out

    def event_count(self) -> int:
        if not self.path.exists():
            return 0
        return sum(1 for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip())


@dataclass
class IncorporationReport:
    added: list[tuple[str, str]] = field(default_factory=list)  # (case_id, record_id)
    already_incorporated: int = 0

    def to_dict(self) -> dict:
        return {
            "added": [{"case_id": c, "record_id": r} for c, r in self.added],
            "already_incorporated": self.already_incorporated,
        }


@dataclass(frozen=True)
class ActiveModel:
    digest: str
    backbone: str
    strategy: str
    checkpoint_path: str


class TriageService:
    """Coordinates submissions, vetting, incorporation, and model activation."""

    def __init__(
        self,
        store: CaseStore,
        image_dir: str | Path,
        manifest_path: str | Path | None = None,
        checkpoint_path: str | Path | None = None,
    ):
        self.store = store
        self.image_dir = Path(image_dir)
        self.image_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = Path(manifest_path) if manifest_path else None
        self._handle: ModelHandle | None = None
        self._active: ActiveModel | None = None
        self._model_lock = threading.Lock()
        if checkpoint_path is not None:
            self.activate_checkpoint(checkpoint_path)

    # -- model management ---------------------------------------------------

    def activate_checkpoint(
        self, checkpoint_path: str | Path, expected_digest: str | None = None
    ) -> ActiveModel:
        """Swap the serving model; on any validation failure the previous
        model keeps serving. Activating the already-active checkpoint is a no-op.

        ``expected_digest`` pins the activation to a specific weights file;
        a mismatch refuses the swap."""
        meta = read_checkpoint_meta(checkpoint_path)  # raises before any state change
        digest = file_digest(meta.weights_path)
        if expected_digest is not None and digest != expected_digest:
            raise CheckpointError(
                f"checkpoint digest {digest} does not match expected {expected_digest}"
            )
        with self._model_lock:
            if self._active is not None and self._active.digest == digest:
                return self._active
        handle = load_checkpoint(checkpoint_path)
        active = ActiveModel(
            digest=digest,
            backbone=meta.metadata["backbone"],
            strategy=meta.metadata["strategy"],
            checkpoint_path=str(meta.weights_path),
        )
        with self._model_lock:
            self._handle = handle
            self._active = active
        log.info("activated checkpoint %s (%s)", digest, meta.metadata["backbone"])
        return active

    @property
    def active_model(self) -> ActiveModel | None:
        with self._model_lock:
            return self._active

    def _serving_pair(self) -> tuple[ModelHandle, str]:
        with self._model_lock:
            if self._handle is None or self._active is None:
                raise NoActiveModelError("no active checkpoint; activate one first")
            return self._handle, self._active.digest

    # -- triage loop ----------------------------------------------------------

    def submit_case(self, image_bytes: bytes) -> Case:
        """Classify a submitted image and queue it for vetting.

        Nothing is persisted unless decoding and prediction both succeed.
        """
        handle, digest = self._serving_pair()
        image = load_image(image_bytes)  # raises ImageDecodeError on corrupt uploads
        scores = handle.predict(image)
        case_id = uuid.uuid4().hex[:12]
        suffix = _sniff_suffix(image_bytes)
        image_path = self.image_dir / f"{case_id}{suffix}"
        image_path.write_bytes(image_bytes)
        case = Case(
            case_id=case_id,
            image_ref=str(image_path),
            submitted_at=datetime.now(timezone.utc).isoformat(timespec="microseconds"),
            scores=scores,
            predicted_label=scores.predicted_label,
            model_digest=digest,
        )
        with self.store.lock:
            self.store.append({"event": "case_submitted", "case": case.to_dict()})
            stored = self.store.cases[case_id]
        return stored

    def get_case(self, case_id: str) -> Case:
        case = self.store.cases.get(case_id)
        if case is None:
            raise CaseNotFoundError(f"unknown case {case_id!r}")
        return case

    def pending_queue(self, cursor: int = 0, limit: int = 20) -> tuple[list[Case], int | None, int]:
        """Oldest-first page of the vetting queue: (page, next_cursor, depth)."""
        pending = self.store.by_status(CaseStatus.PENDING_VETTING)
        page = pending[cursor : cursor + limit]
        next_cursor = cursor + limit if cursor + limit < len(pending) else None
        return page, next_cursor, len(pending)

    def record_vetting(self, decision: VettingDecision) -> Case:
        """Apply one practitioner decision; a case can be vetted exactly once."""
        with self.store.lock:
            case = self.store.cases.get(decision.case_id)
            if case is None:
                raise CaseNotFoundError(f"unknown case {decision.case_id!r}")
            if case.status is not CaseStatus.PENDING_VETTING:
                raise AlreadyVettedError(
                    f"case {case.case_id} already vetted (status {case.status})"
                )
            if decision.verdict is Verdict.CONFIRM:
                final: DiseaseLabel | None = case.predicted_label
                status = CaseStatus.VETTED
            elif decision.verdict is Verdict.CORRECT:
                final = decision.corrected_label
                status = CaseStatus.VETTED
            else:
                final = None
                status = CaseStatus.REJECTED
            if status not in _TRANSITIONS[case.status]:
                raise ServiceError(f"illegal transition {case.status} -> {status}")
            self.store.append(
                {
                    "event": "vetting_recorded",
                    "decision": decision.to_dict(),
                    "final_label": final.value if final else None,
                    "status": status.value,
                }
            )
            return self.store.cases[case.case_id]

    def incorporate_vetted(self, manifest_path: str | Path | None = None) -> IncorporationReport:
        """Fold every VETTED case into the training corpus as a TRAIN record.

        Idempotent: already-incorporated cases are skipped. The manifest is
        written atomically before any case status changes, so a write
        failure leaves every case untouched.
        """
        path = Path(manifest_path) if manifest_path else self.manifest_path
        if path is None:
            raise ServiceError("no manifest path configured for incorporation")
        report = IncorporationReport()
        with self.store.lock:
            vetted = self.store.by_status(CaseStatus.VETTED)
            report.already_incorporated = len(self.store.by_status(CaseStatus.INCORPORATED))
            if not vetted:
                return report
            manifest = DatasetManifest.load(path)
            planned: list[tuple[str, str]] = []
            for case in vetted:
                assert case.final_label is not None  # VETTED implies a final label
                record = ImageRecord(
                    id=f"vetted-{case.case_id}",
                    path=case.image_ref,
                    label=case.final_label,
                    origin=Origin.VETTED,
                    source_id=case.case_id,
                    split=Split.TRAIN,
                )
                manifest.add(record)
                planned.append((case.case_id, record.id))
            manifest.validate()
            manifest.save(path)  # atomic; raises before any status change
            for case_id, record_id in planned:
                self.store.append(
                    {"event": "case_incorporated", "case_id": case_id, "record_id": record_id}
                )
                report.added.append((case_id, record_id))
        log.info("incorporated %d vetted case(s) into %s", len(report.added), path)
        return report


def _sniff_suffix(image_bytes: bytes) -> str:
    try:
        with Image.open(io.BytesIO(image_bytes)) as img:
            fmt = (img.format or "png").lower()
    except Exception:
        fmt = "png"
    return "." + ("jpg" if fmt == "jpeg" else fmt)
