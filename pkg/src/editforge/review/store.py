"""Human-review backend: decision handling over Pending triplets.

State changes are optimistic-concurrency checked against a per-record
revision counter, appended to an immutable audit log, and periodically
compacted back into the manifest. Replaying the audit log over the initial
manifest reproduces the current state exactly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from ..schema import (
    ReviewStatus,
    TripletRecord,
    ValidationError,
    read_manifest,
    write_manifest,
)


class ReviewNotFoundError(KeyError):
    """No record with the requested id."""


class ReviewConflictError(RuntimeError):
    """The decision was based on a stale revision; the client must refetch."""


class ReviewAction(str, Enum):
    APPROVE = "Approve"
    REJECT = "Reject"
    REVISE_INSTRUCTION = "ReviseInstruction"
    REQUEST_REGENERATION = "RequestRegeneration"


# Legal transitions keyed by current status; regeneration keeps the record
# Pending with a job attached, and only regeneration completion moves a
# Pending record to Rejected-superseded.
_DECIDABLE = {ReviewStatus.PENDING, ReviewStatus.REVISED}
_ALLOWED: dict[ReviewStatus, set[ReviewAction]] = {
    ReviewStatus.PENDING: {
        ReviewAction.APPROVE,
        ReviewAction.REJECT,
        ReviewAction.REVISE_INSTRUCTION,
        ReviewAction.REQUEST_REGENERATION,
    },
    ReviewStatus.REVISED: {ReviewAction.APPROVE, ReviewAction.REJECT},
}


@dataclass(frozen=True)
class ReviewDecision:
    record_id: str
    action: ReviewAction
    expected_revision: int
    reviewer: str = "reviewer"
    revised_instruction: str | None = None
    regeneration_hint: str | None = None
    timestamp: str | None = None

    def validate(self) -> None:
        if self.action is ReviewAction.REVISE_INSTRUCTION:
            if not self.revised_instruction or not self.revised_instruction.strip():
                raise ValidationError("revised_instruction: required for ReviseInstruction")
        elif self.revised_instruction:
            raise ValidationError("revised_instruction: only valid for ReviseInstruction")
        if self.expected_revision < 0:
            raise ValidationError("expected_revision: must be >= 0")


@dataclass(frozen=True)
class RegenerationJob:
    job_id: str
    record_id: str
    hint: str | None
    provenance: dict[str, Any] = field(default_factory=dict)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ReviewStore:
    """Serialized-writer store over the manifest with an append-only log."""

    def __init__(
        self,
        records: Iterable[TripletRecord],
        manifest_path: str | Path | None = None,
        audit_log_path: str | Path | None = None,
        compact_every: int = 50,
        clock: Callable[[], str] = _utc_now,
    ) -> None:
        self._records: dict[str, TripletRecord] = {}
        for rec in records:
            if rec.id in self._records:
                raise ValidationError(f"id: duplicate record id {rec.id}")
            self._records[rec.id] = rec
        self.manifest_path = Path(manifest_path) if manifest_path else None
        self.audit_log_path = Path(audit_log_path) if audit_log_path else None
        self.compact_every = compact_every
        self._clock = clock
        self._lock = threading.RLock()
        self._since_compact = 0
        self._queue: list[RegenerationJob] = []
        self._completed_jobs: set[str] = set()
        self._seq = 0
        self._replaying = False

    # -- reads ---------------------------------------------------------------

    def get(self, record_id: str) -> TripletRecord:
        with self._lock:
            rec = self._records.get(record_id)
            if rec is None:
                raise ReviewNotFoundError(record_id)
            return rec

    def all_records(self) -> list[TripletRecord]:
        with self._lock:
            return sorted(self._records.values(), key=lambda r: r.id)

    def list_records(
        self,
        status: ReviewStatus | None = None,
        branch: str | None = None,
        category: str | None = None,
        page: int = 1,
        page_size: int = 20,
    ) -> tuple[list[TripletRecord], int]:
        """Stable id-ordered page plus the total match count."""
        if page < 1 or page_size < 1:
            raise ValidationError("page: page and page_size must be >= 1")
        with self._lock:
            matches = [
                r
                for r in self.all_records()
                if (status is None or r.review is status)
                and (branch is None or r.branch.value == branch)
                and (category is None or r.category.value == category)
            ]
        start = (page - 1) * page_size
        return matches[start : start + page_size], len(matches)

    def list_pending(self, **kwargs) -> tuple[list[TripletRecord], int]:
        return self.list_records(status=ReviewStatus.PENDING, **kwargs)

    def stats(self) -> dict[str, Any]:
        with self._lock:
            by_status: dict[str, int] = {}
            by_category: dict[str, int] = {}
            by_branch: dict[str, int] = {}
            for rec in self._records.values():
                by_status[rec.review.value] = by_status.get(rec.review.value, 0) + 1
                by_category[rec.category.value] = by_category.get(rec.category.value, 0) + 1
                by_branch[rec.branch.value] = by_branch.get(rec.branch.value, 0) + 1
            return {
                "total": len(self._records),
                "by_status": by_status,
                "by_category": by_category,
                "by_branch": by_branch,
                "pending_jobs": len(self._queue),
            }

    # -- decisions -------------------------------------------------------------

    def submit_decision(self, decision: ReviewDecision) -> TripletRecord:
        decision.validate()
        with self._lock:
            rec = self.get(decision.record_id)
            # Staleness first: a loser in a concurrent race sees 409 and
            # refetches, even when the winner moved the record to a state
            # that no longer accepts decisions.
            if decision.expected_revision != rec.revision:
                raise ReviewConflictError(
                    f"record {rec.id} is at revision {rec.revision}, decision expected "
                    f"{decision.expected_revision}"
                )
            if rec.review not in _DECIDABLE:
                raise ValidationError(
                    f"review: record {rec.id} is {rec.review.value}; only Pending or "
                    "Revised records accept decisions"
                )
            if decision.action not in _ALLOWED[rec.review]:
                raise ValidationError(
                    f"action: {decision.action.value} not allowed from {rec.review.value}"
                )
            updated = self._apply(rec, decision)
            self._records[rec.id] = updated
            self._append_audit(
                {
                    "type": "decision",
                    "record_id": decision.record_id,
                    "action": decision.action.value,
                    "expected_revision": decision.expected_revision,
                    "revised_instruction": decision.revised_instruction,
                    "regeneration_hint": decision.regeneration_hint,
                    "reviewer": decision.reviewer,
                    "timestamp": decision.timestamp or self._clock(),
                }
            )
            self._maybe_compact()
            return updated

    def _apply(self, rec: TripletRecord, decision: ReviewDecision) -> TripletRecord:
        updated = TripletRecord.from_dict(rec.to_dict())
        updated.revision = rec.revision + 1
        if decision.action is ReviewAction.APPROVE:
            updated.review = ReviewStatus.APPROVED
        elif decision.action is ReviewAction.REJECT:
            updated.review = ReviewStatus.REJECTED
        elif decision.action is ReviewAction.REVISE_INSTRUCTION:
            updated.instruction = decision.revised_instruction or ""
            updated.review = ReviewStatus.REVISED
            updated.review_note = f"instruction revised by {decision.reviewer}"
        elif decision.action is ReviewAction.REQUEST_REGENERATION:
            job = RegenerationJob(
                job_id=f"regen-{rec.id}-{rec.revision}",
                record_id=rec.id,
                hint=decision.regeneration_hint,
                provenance=dict(rec.provenance),
            )
            self._queue.append(job)
            updated.review_note = "regeneration requested"
        return updated

    def record_rescore(self, record_id: str, scores: dict[str, Any]) -> TripletRecord:
        """Attach discriminator rescore results to a revised record.

        Annotation only: no status or revision change, but audit-logged so
        replay reproduces it.
        """
        with self._lock:
            rec = self.get(record_id)
            updated = TripletRecord.from_dict(rec.to_dict())
            updated.provenance = {**rec.provenance, "rescore": scores}
            self._records[record_id] = updated
            self._append_audit(
                {
                    "type": "rescore",
                    "record_id": record_id,
                    "scores": scores,
                    "timestamp": self._clock(),
                }
            )
            self._maybe_compact()
            return updated

    # -- regeneration ------------------------------------------------------------

    def pending_jobs(self) -> list[RegenerationJob]:
        with self._lock:
            return list(self._queue)

    def pop_job(self) -> RegenerationJob | None:
        with self._lock:
            return self._queue.pop(0) if self._queue else None

    def complete_regeneration(self, job: RegenerationJob, new_record: TripletRecord) -> None:
        """Supersede the old record with a fresh Pending one."""
        with self._lock:
            if job.job_id in self._completed_jobs:
                return
            old = self.get(job.record_id)
            if new_record.id in self._records:
                raise ValidationError(f"id: regenerated record id {new_record.id} already exists")
            new_record.validate()
            superseded = TripletRecord.from_dict(old.to_dict())
            superseded.review = ReviewStatus.REJECTED
            superseded.review_note = f"superseded by {new_record.id}"
            superseded.revision = old.revision + 1
            superseded.provenance = {**old.provenance, "superseded_by": new_record.id}
            self._records[old.id] = superseded
            self._records[new_record.id] = new_record
            self._completed_jobs.add(job.job_id)
            self._append_audit(
                {
                    "type": "regeneration",
                    "job_id": job.job_id,
                    "record_id": old.id,
                    "new_record": new_record.to_dict(),
                    "timestamp": self._clock(),
                }
            )
            self._maybe_compact()

    def fail_regeneration(self, job: RegenerationJob, reason: str) -> None:
        """Return the record to plain Pending with a failure note."""
        with self._lock:
            if job.job_id in self._completed_jobs:
                return
            old = self.get(job.record_id)
            updated = TripletRecord.from_dict(old.to_dict())
            updated.review_note = f"regeneration failed: {reason}"
            self._records[old.id] = updated
            self._completed_jobs.add(job.job_id)
            self._append_audit(
                {
                    "type": "regeneration_failed",
                    "job_id": job.job_id,
                    "record_id": old.id,
                    "reason": reason,
                    "timestamp": self._clock(),
                }
            )

    # -- persistence ---------------------------------------------------------------

    def _append_audit(self, entry: dict[str, Any]) -> None:
        self._seq += 1
        if self.audit_log_path is None or self._replaying:
            return
        entry = {"seq": self._seq, **entry}
        self.audit_log_path.parent.mkdir(parents=True, exist_ok=True)
        with self.audit_log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False))
            fh.write("\n")

    def _maybe_compact(self) -> None:
        self._since_compact += 1
        if self.manifest_path is not None and self._since_compact >= self.compact_every:
            self.save()

    def _sidecar_path(self) -> Path | None:
        if self.manifest_path is None:
            return None
        return self.manifest_path.with_suffix(self.manifest_path.suffix + ".compacted")

    def save(self) -> None:
        """Compact current state back into the manifest file.

        The sidecar records the last audit seq folded into the manifest, so
        a later open() replays only the log tail.
        """
        if self.manifest_path is None:
            return
        with self._lock:
            write_manifest(self.all_records(), self.manifest_path)
            sidecar = self._sidecar_path()
            if sidecar is not None:
                sidecar.write_text(json.dumps({"last_compacted_seq": self._seq}))
            self._since_compact = 0

    def export_approved(self, out_path: str | Path) -> list[TripletRecord]:
        """Write the training-ready manifest: Approved and Revised records."""
        with self._lock:
            keep = [
                r
                for r in self.all_records()
                if r.review in (ReviewStatus.APPROVED, ReviewStatus.REVISED)
            ]
        write_manifest(keep, out_path)
        return keep

    def _apply_entry(self, entry: dict[str, Any]) -> None:
        """Apply one committed audit entry; used by crash recovery and replay."""
        kind = entry["type"]
        if kind == "decision":
            self.submit_decision(
                ReviewDecision(
                    record_id=entry["record_id"],
                    action=ReviewAction(entry["action"]),
                    expected_revision=entry["expected_revision"],
                    reviewer=entry.get("reviewer", "reviewer"),
                    revised_instruction=entry.get("revised_instruction"),
                    regeneration_hint=entry.get("regeneration_hint"),
                    timestamp=entry.get("timestamp"),
                )
            )
        elif kind == "regeneration":
            job = RegenerationJob(entry["job_id"], entry["record_id"], None)
            self.complete_regeneration(job, TripletRecord.from_dict(entry["new_record"]))
        elif kind == "regeneration_failed":
            job = RegenerationJob(entry["job_id"], entry["record_id"], None)
            self.fail_regeneration(job, entry.get("reason", ""))
        elif kind == "rescore":
            self.record_rescore(entry["record_id"], entry["scores"])

    def _recover_from_log(self) -> None:
        """Replay the audit-log tail written after the last compaction."""
        if self.audit_log_path is None or not self.audit_log_path.exists():
            return
        last_compacted = 0
        sidecar = self._sidecar_path()
        if sidecar is not None and sidecar.exists():
            last_compacted = int(json.loads(sidecar.read_text())["last_compacted_seq"])
        self._replaying = True
        try:
            with self.audit_log_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    seq = int(entry.get("seq", 0))
                    if seq > last_compacted:
                        self._apply_entry(entry)
                    # the counter must clear every seq in the log, applied
                    # or compacted, or fresh entries would collide
                    self._seq = max(self._seq, seq)
        finally:
            self._replaying = False
        self._since_compact = 0

    @classmethod
    def open(cls, manifest_path: str | Path, **kwargs) -> "ReviewStore":
        """Load a manifest and recover any decisions newer than its last
        compaction from the adjacent audit log."""
        records = read_manifest(manifest_path)
        audit = kwargs.pop("audit_log_path", Path(manifest_path).with_suffix(".audit.jsonl"))
        store = cls(records, manifest_path=manifest_path, audit_log_path=audit, **kwargs)
        store._recover_from_log()
        return store


def replay_audit_log(
    initial_records: Sequence[TripletRecord], audit_log_path: str | Path
) -> list[TripletRecord]:
    """Rebuild the record state by replaying every committed audit entry."""
    store = ReviewStore(list(initial_records))
    path = Path(audit_log_path)
    if not path.exists():
        return store.all_records()
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                store._apply_entry(json.loads(line))
    return store.all_records()


def run_regeneration_worker(
    store: ReviewStore,
    regenerate: Callable[[TripletRecord, str | None], TripletRecord],
    max_jobs: int | None = None,
) -> int:
    """Drain the regeneration queue through the originating branch pipeline.

    ``regenerate`` re-runs the record's branch with the hint applied and
    returns the replacement record (already Pending, provenance linking to
    the parent). Returns the number of jobs processed.
    """
    processed = 0
    while max_jobs is None or processed < max_jobs:
        job = store.pop_job()
        if job is None:
            break
        record = store.get(job.record_id)
        try:
            new_record = regenerate(record, job.hint)
        except Exception as exc:  # per-job isolation: one failure must not stall the queue
            store.fail_regeneration(job, str(exc))
            processed += 1
            continue
        if "parent" not in new_record.provenance:
            new_record.provenance["parent"] = record.id
        store.complete_regeneration(job, new_record)
        processed += 1
    return processed
