"""Job and report persistence: embedded sqlite plus on-disk artifacts.

All state of the service graph lives here; structure services stay
stateless. Mutations are serialized (single writer lock on top of sqlite),
so concurrent orchestration threads always observe consistent records.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ..errors import StateError, ValidationError

STRUCTURES = ("onh", "macula", "vessels")
_TRANSITIONS = {
    "queued": {"running", "failed"},
    "running": {"done", "failed"},
    "done": set(),
    "failed": set(),
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class JobRecord:
    job_id: str
    image_id: str
    laterality: str
    state: str = "queued"
    structures: dict = field(default_factory=lambda: {s: "pending" for s in STRUCTURES})
    errors: dict = field(default_factory=dict)  # structure -> message
    created: str = field(default_factory=_now)
    updated: str = field(default_factory=_now)
    error: str | None = None

    def transition(self, state: str) -> None:
        if state not in _TRANSITIONS:
            raise ValidationError(f"unknown job state {state!r}")
        if state not in _TRANSITIONS[self.state]:
            raise StateError(f"illegal transition {self.state} -> {state}")
        self.state = state
        self.updated = _now()

    def set_structure(self, structure: str, status: str, error: str | None = None) -> None:
        if structure not in self.structures:
            raise ValidationError(f"unknown structure {structure!r}")
        if status not in ("pending", "ok", "failed", "skipped"):
            raise ValidationError(f"unknown structure status {status!r}")
        self.structures[structure] = status
        if error:
            self.errors[structure] = error
        self.updated = _now()

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "image_id": self.image_id,
            "laterality": self.laterality,
            "state": self.state,
            "structures": dict(self.structures),
            "errors": dict(self.errors),
            "created": self.created,
            "updated": self.updated,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JobRecord":
        return cls(**obj)


class JobStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._db = sqlite3.connect(str(self.root / "jobs.sqlite3"), check_same_thread=False)
        self._db.execute("PRAGMA journal_mode=WAL")
        self._db.execute("CREATE TABLE IF NOT EXISTS jobs (job_id TEXT PRIMARY KEY, data TEXT NOT NULL)")
        self._db.execute("CREATE TABLE IF NOT EXISTS reports (job_id TEXT PRIMARY KEY, data TEXT NOT NULL)")
        self._db.execute(
            "CREATE TABLE IF NOT EXISTS structures ("
            "job_id TEXT, structure TEXT, data TEXT NOT NULL, PRIMARY KEY (job_id, structure))"
        )
        self._db.commit()
        self._lock = threading.Lock()

    # --- jobs --------------------------------------------------------------

    def create_job(self, image_id: str, laterality: str) -> JobRecord:
        record = JobRecord(job_id=uuid.uuid4().hex, image_id=image_id, laterality=laterality)
        with self._lock:
            self._db.execute(
                "INSERT INTO jobs (job_id, data) VALUES (?, ?)",
                (record.job_id, json.dumps(record.to_json())),
            )
            self._db.commit()
        return record

    def get_job(self, job_id: str) -> JobRecord | None:
        with self._lock:
            row = self._db.execute("SELECT data FROM jobs WHERE job_id = ?", (job_id,)).fetchone()
        return JobRecord.from_json(json.loads(row[0])) if row else None

    def mutate_job(self, job_id: str, fn) -> JobRecord:
        """Apply fn to the record inside the store lock (read-modify-write)."""
        with self._lock:
            row = self._db.execute("SELECT data FROM jobs WHERE job_id = ?", (job_id,)).fetchone()
            if row is None:
                raise ValidationError(f"unknown job {job_id}")
            record = JobRecord.from_json(json.loads(row[0]))
            fn(record)
            self._db.execute(
                "UPDATE jobs SET data = ? WHERE job_id = ?",
                (json.dumps(record.to_json()), job_id),
            )
            self._db.commit()
        return record

    def list_jobs(self) -> list[JobRecord]:
        with self._lock:
            rows = self._db.execute("SELECT data FROM jobs").fetchall()
        records = [JobRecord.from_json(json.loads(r[0])) for r in rows]
        return sorted(records, key=lambda r: r.created)

    # --- structure payloads and artifacts ----------------------------------

    def save_structure(self, job_id: str, structure: str, payload: dict) -> None:
        with self._lock:
            self._db.execute(
                "INSERT OR REPLACE INTO structures (job_id, structure, data) VALUES (?, ?, ?)",
                (job_id, structure, json.dumps(payload)),
            )
            self._db.commit()

    def get_structure(self, job_id: str, structure: str) -> dict | None:
        with self._lock:
            row = self._db.execute(
                "SELECT data FROM structures WHERE job_id = ? AND structure = ?",
                (job_id, structure),
            ).fetchone()
        return json.loads(row[0]) if row else None

    def save_artifact(self, job_id: str, name: str, data: bytes) -> Path:
        job_dir = self.root / "jobs" / job_id
        job_dir.mkdir(parents=True, exist_ok=True)
        path = job_dir / name
        path.write_bytes(data)
        return path

    def load_artifact(self, job_id: str, name: str) -> bytes | None:
        path = self.root / "jobs" / job_id / name
        return path.read_bytes() if path.exists() else None

    # --- reports ------------------------------------------------------------

    def save_report(self, job_id: str, report_json: dict) -> None:
        with self._lock:
            self._db.execute(
                "INSERT OR REPLACE INTO reports (job_id, data) VALUES (?, ?)",
                (job_id, json.dumps(report_json)),
            )
            self._db.commit()

    def get_report(self, job_id: str) -> dict | None:
        with self._lock:
            row = self._db.execute("SELECT data FROM reports WHERE job_id = ?", (job_id,)).fetchone()
        return json.loads(row[0]) if row else None
