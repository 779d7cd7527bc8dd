"""Human-review backend: decision store, audit log, regeneration, HTTP API."""

from .api import create_app, record_summary
from .store import (
    RegenerationJob,
    ReviewAction,
    ReviewConflictError,
    ReviewDecision,
    ReviewNotFoundError,
    ReviewStore,
    replay_audit_log,
    run_regeneration_worker,
)

__all__ = [
    "RegenerationJob",
    "ReviewAction",
    "ReviewConflictError",
    "ReviewDecision",
    "ReviewNotFoundError",
    "ReviewStore",
    "create_app",
    "record_summary",
    "replay_audit_log",
    "run_regeneration_worker",
]
