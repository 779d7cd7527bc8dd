"""HTTP layer tests over the review API."""

from __future__ import annotations

import numpy as np
import pytest
from fastapi.testclient import TestClient

from editforge.imgio import save_image
from editforge.review import ReviewStore, create_app
from editforge.schema import ReviewStatus
from tests.test_schema import make_record


@pytest.fixture
def client(tmp_path):
    records = [make_record(i) for i in range(3)]
    for rec in records:
        save_image(np.full((4, 4, 3), 0.5), tmp_path / rec.input_image)
        save_image(np.full((4, 4, 3), 0.8), tmp_path / rec.output_image)
    store = ReviewStore(
        records,
        manifest_path=tmp_path / "manifest.jsonl",
        audit_log_path=tmp_path / "audit.jsonl",
    )
    app = create_app(store, images_root=tmp_path)
    return TestClient(app), store


def test_list_records_pages(client):
    http, _ = client
    res = http.get("/api/v1/records", params={"page_size": 2})
    assert res.status_code == 200
    body = res.json()
    assert body["total"] == 3
    assert len(body["items"]) == 2
    assert body["items"][0]["input_image_url"].startswith("/images/")


def test_list_records_status_filter(client):
    http, store = client
    res = http.get("/api/v1/records", params={"status": "Approved"})
    assert res.json()["total"] == 0
    res = http.get("/api/v1/records", params={"status": "NotAStatus"})
    assert res.status_code == 422


def test_get_record_and_404(client):
    http, _ = client
    res = http.get("/api/v1/records/rec-texttoimage-0001")
    assert res.status_code == 200
    assert res.json()["revision"] == 0
    assert http.get("/api/v1/records/ghost").status_code == 404


def test_decision_approve_flow(client):
    http, store = client
    res = http.post(
        "/api/v1/records/rec-texttoimage-0000/decision",
        json={"action": "Approve", "expected_revision": 0, "reviewer": "alice"},
    )
    assert res.status_code == 200
    assert res.json()["review"] == "Approved"
    assert store.get("rec-texttoimage-0000").review is ReviewStatus.APPROVED


def test_decision_conflict_and_validation(client):
    http, _ = client
    first = http.post(
        "/api/v1/records/rec-texttoimage-0001/decision",
        json={"action": "Approve", "expected_revision": 0},
    )
    assert first.status_code == 200
    stale = http.post(
        "/api/v1/records/rec-texttoimage-0001/decision",
        json={"action": "Reject", "expected_revision": 0},
    )
    assert stale.status_code == 409
    bad = http.post(
        "/api/v1/records/rec-texttoimage-0002/decision",
        json={"action": "ReviseInstruction", "expected_revision": 0},
    )
    assert bad.status_code == 422
    unknown_action = http.post(
        "/api/v1/records/rec-texttoimage-0002/decision",
        json={"action": "Explode", "expected_revision": 0},
    )
    assert unknown_action.status_code == 422
    missing = http.post(
        "/api/v1/records/ghost/decision", json={"action": "Approve", "expected_revision": 0}
    )
    assert missing.status_code == 404


def test_stats_endpoint(client):
    http, _ = client
    http.post(
        "/api/v1/records/rec-texttoimage-0000/decision",
        json={"action": "Approve", "expected_revision": 0},
    )
    body = http.get("/api/v1/stats").json()
    assert body["total"] == 3
    assert body["by_status"] == {"Pending": 2, "Approved": 1}
    assert body["pending_jobs"] == 0


def test_image_serving_and_traversal_guard(client):
    http, _ = client
    ok = http.get("/images/images/0001_in.png")
    assert ok.status_code == 200
    assert ok.headers["content-type"] == "image/png"
    assert http.get("/images/../secrets.txt").status_code == 404
    assert http.get("/images/images/nope.png").status_code == 404


def test_token_required_when_configured(tmp_path):
    store = ReviewStore([make_record(0)])
    app = create_app(store, images_root=tmp_path, token="hunter2")
    http = TestClient(app)
    assert http.get("/api/v1/records").status_code == 401
    ok = http.get("/api/v1/records", headers={"X-Review-Token": "hunter2"})
    assert ok.status_code == 200


def test_revision_rescored_when_configured(tmp_path):
    store = ReviewStore(
        [make_record(0)],
        audit_log_path=tmp_path / "audit.jsonl",
    )
    seen = []

    def rescorer(record):
        seen.append(record.instruction)
        return {"keep": True, "scores": {"semantic alignment": 1}}

    http = TestClient(create_app(store, images_root=tmp_path, rescorer=rescorer))
    res = http.post(
        "/api/v1/records/rec-texttoimage-0000/decision",
        json={
            "action": "ReviseInstruction",
            "expected_revision": 0,
            "revised_instruction": "What would happen if it flooded?",
        },
    )
    assert res.status_code == 200
    assert seen == ["What would happen if it flooded?"]
    assert store.get("rec-texttoimage-0000").provenance["rescore"]["keep"] is True
    # approvals do not trigger rescoring
    res = http.post(
        "/api/v1/records/rec-texttoimage-0000/decision",
        json={"action": "Approve", "expected_revision": 1},
    )
    assert res.status_code == 200
    assert len(seen) == 1
