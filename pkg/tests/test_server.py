"""HTTP API surface over the triage service."""

from __future__ import annotations

import io
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from dermatriage.corpus.manifest import DatasetManifest, ImageRecord, Origin, Split
from dermatriage.labels import DiseaseLabel
from dermatriage.modelzoo import build_classifier, save_checkpoint
from dermatriage.server import create_app
from dermatriage.service import CaseStore, TriageService

from conftest import solid_image


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("server-ckpt")
    return save_checkpoint(
        build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=6), None, root / "srv"
    )


@pytest.fixture
def client(tmp_path, checkpoint):
    manifest = DatasetManifest(seed=1)
    manifest.add(ImageRecord("seed-1", "/data/seed1.png", DiseaseLabel.ACNE, split=Split.TRAIN))
    manifest_path = manifest.save(tmp_path / "manifest.tsv")
    service = TriageService(
        store=CaseStore(tmp_path / "store" / "events.jsonl"),
        image_dir=tmp_path / "images",
        manifest_path=manifest_path,
        checkpoint_path=checkpoint.weights_path,
    )
    return TestClient(create_app(service))


def upload(seed=0) -> dict:
    buf = io.BytesIO()
    solid_image((60, 170, 60), side=48, noise_seed=seed).save(buf, format="PNG")
    return {"image": (f"case{seed}.png", buf.getvalue(), "image/png")}


def test_submit_case_created(client, checkpoint):
    resp = client.post("/cases", files=upload())
    assert resp.status_code == 201
    body = resp.json()
    assert body["status"] == "PENDING_VETTING"
    assert body["model_digest"] == checkpoint.digest
    probs = [s["probability"] for s in body["scores"]]
    assert len(probs) == 9
    assert probs == sorted(probs, reverse=True)
    assert body["scores"][0]["label"] == body["predicted_label"]


def test_submit_corrupt_image_400(client):
    resp = client.post("/cases", files={"image": ("x.png", b"not an image", "image/png")})
    assert resp.status_code == 400


def test_submit_without_model_503(tmp_path):
    service = TriageService(
        store=CaseStore(tmp_path / "events.jsonl"), image_dir=tmp_path / "img"
    )
    bare = TestClient(create_app(service))
    resp = bare.post("/cases", files=upload())
    assert resp.status_code == 503


def test_queue_oldest_first_and_health_depth(client):
    ids = [client.post("/cases", files=upload(i)).json()["case_id"] for i in range(3)]
    queue = client.get("/cases", params={"status": "pending_vetting"}).json()
    assert queue["queue_depth"] == 3
    assert [c["case_id"] for c in queue["cases"]] == ids
    entry = queue["cases"][0]
    assert entry["thumbnail"] == f"/cases/{ids[0]}/image"
    assert len(entry["top_scores"]) == 3
    health = client.get("/health").json()
    assert health["queue_depth"] == 3
    assert health["model_digest"]


def test_get_case_and_image(client):
    case_id = client.post("/cases", files=upload(5)).json()["case_id"]
    full = client.get(f"/cases/{case_id}")
    assert full.status_code == 200
    assert len(full.json()["scores"]) == 9
    image = client.get(f"/cases/{case_id}/image")
    assert image.status_code == 200
    assert image.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get("/cases/deadbeef").status_code == 404


def test_vetting_flow_and_conflict(client):
    case_id = client.post("/cases", files=upload(6)).json()["case_id"]
    ok = client.post(
        f"/cases/{case_id}/vetting",
        json={"verdict": "CONFIRM", "vetter_id": "dr-x"},
    )
    assert ok.status_code == 200
    assert ok.json()["status"] == "VETTED"
    conflict = client.post(
        f"/cases/{case_id}/vetting",
        json={"verdict": "CONFIRM", "vetter_id": "dr-y"},
    )
    assert conflict.status_code == 409


def test_vetting_validation_errors(client):
    case_id = client.post("/cases", files=upload(7)).json()["case_id"]
    no_label = client.post(
        f"/cases/{case_id}/vetting", json={"verdict": "CORRECT", "vetter_id": "dr"}
    )
    assert no_label.status_code == 400
    bad_verdict = client.post(
        f"/cases/{case_id}/vetting", json={"verdict": "MAYBE", "vetter_id": "dr"}
    )
    assert bad_verdict.status_code == 400
    unknown = client.post(
        "/cases/nope/vetting", json={"verdict": "CONFIRM", "vetter_id": "dr"}
    )
    assert unknown.status_code == 404


def test_vetter_id_header_fallback(client):
    case_id = client.post("/cases", files=upload(8)).json()["case_id"]
    resp = client.post(
        f"/cases/{case_id}/vetting",
        json={"verdict": "CORRECT", "corrected_label": "Ulcer"},
        headers={"X-Vetter-Id": "dr-header"},
    )
    assert resp.status_code == 200
    assert resp.json()["final_label"] == "Ulcer"


def test_incorporate_endpoint(client, tmp_path):
    case_id = client.post("/cases", files=upload(9)).json()["case_id"]
    client.post(f"/cases/{case_id}/vetting", json={"verdict": "CONFIRM", "vetter_id": "dr"})
    report = client.post("/admin/incorporate", json={}).json()
    assert len(report["added"]) == 1
    assert report["added"][0]["case_id"] == case_id
    again = client.post("/admin/incorporate", json={}).json()
    assert again["added"] == []


def test_admin_model_endpoint(client, checkpoint, tmp_path):
    bad = client.post("/admin/model", json={"checkpoint_path": str(tmp_path / "none.weights")})
    assert bad.status_code == 400
    good = client.post("/admin/model", json={"checkpoint_path": str(checkpoint.weights_path)})
    assert good.status_code == 200
    assert good.json()["digest"] == checkpoint.digest
    assert good.json()["backbone"] == "ResNet18"


def test_admin_model_digest_pinning(client, checkpoint):
    wrong = client.post(
        "/admin/model",
        json={"checkpoint_path": str(checkpoint.weights_path), "expected_digest": "0" * 12},
    )
    assert wrong.status_code == 400
    assert "does not match" in wrong.json()["detail"]
    pinned = client.post(
        "/admin/model",
        json={
            "checkpoint_path": str(checkpoint.weights_path),
            "expected_digest": checkpoint.digest,
        },
    )
    assert pinned.status_code == 200
