import base64
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from helpers import audit_trial_payload
from plastiseg.service import ServiceConfig, create_app


def _png_bytes(array):
    buf = io.BytesIO()
    Image.fromarray(array, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _upload(client, data, threshold=None, field="image"):
    params = {}
    if threshold is not None:
        params["threshold"] = threshold
    return client.post("/api/segment", params=params,
                       files={field: ("upload.png", data, "image/png")})


@pytest.fixture(scope="module")
def app_config(seg_checkpoint_path, toy_cohorts, synth_corpus, tmp_path_factory):
    return ServiceConfig(
        checkpoint=str(seg_checkpoint_path),
        session_dir=str(tmp_path_factory.mktemp("svc-sessions")),
        study_real_manifest=str(toy_cohorts["root"] / "cohort3" / "manifest.json"),
        study_gen_manifest=str(synth_corpus.root / "manifest.json"),
    )


@pytest.fixture(scope="module")
def client(app_config):
    return TestClient(create_app(app_config))


@pytest.fixture(scope="module")
def toy_upload(toy_cohorts):
    from plastiseg.dataio import Split, load_split_pairs

    image, truth = load_split_pairs(toy_cohorts["cohort1"], Split.TEST)[0]
    return _png_bytes(image.pixels), truth


def test_health_ok(client):
    resp = client.get("/api/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["model_id"]
    assert body["version"]


def test_health_without_model(tmp_path):
    app = create_app(ServiceConfig(checkpoint=None, session_dir=str(tmp_path)))
    with TestClient(app) as c:
        resp = c.get("/api/health")
    assert resp.status_code == 503
    assert resp.json()["status"] == "model_not_loaded"


def test_health_with_missing_checkpoint_path(tmp_path):
    app = create_app(ServiceConfig(checkpoint=str(tmp_path / "nope.pt"),
                                   session_dir=str(tmp_path)))
    with TestClient(app) as c:
        assert c.get("/api/health").status_code == 503


def test_segment_roundtrip(client, toy_upload):
    data, _ = toy_upload
    resp = _upload(client, data)
    assert resp.status_code == 200
    body = resp.json()
    mask_png = base64.b64decode(body["mask"])
    with Image.open(io.BytesIO(mask_png)) as im:
        mask = np.asarray(im)
    src = np.asarray(Image.open(io.BytesIO(data)))
    assert mask.shape == src.shape[:2]
    assert set(np.unique(mask)) <= {0, 255}
    coverage = float((mask > 0).mean())
    assert body["coverage_fraction"] == pytest.approx(coverage, abs=1e-12)
    assert body["particle_count"] >= 0
    assert body["threshold_used"] == 0.5
    assert body["elapsed_ms"] >= 0
    assert body["model_id"]


def test_segment_deterministic_bytes(client, toy_upload):
    data, _ = toy_upload
    a = _upload(client, data).json()["mask"]
    b = _upload(client, data).json()["mask"]
    assert a == b


def test_segment_threshold_param_changes_result(client, toy_upload):
    data, _ = toy_upload
    low = _upload(client, data, threshold=0.05).json()
    high = _upload(client, data, threshold=0.95).json()
    assert low["threshold_used"] == 0.05
    assert high["threshold_used"] == 0.95
    assert low["coverage_fraction"] >= high["coverage_fraction"]


def test_segment_threshold_form_field(client, toy_upload):
    data, _ = toy_upload
    resp = client.post("/api/segment",
                       files={"image": ("u.png", data, "image/png")},
                       data={"threshold": "0.7"})
    assert resp.status_code == 200
    assert resp.json()["threshold_used"] == 0.7


def test_segment_tiny_image_rejected(client):
    tiny = _png_bytes(np.zeros((1, 1, 3), dtype=np.uint8))
    resp = _upload(client, tiny)
    assert resp.status_code == 400
    body = resp.json()
    assert body["error"] == "IMAGE_TOO_SMALL"
    assert "detail" in body


def test_segment_undecodable(client):
    resp = _upload(client, b"this is not an image")
    assert resp.status_code == 400
    assert resp.json()["error"] == "UNDECODABLE"


def test_segment_too_large(seg_checkpoint_path, tmp_path):
    app = create_app(ServiceConfig(checkpoint=str(seg_checkpoint_path),
                                   max_body_mb=1, session_dir=str(tmp_path)))
    rng = np.random.default_rng(0)
    big = _png_bytes(rng.integers(0, 256, (700, 700, 3), dtype=np.uint8))
    assert len(big) > 1024 * 1024
    with TestClient(app) as c:
        resp = _upload(c, big)
    assert resp.status_code == 413
    assert resp.json()["error"] == "TOO_LARGE"


def test_segment_without_model(tmp_path, toy_upload):
    app = create_app(ServiceConfig(checkpoint=None, session_dir=str(tmp_path)))
    with TestClient(app) as c:
        resp = _upload(c, toy_upload[0])
    assert resp.status_code == 503
    assert resp.json()["error"] == "MODEL_NOT_LOADED"


def test_schema_served(client):
    resp = client.get("/api/schema")
    assert resp.status_code == 200
    body = resp.json()
    assert "openapi" in body
    assert "/api/segment" in body["paths"]


def test_study_unknown_session(client):
    assert client.get("/api/study/sessions/feedface/next").status_code == 404
    assert client.get("/api/study/sessions/feedface/report").status_code == 404
    resp = client.post("/api/study/sessions/feedface/responses",
                       json={"trial_index": 0, "answer": "real"})
    assert resp.status_code == 404


def test_study_full_walkthrough(client, app_config):
    created = client.post("/api/study/sessions",
                          json={"n_per_class": 3, "seed": 12})
    assert created.status_code == 200
    sid = created.json()["session_id"]
    n_trials = created.json()["n_trials"]
    assert n_trials == 6

    # report refused mid-session
    assert client.get(f"/api/study/sessions/{sid}/report").status_code == 409

    # the test acts as a server-side observer to script exact correctness
    log_path = f"{app_config.session_dir}/{sid}.jsonl"
    create_event = json.loads(open(log_path).readline())
    truth = {t["trial_index"]: t["truth"] for t in create_event["trials"]}

    n_correct = 4
    answered = 0
    payloads = []
    while True:
        nxt = client.get(f"/api/study/sessions/{sid}/next")
        assert nxt.status_code == 200
        body = nxt.json()
        if body.get("done"):
            break
        payloads.append(body)
        idx = body["trial_index"]
        if answered < n_correct:
            answer = truth[idx]
        else:
            answer = "generated" if truth[idx] == "real" else "real"
        resp = client.post(f"/api/study/sessions/{sid}/responses",
                           json={"trial_index": idx, "answer": answer})
        assert resp.status_code == 200
        answered += 1

    # duplicate submissions rejected after completion
    dup = client.post(f"/api/study/sessions/{sid}/responses",
                      json={"trial_index": 0, "answer": "real"})
    assert dup.status_code == 409

    report = client.get(f"/api/study/sessions/{sid}/report")
    assert report.status_code == 200
    body = report.json()
    assert body["accuracy"] == pytest.approx(n_correct / n_trials)
    assert body["n_trials"] == n_trials

    # wire-level blinding audit over everything the client saw
    for payload in payloads:
        audit_trial_payload(payload)


def test_study_duplicate_response_mid_session(client):
    sid = client.post("/api/study/sessions",
                      json={"n_per_class": 2, "seed": 3}).json()["session_id"]
    nxt = client.get(f"/api/study/sessions/{sid}/next").json()
    ok = client.post(f"/api/study/sessions/{sid}/responses",
                     json={"trial_index": nxt["trial_index"], "answer": "real"})
    assert ok.status_code == 200
    dup = client.post(f"/api/study/sessions/{sid}/responses",
                      json={"trial_index": nxt["trial_index"], "answer": "real"})
    assert dup.status_code == 409
    assert dup.json()["error"] == "DUPLICATE_RESPONSE"


def test_study_pool_too_small(client):
    resp = client.post("/api/study/sessions",
                       json={"n_per_class": 10_000, "seed": 0})
    assert resp.status_code == 400
    assert resp.json()["error"] == "POOL_TOO_SMALL"


def test_study_not_configured(seg_checkpoint_path, tmp_path):
    app = create_app(ServiceConfig(checkpoint=str(seg_checkpoint_path),
                                   session_dir=str(tmp_path)))
    with TestClient(app) as c:
        resp = c.post("/api/study/sessions", json={"n_per_class": 2, "seed": 0})
    assert resp.status_code == 503
    assert resp.json()["error"] == "STUDY_NOT_CONFIGURED"


def test_error_envelope_shape(client):
    resp = client.get("/api/study/sessions/nope/next")
    body = resp.json()
    assert set(body.keys()) == {"error", "detail"}
