"""HTTP API: upload-and-segment inference plus the reader-study endpoints.

JSON over HTTP with base64 PNG masks; every error response carries
{"error": <code>, "detail": <text>}. One model is loaded at startup and
inference requests are serialized through a lock so memory stays bounded.
"""
from __future__ import annotations

import base64
import io
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from . import __version__
from .dataio import MIN_IMAGE_SIDE, BinaryMask, ImageSample, read_manifest
from .errors import (CorruptCheckpoint, DomainError, DuplicateResponse,
                     PoolTooSmall, SessionComplete, SessionIncomplete,
                     UnknownSession, UnknownTrial)
from .maskops import foreground_stats
from .readerstudy import DONE, SessionStore, pool_from_manifest
from .segmodel import load_seg_checkpoint, predict_mask

ERROR_STATUS = {
    "UNKNOWN_SESSION": 404,
    "UNKNOWN_TRIAL": 404,
    "DUPLICATE_RESPONSE": 409,
    "SESSION_INCOMPLETE": 409,
    "SESSION_COMPLETE": 409,
    "POOL_TOO_SMALL": 400,
    "NON_IMAGE_FILE": 400,
    "DIMENSION_MISMATCH": 400,
}


@dataclass
class ServiceConfig:
    checkpoint: str | None = None
    host: str = "127.0.0.1"
    port: int = 8000
    threshold: float = 0.5
    max_body_mb: int = 20
    session_dir: str = "sessions"
    study_real_manifest: str | None = None
    study_gen_manifest: str | None = None
    webui_dir: str | None = None


class SessionCreateRequest(BaseModel):
    n_per_class: int = 100
    seed: int = 0


class ResponseSubmission(BaseModel):
    trial_index: int
    answer: str


def _error_response(code: str, detail: str, status: int) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": code, "detail": detail})


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="plastiseg", version=__version__,
                  openapi_url="/api/schema")

    model = None
    model_id = None
    if config.checkpoint:
        try:
            model = load_seg_checkpoint(config.checkpoint)
            model_id = f"{Path(config.checkpoint).stem}-{model.config_hash[:8]}"
        except (FileNotFoundError, CorruptCheckpoint, DomainError):
            model = None

    inference_lock = threading.Lock()
    store = SessionStore(config.session_dir)

    pools = {}
    if config.study_real_manifest and config.study_gen_manifest:
        pools["real"] = pool_from_manifest(
            read_manifest(config.study_real_manifest))
        pools["generated"] = pool_from_manifest(
            read_manifest(config.study_gen_manifest))

    @app.exception_handler(DomainError)
    async def domain_error_handler(request: Request, exc: DomainError):
        return _error_response(exc.code, exc.detail,
                               ERROR_STATUS.get(exc.code, 400))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _error_response("VALIDATION", str(exc.errors()), 400)

    @app.get("/api/health")
    def health():
        body = {"status": "ok" if model else "model_not_loaded",
                "model_id": model_id, "version": __version__}
        return JSONResponse(status_code=200 if model else 503, content=body)

    @app.post("/api/segment")
    async def segment(request: Request, image: UploadFile,
                      threshold: float | None = None):
        if model is None:
            return _error_response("MODEL_NOT_LOADED",
                                   "no segmentation checkpoint loaded", 503)
        limit = config.max_body_mb * 1024 * 1024
        declared = request.headers.get("content-length")
        if declared and int(declared) > limit + 4096:
            return _error_response(
                "TOO_LARGE", f"body exceeds {config.max_body_mb} MB", 413)
        data = await image.read()
        if len(data) > limit:
            return _error_response(
                "TOO_LARGE", f"upload exceeds {config.max_body_mb} MB", 413)
        try:
            with Image.open(io.BytesIO(data)) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            return _error_response("UNDECODABLE", f"cannot decode image: {exc}", 400)
        if min(pixels.shape[:2]) < MIN_IMAGE_SIDE:
            return _error_response(
                "IMAGE_TOO_SMALL",
                f"{pixels.shape[1]}x{pixels.shape[0]} below minimum side "
                f"{MIN_IMAGE_SIDE}", 400)

        form = await request.form()
        if threshold is None and "threshold" in form:
            threshold = float(form["threshold"])
        if threshold is None:
            threshold = config.threshold
        if not 0 < threshold < 1:
            return _error_response("VALIDATION",
                                   "threshold must be in (0, 1)", 400)

        sample = ImageSample(id="upload", pixels=pixels)
        start = time.perf_counter()
        with inference_lock:
            mask, _ = predict_mask(model, sample, threshold=threshold)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        stats = foreground_stats(mask)
        return {
            "mask": base64.b64encode(_mask_png_bytes(mask)).decode("ascii"),
            "coverage_fraction": stats["fraction"],
            "particle_count": stats["component_count"],
            "threshold_used": threshold,
            "model_id": model_id,
            "elapsed_ms": elapsed_ms,
        }

    @app.post("/api/study/sessions")
    def create_study_session(body: SessionCreateRequest):
        if not pools:
            return _error_response(
                "STUDY_NOT_CONFIGURED",
                "server started without study pool manifests", 503)
        try:
            session = store.create(pools["real"], pools["generated"],
                                   body.n_per_class, body.seed)
        except PoolTooSmall as exc:
            return _error_response(exc.code, exc.detail, 400)
        return {"session_id": session.session_id, "n_trials": session.n_trials}

    @app.get("/api/study/sessions/{session_id}/next")
    def study_next(session_id: str):
        try:
            payload = store.next_trial(session_id)
        except SessionComplete:
            session = store.get(session_id)
            return {"done": True, "answered": len(session.responses),
                    "total": session.n_trials}
        except UnknownSession as exc:
            return _error_response(exc.code, exc.detail, 404)
        if payload is DONE:
            session = store.get(session_id)
            return {"done": True, "answered": len(session.responses),
                    "total": session.n_trials}
        image_b64 = base64.b64encode(payload.image_png).decode("ascii")
        return payload.to_client_dict(image_b64)

    @app.post("/api/study/sessions/{session_id}/responses")
    def study_submit(session_id: str, body: ResponseSubmission):
        try:
            count = store.submit(session_id, body.trial_index,
                                 body.answer.lower())
        except ValueError:
            return _error_response("VALIDATION",
                                   "answer must be 'real' or 'generated'", 400)
        except (UnknownSession, UnknownTrial) as exc:
            return _error_response(exc.code, exc.detail, 404)
        except (DuplicateResponse, SessionComplete) as exc:
            return _error_response(exc.code, exc.detail, 409)
        return {"recorded": count}

    @app.get("/api/study/sessions/{session_id}/report")
    def study_report(session_id: str):
        try:
            report = store.report(session_id)
        except UnknownSession as exc:
            return _error_response(exc.code, exc.detail, 404)
        except SessionIncomplete as exc:
            return _error_response(exc.code, exc.detail, 409)
        return report.to_dict()

    webui = config.webui_dir
    if webui and Path(webui).is_dir():
        app.mount("/", StaticFiles(directory=webui, html=True), name="webui")

    return app


def _mask_png_bytes(mask: BinaryMask) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.pixels * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()
