"""HTTP inference service exposing stylization and the runtime controls.

One immutable model instance is shared by a bounded worker pool. Requests
at or below 512x512 content are answered synchronously with the image
body; larger ones are queued as jobs. Outputs are bit-identical to the
CLI for identical checkpoint and inputs because both call the same
feature-composition functions and the same PNG encoder.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response

from .controls import RegionMask, StyleMix, blended_features, mixed_features, spatial_features
from .encoder import tensor_to_image
from .errors import LdstyleError
from .imaging import decode_image, encode_image, luminance
from .transfer import decode as decode_features

SYNC_PIXEL_LIMIT = 512 * 512
DEFAULT_MAX_BYTES = 16 * 1024 * 1024
RESULT_TTL_SECONDS = 600.0


class ServiceError(LdstyleError):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        super().__init__(message)


@dataclass
class Job:
    id: str
    state: str  # queued -> running -> done | failed
    created: float
    media_type: str = "image/png"
    result_path: str | None = None
    error: str | None = None

    def status_dict(self) -> dict:
        out = {"id": self.id, "state": self.state}
        if self.state == "done":
            out["result_url"] = f"/v1/jobs/{self.id}/result"
        if self.error is not None:
            out["error"] = self.error
        return out


class _Runtime:
    """Shared state: model, worker pool, job table and result store."""

    def __init__(self, model, enc, workers: int, max_queue: int,
                 checkpoint_hash: str, max_bytes: int, result_ttl: float):
        self.model = model
        self.enc = enc
        self.pool = ThreadPoolExecutor(max_workers=workers)
        self.max_queue = max_queue
        self.max_bytes = max_bytes
        self.checkpoint_hash = checkpoint_hash
        self.result_ttl = result_ttl
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.pending = 0
        self.tmpdir = tempfile.mkdtemp(prefix="ldstyle-results-")

    def try_acquire_slot(self) -> bool:
        with self.lock:
            if self.pending >= self.max_queue:
                return False
            self.pending += 1
            return True

    def release_slot(self):
        with self.lock:
            self.pending -= 1

    def queue_depth(self) -> int:
        with self.lock:
            return self.pending

    def purge_expired(self):
        now = time.time()
        with self.lock:
            expired = [j for j in self.jobs.values()
                       if j.state in ("done", "failed")
                       and now - j.created > self.result_ttl]
            for job in expired:
                if job.result_path and os.path.exists(job.result_path):
                    os.unlink(job.result_path)
                del self.jobs[job.id]


@dataclass
class _ParsedRequest:
    content: object
    styles: list
    weights: list[float]
    alpha: float
    regions: list
    output_format: str


def _compute(rt: _Runtime, req: _ParsedRequest) -> bytes:
    """Compose the decoder input exactly like the CLI paths and render."""
    model, enc, content = rt.model, rt.enc, req.content
    with torch.no_grad():
        if req.regions:
            pairs = [(RegionMask(mask=mask, style_index=idx), req.styles[idx])
                     for mask, idx in req.regions]
            fused = spatial_features(model, enc, content, pairs)
        elif len(req.styles) == 1:
            fused = blended_features(model, enc, content, req.styles[0], req.alpha)
        else:
            mix = StyleMix(styles=req.styles, weights=req.weights)
            fused = mixed_features(model, enc, content, mix)
            if req.alpha < 1.0:
                recon = blended_features(model, enc, content, content, 0.0)
                fused = (1.0 - req.alpha) * recon + req.alpha * fused
        out = decode_features(model, fused)[:, :, :content.height, :content.width]
    return encode_image(tensor_to_image(out), req.output_format)


async def _read_limited(upload: UploadFile, limit: int) -> bytes:
    data = await upload.read()
    if len(data) > limit:
        raise ServiceError(413, "payload_too_large",
                           f"upload {upload.filename or ''} exceeds {limit} bytes")
    return data


async def _parse_request(rt: _Runtime, content: UploadFile, style: list[UploadFile],
                         weight, alpha, mask, mask_style, output_format) -> _ParsedRequest:
    if not style:
        raise ServiceError(400, "bad_request", "at least one style image is required")
    if output_format not in ("png", "jpeg"):
        raise ServiceError(400, "bad_request", f"unknown output_format {output_format!r}")
    try:
        alpha_val = float(alpha)
    except (TypeError, ValueError):
        raise ServiceError(400, "bad_request", f"invalid alpha {alpha!r}")
    if not np.isfinite(alpha_val):
        raise ServiceError(400, "bad_request", f"invalid alpha {alpha!r}")
    alpha_val = min(max(alpha_val, 0.0), 1.0)

    try:
        content_img = decode_image(await _read_limited(content, rt.max_bytes))
        style_imgs = [decode_image(await _read_limited(s, rt.max_bytes)) for s in style]
    except LdstyleError as exc:
        if isinstance(exc, ServiceError):
            raise
        raise ServiceError(400, "bad_request", str(exc))

    weights = list(weight) if weight else [1.0] * len(style_imgs)
    if len(weights) != len(style_imgs):
        raise ServiceError(400, "bad_request",
                           f"{len(style_imgs)} styles but {len(weights)} weights")
    if any(not np.isfinite(w) or w < 0 for w in weights):
        raise ServiceError(400, "bad_request", "style weights must be finite and >= 0")
    if sum(weights) <= 0:
        raise ServiceError(400, "bad_request", "style weights must not all be zero")

    regions = []
    if mask:
        indices = list(mask_style) if mask_style else list(range(len(mask)))
        if len(indices) != len(mask):
            raise ServiceError(400, "bad_request",
                               f"{len(mask)} masks but {len(indices)} mask_style entries")
        for m, idx in zip(mask, indices):
            if not 0 <= idx < len(style_imgs):
                raise ServiceError(400, "bad_request", f"mask_style index {idx} out of range")
            try:
                mask_img = decode_image(await _read_limited(m, rt.max_bytes))
            except LdstyleError as exc:
                if isinstance(exc, ServiceError):
                    raise
                raise ServiceError(400, "bad_request", str(exc))
            mask_arr = luminance(mask_img).values
            if mask_arr.shape != (content_img.height, content_img.width):
                raise ServiceError(400, "bad_request",
                                   f"mask shape {mask_arr.shape} does not match content "
                                   f"{(content_img.height, content_img.width)}")
            regions.append((mask_arr, idx))

    return _ParsedRequest(content=content_img, styles=style_imgs, weights=weights,
                          alpha=alpha_val, regions=regions, output_format=output_format)


def create_app(model, enc, checkpoint_path=None, workers: int = 2,
               max_queue: int = 8, allow_origin: str | None = None,
               max_bytes: int = DEFAULT_MAX_BYTES,
               result_ttl: float = RESULT_TTL_SECONDS) -> FastAPI:
    checkpoint_hash = ""
    if checkpoint_path and os.path.exists(checkpoint_path):
        with open(checkpoint_path, "rb") as f:
            checkpoint_hash = hashlib.sha256(f.read()).hexdigest()

    rt = _Runtime(model, enc, workers, max_queue, checkpoint_hash, max_bytes, result_ttl)
    app = FastAPI(title="ldstyle inference service")
    app.state.runtime = rt

    if allow_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(CORSMiddleware, allow_origins=[allow_origin],
                           allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "bad_request", "message": str(exc.errors())})

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "checkpoint_hash": rt.checkpoint_hash,
                "queue_depth": rt.queue_depth()}

    @app.post("/v1/stylize")
    async def stylize_endpoint(
            content: UploadFile = File(...),
            style: list[UploadFile] = File(...),
            weight: list[float] = Form(None),
            alpha: str = Form("1.0"),
            mask: list[UploadFile] = File(None),
            mask_style: list[int] = Form(None),
            output_format: str = Form("png")):
        req = await _parse_request(rt, content, style, weight, alpha,
                                   mask, mask_style, output_format)
        media_type = "image/png" if req.output_format == "png" else "image/jpeg"

        if not rt.try_acquire_slot():
            raise ServiceError(503, "queue_full",
                               f"inference queue is full ({rt.max_queue})")

        n_pixels = req.content.height * req.content.width
        if n_pixels <= SYNC_PIXEL_LIMIT:
            try:
                future = rt.pool.submit(_compute, rt, req)
                data = await _await_future(future)
            finally:
                rt.release_slot()
            return Response(content=data, media_type=media_type)

        job = Job(id=uuid.uuid4().hex, state="queued", created=time.time(),
                  media_type=media_type)
        with rt.lock:
            rt.jobs[job.id] = job
        rt.pool.submit(_run_job, rt, job.id, req)
        return JSONResponse(status_code=202, content=job.status_dict())

    @app.get("/v1/jobs/{job_id}")
    async def job_status(job_id: str):
        rt.purge_expired()
        with rt.lock:
            job = rt.jobs.get(job_id)
            if job is None:
                raise ServiceError(404, "not_found", f"unknown job {job_id}")
            return job.status_dict()

    @app.get("/v1/jobs/{job_id}/result")
    async def job_result(job_id: str):
        with rt.lock:
            job = rt.jobs.get(job_id)
            if job is None:
                raise ServiceError(404, "not_found", f"unknown job {job_id}")
            if job.state != "done" or not job.result_path:
                raise ServiceError(404, "not_found", f"job {job_id} has no result "
                                   f"(state {job.state})")
            path, media_type = job.result_path, job.media_type
        return FileResponse(path, media_type=media_type)

    return app


async def _await_future(future):
    import asyncio

    return await asyncio.wrap_future(future)


def _run_job(rt: _Runtime, job_id: str, req: _ParsedRequest) -> None:
    with rt.lock:
        job = rt.jobs[job_id]
        job.state = "running"
    try:
        data = _compute(rt, req)
        suffix = ".png" if req.output_format == "png" else ".jpg"
        path = os.path.join(rt.tmpdir, job_id + suffix)
        with open(path, "wb") as f:
            f.write(data)
        with rt.lock:
            job.result_path = path
            job.state = "done"
    except Exception as exc:
        with rt.lock:
            job.error = str(exc)
            job.state = "failed"
    finally:
        rt.release_slot()
