"""Training/delivery server.

One directory per job holds everything an audit or reconnect needs: the
submitted image, a token, the current manifest, published scale blobs,
and an append-only event log. Scale publication is atomic (blob fully
written and hashed before its ready event) and strictly prefix-ordered:
no client can ever observe scale i without all scales below i.

The same app also exposes the edge-runtime endpoints the editing UI
talks to; they operate on whatever prefix of scales is published.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import io
import json
import logging
import os
import secrets
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, Request
from PIL import Image
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .. import editor_apps, profiler
from ..gan_models import ScaleModel
from ..inference import GenerationRequest, RequestError, ScaleUnavailable, generate
from ..pyramid import PyramidError, compute_scale_schedule, grid_dims, load_image, resize_image, save_image
from ..trainer import (
    MODE_PARALLEL_ONESHOT,
    DELIVERY_MODES,
    TrainConfig,
    TrainingJobFailed,
    train_all_parallel,
)
from .format import (
    BundleManifest,
    ScaleRecord,
    TrainedBundle,
    derive_job_id,
    manifest_json,
    record_for_blob,
    scale_blob,
    source_image_hash,
    validate_bundle,
)

log = logging.getLogger(__name__)

EVENT_POLL_SECONDS = 0.05


class PublicationGate:
    """Buffers out-of-order scale completions, releasing a strict prefix.

    offer(i, payload) stores the payload; every payload whose index is
    next in line is handed to the publish callback, in order. Not thread
    safe by itself; callers hold the job lock.
    """

    def __init__(self, publish_fn):
        self._publish = publish_fn
        self._pending: dict[int, object] = {}
        self._next = 0

    @property
    def published_count(self) -> int:
        return self._next

    def offer(self, index: int, payload) -> list[int]:
        if index < self._next or index in self._pending:
            raise ValueError(f"scale {index} offered twice")
        self._pending[index] = payload
        flushed = []
        while self._next in self._pending:
            self._publish(self._next, self._pending.pop(self._next))
            flushed.append(self._next)
            self._next += 1
        return flushed


@dataclass
class _PublishPayload:
    blob: bytes
    noise_amplitude: float
    fixed_rec_seed: int
    generator_param_count: int
    discriminator_param_count: int


def _payload_from_model(model: ScaleModel) -> _PublishPayload:
    return _PublishPayload(
        blob=scale_blob(model),
        noise_amplitude=float(model.noise_amplitude),
        fixed_rec_seed=int(model.fixed_rec_seed),
        generator_param_count=sum(p.numel() for p in model.generator.parameters()),
        discriminator_param_count=sum(p.numel() for p in model.discriminator.parameters()),
    )


class JobRuntime:
    """Server-side state of one training job, mirrored to its directory."""

    def __init__(
        self,
        root: Path,
        job_id: str,
        token: str,
        mode: str,
        config: TrainConfig,
        schedule,
        source_hash: str,
        content_job_id: str,
    ):
        self.root = root
        self.job_id = job_id
        self.token = token
        self.mode = mode
        self.config = config
        self.schedule = schedule
        self.source_hash = source_hash
        self.content_job_id = content_job_id
        self.lock = threading.RLock()
        self.state = "running"
        self.best_scale: int | None = None
        self.scale_states = ["pending"] * schedule.scale_count
        self.scale_ssim: list = [None] * schedule.scale_count
        self.records: list[ScaleRecord] = []
        self.events: list[dict] = []
        self.gate = PublicationGate(self._publish_scale)
        self.thread: threading.Thread | None = None

    # -- persistence ------------------------------------------------------

    def _write_json(self, name: str, payload: dict) -> None:
        tmp = self.root / f".{name}.tmp"
        tmp.write_text(json.dumps(payload, sort_keys=True, indent=1))
        os.replace(tmp, self.root / name)

    def _manifest(self) -> BundleManifest:
        return BundleManifest(
            format_version=1,
            job_id=self.content_job_id,
            source_image_hash=self.source_hash,
            schedule=self.schedule,
            best_scale=self.best_scale,
            threshold=self.config.ssim_threshold,
            seed=self.config.seed,
            scales=tuple(self.records),
        )

    def _write_manifest(self) -> None:
        tmp = self.root / ".manifest.tmp"
        tmp.write_bytes(manifest_json(self._manifest()))
        os.replace(tmp, self.root / "manifest.json")

    def _append_event(self, event: str, data: dict) -> None:
        record = {"seq": len(self.events) + 1, "event": event, "data": data}
        with open(self.root / "events.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.events.append(record)

    def _write_job_state(self) -> None:
        self._write_json(
            "job.json",
            {
                "job_id": self.job_id,
                "mode": self.mode,
                "state": self.state,
                "best_scale": self.best_scale,
                "content_job_id": self.content_job_id,
                "scale_count": self.schedule.scale_count,
            },
        )

    # -- publication (lock held by callers) -------------------------------

    def _publish_scale(self, index: int, payload: _PublishPayload) -> None:
        offset = sum(r.blob_size for r in self.records)
        record = record_for_blob(
            index,
            payload.blob,
            payload.noise_amplitude,
            payload.fixed_rec_seed,
            payload.generator_param_count,
            payload.discriminator_param_count,
            offset,
        )
        tmp = self.root / f".scale_{index:04d}.tmp"
        tmp.write_bytes(payload.blob)
        os.replace(tmp, self.root / f"scale_{index:04d}.blob")
        self.records.append(record)
        self._write_manifest()
        self._append_event(
            "scale_ready",
            {"scale": index, "size": record.blob_size, "sha256": record.blob_sha256},
        )

    # -- trainer callbacks -------------------------------------------------

    def on_scale_state(self, index: int, state: str, payload: dict) -> None:
        with self.lock:
            if state == "running":
                self.scale_states[index] = "running"
            elif state == "cancelled":
                self.scale_states[index] = "cancelled"
                self._append_event("scale_cancelled", {"scale": index})
            elif state == "failed":
                self.scale_states[index] = "failed"
                self._append_event("scale_failed", {"scale": index})
            elif state == "done":
                self.scale_states[index] = "trained"
                self.scale_ssim[index] = payload.get("ssim")
                if self.mode == "progressive":
                    model = payload["model"]
                    self.gate.offer(index, _payload_from_model(model))

    def finish(self, result) -> None:
        with self.lock:
            self.best_scale = result.best_scale
            if self.mode == "progressive":
                pass  # scales already published as they landed
            elif self.mode == "baseline_serial":
                for i, model in enumerate(result.models):
                    if model is not None and i >= self.gate.published_count:
                        self.gate.offer(i, _payload_from_model(model))
            else:
                for i in range(result.best_scale + 1):
                    self.gate.offer(i, _payload_from_model(result.models[i]))
            self.state = "done"
            self._write_manifest()
            self._write_job_state()
            self._append_event("job_complete", {"best_scale": self.best_scale})

    def fail(self, message: str) -> None:
        with self.lock:
            self.state = "failed"
            self._write_job_state()
            self._append_event("job_failed", {"message": message})

    # -- read side ---------------------------------------------------------

    def status(self) -> dict:
        with self.lock:
            published = self.gate.published_count
            return {
                "job_id": self.job_id,
                "state": self.state,
                "mode": self.mode,
                "best_scale": self.best_scale,
                "scale_count": self.schedule.scale_count,
                "published_scales": published,
                "scales": [
                    {
                        "index": i,
                        "state": self.scale_states[i],
                        "published": i < published,
                        "ssim": self.scale_ssim[i],
                    }
                    for i in range(self.schedule.scale_count)
                ],
            }

    def manifest_bytes(self) -> bytes:
        with self.lock:
            return manifest_json(self._manifest())

    def blob_path(self, index: int) -> Path:
        return self.root / f"scale_{index:04d}.blob"

    def scale_response_state(self, index: int) -> str:
        with self.lock:
            if index >= self.schedule.scale_count:
                return "unknown"
            if index < self.gate.published_count:
                return "ready"
            return "pending"

    def events_snapshot(self, after_seq: int = 0) -> list[dict]:
        with self.lock:
            return [e for e in self.events if e["seq"] > after_seq]

    def is_terminal(self) -> bool:
        with self.lock:
            return self.state in ("done", "failed")

    def assembled_bundle(self) -> TrainedBundle:
        """Bundle of the currently published prefix, read from disk."""
        with self.lock:
            manifest = self._manifest()
            blobs = tuple(
                self.blob_path(r.scale_index).read_bytes() for r in manifest.scales
            )
        bundle = TrainedBundle(manifest=manifest, blobs=blobs)
        validate_bundle(bundle)
        return bundle


# ---------------------------------------------------------------------------
# Image payload helpers
# ---------------------------------------------------------------------------

def image_from_png_bytes(data: bytes) -> np.ndarray:
    return load_image(io.BytesIO(data))


def image_to_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    save_image(buf, image, format="PNG")
    return buf.getvalue()


def _decode_b64_image(field: str, payload: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(payload[field])
        return image_from_png_bytes(raw)
    except KeyError:
        raise ValueError(f"missing field {field!r}")
    except Exception as exc:
        raise ValueError(f"field {field!r} is not a decodable image: {exc}")


def _decode_mask(payload: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(payload["mask_png_b64"])
    except KeyError:
        raise ValueError("missing field 'mask_png_b64'")
    plane = np.asarray(Image.open(io.BytesIO(raw)).convert("L"))
    return plane > 0


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code, "message": message})


# ---------------------------------------------------------------------------
# App factory
# ---------------------------------------------------------------------------

def create_app(data_dir) -> FastAPI:
    data_dir = Path(data_dir)
    jobs_dir = data_dir / "jobs"
    jobs_dir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="setgan server")
    jobs: dict[str, JobRuntime] = {}
    registry_lock = threading.Lock()

    def _get_job(job_id: str) -> JobRuntime | None:
        with registry_lock:
            return jobs.get(job_id)

    def _auth(job: JobRuntime, authorization: str | None):
        if authorization is None:
            return _error(401, "unauthorized", "missing bearer token")
        expected = f"Bearer {job.token}"
        if authorization != expected:
            return _error(403, "forbidden", "wrong token for this job")
        return None

    def _run_job(job: JobRuntime, image: np.ndarray):
        try:
            result = train_all_parallel(
                image, job.config, mode=job.mode, on_scale_state=job.on_scale_state
            )
            job.finish(result)
        except TrainingJobFailed as exc:
            log.error("job %s failed: %s", job.job_id, exc)
            job.fail(str(exc))
        except Exception as exc:  # defensive: never leave a job hanging
            log.exception("job %s crashed", job.job_id)
            job.fail(f"internal error: {exc}")

    @app.post("/jobs")
    async def submit_train(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "bad_request", "body must be JSON")
        mode = payload.get("mode", MODE_PARALLEL_ONESHOT)
        if mode not in DELIVERY_MODES:
            return _error(400, "bad_request", f"unknown mode {mode!r}")
        try:
            config = TrainConfig(**payload.get("config", {}))
        except (TypeError, ValueError) as exc:
            return _error(400, "bad_request", f"bad config: {exc}")
        try:
            image = _decode_b64_image("image_png_b64", payload)
            schedule = compute_scale_schedule(
                grid_dims(image), config.max_dim, config.min_dim, config.r_target
            )
        except (ValueError, PyramidError) as exc:
            return _error(400, "bad_request", str(exc))

        source = resize_image(image, schedule.dims[-1])
        source_hash = source_image_hash(source)
        job_id = uuid.uuid4().hex[:12]
        token = secrets.token_hex(16)
        root = jobs_dir / job_id
        root.mkdir(parents=True)
        (root / "token").write_text(token)
        (root / "image.png").write_bytes(base64.b64decode(payload["image_png_b64"]))
        job = JobRuntime(
            root=root,
            job_id=job_id,
            token=token,
            mode=mode,
            config=config,
            schedule=schedule,
            source_hash=source_hash,
            content_job_id=derive_job_id(source_hash, config.job_fields()),
        )
        job._write_job_state()
        job._write_manifest()
        with registry_lock:
            jobs[job_id] = job
        thread = threading.Thread(target=_run_job, args=(job, image), daemon=True)
        job.thread = thread
        thread.start()
        return JSONResponse(
            status_code=201,
            content={
                "job_id": job_id,
                "token": token,
                "scale_count": schedule.scale_count,
                "content_job_id": job.content_job_id,
            },
        )

    @app.get("/jobs/{job_id}/status")
    async def get_status(job_id: str, authorization: str | None = Header(default=None)):
        job = _get_job(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        denied = _auth(job, authorization)
        if denied is not None:
            return denied
        return job.status()

    @app.get("/jobs/{job_id}/manifest")
    async def get_manifest(job_id: str, authorization: str | None = Header(default=None)):
        job = _get_job(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        denied = _auth(job, authorization)
        if denied is not None:
            return denied
        return Response(content=job.manifest_bytes(), media_type="application/json")

    @app.get("/jobs/{job_id}/scales/{index}")
    async def get_scale(
        job_id: str, index: int, authorization: str | None = Header(default=None)
    ):
        job = _get_job(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        denied = _auth(job, authorization)
        if denied is not None:
            return denied
        state = job.scale_response_state(index)
        if state == "unknown":
            return _error(404, "unknown_scale", f"scale {index} outside the schedule")
        if state == "pending":
            return JSONResponse(status_code=202, content={"state": "pending"})
        with job.lock:
            record = job.records[index]
        return Response(
            content=job.blob_path(index).read_bytes(),
            media_type="application/octet-stream",
            headers={"X-Blob-Sha256": record.blob_sha256},
        )

    @app.get("/jobs/{job_id}/events")
    async def subscribe_progress(
        job_id: str,
        request: Request,
        authorization: str | None = Header(default=None),
        last_event_id: int = 0,
    ):
        job = _get_job(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        denied = _auth(job, authorization)
        if denied is not None:
            return denied

        async def stream():
            cursor = last_event_id
            while True:
                for event in job.events_snapshot(after_seq=cursor):
                    cursor = event["seq"]
                    data = json.dumps(event["data"], sort_keys=True)
                    yield f"id: {event['seq']}\nevent: {event['event']}\ndata: {data}\n\n"
                if job.is_terminal() and not job.events_snapshot(after_seq=cursor):
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(EVENT_POLL_SECONDS)

        return StreamingResponse(stream(), media_type="text/event-stream")

    # -- edge runtime -------------------------------------------------------

    @app.post("/edge/jobs/{job_id}/edits")
    async def edge_edit(
        job_id: str, request: Request, authorization: str | None = Header(default=None)
    ):
        job = _get_job(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        denied = _auth(job, authorization)
        if denied is not None:
            return denied
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "bad_request", "body must be JSON")
        kind = payload.get("kind")
        seed = int(payload.get("seed", 0))
        try:
            bundle = job.assembled_bundle()
            if bundle.scale_count_available == 0:
                return _error(409, "not_ready", "no scales published yet")
            if kind == "generate":
                up_to = int(payload.get("up_to_scale", bundle.scale_count_available - 1))
                result = generate(bundle, GenerationRequest(up_to_scale=up_to, seed=seed))
            elif kind == "paint":
                image = _decode_b64_image("image_png_b64", payload)
                result = editor_apps.paint2image(
                    bundle, image, int(payload.get("at_scale", 1)), seed
                )
            elif kind == "harmonize":
                image = _decode_b64_image("image_png_b64", payload)
                mask = _decode_mask(payload)
                at_scale = payload.get("at_scale")
                result = editor_apps.harmonize(
                    bundle, image, mask, None if at_scale is None else int(at_scale), seed
                )
            elif kind == "edit":
                image = _decode_b64_image("image_png_b64", payload)
                mask = _decode_mask(payload)
                result = editor_apps.edit(
                    bundle, image, mask, int(payload.get("at_scale", 2)), seed
                )
            elif kind == "super_resolution":
                image = _decode_b64_image("image_png_b64", payload)
                k = int(payload.get("passes", 1))
                s = float(payload.get("factor", bundle.manifest.schedule.factor ** k))
                result = editor_apps.super_resolution(bundle, image, s, k, seed)
            else:
                return _error(400, "bad_request", f"unknown edit kind {kind!r}")
        except ScaleUnavailable as exc:
            return _error(409, exc.code, str(exc))
        except (editor_apps.EditError, RequestError, PyramidError, ValueError) as exc:
            return _error(400, "bad_request", str(exc))
        png = image_to_png_bytes(result)
        return {
            "result_png_b64": base64.b64encode(png).decode(),
            "sha256": hashlib.sha256(png).hexdigest(),
            "dims": list(grid_dims(result)),
            "available_scales": bundle.scale_count_available,
        }

    @app.get("/edge/jobs/{job_id}/profile")
    async def edge_profile(
        job_id: str, authorization: str | None = Header(default=None)
    ):
        job = _get_job(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        denied = _auth(job, authorization)
        if denied is not None:
            return denied
        bundle = job.assembled_bundle()
        if bundle.scale_count_available == 0:
            return _error(409, "not_ready", "no scales published yet")
        report = profiler.profile_generation(
            bundle,
            GenerationRequest(up_to_scale=bundle.scale_count_available - 1),
            trace_source=profiler.SOURCE_SYNTHETIC,
        )
        return profiler.report_to_dict(report)

    return app
