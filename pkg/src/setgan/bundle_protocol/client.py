"""Edge-side client: submits jobs, follows progress, assembles bundles.

Every blob is hash-verified against the manifest on receipt. Assembly
returns whatever prefix of scales the server has published, flagged as
refreshable while more scales can still arrive.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass

import httpx

from .format import BundleError, TrainedBundle, manifest_from_dict, validate_bundle


class ProtocolError(RuntimeError):
    code = "protocol_error"


class JobNotFound(ProtocolError):
    code = "unknown_job"


class NotReady(ProtocolError):
    """No scale published yet; retry after progress events arrive."""

    code = "not_ready"


class ScalePending(ProtocolError):
    code = "scale_pending"


class TransportHashMismatch(ProtocolError):
    code = "hash_mismatch"


@dataclass(frozen=True)
class AssembledBundle:
    bundle: TrainedBundle
    refreshable: bool


@dataclass(frozen=True)
class ProgressEvent:
    seq: int
    event: str
    data: dict


class BundleClient:
    """Thin wrapper over the HTTP endpoints; one instance per server."""

    def __init__(
        self,
        base_url: str = "http://127.0.0.1:8000",
        token: str | None = None,
        http: httpx.Client | None = None,
    ):
        self._own_http = http is None
        self._http = http if http is not None else httpx.Client(base_url=base_url, timeout=60.0)
        self.token = token

    def close(self):
        if self._own_http:
            self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- helpers -----------------------------------------------------------

    def _headers(self) -> dict:
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}

    def _send(self, method: str, url: str, **kw) -> httpx.Response:
        # connection refusals and timeouts surface as the same typed error
        # as bad responses, so callers never see raw transport exceptions
        try:
            return self._http.request(method, url, **kw)
        except httpx.HTTPError as exc:
            raise ProtocolError(f"transport failure: {exc}") from exc

    def _check(self, response: httpx.Response) -> httpx.Response:
        if response.status_code == 404:
            raise JobNotFound(self._message(response))
        if response.status_code >= 400:
            raise ProtocolError(f"{response.status_code}: {self._message(response)}")
        return response

    @staticmethod
    def _message(response: httpx.Response) -> str:
        try:
            body = response.json()
            return f"{body.get('error')}: {body.get('message')}"
        except Exception:
            return response.text

    # -- endpoints -----------------------------------------------------------

    def submit_train(
        self, image_png: bytes, config: dict | None = None, mode: str = "parallel_oneshot"
    ) -> dict:
        """Create a training job; stores and returns its id and token."""
        payload = {
            "image_png_b64": base64.b64encode(image_png).decode(),
            "mode": mode,
            "config": config or {},
        }
        response = self._check(self._send("POST", "/jobs", json=payload))
        body = response.json()
        self.token = body["token"]
        return body

    def get_status(self, job_id: str) -> dict:
        response = self._check(
            self._send("GET", f"/jobs/{job_id}/status", headers=self._headers())
        )
        return response.json()

    def get_manifest(self, job_id: str) -> dict:
        response = self._check(
            self._send("GET", f"/jobs/{job_id}/manifest", headers=self._headers())
        )
        return response.json()

    def get_scale(self, job_id: str, index: int) -> bytes:
        """Fetch one published blob, verifying its transport hash."""
        response = self._send(
            "GET", f"/jobs/{job_id}/scales/{index}", headers=self._headers()
        )
        if response.status_code == 202:
            raise ScalePending(f"scale {index} not published yet")
        self._check(response)
        blob = response.content
        expected = response.headers.get("X-Blob-Sha256")
        if expected is not None and hashlib.sha256(blob).hexdigest() != expected:
            raise TransportHashMismatch(f"scale {index} blob does not match its hash")
        return blob

    def subscribe_progress(self, job_id: str, last_event_id: int = 0):
        """Yield ProgressEvents (replayed history first, then live)."""
        params = {"last_event_id": last_event_id} if last_event_id else {}
        try:
            with self._http.stream(
                "GET", f"/jobs/{job_id}/events", headers=self._headers(), params=params
            ) as response:
                if response.status_code >= 400:
                    response.read()
                    self._check(response)
                seq = last_event_id
                event_name = None
                data = None
                for line in response.iter_lines():
                    if line.startswith("id:"):
                        seq = int(line[3:].strip())
                    elif line.startswith("event:"):
                        event_name = line[6:].strip()
                    elif line.startswith("data:"):
                        data = json.loads(line[5:].strip())
                    elif line == "" and event_name is not None:
                        yield ProgressEvent(seq=seq, event=event_name, data=data or {})
                        event_name = None
                        data = None
        except httpx.HTTPError as exc:
            raise ProtocolError(f"transport failure: {exc}") from exc

    def assemble(self, job_id: str) -> AssembledBundle:
        """Build the bundle of every published scale (a strict prefix).

        Raises NotReady before the first scale lands. The refreshable
        flag is set while the server may still publish more scales.
        """
        manifest_dict = self.get_manifest(job_id)
        manifest = manifest_from_dict(manifest_dict)
        if not manifest.scales:
            raise NotReady(f"job {job_id} has no published scales yet")
        blobs = []
        for record in manifest.scales:
            blob = self.get_scale(job_id, record.scale_index)
            if hashlib.sha256(blob).hexdigest() != record.blob_sha256:
                raise TransportHashMismatch(
                    f"scale {record.scale_index} blob does not match the manifest"
                )
            blobs.append(blob)
        bundle = TrainedBundle(manifest=manifest, blobs=tuple(blobs))
        try:
            validate_bundle(bundle)
        except BundleError as exc:
            raise ProtocolError(f"assembled bundle invalid: {exc}") from exc
        status = self.get_status(job_id)
        # Once a job is terminal no further scales can arrive, whatever
        # the published prefix length (one-shot sends only 0..best).
        refreshable = status["state"] == "running"
        return AssembledBundle(bundle=bundle, refreshable=refreshable)
