"""On-disk and on-wire bundle format.

A serialized bundle is:

    magic "SETB" | u16 version | u64 manifest length | manifest JSON |
    per-scale parameter blobs, concatenated in scale order

Blobs are raw little-endian float32: all generator parameters in stable
enumeration order, then all discriminator parameters. The manifest is
human-readable JSON carrying the schedule, seeds, noise amplitudes and
per-scale sizes/offsets/hashes. The compressed container wraps those
bytes with a checksum:

    magic "SETZ" | u16 version | sha256(raw) | u64 raw length | zlib data
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .. import gan_models
from ..gan_models import ScaleModel
from ..pyramid import ScaleSchedule

FORMAT_VERSION = 1
BUNDLE_EXTENSION = ".setgan"

_MAGIC = b"SETB"
_MAGIC_Z = b"SETZ"
_HEAD = struct.Struct("<4sHQ")
_HEAD_Z = struct.Struct("<4sH32sQ")


class BundleError(Exception):
    """Base for malformed or inconsistent bundle payloads."""

    code = "bundle_error"


class VersionMismatch(BundleError):
    code = "version_mismatch"


class HashMismatch(BundleError):
    code = "hash_mismatch"


class TruncatedBlob(BundleError):
    code = "truncated_blob"


class CorruptStream(BundleError):
    code = "corrupt_stream"


@dataclass(frozen=True)
class ScaleRecord:
    scale_index: int
    noise_amplitude: float
    fixed_rec_seed: int
    generator_param_count: int
    discriminator_param_count: int
    blob_size: int
    blob_offset: int
    blob_sha256: str


@dataclass(frozen=True)
class BundleManifest:
    format_version: int
    job_id: str
    source_image_hash: str
    schedule: ScaleSchedule
    best_scale: int | None
    threshold: float
    seed: int
    scales: tuple[ScaleRecord, ...]


@dataclass(frozen=True)
class TrainedBundle:
    manifest: BundleManifest
    blobs: tuple[bytes, ...]

    @property
    def scale_count_available(self) -> int:
        return len(self.blobs)


def source_image_hash(image: np.ndarray) -> str:
    """Content hash of an image grid (little-endian float32 raster)."""
    return hashlib.sha256(np.asarray(image, dtype="<f4").tobytes()).hexdigest()


def derive_job_id(source_hash: str, config_fields: dict) -> str:
    """Deterministic job identity from the source image and the knobs that
    shape the trained parameters. Transport-level job handles are separate."""
    canon = json.dumps(config_fields, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(f"{source_hash}|{canon}".encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def scale_blob(model: ScaleModel) -> bytes:
    g = gan_models.export_params(model.generator).astype("<f4")
    d = gan_models.export_params(model.discriminator).astype("<f4")
    return g.tobytes() + d.tobytes()


def record_for_blob(
    index: int,
    blob: bytes,
    noise_amplitude: float,
    fixed_rec_seed: int,
    generator_param_count: int,
    discriminator_param_count: int,
    offset: int,
) -> ScaleRecord:
    """Single construction point so every publisher hashes identically."""
    return ScaleRecord(
        scale_index=index,
        noise_amplitude=float(noise_amplitude),
        fixed_rec_seed=int(fixed_rec_seed),
        generator_param_count=int(generator_param_count),
        discriminator_param_count=int(discriminator_param_count),
        blob_size=len(blob),
        blob_offset=offset,
        blob_sha256=hashlib.sha256(blob).hexdigest(),
    )


def build_bundle(
    models: list[ScaleModel],
    schedule: ScaleSchedule,
    source_hash: str,
    threshold: float,
    seed: int,
    best_scale: int | None,
    job_id: str,
) -> TrainedBundle:
    """Pack trained scale models (a prefix 0..k) into a bundle."""
    records = []
    blobs = []
    offset = 0
    for i, model in enumerate(models):
        if model.scale_index != i:
            raise BundleError(f"models must form a prefix; got scale {model.scale_index} at slot {i}")
        blob = scale_blob(model)
        records.append(
            record_for_blob(
                i,
                blob,
                model.noise_amplitude,
                model.fixed_rec_seed,
                sum(p.numel() for p in model.generator.parameters()),
                sum(p.numel() for p in model.discriminator.parameters()),
                offset,
            )
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = BundleManifest(
        format_version=FORMAT_VERSION,
        job_id=job_id,
        source_image_hash=source_hash,
        schedule=schedule,
        best_scale=best_scale,
        threshold=float(threshold),
        seed=int(seed),
        scales=tuple(records),
    )
    return TrainedBundle(manifest=manifest, blobs=tuple(blobs))


def validate_bundle(bundle: TrainedBundle) -> None:
    """Check the prefix/size/hash invariants; raises on violation."""
    m = bundle.manifest
    if len(bundle.blobs) != len(m.scales):
        raise BundleError("blob count does not match manifest scale records")
    offset = 0
    for i, (rec, blob) in enumerate(zip(m.scales, bundle.blobs)):
        if rec.scale_index != i:
            raise BundleError(f"scale records must form a prefix; slot {i} holds {rec.scale_index}")
        if rec.blob_offset != offset:
            raise BundleError(f"scale {i} offset {rec.blob_offset} != expected {offset}")
        if rec.blob_size != len(blob):
            raise TruncatedBlob(f"scale {i} blob is {len(blob)} bytes, manifest says {rec.blob_size}")
        digest = hashlib.sha256(blob).hexdigest()
        if digest != rec.blob_sha256:
            raise HashMismatch(f"scale {i} blob hash {digest} != manifest {rec.blob_sha256}")
        offset += rec.blob_size
    if m.best_scale is not None and m.scales and not (0 <= m.best_scale < m.schedule.scale_count):
        raise BundleError(f"best_scale {m.best_scale} outside schedule")


# ---------------------------------------------------------------------------
# Manifest JSON
# ---------------------------------------------------------------------------

def manifest_to_dict(m: BundleManifest) -> dict:
    return {
        "format_version": m.format_version,
        "job_id": m.job_id,
        "source_image_hash": m.source_image_hash,
        "schedule": {
            "scale_count": m.schedule.scale_count,
            "factor": m.schedule.factor,
            "dims": [list(d) for d in m.schedule.dims],
            "min_dim": m.schedule.min_dim,
            "max_dim": m.schedule.max_dim,
        },
        "best_scale": m.best_scale,
        "threshold": m.threshold,
        "seed": m.seed,
        "scales": [
            {
                "scale_index": r.scale_index,
                "noise_amplitude": r.noise_amplitude,
                "fixed_rec_seed": r.fixed_rec_seed,
                "generator_param_count": r.generator_param_count,
                "discriminator_param_count": r.discriminator_param_count,
                "blob_size": r.blob_size,
                "blob_offset": r.blob_offset,
                "blob_sha256": r.blob_sha256,
            }
            for r in m.scales
        ],
    }


def manifest_from_dict(d: dict) -> BundleManifest:
    try:
        sched = d["schedule"]
        schedule = ScaleSchedule(
            scale_count=sched["scale_count"],
            factor=sched["factor"],
            dims=tuple(tuple(x) for x in sched["dims"]),
            min_dim=sched["min_dim"],
            max_dim=sched["max_dim"],
        )
        return BundleManifest(
            format_version=d["format_version"],
            job_id=d["job_id"],
            source_image_hash=d["source_image_hash"],
            schedule=schedule,
            best_scale=d["best_scale"],
            threshold=d["threshold"],
            seed=d["seed"],
            scales=tuple(
                ScaleRecord(
                    scale_index=r["scale_index"],
                    noise_amplitude=r["noise_amplitude"],
                    fixed_rec_seed=r["fixed_rec_seed"],
                    generator_param_count=r["generator_param_count"],
                    discriminator_param_count=r["discriminator_param_count"],
                    blob_size=r["blob_size"],
                    blob_offset=r["blob_offset"],
                    blob_sha256=r["blob_sha256"],
                )
                for r in d["scales"]
            ),
        )
    except (KeyError, TypeError) as exc:
        raise BundleError(f"malformed manifest: {exc}") from exc


def manifest_json(m: BundleManifest) -> bytes:
    # Sorted keys so byte equality follows from content equality.
    return json.dumps(manifest_to_dict(m), sort_keys=True, indent=1).encode()


# ---------------------------------------------------------------------------
# Wire encoding
# ---------------------------------------------------------------------------

def serialize_bundle(bundle: TrainedBundle) -> bytes:
    validate_bundle(bundle)
    manifest = manifest_json(bundle.manifest)
    head = _HEAD.pack(_MAGIC, FORMAT_VERSION, len(manifest))
    return head + manifest + b"".join(bundle.blobs)


def deserialize_bundle(data: bytes) -> TrainedBundle:
    if len(data) < _HEAD.size:
        raise TruncatedBlob("shorter than the fixed header")
    magic, version, manifest_len = _HEAD.unpack_from(data)
    if magic != _MAGIC:
        raise BundleError("bad magic; not a bundle")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, reader supports {FORMAT_VERSION}")
    body = data[_HEAD.size :]
    if len(body) < manifest_len:
        raise TruncatedBlob("manifest extends past end of data")
    try:
        manifest = manifest_from_dict(json.loads(body[:manifest_len]))
    except json.JSONDecodeError as exc:
        raise BundleError(f"manifest is not valid JSON: {exc}") from exc
    blob_bytes = body[manifest_len:]
    blobs = []
    for rec in manifest.scales:
        end = rec.blob_offset + rec.blob_size
        if end > len(blob_bytes):
            raise TruncatedBlob(f"scale {rec.scale_index} blob extends past end of data")
        blobs.append(bytes(blob_bytes[rec.blob_offset : end]))
    bundle = TrainedBundle(manifest=manifest, blobs=tuple(blobs))
    validate_bundle(bundle)
    return bundle


def write_bundle_file(path, bundle: TrainedBundle, compressed: bool = False) -> None:
    data = serialize_bundle(bundle)
    if compressed:
        data = compress_bundle(data)
    with open(path, "wb") as fh:
        fh.write(data)


def read_bundle_file(path) -> TrainedBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == _MAGIC_Z:
        data = decompress_bundle(data)
    return deserialize_bundle(data)


# ---------------------------------------------------------------------------
# Compression container
# ---------------------------------------------------------------------------

def compress_bundle(data: bytes) -> bytes:
    digest = hashlib.sha256(data).digest()
    head = _HEAD_Z.pack(_MAGIC_Z, FORMAT_VERSION, digest, len(data))
    return head + zlib.compress(data, 9)


def decompress_bundle(data: bytes) -> bytes:
    if len(data) < _HEAD_Z.size:
        raise CorruptStream("shorter than the compression header")
    magic, version, digest, raw_len = _HEAD_Z.unpack_from(data)
    if magic != _MAGIC_Z:
        raise CorruptStream("bad magic; not a compressed bundle")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"compressed format version {version}, reader supports {FORMAT_VERSION}")
    try:
        raw = zlib.decompress(data[_HEAD_Z.size :])
    except zlib.error as exc:
        raise CorruptStream(f"inflate failed: {exc}") from exc
    if len(raw) != raw_len or hashlib.sha256(raw).digest() != digest:
        raise CorruptStream("checksum mismatch after decompression")
    return raw


# ---------------------------------------------------------------------------
# Model reconstruction
# ---------------------------------------------------------------------------

def load_scale_model(bundle: TrainedBundle, scale_index: int) -> ScaleModel:
    """Materialize one scale's networks from the bundle blob."""
    if scale_index >= len(bundle.blobs):
        raise BundleError(f"scale {scale_index} unavailable; bundle holds 0..{len(bundle.blobs) - 1}")
    rec = bundle.manifest.scales[scale_index]
    blob = bundle.blobs[scale_index]
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float32)
    gen = gan_models.ScaleGenerator(
        gan_models.channels_for_scale(scale_index), coarsest=scale_index == 0
    )
    disc = gan_models.ScaleDiscriminator(gan_models.channels_for_scale(scale_index))
    g_count = rec.generator_param_count
    gan_models.import_params(gen, flat[:g_count])
    gan_models.import_params(disc, flat[g_count:])
    return ScaleModel(
        scale_index=scale_index,
        generator=gen,
        discriminator=disc,
        noise_amplitude=rec.noise_amplitude,
        fixed_rec_seed=rec.fixed_rec_seed,
    )
