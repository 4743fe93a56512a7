"""Bundle serialization and the training/delivery server and client."""

from .format import (
    BUNDLE_EXTENSION,
    FORMAT_VERSION,
    BundleError,
    BundleManifest,
    CorruptStream,
    HashMismatch,
    ScaleRecord,
    TrainedBundle,
    TruncatedBlob,
    VersionMismatch,
    build_bundle,
    compress_bundle,
    decompress_bundle,
    deserialize_bundle,
    derive_job_id,
    load_scale_model,
    read_bundle_file,
    serialize_bundle,
    source_image_hash,
    validate_bundle,
    write_bundle_file,
)

__all__ = [
    "BUNDLE_EXTENSION",
    "FORMAT_VERSION",
    "BundleError",
    "BundleManifest",
    "CorruptStream",
    "HashMismatch",
    "ScaleRecord",
    "TrainedBundle",
    "TruncatedBlob",
    "VersionMismatch",
    "build_bundle",
    "compress_bundle",
    "decompress_bundle",
    "deserialize_bundle",
    "derive_job_id",
    "load_scale_model",
    "read_bundle_file",
    "serialize_bundle",
    "source_image_hash",
    "validate_bundle",
    "write_bundle_file",
]
