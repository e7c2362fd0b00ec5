"""Binary weight-bundle format.

Layout (all integers little-endian):

    magic            4 bytes  b"ECGB"
    format_version   u32
    config_len       u32      followed by config_len bytes of UTF-8 JSON
    tensor_count     u32
    per tensor:
        name_len     u16      followed by name_len bytes of UTF-8
        ndim         u8
        dims         ndim * u32
        data         prod(dims) * 8 bytes of float64
    checksum         u32      CRC32 of every preceding byte

The full byte layout is documented in docs/weight-format.md.
"""

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

MAGIC = b"ECGB"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """Malformed or unreadable weight bundle."""


class VersionMismatch(BundleError):
    pass


class TruncatedStream(BundleError):
    pass


class ChecksumMismatch(BundleError):
    pass


@dataclass
class WeightBundle:
    """A model's architecture hyperparameters plus its named parameter tensors."""

    model_config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        converted = {}
        for name, arr in self.tensors.items():
            # note: ascontiguousarray would promote 0-d tensors to 1-d
            converted[name] = np.asarray(arr, dtype=np.float64, order="C")
        self.tensors = converted


def save_bundle(bundle: WeightBundle, sink: BinaryIO) -> int:
    """Write the bundle;  returns the number of bytes written."""
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", bundle.format_version))
    config_bytes = json.dumps(bundle.model_config, sort_keys=True).encode("utf-8")
    body.write(struct.pack("<I", len(config_bytes)))
    body.write(config_bytes)
    body.write(struct.pack("<I", len(bundle.tensors)))
    for name, arr in bundle.tensors.items():
        name_bytes = name.encode("utf-8")
        body.write(struct.pack("<H", len(name_bytes)))
        body.write(name_bytes)
        body.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            body.write(struct.pack("<I", dim))
        body.write(arr.astype("<f8", copy=False).tobytes())
    payload = body.getvalue()
    checksum = zlib.crc32(payload) & 0xFFFFFFFF
    sink.write(payload)
    sink.write(struct.pack("<I", checksum))
    return len(payload) + 4


def load_bundle(source: BinaryIO) -> WeightBundle:
    """Read and verify a bundle written by save_bundle."""
    blob = source.read()
    if len(blob) < len(MAGIC) + 4 + 4 + 4 + 4:
        raise TruncatedStream(f"bundle too short: {len(blob)} bytes")
    payload, checksum_bytes = blob[:-4], blob[-4:]
    (stored_checksum,) = struct.unpack("<I", checksum_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_checksum:
        raise ChecksumMismatch("bundle checksum does not match contents")

    view = io.BytesIO(payload)

    def read_exact(n: int) -> bytes:
        chunk = view.read(n)
        if len(chunk) != n:
            raise TruncatedStream(f"expected {n} bytes, got {len(chunk)}")
        return chunk

    if read_exact(4) != MAGIC:
        raise BundleError("bad magic: not a weight bundle")
    (version,) = struct.unpack("<I", read_exact(4))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"bundle format version {version}, expected {FORMAT_VERSION}")
    (config_len,) = struct.unpack("<I", read_exact(4))
    try:
        config = json.loads(read_exact(config_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"bad embedded config: {exc}") from exc
    (count,) = struct.unpack("<I", read_exact(4))

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read_exact(2))
        name = read_exact(name_len).decode("utf-8")
        if name in tensors:
            raise BundleError(f"duplicate tensor name {name!r}")
        (ndim,) = struct.unpack("<B", read_exact(1))
        shape = tuple(struct.unpack("<I", read_exact(4))[0] for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(read_exact(n_values * 8), dtype="<f8").reshape(shape)
        tensors[name] = data.copy()
    if view.read(1):
        raise BundleError("trailing bytes after final tensor record")
    return WeightBundle(model_config=config, tensors=tensors, format_version=version)


def save_bundle_bytes(bundle: WeightBundle) -> bytes:
    sink = io.BytesIO()
    save_bundle(bundle, sink)
    return sink.getvalue()


def load_bundle_bytes(blob: bytes) -> WeightBundle:
    return load_bundle(io.BytesIO(blob))


def save_bundle_file(bundle: WeightBundle, path) -> int:
    with open(path, "wb") as fh:
        return save_bundle(bundle, fh)


def load_bundle_file(path) -> WeightBundle:
    with open(path, "rb") as fh:
        return load_bundle(fh)
