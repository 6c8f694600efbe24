"""
Checkpoint File Format
----------------------
One file: an 8-byte magic, a little-endian uint32 format version, a uint64
manifest length, a UTF-8 JSON manifest (name, shape, dtype, byte offset per
tensor plus free-form metadata) and a flat little-endian payload.
"""

import json
import logging
import os
import struct
import tempfile

import numpy as np
import torch

from coca_cxr.errors import CheckpointCorruptError, CheckpointVersionError

logger = logging.getLogger(__name__)

MAGIC = b"COCACKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")

# Payload dtypes; uint8 carries RNG/byte state alongside the float tensors
_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
    "uint8": np.dtype("u1"),
}


def _as_numpy(value):
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def save_tensors(path, tensors, meta=None):
    """Atomically write `tensors` (name -> tensor/array) and JSON `meta` to `path`."""
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        array = _as_numpy(value)
        dtype_name = array.dtype.name
        if dtype_name not in _DTYPES:
            raise TypeError(f"unsupported checkpoint dtype {dtype_name} for {name}")
        blob = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
        entries.append({
            "name": name,
            "shape": list(array.shape),
            "dtype": dtype_name,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    manifest = json.dumps({"tensors": entries, "meta": meta or {}}).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)

    fd, tmp_path = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)))
            f.write(manifest)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.debug("wrote %d tensors (%d payload bytes) to %s", len(entries), offset, path)


def read_manifest(path):
    """Return (manifest dict, payload start offset) without reading the payload."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise CheckpointCorruptError(f"{path}: truncated header")
        magic, version, manifest_len = _HEADER.unpack(header)
        if magic != MAGIC:
            raise CheckpointCorruptError(f"{path}: not a coca_cxr checkpoint")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
        raw = f.read(manifest_len)
    if len(raw) < manifest_len:
        raise CheckpointCorruptError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw.decode("utf-8"))
        entries = manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointCorruptError(f"{path}: corrupt manifest ({e})") from e
    return manifest, _HEADER.size + manifest_len


def load_tensors(path):
    """Return (name -> numpy array, meta dict); arrays are bit-exact copies."""
    manifest, start = read_manifest(path)
    with open(path, "rb") as f:
        f.seek(start)
        payload = f.read()

    arrays = {}
    for entry in manifest["tensors"]:
        try:
            dtype = _DTYPES[entry["dtype"]]
            begin, nbytes = int(entry["offset"]), int(entry["nbytes"])
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointCorruptError(f"{path}: bad manifest entry {entry!r}") from e
        if begin + nbytes > len(payload):
            raise CheckpointCorruptError(f"{path}: payload truncated at tensor '{entry['name']}'")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise CheckpointCorruptError(f"{path}: size mismatch for tensor '{entry['name']}'")
        array = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=begin)
        arrays[entry["name"]] = array.reshape(shape).copy()
    return arrays, manifest.get("meta", {})
