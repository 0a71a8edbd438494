"""Binary persistence: tensor blobs, named-parameter manifests, checkpoints.

Tensor wire layout is little-endian: u32 rank, u32 per-axis extents, then the
row-major float64 payload.  A checkpoint is a magic header, a JSON metadata
block (parameter manifest, optimizer step counts, RNG state, training-stage
fields), and one blob group per parameter (value, Adam moments, optional
power-iteration vector).

Writes are atomic: serialize to a temp file in the target directory, then
``os.replace``.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from typing import Any, BinaryIO

import numpy as np

from .errors import DataError
from .tensor import Parameter, ParamDict

MAGIC = b"ARLC"
VERSION = 1


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8").tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    raw = fh.read(4)
    if len(raw) != 4:
        raise DataError("truncated tensor blob (rank)")
    rank, = struct.unpack("<I", raw)
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise DataError("truncated tensor blob (extents)")
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise DataError("truncated tensor blob (payload)")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(raw))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, params: ParamDict, meta: dict[str, Any]) -> None:
    """Serialize named parameters plus run metadata.

    ``meta`` must be JSON-serializable; parameter names, shapes, and Adam step
    counts are recorded in the manifest automatically.
    """
    names = sorted(params)
    manifest = {
        "names": names,
        "adam_t": {n: params[n].adam_t for n in names},
        "has_power_vec": {n: params[n].power_vec is not None for n in names},
    }
    header = dict(meta)
    header["manifest"] = manifest
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(header_bytes)))
    buf.write(header_bytes)
    for n in names:
        p = params[n]
        write_tensor(buf, p.tensor.data)
        write_tensor(buf, p.adam_m)
        write_tensor(buf, p.adam_v)
        if p.power_vec is not None:
            write_tensor(buf, p.power_vec)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str) -> tuple[ParamDict, dict[str, Any]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        hlen, = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        manifest = header.pop("manifest")
        params: ParamDict = {}
        for n in manifest["names"]:
            data = read_tensor(fh)
            p = Parameter(data)
            p.adam_m = read_tensor(fh)
            p.adam_v = read_tensor(fh)
            p.adam_t = int(manifest["adam_t"][n])
            if manifest["has_power_vec"][n]:
                p.power_vec = read_tensor(fh)
            else:
                p.power_vec = None
            params[n] = p
    return params, header


def rng_state(rng: np.random.Generator) -> dict[str, Any]:
    return rng.bit_generator.state


def restore_rng(state: dict[str, Any]) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
