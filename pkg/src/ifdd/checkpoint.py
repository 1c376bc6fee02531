"""Model checkpoints: "IFDDCKPT" magic, version, config echo, then one
(name, shape, dtype, little-endian data) record per parameter."""

import json
import struct
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"IFDDCKPT"
CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class CheckpointError(Exception):
    pass


def save_checkpoint(path, config, params):
    """Write config echo plus every named parameter tensor."""
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            arr = tensor.data
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _DTYPE_CODES[np.dtype(arr.dtype)], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Read back (config, {name: array}); validates magic and version."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 14 or raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<H", raw, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    (blob_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config = json.loads(raw[off : off + blob_len].decode("utf-8"))
    off += blob_len
    (n_params,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: parameter {name}: unknown dtype code {code}")
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        nbytes = count * dtype.itemsize
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: parameter {name}: truncated data")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape)
        params[name] = arr.copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return config, params


def apply_params(model, loaded):
    """Install loaded arrays into a model; names and shapes must match."""
    registry = model.params()
    missing = set(registry) - set(loaded)
    unknown = set(loaded) - set(registry)
    if missing:
        raise CheckpointError(f"checkpoint is missing parameter {sorted(missing)[0]!r}")
    if unknown:
        raise CheckpointError(f"checkpoint has unknown parameter {sorted(unknown)[0]!r}")
    for name, tensor in registry.items():
        arr = loaded[name]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise CheckpointError(
                f"checkpoint parameter {name!r} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(tensor.data.shape)}"
            )
        tensor.data = arr.astype(tensor.data.dtype, copy=True)
