"""Versioned checkpoint files.

Layout (little-endian)::

    b"F4CKCKPT"  u32 version
    u32 n  JSON model header (sorted keys)
    u32 n_params, then per parameter:
        u16 name length, utf-8 name, u8 ndim, u32 dims..., f32 payload
    u32 n  state blob: u32 m, JSON scalars/index (sorted keys), raw arrays

Array payloads in the state blob keep their own dtype, listed in the index.
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict

import numpy as np

from .errors import FormatError

MAGIC = b"F4CKCKPT"
VERSION = 1


def _dump_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _pack_state(state):
    scalars = {k: v for k, v in state.items() if not isinstance(v, (dict, np.ndarray))}
    arrays = []
    index = []
    for group, table in state.items():
        if not isinstance(table, dict):
            continue
        for name, arr in table.items():
            arr = np.asarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            index.append([group, name, list(arr.shape), le.dtype.str])
            arrays.append(np.ascontiguousarray(le).tobytes())
    head = _dump_json({"scalars": scalars, "index": index})
    return struct.pack("<I", len(head)) + head + b"".join(arrays)


def _unpack_state(blob):
    (m,) = struct.unpack_from("<I", blob)
    head = json.loads(blob[4:4 + m])
    state = dict(head["scalars"])
    pos = 4 + m
    for group, name, shape, dtype in head["index"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(blob, dtype=dt, count=n // dt.itemsize, offset=pos).reshape(shape)
        state.setdefault(group, OrderedDict())[name] = arr.astype(dt.newbyteorder("="))
        pos += n
    if pos != len(blob):
        raise FormatError("state blob has trailing bytes")
    return state


def save_checkpoint(path, header, params, state=None):
    """Write ``header`` (JSON-able dict), named parameters and an optional training state."""
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    h = _dump_json(header)
    buf.write(struct.pack("<I", len(h)) + h)
    buf.write(struct.pack("<I", len(params)))
    for name, p in params.items():
        data = p.data if hasattr(p, "data") else np.asarray(p)
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    blob = _pack_state(state or {})
    buf.write(struct.pack("<I", len(blob)) + blob)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return ``(header, params, state)``; params map names to float32 arrays."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        pos = 12
        (n,) = struct.unpack_from("<I", raw, pos)
        header = json.loads(raw[pos + 4:pos + 4 + n])
        pos += 4 + n
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params = OrderedDict()
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            (nd,) = struct.unpack_from("<B", raw, pos)
            shape = struct.unpack_from(f"<{nd}I", raw, pos + 1)
            pos += 1 + 4 * nd
            size = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
        (n,) = struct.unpack_from("<I", raw, pos)
        state = _unpack_state(raw[pos + 4:pos + 4 + n])
        pos += 4 + n
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after checkpoint")
    return header, params, state
