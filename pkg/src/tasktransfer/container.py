"""Versioned binary container: magic, version, JSON header, array payload.

Layout::

    magic (8 bytes) | u16 version | u32 header length | header JSON | payload

The header records the payload length and SHA-256 so truncation and bit rot
are detected on load. The payload is a sequence of named arrays, each stored
as ``u32 meta length | meta JSON | u64 byte length | raw bytes``.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np


class CorruptContainer(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def pack(magic: bytes, version: int, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    buf = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        meta = json.dumps({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}).encode()
        buf += struct.pack("<I", len(meta)) + meta + struct.pack("<Q", len(raw)) + raw
    payload = bytes(buf)
    header = dict(header, payload_length=len(payload), payload_sha256=hashlib.sha256(payload).hexdigest())
    head = json.dumps(header, sort_keys=True).encode()
    return magic + struct.pack("<HI", version, len(head)) + head + payload


def unpack(data: bytes, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(magic) + 6 or not data.startswith(magic):
        raise CorruptContainer("bad magic or truncated preamble")
    off = len(magic)
    found, head_len = struct.unpack_from("<HI", data, off)
    if found != version:
        raise VersionMismatch(f"container version {found}, expected {version}")
    off += 6
    try:
        header = json.loads(data[off : off + head_len])
        payload = data[off + head_len :]
        ok = len(payload) == header["payload_length"] and hashlib.sha256(payload).hexdigest() == header["payload_sha256"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptContainer("unreadable header") from exc
    if not ok:
        raise CorruptContainer("payload length or checksum mismatch")
    arrays = {}
    pos = 0
    while pos < len(payload):
        (mlen,) = struct.unpack_from("<I", payload, pos)
        meta = json.loads(payload[pos + 4 : pos + 4 + mlen])
        pos += 4 + mlen
        (rlen,) = struct.unpack_from("<Q", payload, pos)
        pos += 8
        arr = np.frombuffer(payload[pos : pos + rlen], dtype=meta["dtype"])
        arrays[meta["name"]] = arr.reshape(meta["shape"]).copy()
        pos += rlen
    return header, arrays
