"""Versioned binary container for :class:`~isvd.engine.TruncatedSvdState`.

Layout (all little-endian)::

    magic      8 bytes  b"ISVDSTAT"
    version    u32
    m, n, k    u64 x 3
    updates    u64
    resets     u64
    cond_u     f64
    cond_v     f64
    hdr_crc    u32      CRC-32 of every byte above
    payload    f64[]    u_prime (m*k, row-major), u_dd (k*k), sigma (k),
                        v_dd (k*k), v_prime (n*k)
    data_crc   u32      CRC-32 of the payload

Saving the same state twice gives identical bytes, so save -> load -> save is
byte-for-byte stable.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .engine import TruncatedSvdState
from .exceptions import CorruptState, StateVersionError

MAGIC = b"ISVDSTAT"
VERSION = 1
_HEADER = struct.Struct("<8sI5Q2d")
_CRC = struct.Struct("<I")


def dumps(state: TruncatedSvdState) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, state.m, state.n, state.k, state.update_count,
                        state.reset_count, *state.cond_estimates)
    parts = [state.u_prime, state.u_dd, state.sigma, state.v_dd, state.v_prime]
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts)
    return b"".join([head, _CRC.pack(zlib.crc32(head)), payload,
                     _CRC.pack(zlib.crc32(payload))])


def loads(data: bytes) -> TruncatedSvdState:
    hsize = _HEADER.size + _CRC.size
    if len(data) < hsize:
        raise CorruptState("state file is truncated")
    head = data[: _HEADER.size]
    magic, version, m, n, k, updates, resets, cond_u, cond_v = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CorruptState("not an isvd state file")
    if version != VERSION:
        raise StateVersionError(f"state file version {version}, expected {VERSION}")
    (hcrc,) = _CRC.unpack_from(data, _HEADER.size)
    if hcrc != zlib.crc32(head):
        raise CorruptState("header checksum mismatch")
    count = m * k + 2 * k * k + k + n * k
    end = hsize + 8 * count
    if len(data) != end + _CRC.size:
        raise CorruptState("payload size does not match header")
    payload = data[hsize:end]
    (dcrc,) = _CRC.unpack_from(data, end)
    if dcrc != zlib.crc32(payload):
        raise CorruptState("payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    sizes = np.cumsum([m * k, k * k, k, k * k])
    u_prime, u_dd, sigma, v_dd, v_prime = np.split(flat, sizes)
    return TruncatedSvdState(u_prime.reshape(m, k), u_dd.reshape(k, k), sigma,
                             v_dd.reshape(k, k), v_prime.reshape(n, k),
                             update_count=updates, reset_count=resets,
                             cond_estimates=(cond_u, cond_v))


def atomic_write(path, data: bytes):
    """Write ``data`` to ``path`` through a temp file and ``os.replace``."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(state: TruncatedSvdState, path):
    atomic_write(path, dumps(state))


def load(path) -> TruncatedSvdState:
    with open(path, "rb") as fh:
        return loads(fh.read())
