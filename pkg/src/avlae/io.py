"""Binary containers.

``AVT1`` stores one float32 tensor::

    b"AVT1" | u32 version=1 | u32 rank | rank x u64 extents | payload (f32 LE, row-major)

``AVC1`` stores a checkpoint::

    b"AVC1" | u32 version=1 | u32 header_len | header (UTF-8 JSON)
           | u32 n_tensors | n x (u32 name_len | name (UTF-8) | AVT1 record)

All integers are little-endian. Parsing never raises anything other than
:class:`ContainerError` for malformed input.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

VIDEO_MAGIC = b"AVT1"
CHECKPOINT_MAGIC = b"AVC1"
VERSION = 1
MAX_RANK = 8


class ContainerError(ValueError):
    """Malformed container; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class FingerprintMismatch(ValueError):
    pass


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype.kind != "f":
        raise TypeError(f"only float tensors can be stored, got {array.dtype}")
    payload = np.ascontiguousarray(array, dtype="<f4")
    head = VIDEO_MAGIC + struct.pack("<II", VERSION, array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape)
    return head + payload.tobytes()


def _read(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if n < 0 or offset + n > len(buf):
        raise ContainerError(f"truncated {what}: need {n} bytes, {max(len(buf) - offset, 0)} left", offset)
    return buf[offset : offset + n]


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one AVT1 record starting at ``offset``; return (array, next offset)."""
    magic = _read(buf, offset, 4, "magic")
    if magic != VIDEO_MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {VIDEO_MAGIC!r}", offset)
    version, rank = struct.unpack("<II", _read(buf, offset + 4, 8, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}", offset + 4)
    if rank > MAX_RANK:
        raise ContainerError(f"rank {rank} exceeds {MAX_RANK}", offset + 8)
    pos = offset + 12
    shape = struct.unpack(f"<{rank}Q", _read(buf, pos, 8 * rank, "extents"))
    pos += 8 * rank
    count = 1
    for n in shape:
        count *= n
    if count * 4 > len(buf) - pos:
        raise ContainerError(f"payload needs {count * 4} bytes, {len(buf) - pos} present", pos)
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
    return data.astype(np.float32), pos + count * 4


def save_video(path, video: np.ndarray) -> None:
    video = np.asarray(video)
    if video.size and (np.nanmin(video) < -1.0 or np.nanmax(video) > 1.0):
        raise ValueError("video values must lie in [-1, 1]")
    Path(path).write_bytes(encode_tensor(video))


def load_video(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    data, end = decode_tensor(buf)
    if end != len(buf):
        raise ContainerError(f"{len(buf) - end} trailing bytes after payload", end)
    return data


def encode_checkpoint(header: Mapping, tensors: Mapping[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, encode_tensor(tensors[name])]
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    magic = _read(buf, 0, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", 0)
    version, head_len = struct.unpack("<II", _read(buf, 4, 8, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}", 4)
    raw = _read(buf, 12, head_len, "json header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"header is not valid JSON: {exc}", 12) from None
    if not isinstance(header, dict):
        raise ContainerError("header must be a JSON object", 12)
    pos = 12 + head_len
    (count,) = struct.unpack("<I", _read(buf, pos, 4, "tensor count"))
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read(buf, pos, 4, "name length"))
        try:
            name = _read(buf, pos + 4, name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise ContainerError("tensor name is not UTF-8", pos + 4) from None
        if name in tensors:
            raise ContainerError(f"duplicate tensor {name!r}", pos + 4)
        tensors[name], pos = decode_tensor(buf, pos + 4 + name_len)
    if pos != len(buf):
        raise ContainerError(f"{len(buf) - pos} trailing bytes after last tensor", pos)
    return header, tensors


def save_checkpoint(path, header: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(header, tensors))
    os.replace(tmp, path)


def load_checkpoint(path, expected_fingerprint: str | None = None, force: bool = False):
    header, tensors = decode_checkpoint(Path(path).read_bytes())
    found = header.get("fingerprint")
    if expected_fingerprint is not None and found != expected_fingerprint and not force:
        raise FingerprintMismatch(
            f"checkpoint fingerprint {found} does not match config {expected_fingerprint}"
        )
    return header, tensors
