import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from avlae import io


def sample_checkpoint():
    header = {"fingerprint": "abc", "step": 3}
    tensors = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], np.float32)}
    return header, tensors


def test_tensor_layout_is_bit_exact():
    raw = io.encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    assert raw[:4] == b"AVT1"
    assert struct.unpack("<II", raw[4:12]) == (1, 2)
    assert struct.unpack("<2Q", raw[12:28]) == (1, 2)
    assert raw[28:] == struct.pack("<2f", 1.0, 2.0)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=5, min_side=0, max_side=4),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_round_trip_is_bitwise(array):
    out, end = io.decode_tensor(io.encode_tensor(array))
    assert out.shape == array.shape
    assert out.tobytes() == array.astype("<f4").tobytes()


def test_checkpoint_round_trip_is_bitwise():
    header, tensors = sample_checkpoint()
    blob = io.encode_checkpoint(header, tensors)
    h2, t2 = io.decode_checkpoint(blob)
    assert h2 == header
    assert set(t2) == set(tensors)
    for k in tensors:
        assert t2[k].tobytes() == tensors[k].tobytes()
    assert io.encode_checkpoint(h2, t2) == blob


def test_video_files(tmp_path):
    v = np.random.default_rng(0).uniform(-1, 1, size=(3, 4, 8, 8)).astype(np.float32)
    io.save_video(tmp_path / "v.avt1", v)
    assert io.load_video(tmp_path / "v.avt1").tobytes() == v.tobytes()
    with pytest.raises(ValueError):
        io.save_video(tmp_path / "bad.avt1", v * 3)


def test_checkpoint_file_and_fingerprint(tmp_path):
    header, tensors = sample_checkpoint()
    path = tmp_path / "c.avc1"
    io.save_checkpoint(path, header, tensors)
    assert not (tmp_path / "c.avc1.tmp").exists()
    io.load_checkpoint(path, "abc")
    with pytest.raises(io.FingerprintMismatch):
        io.load_checkpoint(path, "zzz")
    io.load_checkpoint(path, "zzz", force=True)


def _checkpoint_with(header_bytes=None, count=None, name=b"x", record=None):
    head = header_bytes if header_bytes is not None else b"{}"
    record = record if record is not None else io.encode_tensor(np.ones(2, np.float32))
    entries = struct.pack("<I", len(name)) + name + record
    n = 1 if count is None else count
    return b"AVC1" + struct.pack("<II", 1, len(head)) + head + struct.pack("<I", n) + entries


GOOD_T = io.encode_tensor(np.ones((2, 2), np.float32))
GOOD_C = io.encode_checkpoint(*sample_checkpoint())

MALFORMED_TENSORS = {
    "empty": b"",
    "short magic": b"AV",
    "bad magic": b"XXXX" + GOOD_T[4:],
    "bad version": GOOD_T[:4] + struct.pack("<I", 2) + GOOD_T[8:],
    "missing rank": GOOD_T[:8],
    "huge rank": GOOD_T[:8] + struct.pack("<I", 99) + GOOD_T[12:],
    "truncated extents": GOOD_T[:20],
    "truncated payload": GOOD_T[:-1],
    "trailing bytes": GOOD_T + b"\x00",
    "extent overflow": GOOD_T[:8] + struct.pack("<I", 1) + struct.pack("<Q", 2**62),
}

MALFORMED_CHECKPOINTS = {
    "bad magic": b"AVT1" + GOOD_C[4:],
    "bad version": GOOD_C[:4] + struct.pack("<I", 9) + GOOD_C[8:],
    "truncated header length": GOOD_C[:6],
    "header longer than file": GOOD_C[:8] + struct.pack("<I", 10**6) + GOOD_C[12:],
    "invalid json": _checkpoint_with(header_bytes=b"{not json"),
    "json not object": _checkpoint_with(header_bytes=b"[1, 2]"),
    "non utf8 header": _checkpoint_with(header_bytes=b"\xff\xfe"),
    "count exceeds entries": _checkpoint_with(count=2),
    "non utf8 name": _checkpoint_with(name=b"\xff"),
    "duplicate names": _checkpoint_with(count=2) + struct.pack("<I", 1) + b"x" + GOOD_T,
    "trailing bytes": GOOD_C + b"junk",
    "bad inner record": _checkpoint_with(record=b"AVT1" + struct.pack("<I", 7)),
}


@pytest.mark.parametrize("name", sorted(MALFORMED_TENSORS))
def test_malformed_tensors_raise_container_error(name, tmp_path):
    path = tmp_path / "v.avt1"
    path.write_bytes(MALFORMED_TENSORS[name])
    with pytest.raises(io.ContainerError) as info:
        io.load_video(path)
    assert info.value.offset >= 0


@pytest.mark.parametrize("name", sorted(MALFORMED_CHECKPOINTS))
def test_malformed_checkpoints_raise_container_error(name):
    with pytest.raises(io.ContainerError) as info:
        io.decode_checkpoint(MALFORMED_CHECKPOINTS[name])
    assert info.value.offset >= 0


def test_corpus_has_at_least_twenty_cases():
    assert len(MALFORMED_TENSORS) + len(MALFORMED_CHECKPOINTS) >= 20


def test_header_is_sorted_json():
    blob = io.encode_checkpoint({"b": 1, "a": 2}, {})
    (n,) = struct.unpack("<I", blob[8:12])
    assert json.loads(blob[12 : 12 + n]) == {"a": 2, "b": 1}
    assert blob[12 : 12 + n] == b'{"a": 2, "b": 1}'
