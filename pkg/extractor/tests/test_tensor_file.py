import struct

import numpy as np
import pytest

from cadt_extractor.tensor_file import TensorFileError, read_tensor, write_tensor


def test_round_trip_f32_ranks(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((5,), (3, 4), (2, 3, 4)):
        arr = rng.normal(size=shape).astype(np.float32)
        path = tmp_path / f"r{len(shape)}.cadt"
        write_tensor(arr, path)
        back = read_tensor(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)


def test_round_trip_u8(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_tensor(arr, tmp_path / "m.cadt")
    assert np.array_equal(read_tensor(tmp_path / "m.cadt"), arr)


def test_header_bytes(tmp_path):
    arr = np.zeros((2, 3), dtype=np.float32)
    write_tensor(arr, tmp_path / "h.cadt")
    blob = (tmp_path / "h.cadt").read_bytes()
    assert blob[:4] == b"CADT"
    assert blob[4] == 0 and blob[5] == 2
    assert struct.unpack_from("<2I", blob, 6) == (2, 3)
    assert len(blob) == 6 + 8 + 24


def test_rejects_bad_inputs(tmp_path):
    with pytest.raises(TensorFileError):
        write_tensor(np.zeros(3, dtype=np.float64), tmp_path / "x.cadt")
    with pytest.raises(TensorFileError):
        write_tensor(np.zeros((1, 1, 1, 1), dtype=np.float32), tmp_path / "x.cadt")
    with pytest.raises(TensorFileError):
        write_tensor(np.zeros((0, 3), dtype=np.float32), tmp_path / "x.cadt")


def test_rejects_corrupt_files(tmp_path):
    p = tmp_path / "t.cadt"
    write_tensor(np.zeros((2, 2), dtype=np.float32), p)
    blob = p.read_bytes()
    (tmp_path / "magic.cadt").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(TensorFileError, match="not a CADT"):
        read_tensor(tmp_path / "magic.cadt")
    (tmp_path / "short.cadt").write_bytes(blob[:-4])
    with pytest.raises(TensorFileError, match="payload"):
        read_tensor(tmp_path / "short.cadt")


def test_cross_compatible_with_primary_reader(tmp_path):
    corebank_io = pytest.importorskip("corebank.tensor_io")
    arr = np.random.default_rng(3).normal(size=(4, 5, 6)).astype(np.float32)
    write_tensor(arr, tmp_path / "ours.cadt")
    theirs = corebank_io.read_tensor(tmp_path / "ours.cadt", dtype="f32")
    assert np.array_equal(theirs, arr)

    corebank_io.write_tensor(arr, tmp_path / "theirs.cadt")
    assert (tmp_path / "ours.cadt").read_bytes() == (tmp_path / "theirs.cadt").read_bytes()
    assert np.array_equal(read_tensor(tmp_path / "theirs.cadt"), arr)
