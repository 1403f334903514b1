import struct

import numpy as np
import pytest

from rscd.tensorfile import read_tensor, write_tensor


def test_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_tensor(tmp_path / "t.rstf", arr)
    blob = (tmp_path / "t.rstf").read_bytes()
    assert blob[:4] == b"RSTF"
    assert struct.unpack_from("<II", blob, 4) == (1, 2)
    assert struct.unpack_from("<2Q", blob, 12) == (2, 3)
    assert len(blob) == 12 + 16 + 6 * 4
    np.testing.assert_array_equal(np.frombuffer(blob[28:], "<f4"), np.arange(6))


def test_roundtrip_field(tmp_path, rng):
    field = rng.normal(size=(7, 5, 2)).astype(np.float32)
    write_tensor(tmp_path / "f.rstf", field)
    back = read_tensor(tmp_path / "f.rstf")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, field)


@pytest.mark.parametrize("mutate", ["magic", "version", "truncate", "extra"])
def test_rejects_corruption(tmp_path, mutate):
    write_tensor(tmp_path / "t.rstf", np.ones((2, 2)))
    blob = bytearray((tmp_path / "t.rstf").read_bytes())
    if mutate == "magic":
        blob[:4] = b"XXXX"
    elif mutate == "version":
        blob[4:8] = struct.pack("<I", 2)
    elif mutate == "truncate":
        blob = blob[:-1]
    else:
        blob += b"\0\0\0\0"
    (tmp_path / "t.rstf").write_bytes(bytes(blob))
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "t.rstf")
