import struct

import numpy as np
import pytest

from crrnn.errors import FormatError
from crrnn.imageio import read_image, read_pgm, read_raw, write_image, write_pgm, write_raw


def test_raw_roundtrip(tmp_path, rng):
    img = rng.uniform(-2, 2, (5, 7)).astype(np.float32)
    write_raw(tmp_path / "a.raw", img)
    data = (tmp_path / "a.raw").read_bytes()
    assert data[:8] == b"CRRIMG01" and len(data) == 16 + 4 * 35
    assert struct.unpack("<II", data[8:16]) == (5, 7)
    assert np.array_equal(read_raw(tmp_path / "a.raw"), img.astype(np.float64))


def test_raw_complex_roundtrip(tmp_path, rng):
    z = (rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))).astype(np.complex64)
    write_raw(tmp_path / "k.raw", z)
    assert (tmp_path / "k.raw").read_bytes()[:8] == b"CRRIMG02"
    assert np.array_equal(read_raw(tmp_path / "k.raw"), z.astype(np.complex128))


def test_raw_errors(tmp_path):
    p = tmp_path / "bad.raw"
    p.write_bytes(b"NOTMAGIC" + struct.pack("<II", 1, 1) + b"\0" * 4)
    with pytest.raises(FormatError):
        read_raw(p)
    p.write_bytes(b"CRRIMG01" + struct.pack("<II", 2, 2) + b"\0" * 4)
    with pytest.raises(FormatError):
        read_raw(p)
    p.write_bytes(b"CRRIMG")
    with pytest.raises(FormatError):
        read_raw(p)
    with pytest.raises(ValueError):
        write_raw(p, np.zeros(3))


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_roundtrip(tmp_path, rng, bits):
    maxval = 255 if bits == 8 else 65535
    img = rng.integers(0, maxval + 1, (6, 9)) / maxval
    write_pgm(tmp_path / "a.pgm", img, bits=bits)
    assert np.allclose(read_pgm(tmp_path / "a.pgm"), img, atol=0.5 / maxval)


def test_ascii_pgm_with_comment(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n# comment\n3 2\n# more\n10\n0 5 10\n10 5 0\n")
    assert np.allclose(read_pgm(tmp_path / "a.pgm"), [[0, 0.5, 1], [1, 0.5, 0]])


def test_pgm_errors(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + b"\0" * 3)
    with pytest.raises(FormatError):
        read_pgm(p)
    p.write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(FormatError):
        read_pgm(p)
    with pytest.raises(ValueError):
        write_pgm(p, np.zeros((2, 2)), bits=12)


def test_pgm_clips(tmp_path):
    write_pgm(tmp_path / "c.pgm", np.array([[-1.0, 2.0]]))
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[0.0, 1.0]]


def test_dispatch(tmp_path, rng):
    img = rng.uniform(0, 1, (4, 4))
    write_image(tmp_path / "x.pgm", img)
    write_image(tmp_path / "x.raw", img)
    assert np.allclose(read_image(tmp_path / "x.pgm"), img, atol=1e-4)
    assert np.allclose(read_image(tmp_path / "x.raw"), img, atol=1e-6)
    (tmp_path / "x.txt").write_text("hello world")
    with pytest.raises(FormatError):
        read_image(tmp_path / "x.txt")
