import numpy as np
import pytest
from PIL import Image

from xae import netpbm


def test_binary_round_trip_and_pillow_agrees(tmp_path, rng):
    gray = rng.integers(0, 256, size=(5, 7), dtype=np.uint8)
    color = rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    netpbm.write(tmp_path / "g.pgm", gray)
    netpbm.write(tmp_path / "c.ppm", color)
    assert np.array_equal(netpbm.read(tmp_path / "g.pgm"), gray)
    assert np.array_equal(netpbm.read(tmp_path / "c.ppm"), color)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "g.pgm")), gray)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "c.ppm")), color)
    assert (tmp_path / "g.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")


def test_reads_files_written_by_pillow(tmp_path, rng):
    color = rng.integers(0, 256, size=(3, 8, 3), dtype=np.uint8)
    Image.fromarray(color).save(tmp_path / "p.ppm")
    assert np.array_equal(netpbm.read(tmp_path / "p.ppm"), color)


def test_ascii_with_comments_and_maxval(tmp_path):
    (tmp_path / "a.pgm").write_text("P2\n# a comment\n3 2 # inline\n15\n0 15 5\n10 1 2\n")
    img = netpbm.read(tmp_path / "a.pgm")
    assert img.tolist() == [[0, 255, 85], [170, 17, 34]]
    (tmp_path / "b.ppm").write_text("P3 1 1 255 10 20 30")
    assert netpbm.read(tmp_path / "b.ppm").tolist() == [[[10, 20, 30]]]


def test_errors(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P7\n1 1\n255\n\0")
    with pytest.raises(netpbm.NetpbmError):
        netpbm.read(tmp_path / "x.pgm")
    (tmp_path / "deep.pgm").write_bytes(b"P5\n1 1\n65535\n\0\0")
    with pytest.raises(netpbm.NetpbmError):
        netpbm.read(tmp_path / "deep.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n2 2\n255\n\0\0\0")
    with pytest.raises(netpbm.NetpbmError):
        netpbm.read(tmp_path / "short.pgm")
    (tmp_path / "head.pgm").write_bytes(b"P5\n2")
    with pytest.raises(netpbm.NetpbmError):
        netpbm.read(tmp_path / "head.pgm")
    (tmp_path / "big.pgm").write_text("P2 1 1 10 11")
    with pytest.raises(netpbm.NetpbmError):
        netpbm.read(tmp_path / "big.pgm")
    with pytest.raises(netpbm.NetpbmError):
        netpbm.write(tmp_path / "f.pgm", np.zeros((2, 2)))
    with pytest.raises(netpbm.NetpbmError):
        netpbm.write(tmp_path / "f.pgm", np.zeros((2, 2, 2), dtype=np.uint8))


def test_chw_conversions(rng):
    color = rng.integers(0, 256, size=(4, 5, 3), dtype=np.uint8)
    chw = netpbm.to_chw(color)
    assert chw.shape == (3, 4, 5) and np.array_equal(chw[1], color[:, :, 1] / 255.0)
    assert np.array_equal(netpbm.from_chw(chw), color)
    gray = color[:, :, 0]
    assert netpbm.to_chw(gray).shape == (1, 4, 5)
    assert np.array_equal(netpbm.from_chw(netpbm.to_chw(gray)), gray)
