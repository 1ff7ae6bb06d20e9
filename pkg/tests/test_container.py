"""Binary array container: bit-exact round trips and format validation."""

import struct

import numpy as np
import pytest

from csdt.container import MAGIC, VERSION, read_container, write_container, write_pgm


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    entries = {
        "a.matrix": rng.standard_normal((3, 4, 5)),
        "b.vector": rng.standard_normal(7).astype(np.float32),
        "c.scalar": np.float64(np.pi),
        "d.empty": np.zeros((0, 2)),
    }
    path = tmp_path / "data.csdt"
    write_container(path, entries)
    loaded = read_container(path)
    assert set(loaded) == set(entries)
    for name, arr in entries.items():
        got = loaded[name]
        assert got.dtype == np.asarray(arr).dtype
        assert got.shape == np.asarray(arr).shape
        assert np.asarray(arr).tobytes() == got.tobytes()


def test_identical_input_identical_bytes(tmp_path):
    rng = np.random.default_rng(1)
    entries = {"x": rng.standard_normal((4, 4)), "y": rng.standard_normal(3)}
    p1, p2 = tmp_path / "one.csdt", tmp_path / "two.csdt"
    write_container(p1, entries)
    write_container(p2, dict(reversed(list(entries.items()))))  # order must not matter
    assert p1.read_bytes() == p2.read_bytes()


def test_non_float_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_container(tmp_path / "bad.csdt", {"ints": np.arange(4)})


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.csdt"
    path.write_bytes(b"NOPE" + struct.pack("<HI", VERSION, 0))
    with pytest.raises(ValueError, match="magic"):
        read_container(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "bad.csdt"
    path.write_bytes(MAGIC + struct.pack("<HI", VERSION + 1, 0))
    with pytest.raises(ValueError, match="version"):
        read_container(path)


def test_truncated_rejected(tmp_path):
    path = tmp_path / "ok.csdt"
    write_container(path, {"x": np.ones((2, 2))})
    data = path.read_bytes()
    bad = tmp_path / "short.csdt"
    bad.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_container(bad)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "ok.csdt"
    write_container(path, {"x": np.ones(3)})
    bad = tmp_path / "long.csdt"
    bad.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        read_container(bad)


def test_pgm_export(tmp_path):
    import json

    img = np.linspace(-1.0, 3.0, 12).reshape(3, 4)
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    pixels = np.frombuffer(raw[len(b"P5\n4 3\n255\n"):], dtype=np.uint8)
    assert pixels[0] == 0 and pixels[-1] == 255  # min-max window
    window = json.loads((tmp_path / "img.pgm.json").read_text())
    assert window == {"min": -1.0, "max": 3.0}


def test_pgm_constant_image(tmp_path):
    path = tmp_path / "flat.pgm"
    write_pgm(path, np.full((2, 2), 5.0))
    pixels = np.frombuffer(path.read_bytes().split(b"\n255\n", 1)[1], dtype=np.uint8)
    assert (pixels == 0).all()  # degenerate window maps to 0, no crash
