import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leyolo.archspec import build_spec, weight_shapes
from leyolo.errors import BadMagicError, DuplicateNameError, ImageFormatError, StoreFormatError, TruncatedStoreError
from leyolo.modelio import decode_store, encode_store, init_random, read_ppm, read_store, write_ppm, write_store


def test_empty_store_is_12_bytes(tmp_path):
    path = tmp_path / "e.leyw"
    write_store({}, path)
    assert path.read_bytes() == b"LEYW" + struct.pack("<II", 1, 0)
    assert read_store(path) == {}


def test_single_entry_layout():
    blob = encode_store({"w": np.array([[1.0, 2.0]], np.float32)})
    expected = b"LEYW" + struct.pack("<II", 1, 1) + struct.pack("<H", 1) + b"w" + bytes([0, 2])
    expected += struct.pack("<II", 1, 2) + np.array([1.0, 2.0], "<f4").tobytes()
    assert blob == expected


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(
    st.text(min_size=1, max_size=12),
    st.lists(st.integers(1, 4), min_size=0, max_size=4),
    max_size=6,
))
def test_round_trip_is_byte_identical(shapes):
    rng = np.random.default_rng(len(shapes))
    store = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in shapes.items()}
    blob = encode_store(store)
    again = decode_store(blob)
    assert list(again) == list(store)
    assert encode_store(again) == blob


def test_format_errors_are_distinct():
    blob = encode_store({"a": np.ones(3, np.float32)})
    with pytest.raises(BadMagicError):
        decode_store(b"LEYX" + blob[4:])
    with pytest.raises(TruncatedStoreError):
        decode_store(blob[:-1])
    with pytest.raises(TruncatedStoreError):
        decode_store(blob[:10])
    with pytest.raises(StoreFormatError):
        decode_store(blob + b"\0")
    dup = b"LEYW" + struct.pack("<II", 1, 2) + blob[12:] + blob[12:]
    with pytest.raises(DuplicateNameError):
        decode_store(dup)
    assert not issubclass(TruncatedStoreError, BadMagicError)


def test_ppm_reading(tmp_path):
    white = tmp_path / "w.ppm"
    white.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
    assert read_ppm(white).ravel().tolist() == [1.0, 1.0, 1.0]
    two = tmp_path / "two.ppm"
    two.write_bytes(b"P6 2 1 255\n\xff\x00\x00\x00\xff\x00")
    t = read_ppm(two)
    assert t.shape == (1, 3, 1, 2)
    assert t[0, :, 0, 0].tolist() == [1, 0, 0] and t[0, :, 0, 1].tolist() == [0, 1, 0]


def test_ppm_rejects_other_formats(tmp_path):
    for body in (b"P3\n1 1\n255\n255 255 255\n", b"P6\n1 1\n65535\n\0\0\0\0\0\0", b"P6\n2 2\n255\n\0\0\0"):
        p = tmp_path / "bad.ppm"
        p.write_bytes(body)
        with pytest.raises(ImageFormatError):
            read_ppm(p)


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (1, 3, 5, 7)) / 255.0
    path = tmp_path / "x.ppm"
    write_ppm(img, path)
    np.testing.assert_allclose(read_ppm(path), img, atol=1e-7)


def test_init_random_properties():
    spec = build_spec("nano")
    a, b, c = init_random(spec, 1), init_random(spec, 1), init_random(spec, 2)
    assert encode_store(a) == encode_store(b)
    assert encode_store(a) != encode_store(c)
    assert {k: v.shape for k, v in a.items()} == weight_shapes(spec)
    assert np.all(a["backbone.0.bn.gamma"] == 1) and np.all(a["backbone.0.bn.mean"] == 0)
    assert np.all(a["head.shared.cls.bias"] == 0)
    bound = np.sqrt(3.0 / 27)
    assert np.abs(a["backbone.0.weight"]).max() <= bound
