"""Weight container (LEYW), PPM image input and deterministic random weights.

LEYW layout, all integers little-endian::

    b"LEYW" | u32 version (=1) | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 dtype (0 = float32)
               | u8 rank | u32 dim * rank | raw payload

There is no padding and nothing may follow the last entry.
"""
from __future__ import annotations

import math
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .archspec import ArchitectureSpec, weight_shapes
from .errors import BadMagicError, DuplicateNameError, ImageFormatError, StoreFormatError, TruncatedStoreError

MAGIC = b"LEYW"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}
DTYPE_CODES = {np.dtype("<f4"): 0}

# name -> array; insertion order is file order.
WeightStore = Dict[str, np.ndarray]
PathLike = Union[str, Path]


def encode_store(store: WeightStore) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, arr in store.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise StoreFormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > 0xFF:
            raise StoreFormatError(f"{name}: name or rank too large")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def decode_store(data: bytes) -> WeightStore:
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedStoreError(f"file ends inside {what} (need {n} bytes at offset {pos}, have {len(view) - pos})")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(view[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(view[:4])!r}, expected {MAGIC!r}")
    pos = 4
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise StoreFormatError(f"unsupported LEYW version {version}")
    store: WeightStore = OrderedDict()
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        try:
            name = bytes(take(name_len, f"entry {i} name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"entry {i}: name is not UTF-8") from exc
        code, rank = struct.unpack("<BB", take(2, f"{name} header"))
        if code not in DTYPES:
            raise StoreFormatError(f"{name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        dt = DTYPES[code]
        nbytes = math.prod(dims) * dt.itemsize
        payload = take(nbytes, f"{name} payload")
        if name in store:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        store[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(np.float32)
    if pos != len(view):
        raise StoreFormatError(f"{len(view) - pos} trailing bytes after last entry")
    return store


def write_store(store: WeightStore, path: PathLike) -> None:
    Path(path).write_bytes(encode_store(store))


def read_store(path: PathLike) -> WeightStore:
    return decode_store(Path(path).read_bytes())


def _ppm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens; returns (tokens, payload offset)."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path: PathLike) -> np.ndarray:
    """Binary PPM (P6, maxval 255) as a (1, 3, H, W) float32 RGB tensor in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise ImageFormatError(f"unsupported image magic {data[:2]!r}; only binary PPM (P6) is read")
    (magic, w, h, maxval), off = _ppm_tokens(data, 4)
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError("malformed PPM header") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 8-bit (255) PPM is read")
    if width < 1 or height < 1:
        raise ImageFormatError(f"empty image {width}x{height}")
    raster = data[off:off + width * height * 3]
    if len(raster) != width * height * 3:
        raise ImageFormatError("PPM raster is shorter than its header declares")
    hwc = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return (hwc.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255.0))


def write_ppm(image: np.ndarray, path: PathLike) -> None:
    """Inverse of :func:`read_ppm` (values are clipped and rounded to 8 bits)."""
    img = np.asarray(image)
    if img.ndim == 4:
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"expected (3, H, W) or (1, 3, H, W), got {np.shape(image)}")
    hwc = np.clip(np.rint(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{hwc.shape[1]} {hwc.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + hwc.tobytes())


def init_random(spec: ArchitectureSpec, seed: int = 0) -> WeightStore:
    """Deterministic weights for every tensor ``spec`` needs.

    Generator: ``numpy.random.default_rng(seed)`` (PCG64), drawing tensors in
    :func:`~leyolo.archspec.weight_shapes` order. Kernels are uniform in
    ``+-sqrt(3 / fan_in)`` (unit output variance for unit input variance);
    batch-norm is identity (gamma 1, beta 0, mean 0, var 1); biases are 0.
    """
    rng = np.random.default_rng(seed)
    store: WeightStore = OrderedDict()
    for name, shape in weight_shapes(spec).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(3.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        elif name.endswith((".bn.gamma", ".bn.var")):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        store[name] = arr.astype(np.float32)
    return store
