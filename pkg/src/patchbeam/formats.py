"""Bit-exact file formats: PGM images, tensor files, dictionary files.

All binary formats are little-endian with float32 payloads on disk
(compute stays float64 in memory).  Readers validate every header field
and the exact payload length, so any header corruption or truncation is
rejected.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .bpfa import Dictionary
from .patches import MAX_RANK

TENSOR_MAGIC = b"SATF"
DICT_MAGIC = b"SADF"
FORMAT_VERSION = 1

DTYPE_FLOAT32 = 0
DTYPE_UINT8 = 1

FLAG_PI = 0x1

_MAX_DIM = 1 << 24
_MAX_ATOMS = 1 << 20


class FormatError(ValueError):
    """Malformed, truncated or unsupported file content."""


# --- PGM (binary, 8-bit greyscale) -----------------------------------------

def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval 255) into a [0, 1] float tensor."""
    data = Path(path).read_bytes()
    if data[:2] == b"P2":
        raise FormatError("ASCII PGM (P2) is not supported, use binary P5")
    if data[:2] != b"P5":
        raise FormatError("not a PGM file (missing P5 magic)")

    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError("truncated PGM header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise FormatError("malformed PGM header")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header")
    pos += 1  # single whitespace after maxval

    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval} (must be 255)")
    if width < 1 or height < 1:
        raise FormatError("PGM dimensions must be positive")
    expected = width * height
    payload = data[pos:]
    if len(payload) != expected:
        raise FormatError(f"PGM payload is {len(payload)} bytes, expected {expected}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / 255.0


def write_image(path, tensor: np.ndarray) -> None:
    """Write a 2D [0, 1] tensor as binary PGM (values quantized to uint8)."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 2:
        raise FormatError(f"PGM requires a 2D tensor, got rank {tensor.ndim}")
    if tensor.dtype == np.uint8:
        quantized = tensor
    else:
        quantized = np.round(np.clip(tensor, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = tensor.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())


# --- tensor files ------------------------------------------------------------

def write_tensor(path, tensor: np.ndarray) -> None:
    """Write a tensor file; uint8 arrays stay uint8, everything else float32."""
    tensor = np.asarray(tensor)
    if not 1 <= tensor.ndim <= MAX_RANK:
        raise FormatError(f"tensor rank must be 1..{MAX_RANK}")
    if tensor.dtype == np.uint8:
        dtype_code, payload = DTYPE_UINT8, np.ascontiguousarray(tensor).tobytes()
    else:
        dtype_code = DTYPE_FLOAT32
        payload = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    header = TENSOR_MAGIC + struct.pack(
        "<II", FORMAT_VERSION, tensor.ndim
    ) + struct.pack(f"<{tensor.ndim}I", *tensor.shape) + struct.pack("<I", dtype_code)
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Read a tensor file; float32 payloads are widened to float64."""
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise FormatError("bad tensor file magic")
    pos = 4
    version, ndims = _unpack(data, pos, "<II")
    pos += 8
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor file version {version}")
    if not 1 <= ndims <= MAX_RANK:
        raise FormatError(f"invalid tensor rank {ndims}")
    dims = _unpack(data, pos, f"<{ndims}I")
    pos += 4 * ndims
    if any(d < 1 or d > _MAX_DIM for d in dims):
        raise FormatError(f"invalid tensor dims {dims}")
    (dtype_code,) = _unpack(data, pos, "<I")
    pos += 4
    if dtype_code == DTYPE_FLOAT32:
        dtype, itemsize = np.dtype("<f4"), 4
    elif dtype_code == DTYPE_UINT8:
        dtype, itemsize = np.dtype(np.uint8), 1
    else:
        raise FormatError(f"unknown tensor dtype code {dtype_code}")
    expected = int(np.prod(dims)) * itemsize
    payload = data[pos:]
    if len(payload) != expected:
        raise FormatError(f"tensor payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(np.float64) if dtype_code == DTYPE_FLOAT32 else arr.copy()


# --- dictionary files --------------------------------------------------------

def write_dict(path, dictionary: Dictionary, include_pi: bool = True) -> None:
    atoms = np.ascontiguousarray(dictionary.atoms, dtype="<f4")
    k = dictionary.num_atoms
    shape = dictionary.patch_shape
    flags = FLAG_PI if include_pi else 0
    header = (
        DICT_MAGIC
        + struct.pack("<III", FORMAT_VERSION, k, len(shape))
        + struct.pack(f"<{len(shape)}I", *shape)
        + struct.pack("<I", flags)
    )
    blob = header + atoms.tobytes()
    if include_pi:
        blob += np.ascontiguousarray(dictionary.pi, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)


def read_dict(path) -> Dictionary:
    data = Path(path).read_bytes()
    if data[:4] != DICT_MAGIC:
        raise FormatError("bad dictionary file magic")
    pos = 4
    version, k, ndims = _unpack(data, pos, "<III")
    pos += 12
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dictionary file version {version}")
    if not 1 <= k <= _MAX_ATOMS:
        raise FormatError(f"invalid atom count {k}")
    if not 1 <= ndims <= MAX_RANK:
        raise FormatError(f"invalid patch rank {ndims}")
    shape = _unpack(data, pos, f"<{ndims}I")
    pos += 4 * ndims
    if any(b < 1 or b > _MAX_DIM for b in shape):
        raise FormatError(f"invalid patch shape {shape}")
    (flags,) = _unpack(data, pos, "<I")
    pos += 4
    if flags & ~FLAG_PI:
        raise FormatError(f"unknown dictionary flags 0x{flags:x}")

    patch_size = int(np.prod(shape))
    expected = k * patch_size * 4 + (k * 4 if flags & FLAG_PI else 0)
    payload = data[pos:]
    if len(payload) != expected:
        raise FormatError(f"dictionary payload is {len(payload)} bytes, expected {expected}")
    atoms = np.frombuffer(payload[: k * patch_size * 4], dtype="<f4")
    atoms = atoms.reshape(k, patch_size).astype(np.float64)
    if flags & FLAG_PI:
        pi = np.frombuffer(payload[k * patch_size * 4:], dtype="<f4").astype(np.float64)
    else:
        pi = np.full(k, 0.5, dtype=np.float64)
    return Dictionary(atoms=atoms, pi=pi, patch_shape=tuple(int(b) for b in shape))


def _unpack(data: bytes, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(data):
        raise FormatError("truncated file header")
    return struct.unpack_from(fmt, data, pos)


def sniff_format(path) -> str:
    """Identify a file as 'pgm', 'tensor' or 'dict' by its magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:2] in (b"P5", b"P2"):
        return "pgm"
    if head == TENSOR_MAGIC:
        return "tensor"
    if head == DICT_MAGIC:
        return "dict"
    raise FormatError(f"unrecognized file format for {path}")
