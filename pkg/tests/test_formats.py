import numpy as np
import pytest

from patchbeam.bpfa import Dictionary
from patchbeam.formats import (
    FormatError,
    read_dict,
    read_image,
    read_tensor,
    sniff_format,
    write_dict,
    write_image,
    write_tensor,
)


def test_pgm_known_bytes(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = read_image(path)
    assert img.shape == (2, 2)
    assert img.ravel().tolist() == [0.0, 128 / 255, 1.0, 64 / 255]


def test_pgm_roundtrip_identity(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(13, 7), dtype=np.uint8)
    path = tmp_path / "r.pgm"
    write_image(path, raw)
    back = read_image(path)
    assert np.array_equal(np.round(back * 255).astype(np.uint8), raw)
    write_image(tmp_path / "r2.pgm", back)
    assert (tmp_path / "r2.pgm").read_bytes() == path.read_bytes()


def test_pgm_rejects_ascii_and_bad_maxval(tmp_path):
    p2 = tmp_path / "a.pgm"
    p2.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(FormatError):
        read_image(p2)
    bad = tmp_path / "b.pgm"
    bad.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError):
        read_image(bad)


def test_pgm_rejects_truncated_payload(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(FormatError):
        read_image(path)


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# comment line\n2 1\n255\n" + bytes([9, 9]))
    assert read_image(path).shape == (1, 2)


def test_tensor_roundtrip_float_and_uint8(tmp_path):
    rng = np.random.default_rng(1)
    f32 = rng.random((3, 4, 2)).astype(np.float32)
    path = tmp_path / "f.satf"
    write_tensor(path, f32)
    back = read_tensor(path)
    assert back.dtype == np.float64
    assert np.array_equal(back.astype(np.float32), f32)

    u8 = rng.integers(0, 256, size=(5, 6), dtype=np.uint8)
    path2 = tmp_path / "u.satf"
    write_tensor(path2, u8)
    back2 = read_tensor(path2)
    assert back2.dtype == np.uint8
    assert np.array_equal(back2, u8)


def test_tensor_truncation_and_trailing(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "t.satf"
    write_tensor(path, arr)
    blob = path.read_bytes()
    short = tmp_path / "short.satf"
    short.write_bytes(blob[:-1])
    with pytest.raises(FormatError):
        read_tensor(short)
    longer = tmp_path / "long.satf"
    longer.write_bytes(blob + b"\x00")
    with pytest.raises(FormatError):
        read_tensor(longer)


def test_tensor_bad_magic_and_version(tmp_path):
    arr = np.zeros((2, 2), dtype=np.float32)
    path = tmp_path / "t.satf"
    write_tensor(path, arr)
    blob = bytearray(path.read_bytes())
    wrong = tmp_path / "w.satf"
    wrong.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        read_tensor(wrong)
    blob[4] = 9  # version
    versioned = tmp_path / "v.satf"
    versioned.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_tensor(versioned)


def test_dict_roundtrip_with_and_without_pi(tmp_path):
    rng = np.random.default_rng(2)
    d = Dictionary(
        atoms=rng.standard_normal((5, 12)).astype(np.float32).astype(np.float64),
        pi=rng.uniform(0.01, 0.99, 5).astype(np.float32).astype(np.float64),
        patch_shape=(3, 4),
    )
    path = tmp_path / "d.sadf"
    write_dict(path, d)
    back = read_dict(path)
    assert np.array_equal(back.atoms, d.atoms)
    assert np.array_equal(back.pi, d.pi)
    assert back.patch_shape == (3, 4)

    path2 = tmp_path / "d2.sadf"
    write_dict(path2, d, include_pi=False)
    back2 = read_dict(path2)
    assert np.array_equal(back2.atoms, d.atoms)
    assert np.all(back2.pi == 0.5)


def _random_tensor(rng):
    ndim = int(rng.integers(1, 5))
    shape = tuple(int(rng.integers(1, 7)) for _ in range(ndim))
    if rng.random() < 0.5:
        return rng.integers(0, 256, size=shape, dtype=np.uint8)
    return rng.standard_normal(shape).astype(np.float32)


def _random_dict(rng):
    k = int(rng.integers(1, 9))
    ndim = int(rng.integers(1, 4))
    shape = tuple(int(rng.integers(1, 6)) for _ in range(ndim))
    p = int(np.prod(shape))
    return Dictionary(
        atoms=rng.standard_normal((k, p)).astype(np.float32).astype(np.float64),
        pi=rng.uniform(0.01, 0.99, k).astype(np.float32).astype(np.float64),
        patch_shape=shape,
    )


def test_random_instance_roundtrips(tmp_path):
    rng = np.random.default_rng(3)
    for i in range(200):
        arr = _random_tensor(rng)
        path = tmp_path / f"t{i}.satf"
        write_tensor(path, arr)
        back = read_tensor(path)
        if arr.dtype == np.uint8:
            assert np.array_equal(back, arr)
        else:
            assert np.array_equal(back.astype(np.float32), arr)

        d = _random_dict(rng)
        dpath = tmp_path / f"d{i}.sadf"
        write_dict(dpath, d, include_pi=bool(rng.integers(0, 2)))
        got = read_dict(dpath)
        assert np.array_equal(got.atoms, d.atoms)
        assert got.patch_shape == d.patch_shape


def _header_len_tensor(blob):
    ndims = int.from_bytes(blob[8:12], "little")
    return 4 + 4 + 4 + 4 * ndims + 4


def _header_len_dict(blob):
    ndims = int.from_bytes(blob[12:16], "little")
    return 4 + 4 + 4 + 4 + 4 * ndims + 4


def test_every_header_byte_corruption_rejected(tmp_path):
    rng = np.random.default_rng(4)
    for trial in range(25):
        arr = _random_tensor(rng)
        path = tmp_path / "probe.satf"
        write_tensor(path, arr)
        blob = bytearray(path.read_bytes())
        for pos in range(_header_len_tensor(blob)):
            corrupted = bytearray(blob)
            corrupted[pos] ^= 0xFF >> int(rng.integers(0, 7))
            if corrupted[pos] == blob[pos]:
                corrupted[pos] ^= 0x01
            target = tmp_path / "corrupt.satf"
            target.write_bytes(bytes(corrupted))
            with pytest.raises(FormatError):
                read_tensor(target)

        d = _random_dict(rng)
        dpath = tmp_path / "probe.sadf"
        write_dict(dpath, d, include_pi=True)
        blob = bytearray(dpath.read_bytes())
        for pos in range(_header_len_dict(blob)):
            corrupted = bytearray(blob)
            corrupted[pos] ^= 0xFF >> int(rng.integers(0, 7))
            if corrupted[pos] == blob[pos]:
                corrupted[pos] ^= 0x01
            target = tmp_path / "corrupt.sadf"
            target.write_bytes(bytes(corrupted))
            with pytest.raises(FormatError):
                read_dict(target)


def test_sniff_format(tmp_path):
    write_tensor(tmp_path / "a.satf", np.zeros((2, 2), dtype=np.float32))
    write_image(tmp_path / "a.pgm", np.zeros((2, 2)))
    d = Dictionary(np.zeros((1, 4)), np.array([0.5]), (2, 2))
    write_dict(tmp_path / "a.sadf", d)
    assert sniff_format(tmp_path / "a.satf") == "tensor"
    assert sniff_format(tmp_path / "a.pgm") == "pgm"
    assert sniff_format(tmp_path / "a.sadf") == "dict"
    (tmp_path / "junk").write_bytes(b"????")
    with pytest.raises(FormatError):
        sniff_format(tmp_path / "junk")
