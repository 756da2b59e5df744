import numpy as np
import pytest

from vgqa.archive import load_named_arrays, save_named_arrays
from vgqa.errors import ArchiveError


def _payload():
    rng = np.random.default_rng(0)
    return {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "b": np.arange(6, dtype=np.int64).reshape(2, 3),
        "scalarish": np.array([1.5], dtype=np.float64),
    }


def test_round_trip(tmp_path):
    path = tmp_path / "x.npz"
    manifest = {"K": 4, "note": "hello", "nested": {"a": [1, 2]}}
    save_named_arrays(path, _payload(), manifest)
    arrays, meta = load_named_arrays(path)
    assert meta == manifest
    for name, arr in _payload().items():
        assert arrays[name].dtype == arr.dtype
        np.testing.assert_array_equal(arrays[name], arr)


def test_byte_identical_rewrites(tmp_path):
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    save_named_arrays(p1, _payload(), {"k": 1})
    save_named_arrays(p2, _payload(), {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_required_key(tmp_path):
    path = tmp_path / "x.npz"
    save_named_arrays(path, {"a": np.zeros(2)}, {})
    with pytest.raises(ArchiveError):
        load_named_arrays(path, required=("a", "b"))


def test_corrupt_file(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"this is not a zip archive")
    with pytest.raises(ArchiveError):
        load_named_arrays(path)


def test_manifest_key_reserved(tmp_path):
    from vgqa.archive import MANIFEST_KEY
    with pytest.raises(ArchiveError):
        save_named_arrays(tmp_path / "x.npz", {MANIFEST_KEY: np.zeros(1)}, {})
