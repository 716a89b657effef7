"""Tests for parameter storage and checkpoint round trips."""

import numpy as np
import pytest

from trajsieve.errors import CheckpointError, DimensionError
from trajsieve.params import ParameterStore, load_checkpoint, save_checkpoint


def _store():
    store = ParameterStore()
    rng = np.random.default_rng(0)
    store.add("w_in", rng.normal(size=(4, 8)))
    store.add("b_in", np.zeros(8))
    store.add("gain", np.array(1.5))
    return store


def test_duplicate_name_rejected():
    store = _store()
    with pytest.raises(DimensionError):
        store.add("w_in", np.zeros((2, 2)))


def test_grad_norm_and_zero():
    store = _store()
    store["w_in"].grad[...] = 3.0
    store["b_in"].grad[...] = 4.0
    expected = np.sqrt(9.0 * 32 + 16.0 * 8)
    assert abs(store.grad_norm() - expected) < 1e-12
    store.zero_grads()
    assert store.grad_norm() == 0.0


def test_checkpoint_round_trip(tmp_path):
    store = _store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, "demo", {"width": 8}, store)
    kind, config, arrays = load_checkpoint(path)
    assert kind == "demo"
    assert config == {"width": 8}
    for name, tensor in store.items():
        assert np.array_equal(arrays[name], tensor.data)
    other = _store()
    other["w_in"].data[...] = 0.0
    other.load_arrays(arrays)
    assert np.array_equal(other["w_in"].data, store["w_in"].data)


def test_checkpoint_bytes_deterministic(tmp_path):
    store = _store()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, "demo", {"width": 8}, store)
    save_checkpoint(p2, "demo", {"width": 8}, store)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_wrong_format(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b'{"format":"something-else"}\n')
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_load_rejects_truncation(tmp_path):
    store = _store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, "demo", {}, store)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_load_rejects_trailing_bytes(tmp_path):
    store = _store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, "demo", {}, store)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_load_arrays_shape_mismatch():
    store = _store()
    arrays = store.state_arrays()
    arrays["w_in"] = np.zeros((2, 2))
    with pytest.raises(CheckpointError, match="w_in"):
        store.load_arrays(arrays)


def test_load_arrays_name_mismatch():
    store = _store()
    arrays = store.state_arrays()
    del arrays["gain"]
    with pytest.raises(CheckpointError, match="gain"):
        store.load_arrays(arrays)
