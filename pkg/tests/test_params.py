import numpy as np
import pytest

from a3r.errors import ConfigError
from a3r.nets import DenseNet
from a3r.params import ParamStore, orthogonal


def test_register_and_grad_slots():
    store = ParamStore()
    w = store.register("w", np.ones((2, 2)))
    assert "w" in store
    store["w"].grad[...] = 3.0
    store.add_grad("w", np.ones((2, 2)))
    np.testing.assert_array_equal(store["w"].grad, 4.0)
    store.zero_grads()
    np.testing.assert_array_equal(store["w"].grad, 0.0)
    with pytest.raises(ConfigError):
        store.register("w", np.ones(2))


def test_grad_global_norm():
    store = ParamStore()
    store.register("a", np.zeros(2))
    store.register("b", np.zeros(1))
    store["a"].grad[...] = [3.0, 0.0]
    store["b"].grad[...] = [4.0]
    assert abs(store.grad_global_norm() - 5.0) < 1e-12


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    store = ParamStore()
    DenseNet(store, "net", [3, 4, 2], rng)
    saved = {name: store[name].value.copy() for name in store.names()}
    store.save(tmp_path / "ck", "0.1.0")

    restored = ParamStore()
    DenseNet(restored, "net", [3, 4, 2], np.random.default_rng(99))
    version = restored.load(tmp_path / "ck")
    assert version == "0.1.0"
    for name in saved:
        np.testing.assert_array_equal(restored[name].value, saved[name])


def test_checkpoint_name_mismatch_rejected(tmp_path):
    store = ParamStore()
    store.register("only.param", np.ones(3))
    store.save(tmp_path / "ck", "v")
    other = ParamStore()
    other.register("different.param", np.ones(3))
    with pytest.raises(ConfigError):
        other.load(tmp_path / "ck")


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    store = ParamStore()
    store.register("p", np.ones(3))
    store.save(tmp_path / "ck", "v")
    other = ParamStore()
    other.register("p", np.ones(4))
    with pytest.raises(ConfigError):
        other.load(tmp_path / "ck")


@pytest.mark.parametrize("fan_in,fan_out", [(8, 4), (4, 8), (5, 5)])
def test_orthogonal_init(fan_in, fan_out):
    w = orthogonal(np.random.default_rng(0), fan_in, fan_out)
    assert w.shape == (fan_in, fan_out)
    if fan_in >= fan_out:
        np.testing.assert_allclose(w.T @ w, np.eye(fan_out), atol=1e-12)
    else:
        np.testing.assert_allclose(w @ w.T, np.eye(fan_in), atol=1e-12)
