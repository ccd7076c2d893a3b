import numpy as np
import pytest
from hypothesis import given, strategies as st

from cslrobust import tensor as T
from cslrobust.errors import ConfigError, DimensionError
from cslrobust.losses import cross_entropy_loss
from cslrobust.models import (CheckpointError, EncoderConfig, LinearProbe, encode, encoder_init,
                              load_checkpoint, probe_forward, save_checkpoint)
from cslrobust.tensor import Tensor

from conftest import grad_check


def mlp(seed=0, widths=(8, 8), d=4, input_dim=2):
    return encoder_init(EncoderConfig("mlp", input_dim, None, widths, d, seed))


class TestConfig:
    def test_parameter_count(self):
        assert mlp().parameter_count() == 2 * 8 + 8 + 8 * 8 + 8 + 8 * 4 + 4 == 132

    @pytest.mark.parametrize("kwargs, field", [
        (dict(embedding_dim=1), "embedding_dim"),
        (dict(hidden_widths=()), "hidden_widths"),
        (dict(hidden_widths=(4, 0)), "hidden_widths"),
        (dict(architecture="resnet"), "architecture"),
        (dict(input_dim=None), "input_dim"),
    ])
    def test_invalid(self, kwargs, field):
        base = dict(architecture="mlp", input_dim=3, hidden_widths=(4,), embedding_dim=2)
        with pytest.raises(ConfigError) as exc:
            EncoderConfig(**{**base, **kwargs})
        assert exc.value.field == field

    def test_cnn_needs_divisible_shape(self):
        with pytest.raises(ConfigError):
            EncoderConfig("small_cnn", None, (3, 6, 8), (4, 4, 8), 4)

    def test_dict_round_trip(self):
        cfg = EncoderConfig("small_cnn", None, (3, 8, 8), (4, 4, 8), 4, 7)
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg


class TestInit:
    def test_same_seed_identical(self):
        a, b = mlp(3), mlp(3)
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

    def test_different_seed_differs(self):
        a, b = mlp(3), mlp(4)
        assert not np.array_equal(a.params["fc0.weight"].data, b.params["fc0.weight"].data)

    def test_uniform_bound(self):
        enc = mlp(widths=(50,), input_dim=25)
        assert np.abs(enc.params["fc0.weight"].data).max() <= 1 / 5
        assert np.abs(enc.params["fc1.weight"].data).max() <= 1 / np.sqrt(50)


class TestEncode:
    @given(st.integers(0, 2**32 - 1))
    def test_unit_norm(self, seed):
        x = np.random.default_rng(seed).normal(size=(5, 2)) * 10
        z = encode(mlp(seed % 7), x).data
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)

    def test_duplicate_rows(self, rng):
        x = rng.normal(size=(1, 2)).repeat(3, axis=0)
        z = encode(mlp(), x).data
        assert np.array_equal(z[0], z[1]) and np.array_equal(z[1], z[2])

    def test_permutation_equivariance(self, rng):
        x = rng.normal(size=(6, 2))
        perm = rng.permutation(6)
        enc = mlp()
        np.testing.assert_array_equal(encode(enc, x).data[perm], encode(enc, x[perm]).data)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            encode(mlp(), np.zeros((3, 5)))

    def test_input_gradient(self, rng):
        enc = mlp().frozen()
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(lambda: T.sum(T.mul(encode(enc, x), w)), [x], rng, n_coords=6) < 1e-5

    def test_small_cnn(self, rng):
        enc = encoder_init(EncoderConfig("small_cnn", None, (3, 8, 8), (4, 4, 8), 4, 0))
        z = encode(enc, rng.uniform(size=(2, 3, 8, 8))).data
        assert z.shape == (2, 4)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)

    def test_small_cnn_parameter_gradients(self, rng):
        enc = encoder_init(EncoderConfig("small_cnn", None, (1, 4, 4), (2, 2, 4), 3, 1))
        x = rng.uniform(size=(2, 1, 4, 4))
        w = Tensor(rng.normal(size=(2, 3)))
        loss = lambda: T.sum(T.mul(encode(enc, x), w))
        assert grad_check(loss, enc.parameters, rng, n_coords=40) < 1e-5


class TestProbe:
    def test_zero_weights_give_bias(self):
        probe = LinearProbe(Tensor(np.zeros((4, 3))), Tensor([1.0, -2.0, 0.5]))
        out = probe_forward(probe, np.ones((5, 4)) / 2).data
        np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (5, 1)))

    def test_identity_weights(self, rng):
        z = rng.normal(size=(4, 3))
        b = np.array([0.1, 0.2, 0.3])
        out = probe_forward(LinearProbe(Tensor(np.eye(3)), Tensor(b)), z).data
        np.testing.assert_allclose(out, z + b, atol=1e-15)

    def test_separable_fixture(self):
        z = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-0.2, 0.98]])
        probe = LinearProbe(Tensor([[1.0, -1.0], [-1.0, 1.0]]), Tensor([0.0, 0.0]))
        assert probe_forward(probe, z).data.argmax(axis=1).tolist() == [0, 0, 1, 1]

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            probe_forward(LinearProbe.zeros(4, 2), np.ones((2, 3)))

    def test_end_to_end_input_gradient(self, rng):
        enc = mlp().frozen()
        probe = LinearProbe(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=3)))
        x = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        labels = np.array([0, 1, 2, 1])
        loss = lambda: cross_entropy_loss(probe_forward(probe, encode(enc, x)), labels)
        assert grad_check(loss, [x], rng, n_coords=8) < 1e-5


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        enc = mlp(5)
        extra = {"probe.weight": Tensor(np.arange(6.0).reshape(2, 3))}
        save_checkpoint(tmp_path / "a.ckpt", enc, {"seed": 5}, extra)
        back, meta, ex = load_checkpoint(tmp_path / "a.ckpt")
        assert back.config == enc.config and meta == {"seed": 5}
        for k in enc.params:
            assert back.params[k].data.tobytes() == enc.params[k].data.tobytes()
        assert ex["probe.weight"].data.tobytes() == extra["probe.weight"].data.tobytes()

    def test_deterministic_bytes(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", mlp(1), {"x": 1})
        save_checkpoint(tmp_path / "b.ckpt", mlp(1), {"x": 1})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_rejects_truncation(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", mlp(), {})
        raw = (tmp_path / "a.ckpt").read_bytes()
        (tmp_path / "a.ckpt").write_bytes(raw + b"\0" * 8)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "a.ckpt")
