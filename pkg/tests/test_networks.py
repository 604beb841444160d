import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmalign.errors import BadMagicError, ContractError, FormatError, TruncatedFileError, VersionMismatchError
from xmalign.networks import (
    Activation,
    Adam,
    AdamConfig,
    InputKind,
    Network,
    NetworkSpec,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    forward_audio,
    forward_visual,
    generate,
    load_checkpoint,
    save_checkpoint,
)


def _net(rng, widths=(5, 7, 3), act=Activation.RELU, kind=InputKind.FLAT_VECTOR):
    return Network.init(NetworkSpec(widths, act, kind), rng)


def test_flat_forward_matches_manual(rng):
    net = _net(rng)
    x = rng.normal(size=(4, 5))
    h = np.maximum(x @ net.weights[0] + net.biases[0], 0.0)
    np.testing.assert_allclose(net.forward(x), h @ net.weights[1] + net.biases[1], rtol=1e-14)


def test_temporal_pools_before_head(rng):
    net = _net(rng, (3, 6, 6, 2), Activation.TANH, InputKind.TEMPORAL_SEQUENCE)
    x = rng.normal(size=(2, 5, 3))
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ w + b)
    expected = h.mean(axis=1) @ net.weights[-1] + net.biases[-1]
    np.testing.assert_allclose(net.forward(x), expected, rtol=1e-13)
    assert net.forward(x[0]).shape == (2,)


def test_single_timestep_equals_flat(rng):
    flat = _net(rng, (3, 4, 2))
    temporal = Network(NetworkSpec((3, 4, 2), input_kind=InputKind.TEMPORAL_SEQUENCE), flat.weights, flat.biases)
    x = rng.normal(size=3)
    np.testing.assert_allclose(temporal.forward(x[None]), flat.forward(x), rtol=1e-15)


def test_zero_weights_give_zero_output():
    g = Network.zeros(NetworkSpec((4, 5, 3), Activation.TANH))
    assert np.array_equal(generate(g, np.ones(1), np.ones(3)), np.zeros(3))


def test_generate_concatenates_noise_then_condition(rng):
    g = _net(rng, (5, 6, 4), Activation.TANH)
    zn, zc = rng.normal(size=2), rng.normal(size=3)
    np.testing.assert_array_equal(generate(g, zn, zc), g.forward(np.concatenate([zn, zc])))
    with pytest.raises(ContractError):
        generate(g, zn, rng.normal(size=2))


def test_forward_helpers(rng):
    f_v = _net(rng)
    assert np.array_equal(forward_visual(f_v, np.ones(5)), f_v.forward(np.ones(5)))
    with pytest.raises(ContractError):
        forward_audio(f_v, np.ones((3, 5)))


def test_shape_errors(rng):
    net = _net(rng)
    with pytest.raises(ContractError):
        net.forward(np.ones((2, 4)))
    with pytest.raises(ContractError):
        NetworkSpec((3, 2))


@pytest.mark.parametrize("act", list(Activation))
@pytest.mark.parametrize("kind", list(InputKind))
def test_backward_matches_finite_differences(act, kind, rng):
    net = _net(rng, (3, 5, 4, 2), act, kind)
    x = rng.normal(size=(3, 4, 3) if kind == InputKind.TEMPORAL_SEQUENCE else (3, 3))
    upstream = rng.normal(size=(3, 2))

    def objective():
        return float(np.sum(net.forward(x) * upstream))

    _, cache = net.forward_cached(x)
    grads, grad_in = net.backward(cache, upstream)
    h = 1e-6
    for p, g in zip(net.params + [x], grads + [grad_in]):
        for idx in list(np.ndindex(p.shape))[:12]:
            old = p[idx]
            p[idx] = old + h
            up = objective()
            p[idx] = old - h
            down = objective()
            p[idx] = old
            assert (up - down) / (2 * h) == pytest.approx(g[idx], rel=1e-5, abs=1e-7)


def test_freeze_blocks_writes(rng):
    net = _net(rng).freeze()
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0
    assert net.copy(frozen=False).frozen is False


def test_adam_first_step_is_lr_times_sign():
    p = np.array([1.0, -2.0])
    Adam([p], AdamConfig(lr=0.1, weight_decay=0.0)).step([p], [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-7)


def test_adam_decoupled_decay():
    p = np.array([2.0])
    Adam([p], AdamConfig(lr=0.1, weight_decay=0.5)).step([p], [np.array([0.0])])
    assert p[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adam_minimizes_quadratic():
    p = np.array([5.0, -3.0])
    opt = Adam([p], AdamConfig(lr=0.05, weight_decay=0.0))
    for _ in range(2000):
        opt.step([p], [2 * p])
    assert np.abs(p).max() < 1e-3


def test_checkpoint_round_trip(tmp_path, rng):
    nets = {"f_v": _net(rng).freeze(), "f_a": _net(rng, (2, 3, 3, 4), Activation.TANH, InputKind.TEMPORAL_SEQUENCE)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(nets, path)
    back = load_checkpoint(path)
    assert list(back) == ["f_v", "f_a"]
    for name in nets:
        assert back[name].spec == nets[name].spec
        assert back[name].frozen == nets[name].frozen
        assert back[name].checksum() == nets[name].checksum()
    assert checkpoint_to_bytes(back) == path.read_bytes()


def test_checkpoint_errors(rng):
    buf = checkpoint_to_bytes({"g": _net(rng)})
    with pytest.raises(BadMagicError):
        checkpoint_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(VersionMismatchError):
        checkpoint_from_bytes(buf[:4] + b"\x07\x00" + buf[6:])
    with pytest.raises(TruncatedFileError, match="g"):
        checkpoint_from_bytes(buf[:-3])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(buf + b"\0\0")


def test_same_seed_same_init():
    spec = NetworkSpec((4, 6, 2))
    a = Network.init(spec, np.random.default_rng(1))
    b = Network.init(spec, np.random.default_rng(1))
    assert a.checksum() == b.checksum()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=3, max_size=5), st.integers(0, 1000))
def test_checkpoint_round_trip_any_shape(widths, seed):
    net = Network.init(NetworkSpec(widths), np.random.default_rng(seed))
    back = checkpoint_from_bytes(checkpoint_to_bytes({"n": net}))["n"]
    assert back.checksum() == net.checksum()
