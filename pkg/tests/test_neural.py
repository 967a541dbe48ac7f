import io

import numpy as np
import pytest

from mecoffload import neural


def numeric_grads(mlp, x, actions, targets, h=1e-5):
    flat = mlp.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        mlp.set_flat(plus)
        lp = neural.mse_loss(mlp, x, actions, targets)
        mlp.set_flat(minus)
        lm = neural.mse_loss(mlp, x, actions, targets)
        out[i] = (lp - lm) / (2 * h)
    mlp.set_flat(flat)
    return out


def relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


@pytest.mark.parametrize("seed", range(12))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    depth = rng.integers(1, 4)
    dims = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    mlp = neural.init(dims, seed)
    mlp.set_flat(mlp.flat() + rng.normal(0, 0.1, mlp.num_parameters))
    n = int(rng.integers(1, 8))
    x = rng.normal(size=(n, dims[0]))
    actions = rng.integers(0, dims[-1], size=n)
    targets = rng.normal(size=n)
    grads, _ = neural.backward(mlp, x, actions, targets)
    assert relative_error(neural.flatten_grads(grads), numeric_grads(mlp, x, actions, targets)) <= 1e-4


def test_parameter_count_default_network():
    mlp = neural.Mlp((4, 200, 200, 3))
    assert mlp.num_parameters == 4 * 200 + 200 + 200 * 200 + 200 + 200 * 3 + 3 == 41_803


def test_tiny_network_closed_form():
    mlp = neural.Mlp((1, 2, 1))
    mlp.weights[0][...] = [[0.5, -0.25]]
    mlp.biases[0][...] = [0.1, 0.2]
    mlp.weights[1][...] = [[2.0], [3.0]]
    mlp.biases[1][...] = [-1.0]
    x = np.array([[0.8]])
    h = np.tanh(np.array([0.8 * 0.5 + 0.1, 0.8 * -0.25 + 0.2]))
    q = 2.0 * h[0] + 3.0 * h[1] - 1.0
    assert neural.forward(mlp, x)[0, 0] == pytest.approx(q, rel=1e-15)

    grads, loss = neural.backward(mlp, x, [0], [0.0])
    assert loss == pytest.approx(q * q)
    d = 2 * q
    assert grads[3][0] == pytest.approx(d)
    np.testing.assert_allclose(grads[2][:, 0], d * h)
    dh = d * np.array([2.0, 3.0]) * (1 - h ** 2)
    np.testing.assert_allclose(grads[1], dh)
    np.testing.assert_allclose(grads[0][0], dh * 0.8)


def test_only_taken_action_gets_error():
    mlp = neural.init((3, 4, 2), 0)
    x = np.ones((1, 3))
    grads, _ = neural.backward(mlp, x, [1], [5.0])
    assert np.all(grads[3][0] == 0.0)  # output bias of the untaken action
    assert np.all(grads[2][:, 0] == 0.0)


def test_forward_accepts_single_vector_and_rejects_wrong_width():
    mlp = neural.init((3, 4, 2), 0)
    assert neural.forward(mlp, np.zeros(3)).shape == (1, 2)
    with pytest.raises(ValueError):
        neural.forward(mlp, np.zeros((2, 4)))


def test_glorot_init_bounds_and_determinism():
    a = neural.init((10, 30, 5), 42)
    b = neural.init((10, 30, 5), 42)
    assert np.array_equal(a.flat(), b.flat())
    assert np.abs(a.weights[0]).max() <= np.sqrt(6 / 40)
    assert np.all(a.biases[0] == 0)


def test_adam_first_step_is_learning_rate():
    mlp = neural.Mlp((1, 1))
    state = neural.OptimizerState.for_network(mlp, learning_rate=0.1)
    neural.apply_update(mlp, state, np.array([1.0, 1.0]))
    np.testing.assert_allclose(mlp.flat(), [-0.1, -0.1], rtol=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_leaves_parameters():
    mlp = neural.init((3, 5, 2), 1)
    before = mlp.flat()
    state = neural.OptimizerState.for_network(mlp)
    neural.apply_update(mlp, state, [np.zeros_like(p) for p in mlp.parameters()])
    assert np.array_equal(mlp.flat(), before)


def test_adam_rejects_non_finite_and_mismatched_gradients():
    mlp = neural.init((2, 2), 0)
    state = neural.OptimizerState.for_network(mlp)
    with pytest.raises(FloatingPointError):
        neural.apply_update(mlp, state, np.array([np.nan] * 6))
    with pytest.raises(ValueError):
        neural.apply_update(mlp, state, np.zeros(5))
    with pytest.raises(ValueError):
        neural.apply_update(mlp, state, [np.zeros((2, 2))])


def test_repeated_updates_decrease_loss():
    rng = np.random.default_rng(3)
    mlp = neural.init((3, 16, 2), 3)
    x = rng.normal(size=(32, 3))
    actions = rng.integers(0, 2, size=32)
    targets = np.sin(x[:, 0]) + 0.5 * x[:, 1]
    state = neural.OptimizerState.for_network(mlp, learning_rate=1e-3)
    losses = []
    for _ in range(200):
        grads, loss = neural.backward(mlp, x, actions, targets)
        losses.append(loss)
        neural.apply_update(mlp, state, grads)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_checkpoint_round_trip_is_exact(tmp_path):
    mlp = neural.init((4, 7, 3), 9)
    path = tmp_path / "net.npz"
    neural.save(mlp, path, episode=12)
    loaded, meta = neural.load(path)
    assert loaded.dims == mlp.dims
    assert np.array_equal(loaded.flat(), mlp.flat())
    assert meta == {"episode": 12}
    assert neural.to_bytes(mlp) == neural.to_bytes(loaded)


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(neural.CheckpointError):
        neural.load(bad)
    with pytest.raises(neural.CheckpointError):
        neural.load(tmp_path / "missing.npz")
    other = io.BytesIO()
    np.savez(other, format=np.array("something.else"), version=np.array(1))
    other.seek(0)
    with pytest.raises(neural.CheckpointError):
        neural.load(other)
    wrong = io.BytesIO()
    np.savez(wrong, format=np.array(neural.CHECKPOINT_FORMAT), version=np.array(1),
             dims=np.array([2, 2]), params=np.zeros(3))
    wrong.seek(0)
    with pytest.raises(neural.CheckpointError):
        neural.load(wrong)


def test_copy_is_independent():
    a = neural.init((2, 3, 1), 0)
    b = a.copy()
    b.weights[0][0, 0] += 1.0
    assert a.weights[0][0, 0] != b.weights[0][0, 0]
