import numpy as np
import pytest
from scipy.signal import correlate

from stlrep import _kernels
from stlrep.numerics import (
    RandomStream,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    glorot_uniform,
    maxpool2x2_backward,
    maxpool2x2_forward,
    mse,
    mse_backward,
    relu,
    relu_backward,
    sgd_step,
    sigmoid,
    sigmoid_backward,
    sym_eig,
    upsample2x_backward,
    upsample2x_forward,
)

from conftest import numeric_grad, rel_error

CASES = 50
TOL = 1e-4


def _conv_oracle(x, k, stride, padding):
    # independent reference: scipy cross-correlation per (batch, filter)
    kh, kw, c, f = k.shape
    if padding == "same":
        h, w = x.shape[1:3]
        ho, wo = -(-h // stride), -(-w // stride)
        ph = max((ho - 1) * stride + kh - h, 0)
        pw = max((wo - 1) * stride + kw - w, 0)
        x = np.pad(x, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    out = []
    for n in range(x.shape[0]):
        maps = [correlate(x[n], k[..., j], mode="valid")[..., 0] for j in range(f)]
        out.append(np.stack(maps, axis=-1)[::stride, ::stride])
    return np.stack(out)


def test_conv_forward_matches_scipy(rng):
    for _ in range(20):
        stride = int(rng.integers(1, 3))
        padding = ["same", "valid"][int(rng.integers(2))]
        x = rng.normal(size=(2, int(rng.integers(4, 9)), int(rng.integers(4, 9)), int(rng.integers(1, 4))))
        k = rng.normal(size=(3, 3, x.shape[3], int(rng.integers(1, 4))))
        got = conv2d_forward(x, k, stride=stride, padding=padding)
        np.testing.assert_allclose(got, _conv_oracle(x, k, stride, padding), atol=1e-12)


def test_conv_single_image_and_bias():
    x = np.arange(16.0).reshape(4, 4, 1)
    k = np.zeros((3, 3, 1, 2))
    k[1, 1, 0, 0] = 1.0
    y = conv2d_forward(x, k, bias=np.array([0.0, 5.0]))
    assert y.shape == (4, 4, 2)
    np.testing.assert_array_equal(y[..., 0], x[..., 0])
    np.testing.assert_array_equal(y[..., 1], 5.0)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 1, 1)))


def test_conv_gradients(rng):
    worst = 0.0
    for _ in range(CASES):
        stride = int(rng.integers(1, 3))
        padding = ["same", "valid"][int(rng.integers(2))]
        x = rng.normal(size=(2, int(rng.integers(3, 7)), int(rng.integers(3, 7)), int(rng.integers(1, 3))))
        k = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 4)), x.shape[3], int(rng.integers(1, 3))))
        b = rng.normal(size=k.shape[3])
        up = rng.normal(size=conv2d_forward(x, k, b, stride, padding).shape)
        f = lambda: np.sum(conv2d_forward(x, k, b, stride, padding) * up)  # noqa: E731
        g = conv2d_backward(x, k, up, stride, padding)
        worst = max(worst, rel_error(g.input, numeric_grad(f, x)), rel_error(g.params["kernels"], numeric_grad(f, k)),
                    rel_error(g.params["bias"], numeric_grad(f, b)))
    assert worst < TOL


def test_dense_gradients(rng):
    worst = 0.0
    for _ in range(CASES):
        n, i, o = (int(v) for v in rng.integers(1, 6, size=3))
        x, w, b = rng.normal(size=(n, i)), rng.normal(size=(o, i)), rng.normal(size=o)
        up = rng.normal(size=(n, o))
        f = lambda: np.sum(dense_forward(x, w, b) * up)  # noqa: E731
        g = dense_backward(x, w, up)
        worst = max(worst, rel_error(g.input, numeric_grad(f, x)), rel_error(g.params["weights"], numeric_grad(f, w)),
                    rel_error(g.params["bias"], numeric_grad(f, b)))
    assert worst < TOL


def test_maxpool_gradients(rng):
    worst = 0.0
    for _ in range(CASES):
        shape = (2, int(rng.integers(2, 7)), int(rng.integers(2, 7)), 2)
        # distinct, well separated values so a 1e-5 nudge never changes the argmax
        x = rng.permutation(np.prod(shape)).reshape(shape) * 0.1 + 0.0
        up = rng.normal(size=maxpool2x2_forward(x)[0].shape)
        f = lambda: np.sum(maxpool2x2_forward(x)[0] * up)  # noqa: E731
        _, idx = maxpool2x2_forward(x)
        worst = max(worst, rel_error(maxpool2x2_backward(idx, up), numeric_grad(f, x)))
    assert worst < TOL


def test_maxpool_values_and_odd_size():
    x = np.array([[1.0, 5.0, 2.0], [3.0, 4.0, 9.0], [7.0, 0.0, 8.0]])[None, :, :, None]
    y, _ = maxpool2x2_forward(x)
    np.testing.assert_array_equal(y[0, :, :, 0], [[5.0, 9.0], [7.0, 8.0]])


def test_upsample_gradients(rng):
    worst = 0.0
    for _ in range(CASES):
        x = rng.normal(size=(1, int(rng.integers(1, 5)), int(rng.integers(1, 5)), 2))
        up = rng.normal(size=(1, 2 * x.shape[1], 2 * x.shape[2], 2))
        f = lambda: np.sum(upsample2x_forward(x) * up)  # noqa: E731
        worst = max(worst, rel_error(upsample2x_backward(up), numeric_grad(f, x)))
    assert worst < TOL


def test_activation_and_loss_gradients(rng):
    worst = 0.0
    for _ in range(CASES):
        x = rng.normal(size=(3, 4))
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the relu kink
        up = rng.normal(size=x.shape)
        t = rng.uniform(size=x.shape)
        worst = max(
            worst,
            rel_error(relu_backward(x, up), numeric_grad(lambda: np.sum(relu(x) * up), x)),
            rel_error(sigmoid_backward(sigmoid(x), up), numeric_grad(lambda: np.sum(sigmoid(x) * up), x)),
            rel_error(mse_backward(x, t), numeric_grad(lambda: mse(x, t), x)),
        )
    assert worst < TOL


def test_relu_subgradient_at_zero():
    np.testing.assert_array_equal(relu_backward(np.array([0.0, 1.0, -1.0]), np.ones(3)), [0.0, 1.0, 0.0])


def test_sigmoid_extremes():
    y = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_mse_hand_value():
    assert mse(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == 2.5
    with pytest.raises(ValueError):
        mse(np.zeros(2), np.zeros(3))


def test_sgd_step_dict():
    out = sgd_step({"w": np.array([1.0, 2.0])}, {"w": np.array([10.0, -10.0])}, 0.1)
    np.testing.assert_allclose(out["w"], [0.0, 3.0])


def test_glorot_bounds():
    w = glorot_uniform(RandomStream(0), (200, 300), 300, 200)
    assert np.abs(w).max() <= np.sqrt(6 / 500)


def test_random_stream_reproducible_and_children_independent():
    a, b = RandomStream(5), RandomStream(5)
    np.testing.assert_array_equal(a.gaussian(size=5), b.gaussian(size=5))
    c1 = RandomStream(5).child("x", 0).uniform(size=3)
    c2 = RandomStream(5).child("x", 1).uniform(size=3)
    c3 = RandomStream(5).child("y", 0).uniform(size=3)
    assert not np.allclose(c1, c2) and not np.allclose(c1, c3)
    np.testing.assert_array_equal(c1, RandomStream(5).child("x", 0).uniform(size=3))
    vals = [RandomStream(1).uniform_int(3, 4) for _ in range(3)]
    assert set(vals) <= {3, 4}
    with pytest.raises(ValueError):
        RandomStream(-1)


def test_sym_eig_random_matrices(rng):
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        a = rng.normal(size=(n, n))
        a = a + a.T
        vals, vecs = sym_eig(a)
        worst = max(worst, np.abs(vecs.T @ vecs - np.eye(n)).max(), np.abs(vecs @ np.diag(vals) @ vecs.T - a).max())
        assert np.all(np.diff(vals) <= 0)
        np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-8)
    assert worst < 1e-8


def test_sym_eig_hand_cases():
    vals, vecs = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(vals, [3.0, 1.0])
    np.testing.assert_allclose(vecs[:, 0], [np.sqrt(0.5), np.sqrt(0.5)])
    vals, _ = sym_eig(np.diag([1.0, 5.0, 3.0]))
    np.testing.assert_array_equal(vals, [5.0, 3.0, 1.0])
    with pytest.raises(ValueError, match="symmetric"):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.skipif(_kernels.compiled_backend is None, reason="compiled extension not built")
def test_backends_agree(rng):
    py, cy = _kernels.python_backend, _kernels.compiled_backend
    xp = rng.normal(size=(2, 7, 6, 3))
    k = rng.normal(size=(3, 3, 3, 4))
    for stride in (1, 2):
        out = py.conv2d_forward(xp, k, stride)
        np.testing.assert_allclose(cy.conv2d_forward(xp, k, stride), out, atol=1e-12)
        up = rng.normal(size=out.shape)
        for a, b in zip(py.conv2d_backward(xp, k, up, stride), cy.conv2d_backward(xp, k, up, stride)):
            np.testing.assert_allclose(a, b, atol=1e-12)
    x = rng.normal(size=(2, 6, 4, 3))
    for a, b in zip(py.maxpool2x2_forward(x), cy.maxpool2x2_forward(x)):
        np.testing.assert_array_equal(a, b)
    a = rng.normal(size=(12, 12))
    a = a + a.T
    v1 = np.sort(py.jacobi_eigh(a.copy(), 1e-10, 100)[0])
    v2 = np.sort(cy.jacobi_eigh(a.copy(), 1e-10, 100)[0])
    np.testing.assert_allclose(v1, v2, atol=1e-9)
    X = rng.normal(size=(40, 5))
    y = rng.integers(0, 3, size=40)
    w = np.ones(40)
    assert py.best_split(X, y, w, 3)[:2] == cy.best_split(X, y, w, 3)[:2]


def test_fallback_backend_selected_by_env():
    import os
    import subprocess
    import sys

    code = ("import numpy as np, stlrep; from stlrep.numerics import sym_eig; "
            "print(stlrep.BACKEND, round(float(sym_eig(np.diag([2.0, 1.0]))[0][0]), 6))")
    env = dict(os.environ, STLREP_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "2.0"]
