"""Layer kernels: forward contracts and finite-difference gradient checks."""

import numpy as np
import pytest

from emgtype.nn import (
    LSTM,
    Adam,
    BatchNorm,
    CausalPad,
    Conv1d,
    Dense,
    Dropout,
    MaxPool1d,
    Parameter,
    ReLU,
    load_archive,
    log_softmax,
    save_archive,
    softmax,
)

from conftest import numeric_grad, rel_error


def rng64(seed=0):
    return np.random.default_rng(seed)


def check_layer_gradients(layer, x, train=False, rng=None, seed=0, tol=1e-4):
    """Project output onto a fixed random vector and compare all gradients."""
    u = rng64(seed).normal(size=layer.forward(x.copy(), train=train, rng=rng).shape)

    def loss():
        return float((layer.forward(x, train=train, rng=rng) * u).sum())

    layer.forward(x, train=train, rng=rng)
    for p in layer.params():
        p.zero_grad()
    grad_x = layer.backward(u.astype(x.dtype))

    assert rel_error(grad_x, numeric_grad(loss, x)) < tol
    for p in layer.params():
        assert rel_error(p.grad, numeric_grad(loss, p.value)) < tol, p.name


class TestConv1d:
    def test_identity_kernel(self):
        conv = Conv1d(3, 3, 1, rng64(), dtype=np.float64)
        conv.weight.value[...] = np.eye(3)[None]
        conv.bias.value[...] = 0
        x = rng64(1).normal(size=(2, 6, 3))
        assert np.allclose(conv.forward(x), x)

    def test_hand_computed(self):
        conv = Conv1d(1, 1, 2, rng64(), dtype=np.float64)
        conv.weight.value[...] = 1.0
        conv.bias.value[...] = 0.0
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
        out = conv.forward(x)
        assert np.allclose(out.ravel(), [3.0, 5.0])

    def test_output_length(self):
        conv = Conv1d(2, 4, 9, rng64(), dtype=np.float64)
        out = conv.forward(rng64(2).normal(size=(1, 50, 2)))
        assert out.shape == (1, 42, 4)

    def test_too_short_input(self):
        conv = Conv1d(1, 1, 9, rng64(), dtype=np.float64)
        with pytest.raises(ValueError, match="receptive field"):
            conv.forward(np.zeros((1, 4, 1)))

    @pytest.mark.parametrize("trial", range(5))
    def test_gradients(self, trial):
        r = rng64(100 + trial)
        c_in, c_out, k = int(r.integers(1, 4)), int(r.integers(1, 4)), int(r.integers(1, 4))
        conv = Conv1d(c_in, c_out, k, r, dtype=np.float64)
        x = r.normal(size=(2, int(r.integers(k, k + 5)), c_in))
        check_layer_gradients(conv, x, seed=trial)


class TestMaxPool:
    def test_constant_input(self):
        pool = MaxPool1d(3)
        out = pool.forward(np.full((1, 9, 2), 5.0))
        assert out.shape == (1, 3, 2)
        assert np.all(out == 5.0)

    def test_floor_chain(self):
        pool = MaxPool1d(3)
        t = 30000
        for expected in (10000, 3333, 1111):
            x = np.zeros((1, t, 1))
            t = pool.forward(x).shape[1]
            assert t == expected

    def test_too_short(self):
        with pytest.raises(ValueError):
            MaxPool1d(3).forward(np.zeros((1, 2, 1)))

    def test_tie_routes_to_first(self):
        pool = MaxPool1d(3)
        x = np.array([[2.0, 2.0, 1.0]]).reshape(1, 3, 1)
        pool.forward(x)
        grad = pool.backward(np.ones((1, 1, 1)))
        assert np.allclose(grad.ravel(), [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("trial", range(5))
    def test_gradients_away_from_ties(self, trial):
        r = rng64(200 + trial)
        pool = MaxPool1d(3)
        # spread values so no window has entries within the FD step
        x = r.permutation(np.arange(24.0)).reshape(2, 6, 2) * 0.5
        check_layer_gradients(pool, x, seed=trial)


class TestDense:
    def test_identity(self):
        fc = Dense(3, 3, rng64(), dtype=np.float64)
        fc.weight.value[...] = np.eye(3)
        fc.bias.value[...] = 0
        x = rng64(3).normal(size=(2, 4, 3))
        assert np.allclose(fc.forward(x), x)

    def test_matches_matmul(self):
        r = rng64(4)
        fc = Dense(3, 5, r, dtype=np.float64)
        x = r.normal(size=(2, 4, 3))
        expected = x @ fc.weight.value + fc.bias.value
        assert np.allclose(fc.forward(x), expected)

    def test_shape_mismatch(self):
        fc = Dense(3, 5, rng64(), dtype=np.float64)
        with pytest.raises(ValueError, match="feature mismatch"):
            fc.forward(np.zeros((1, 2, 4)))

    @pytest.mark.parametrize("trial", range(5))
    def test_gradients(self, trial):
        r = rng64(300 + trial)
        fc = Dense(4, 3, r, dtype=np.float64)
        check_layer_gradients(fc, r.normal(size=(2, 5, 4)), seed=trial)


class TestBatchNorm:
    def test_train_normalizes(self):
        bn = BatchNorm(3, dtype=np.float64)
        x = rng64(5).normal(loc=4.0, scale=2.5, size=(8, 10, 3))
        out = bn.forward(x, train=True)
        flat = out.reshape(-1, 3)
        assert np.allclose(flat.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(flat.var(axis=0), 1.0, atol=1e-3)

    def test_running_stats_momentum(self):
        bn = BatchNorm(1, dtype=np.float64)
        x = np.full((1, 4, 1), 10.0)
        bn.forward(x, train=True)
        # running mean: 0.9 * 0 + 0.1 * 10
        assert np.allclose(bn.running_mean, 1.0)

    def test_infer_deterministic(self):
        bn = BatchNorm(3, dtype=np.float64)
        bn.forward(rng64(6).normal(size=(4, 5, 3)), train=True)
        x = rng64(7).normal(size=(2, 5, 3))
        assert np.array_equal(bn.forward(x), bn.forward(x))

    def test_zero_batch_errors(self):
        bn = BatchNorm(3, dtype=np.float64)
        with pytest.raises(ValueError, match="zero batch"):
            bn.forward(np.zeros((0, 0, 3)), train=True)

    @pytest.mark.parametrize("trial", range(5))
    def test_gradients_train_mode(self, trial):
        r = rng64(400 + trial)
        bn = BatchNorm(3, dtype=np.float64)
        bn.gamma.value[...] = r.uniform(0.5, 1.5, size=3)
        bn.beta.value[...] = r.normal(size=3)
        check_layer_gradients(bn, r.normal(size=(3, 4, 3)), train=True, seed=trial)


class TestDropout:
    def test_rate_zero_identity(self):
        x = rng64(8).normal(size=(2, 3, 4))
        out = Dropout(0.0).forward(x, train=True, rng=rng64(0))
        assert np.array_equal(out, x)

    def test_infer_identity(self):
        x = rng64(9).normal(size=(2, 3, 4))
        assert np.array_equal(Dropout(0.5).forward(x, train=False), x)

    def test_empirical_zero_fraction(self):
        drop = Dropout(0.3)
        x = np.ones((10, 100, 100))
        out = drop.forward(x, train=True, rng=rng64(10))
        zero_frac = float((out == 0).mean())
        assert abs(zero_frac - 0.3) < 0.01
        survivors = out[out != 0]
        assert np.allclose(survivors, 1.0 / 0.7)

    def test_backward_uses_same_mask(self):
        drop = Dropout(0.5)
        x = np.ones((1, 10, 10))
        out = drop.forward(x, train=True, rng=rng64(11))
        grad = drop.backward(np.ones_like(x))
        assert np.array_equal(grad == 0, out == 0)


class TestLSTM:
    def test_zero_weights_zero_output(self):
        lstm = LSTM(3, 4, rng64(), dtype=np.float64)
        for p in lstm.params():
            p.value[...] = 0.0
        out = lstm.forward(rng64(12).normal(size=(2, 5, 3)))
        assert np.allclose(out, 0.0)

    def test_scalar_hand_computation(self):
        # H = 1, T = 2: grind the gate arithmetic by hand
        lstm = LSTM(1, 1, rng64(), dtype=np.float64)
        wx = np.array([[0.5, -0.3, 0.8, 0.2]])
        wh = np.array([[0.1, 0.4, -0.2, 0.3]])
        b = np.array([0.05, 1.0, -0.1, 0.0])
        lstm.wx.value[...] = wx
        lstm.wh.value[...] = wh
        lstm.bias.value[...] = b
        x = np.array([[0.7], [-1.2]]).reshape(1, 2, 1)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        h_prev = c_prev = 0.0
        expect = []
        for t in range(2):
            xt = x[0, t, 0]
            a = xt * wx[0] + h_prev * wh[0] + b
            i, f, g, o = sig(a[0]), sig(a[1]), np.tanh(a[2]), sig(a[3])
            c = f * c_prev + i * g
            h_prev = o * np.tanh(c)
            c_prev = c
            expect.append(h_prev)
        out = lstm.forward(x)
        assert np.allclose(out.ravel(), expect, atol=1e-12)

    def test_shape_mismatch(self):
        lstm = LSTM(3, 4, rng64(), dtype=np.float64)
        with pytest.raises(ValueError, match="feature mismatch"):
            lstm.forward(np.zeros((1, 5, 2)))

    @pytest.mark.parametrize("trial", range(5))
    def test_bptt_gradients(self, trial):
        r = rng64(500 + trial)
        lstm = LSTM(3, 2, r, dtype=np.float64)
        check_layer_gradients(lstm, r.normal(size=(2, 6, 3)), seed=trial)


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(np.zeros((3, 5)))
        assert np.allclose(out, 0.2)

    def test_rows_sum_to_one(self):
        out = softmax(rng64(13).normal(scale=4, size=(10, 34)))
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_shift_invariance(self):
        x = rng64(14).normal(size=(4, 6))
        assert np.allclose(softmax(x), softmax(x + 100.0), atol=1e-12)

    def test_extreme_logits_finite(self):
        x = np.array([[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]])
        out = softmax(x)
        assert np.isfinite(out).all()
        assert np.allclose(out.sum(axis=-1), 1.0)
        assert np.isfinite(log_softmax(x)[0, 0])


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = Parameter(np.ones(3))
        opt = Adam([p])
        before = p.value.copy()
        opt.step()
        assert np.array_equal(p.value, before)

    def test_single_step_hand_computation(self):
        # f(w) = w^2 at w = 1: g = 2, m_hat = 2, v_hat = 4, step = lr * 2/(2+eps)
        p = Parameter(np.array([1.0]))
        opt = Adam([p], lr=1e-3)
        p.grad[...] = 2.0
        opt.step()
        expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8)
        assert abs(p.value[0] - expected) < 1e-15

    def test_quadratic_descent_monotone(self):
        p = Parameter(np.array([1.0]))
        opt = Adam([p], lr=1e-2)
        losses = []
        for _ in range(200):
            opt.zero_grad()
            p.grad[...] = 2.0 * p.value
            losses.append(float(p.value[0] ** 2))
            opt.step()
        warm = losses[10:]
        assert all(b <= a + 1e-12 for a, b in zip(warm, warm[1:]))
        assert losses[-1] < 1e-3 * losses[0]


class TestCausalPad:
    def test_pads_left_only(self):
        pad = CausalPad(2)
        x = np.arange(6.0).reshape(1, 6, 1) + 1
        out = pad.forward(x)
        assert out.shape == (1, 8, 1)
        assert np.all(out[:, :2] == 0)
        assert np.array_equal(out[:, 2:], x)
        grad = pad.backward(np.ones_like(out))
        assert grad.shape == x.shape


class TestRelu:
    def test_forward_backward(self):
        relu = ReLU()
        x = np.array([[-1.0, 2.0, 0.0]]).reshape(1, 1, 3)
        out = relu.forward(x)
        assert np.array_equal(out.ravel(), [0.0, 2.0, 0.0])
        grad = relu.backward(np.ones_like(x))
        assert np.array_equal(grad.ravel(), [0.0, 1.0, 0.0])


class TestCheckpointArchive:
    def test_round_trip_exact(self, tmp_path):
        r = rng64(15)
        tensors = {
            "a.weight": r.normal(size=(3, 4)).astype(np.float32),
            "b.bias": r.normal(size=7).astype(np.float32),
            "c.stats": r.normal(size=(2, 2)).astype(np.float64),
        }
        meta = {"arch": {"widths": [1, 2, 3]}, "note": "x"}
        path = tmp_path / "model.nta"
        save_archive(path, tensors, meta)
        loaded, meta2 = load_archive(path)
        assert meta2 == meta
        assert set(loaded) == set(tensors)
        for k in tensors:
            assert np.array_equal(loaded[k], tensors[k])
            assert loaded[k].dtype == tensors[k].dtype
        # byte-stable: re-saving the loaded archive is identical
        path2 = tmp_path / "model2.nta"
        save_archive(path2, loaded, meta2)
        assert path.read_bytes() == path2.read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "bogus.nta"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a tensor archive"):
            load_archive(p)
