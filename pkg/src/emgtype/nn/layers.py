"""Reverse-mode layer kernels for the recognizer.

Each layer implements ``forward`` / ``backward`` over arrays shaped
[N, T, features]; caches needed by the backward pass are kept on the layer
instance, so one instance serves one forward/backward pair at a time.
Parameters are plain arrays with a gradient accumulator; there is no
general autodiff graph, the model wires layers explicitly.
"""

from __future__ import annotations

import numpy as np

from .. import kernels


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Layer:
    """Base: stateless unless noted; params() lists trainable parameters."""

    def params(self) -> list[Parameter]:
        return []

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable tensors that belong in a checkpoint (e.g. BN stats)."""
        return {}

    def forward(self, x: np.ndarray, *, train: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _check_finite(x: np.ndarray, where: str):
    if not np.isfinite(x).all():
        raise FloatingPointError(f"non-finite values entering {where}")


class Conv1d(Layer):
    """Valid (no padding) 1-D convolution along time, stride 1.

    out[n, t, o] = bias[o] + sum_{i,c} x[n, t+i, c] * weight[i, c, o]
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, rng, dtype=np.float32, name="conv"):
        self.kernel = kernel
        self.weight = Parameter(
            he_uniform(rng, (kernel, c_in, c_out), fan_in=kernel * c_in, dtype=dtype),
            name=f"{name}.weight",
        )
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), name=f"{name}.bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    @staticmethod
    def _windows(x: np.ndarray, k: int) -> np.ndarray:
        n, t, c = x.shape
        sn, st, sc = x.strides
        return np.lib.stride_tricks.as_strided(
            x, shape=(n, t - k + 1, k, c), strides=(sn, st, st, sc), writeable=False
        )

    def forward(self, x, *, train=False, rng=None):
        k = self.kernel
        if x.shape[1] < k:
            raise ValueError("input shorter than receptive field")
        _check_finite(x, "conv1d")
        self._x = x
        win = self._windows(np.ascontiguousarray(x), k)
        out = np.tensordot(win, self.weight.value, axes=([2, 3], [0, 1]))
        out += self.bias.value
        return out

    def backward(self, grad_out):
        x = self._x
        k = self.kernel
        win = self._windows(np.ascontiguousarray(x), k)
        self.weight.grad += np.tensordot(win, grad_out, axes=([0, 1], [0, 1]))
        self.bias.grad += grad_out.sum(axis=(0, 1))
        grad_x = np.zeros_like(x)
        w = self.weight.value
        for i in range(k):
            grad_x[:, i : i + grad_out.shape[1]] += grad_out @ w[i].T
        return grad_x


class CausalPad(Layer):
    """Left-pad the time axis with zeros (keeps convolutions causal)."""

    def __init__(self, pad: int):
        self.pad = pad

    def forward(self, x, *, train=False, rng=None):
        if self.pad == 0:
            return x
        n, t, c = x.shape
        out = np.zeros((n, t + self.pad, c), dtype=x.dtype)
        out[:, self.pad :] = x
        return out

    def backward(self, grad_out):
        return grad_out[:, self.pad :] if self.pad else grad_out


class MaxPool1d(Layer):
    """Non-overlapping max pooling; ties route the gradient to the first max."""

    def __init__(self, width: int = 3):
        self.width = width
        self._argmax = None
        self._in_shape = None

    def forward(self, x, *, train=False, rng=None):
        w = self.width
        n, t, c = x.shape
        if t < w:
            raise ValueError(f"pooling needs at least {w} samples, got {t}")
        t_out = t // w
        view = x[:, : t_out * w].reshape(n, t_out, w, c)
        self._argmax = view.argmax(axis=2)
        self._in_shape = x.shape
        return view.max(axis=2)

    def backward(self, grad_out):
        n, t_out, c = grad_out.shape
        w = self.width
        grad_x = np.zeros(self._in_shape, dtype=grad_out.dtype)
        view = grad_x[:, : t_out * w].reshape(n, t_out, w, c)
        ni, ti, ci = np.ogrid[:n, :t_out, :c]
        view[ni, ti, self._argmax, ci] = grad_out
        return grad_x


class ConvStage(Layer):
    """Fused extractor stage: causal conv, batch norm, ReLU, max-pool.

    Composition-equivalent to CausalPad(k-1) -> Conv1d -> BatchNorm -> ReLU
    -> MaxPool1d, but routed through the kernel backend in one piece: this
    stack runs at the raw sample rate and dominates training time.
    Parameter and state names mirror the unfused layers, so checkpoints
    stay interchangeable.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng,
        pool: int = 3,
        momentum=0.9,
        eps=1e-5,
        dtype=np.float32,
        name="stage",
    ):
        self.kernel = kernel
        self.pool = pool
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(
            he_uniform(rng, (kernel, c_in, c_out), fan_in=kernel * c_in, dtype=dtype),
            name=f"{name}.conv.weight",
        )
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), name=f"{name}.conv.bias")
        self.gamma = Parameter(np.ones(c_out, dtype=dtype), name=f"{name}.bn.gamma")
        self.beta = Parameter(np.zeros(c_out, dtype=dtype), name=f"{name}.bn.beta")
        self.running_mean = np.zeros(c_out, dtype=dtype)
        self.running_var = np.ones(c_out, dtype=dtype)
        self._name = name
        self._cache = None

    def params(self):
        return [self.weight, self.bias, self.gamma, self.beta]

    def state(self):
        return {f"{self._name}.bn.running_mean": self.running_mean,
                f"{self._name}.bn.running_var": self.running_var}

    def forward(self, x, *, train=False, rng=None):
        if x.shape[1] < self.pool:
            raise ValueError(f"stage needs at least {self.pool} samples, got {x.shape[1]}")
        _check_finite(x, "conv stage")
        x = np.ascontiguousarray(x)
        pooled, conv, mean, istd, sel = kernels.stage_forward(
            x,
            self.weight.value,
            self.bias.value,
            self.gamma.value,
            self.beta.value,
            self.running_mean,
            self.running_var,
            self.momentum,
            self.eps,
            self.pool,
            train,
        )
        self._cache = (x, conv, mean, istd, sel, train)
        return pooled

    def backward(self, grad_out):
        x, conv, mean, istd, sel, train = self._cache
        if not train:
            raise RuntimeError("backward through an inference-mode stage")
        dx, dw, dbias, dgamma, dbeta = kernels.stage_backward(
            np.ascontiguousarray(grad_out),
            x,
            self.weight.value,
            self.gamma.value,
            self.beta.value,
            conv,
            mean,
            istd,
            sel,
            self.pool,
        )
        self.weight.grad += dw
        self.bias.grad += dbias
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class Dense(Layer):
    """Affine map applied independently at every timestep."""

    def __init__(self, d_in: int, d_out: int, rng, dtype=np.float32, name="fc"):
        self.weight = Parameter(
            he_uniform(rng, (d_in, d_out), fan_in=d_in, dtype=dtype), name=f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), name=f"{name}.bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, *, train=False, rng=None):
        if x.shape[-1] != self.weight.value.shape[0]:
            raise ValueError(
                f"feature mismatch: got {x.shape[-1]}, expected {self.weight.value.shape[0]}"
            )
        _check_finite(x, "dense")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad_out):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        g2 = grad_out.reshape(-1, grad_out.shape[-1])
        self.weight.grad += x2.T @ g2
        self.bias.grad += g2.sum(axis=0)
        return (grad_out @ self.weight.value.T).reshape(self._x.shape)


class BatchNorm(Layer):
    """Per-feature normalization over all leading axes.

    Train mode uses batch statistics and updates the running estimates with
    momentum 0.9; inference uses the running estimates (required for
    streaming, where there is no batch).
    """

    def __init__(self, n_features: int, rng=None, momentum=0.9, eps=1e-5, dtype=np.float32, name="bn"):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(n_features, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(n_features, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self._name = name
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return {f"{self._name}.running_mean": self.running_mean,
                f"{self._name}.running_var": self.running_var}

    def forward(self, x, *, train=False, rng=None):
        feat = x.shape[-1]
        x2 = x.reshape(-1, feat)
        if train:
            if x2.shape[0] == 0:
                raise ValueError("zero batch in train mode")
            mean = x2.mean(axis=0)
            var = x2.var(axis=0)
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean = self.running_mean
            var = self.running_var
        istd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x2 - mean) * istd
        self._cache = (xhat, istd, train, x.shape)
        return (xhat * self.gamma.value + self.beta.value).reshape(x.shape)

    def backward(self, grad_out):
        xhat, istd, train, shape = self._cache
        g2 = grad_out.reshape(-1, grad_out.shape[-1])
        self.gamma.grad += (g2 * xhat).sum(axis=0)
        self.beta.grad += g2.sum(axis=0)
        gg = g2 * self.gamma.value
        if train:
            m = g2.shape[0]
            dx = istd * (gg - gg.mean(axis=0) - xhat * (gg * xhat).sum(axis=0) / m)
        else:
            dx = gg * istd
        return dx.reshape(shape)


class ReLU(Layer):
    def forward(self, x, *, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out):
        return grad_out * self._mask


class Dropout(Layer):
    """Inverted dropout: active only in train mode, identity otherwise."""

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, *, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype)
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class LSTM(Layer):
    """Unidirectional LSTM with forget gate; zero initial state (causal)."""

    def __init__(self, d_in: int, hidden: int, rng, dtype=np.float32, name="lstm"):
        self.hidden = hidden
        fan_in = d_in + hidden
        self.wx = Parameter(
            he_uniform(rng, (d_in, 4 * hidden), fan_in=fan_in, dtype=dtype), name=f"{name}.wx"
        )
        self.wh = Parameter(
            he_uniform(rng, (hidden, 4 * hidden), fan_in=fan_in, dtype=dtype), name=f"{name}.wh"
        )
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.bias = Parameter(bias, name=f"{name}.bias")
        self._cache = None

    def params(self):
        return [self.wx, self.wh, self.bias]

    def forward(self, x, *, train=False, rng=None):
        if x.shape[-1] != self.wx.value.shape[0]:
            raise ValueError(
                f"feature mismatch: got {x.shape[-1]}, expected {self.wx.value.shape[0]}"
            )
        _check_finite(x, "lstm")
        n, t, _ = x.shape
        h = self.hidden
        xp = np.ascontiguousarray(x @ self.wx.value + self.bias.value)
        h0 = np.zeros((n, h), dtype=xp.dtype)
        c0 = np.zeros((n, h), dtype=xp.dtype)
        hs, gates, cs = kernels.lstm_forward(xp, np.ascontiguousarray(self.wh.value), h0, c0)
        self._cache = (x, h0, c0, hs, gates, cs)
        return hs

    def backward(self, grad_out):
        x, h0, c0, hs, gates, cs = self._cache
        dxp, dwh = kernels.lstm_backward(
            np.ascontiguousarray(grad_out),
            np.ascontiguousarray(self.wh.value),
            h0,
            c0,
            hs,
            gates,
            cs,
        )
        self.wh.grad += dwh
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dxp.reshape(-1, dxp.shape[-1])
        self.wx.grad += x2.T @ d2
        self.bias.grad += d2.sum(axis=0)
        return (dxp @ self.wx.value.T).reshape(x.shape)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax along the last axis."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
