"""Layers with hand-written backward passes.

Every layer works on a leading batch axis.  ``forward`` stores whatever the
matching ``backward`` needs; parameter gradients land in ``layer.grads`` and
``backward`` returns the gradient with respect to the layer input.
Shapes passed to ``output_shape`` exclude the batch axis.
"""
from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from ..errors import DegenerateInput, ShapeMismatch, UnsupportedShape
from .functional import dropout_mask, relu, sigmoid
from .init import glorot_uniform


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        # fixed tensors that are saved with the model but never optimized
        self.buffers: Dict[str, np.ndarray] = {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(input_shape)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def clear(self) -> None:
        """Drop tensors kept for ``backward``; a trained CNN otherwise holds hundreds of MB."""
        for name in ("_x", "_cols", "_out", "_mask", "_cache"):
            if hasattr(self, name):
                setattr(self, name, None)

    def __repr__(self):
        return f"{type(self).__name__}()"


def _check_trailing(x, expected, who):
    if tuple(x.shape[1:]) != tuple(expected):
        raise ShapeMismatch(f"{who}: expected (N, {', '.join(map(str, expected))}), got {x.shape}")


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        self.params["b"] = np.zeros(n_out)

    def forward(self, x, training=False, rng=None):
        _check_trailing(x, (self.n_in,), "Dense")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, grad_out):
        self.grads["W"] = grad_out.T @ self._x
        self.grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.params["W"]

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.n_in,):
            raise ShapeMismatch(f"Dense expects ({self.n_in},), got {input_shape}")
        return (self.n_out,)

    def __repr__(self):
        return f"Dense({self.n_in}->{self.n_out})"


class Standardize(Layer):
    """Fixed affine input map ``(x - mean) / scale``, fitted once on training data.

    Statistics are shared along ``reduce_axes`` (batch axis excluded), so for a
    (1, coefficients, frames) input with ``reduce_axes=(0, 2)`` each cepstral
    coefficient gets its own mean and scale.
    """

    kind = "standardize"

    def __init__(self, input_shape, reduce_axes=()):
        super().__init__()
        self.reduce_axes = tuple(reduce_axes)
        stat_shape = tuple(1 if i in self.reduce_axes else s for i, s in enumerate(input_shape))
        self.buffers["mean"] = np.zeros(stat_shape)
        self.buffers["scale"] = np.ones(stat_shape)

    def fit(self, x):
        x = np.asarray(x, dtype=np.float64)
        axes = (0,) + tuple(a + 1 for a in self.reduce_axes)
        mean = x.mean(axis=axes, keepdims=True)[0]
        std = x.std(axis=axes, keepdims=True)[0]
        np.copyto(self.buffers["mean"], mean)
        # constant features pass through centred but unscaled
        np.copyto(self.buffers["scale"], np.where(std > 1e-8, std, 1.0))

    def forward(self, x, training=False, rng=None):
        return (x - self.buffers["mean"]) / self.buffers["scale"]

    def backward(self, grad_out):
        return grad_out / self.buffers["scale"]

    def __repr__(self):
        return f"Standardize(axes={self.reduce_axes})"


class ChannelsLast(Layer):
    """(N, C, H, W) -> (N, H, W, C); the conv stack runs channel-last."""

    kind = "channels_last"

    def forward(self, x, training=False, rng=None):
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def backward(self, grad_out):
        return grad_out.transpose(0, 3, 1, 2)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (h, w, c)


class Conv2D(Layer):
    """Valid-padding, stride-1 cross-correlation on channel-last maps (N, H, W, C).

    Kernels are stored (C_out, C_in, kH, kW).  The kH*kW shifted views of the
    input are concatenated along channels so each call is a single GEMM.
    """

    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel=2, rng=None, input_grad=True):
        super().__init__()
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        self.c_in, self.c_out, self.kh, self.kw = c_in, c_out, kh, kw
        # the first layer of a network has no use for d(loss)/d(input)
        self.input_grad = input_grad
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["K"] = glorot_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw)
        self.params["b"] = np.zeros(c_out)

    def _kmat(self):
        # row index (di * kW + dj) * C_in + c matches the column layout of _cols
        return self.params["K"].transpose(2, 3, 1, 0).reshape(-1, self.c_out)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ShapeMismatch(f"Conv2D expects (N, H, W, {self.c_in}), got {x.shape}")
        n, h, w, c = x.shape
        ho, wo = h - self.kh + 1, w - self.kw + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"input {h}x{w} smaller than kernel {self.kh}x{self.kw}")
        cols = np.concatenate(
            [x[:, di:di + ho, dj:dj + wo, :] for di in range(self.kh) for dj in range(self.kw)], axis=3
        ).reshape(n * ho * wo, -1)
        self._cols, self._in_shape = cols, x.shape
        out = cols @ self._kmat()
        out += self.params["b"]
        return out.reshape(n, ho, wo, self.c_out)

    def backward(self, grad_out):
        n, h, w, c = self._in_shape
        ho, wo = grad_out.shape[1:3]
        g = grad_out.reshape(-1, self.c_out)
        kmat_grad = self._cols.T @ g
        self.grads["K"] = kmat_grad.reshape(self.kh, self.kw, c, self.c_out).transpose(3, 2, 0, 1).copy()
        self.grads["b"] = g.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (g @ self._kmat().T).reshape(n, ho, wo, self.kh * self.kw, c)
        dx = np.zeros(self._in_shape)
        for di in range(self.kh):
            for dj in range(self.kw):
                dx[:, di:di + ho, dj:dj + wo, :] += dcols[:, :, :, di * self.kw + dj, :]
        return dx

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.c_in:
            raise ShapeMismatch(f"Conv2D expects {self.c_in} channels, got {c}")
        ho, wo = h - self.kh + 1, w - self.kw + 1
        if ho < 1 or wo < 1:
            raise UnsupportedShape(f"input {h}x{w} too small for a {self.kh}x{self.kw} kernel")
        return (ho, wo, self.c_out)

    def __repr__(self):
        return f"Conv2D({self.c_in}->{self.c_out}, {self.kh}x{self.kw})"


class MaxPool2D(Layer):
    """Non-overlapping max pooling on (N, H, W, C) with floor semantics.

    Ties route the gradient to the first maximum in row-major window order.
    """

    kind = "maxpool2d"

    def __init__(self, pool=2):
        super().__init__()
        self.pool = pool

    def _views(self, x, ho, wo):
        p = self.pool
        return [x[:, i:ho * p:p, j:wo * p:p, :] for i in range(p) for j in range(p)]

    def forward(self, x, training=False, rng=None):
        n, h, w, c = x.shape
        p = self.pool
        if h < p or w < p:
            raise DegenerateInput(f"maxpool {p}x{p} needs H, W >= {p}; got {h}x{w}")
        views = self._views(x, h // p, w // p)
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        self._x, self._out = x, out
        return out

    def backward(self, grad_out):
        x, out = self._x, self._out
        ho, wo = out.shape[1:3]
        p = self.pool
        # the window views tile dx except a floor remainder, so only that needs zeroing
        dx = np.empty(x.shape)
        dx[:, ho * p:] = 0.0
        dx[:, :, wo * p:] = 0.0
        taken = np.zeros(out.shape, dtype=bool)
        for src, dst in zip(self._views(x, ho, wo), self._views(dx, ho, wo)):
            hit = src == out
            hit &= ~taken
            np.multiply(grad_out, hit, out=dst)
            taken |= hit
        return dx

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h < self.pool or w < self.pool:
            raise UnsupportedShape(f"maxpool {self.pool}x{self.pool} on a {h}x{w} map")
        return (h // self.pool, w // self.pool, c)

    def __repr__(self):
        return f"MaxPool2D({self.pool})"


class GlobalAvgPool(Layer):
    """Per-channel mean of an (N, H, W, C) map."""

    kind = "global_avg_pool"

    def forward(self, x, training=False, rng=None):
        self._in_shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad_out):
        n, h, w, c = self._in_shape
        return np.broadcast_to(grad_out[:, None, None, :] / (h * w), self._in_shape).copy()

    def output_shape(self, input_shape):
        return (input_shape[2],)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return relu(x)

    def backward(self, grad_out):
        return grad_out * self._mask


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        self._mask = dropout_mask(x.shape, self.rate, rng)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def __repr__(self):
        return f"Dropout({self.rate})"


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        self._in_shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._in_shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class ToSequence(Layer):
    """(N, H, W, C) -> (N, W, H*C): width becomes time, height x channels become features."""

    kind = "to_sequence"

    def forward(self, x, training=False, rng=None):
        n, h, w, c = x.shape
        self._in_shape = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, w, h * c)

    def backward(self, grad_out):
        n, h, w, c = self._in_shape
        return grad_out.reshape(n, w, h, c).transpose(0, 2, 1, 3)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (w, h * c)


class LSTM(Layer):
    """Single-direction LSTM, gate order (i, f, g, o), zero initial state.

    Parameters: W (4H, F), U (4H, H), b (4H).
    """

    kind = "lstm"

    def __init__(self, n_in, hidden, return_sequences=False, rng=None):
        super().__init__()
        self.n_in, self.hidden, self.return_sequences = n_in, hidden, return_sequences
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (4 * hidden, n_in), n_in, 4 * hidden)
        self.params["U"] = glorot_uniform(rng, (4 * hidden, hidden), hidden, 4 * hidden)
        self.params["b"] = np.zeros(4 * hidden)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatch(f"LSTM expects (N, T, {self.n_in}), got {x.shape}")
        n, t_len, _ = x.shape
        hd = self.hidden
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        xw = x @ W.T + b
        gates = np.empty((t_len, n, 4 * hd))
        cells = np.empty((t_len, n, hd))
        tanh_c = np.empty((t_len, n, hd))
        hs = np.empty((t_len + 1, n, hd))
        hs[0] = 0.0
        c = np.zeros((n, hd))
        for t in range(t_len):
            z = xw[:, t] + hs[t] @ U.T
            act = gates[t]
            act[:, :2 * hd] = sigmoid(z[:, :2 * hd])
            act[:, 2 * hd:3 * hd] = np.tanh(z[:, 2 * hd:3 * hd])
            act[:, 3 * hd:] = sigmoid(z[:, 3 * hd:])
            c = act[:, hd:2 * hd] * c + act[:, :hd] * act[:, 2 * hd:3 * hd]
            cells[t] = c
            tanh_c[t] = np.tanh(c)
            hs[t + 1] = act[:, 3 * hd:] * tanh_c[t]
        self._cache = (x, gates, cells, tanh_c, hs)
        if self.return_sequences:
            return hs[1:].transpose(1, 0, 2)
        return hs[-1].copy()

    def backward(self, grad_out):
        x, gates, cells, tanh_c, hs = self._cache
        t_len, n, hd = cells.shape
        U = self.params["U"]
        if self.return_sequences:
            dh_seq = grad_out.transpose(1, 0, 2)
        else:
            dh_seq = np.zeros((t_len, n, hd))
            dh_seq[-1] = grad_out
        dz = np.empty((t_len, n, 4 * hd))
        dh_next = np.zeros((n, hd))
        dc_next = np.zeros((n, hd))
        for t in reversed(range(t_len)):
            i, f = gates[t, :, :hd], gates[t, :, hd:2 * hd]
            g, o = gates[t, :, 2 * hd:3 * hd], gates[t, :, 3 * hd:]
            c_prev = cells[t - 1] if t > 0 else 0.0
            dh = dh_seq[t] + dh_next
            dc = dh * o * (1.0 - tanh_c[t] ** 2) + dc_next
            d = dz[t]
            d[:, :hd] = dc * g * i * (1.0 - i)
            d[:, hd:2 * hd] = dc * c_prev * f * (1.0 - f)
            d[:, 2 * hd:3 * hd] = dc * i * (1.0 - g * g)
            d[:, 3 * hd:] = dh * tanh_c[t] * o * (1.0 - o)
            dc_next = dc * f
            dh_next = d @ U
        flat_dz = dz.reshape(t_len * n, 4 * hd)
        x_tm = x.transpose(1, 0, 2).reshape(t_len * n, -1)
        self.grads["W"] = flat_dz.T @ x_tm
        self.grads["U"] = flat_dz.T @ hs[:-1].reshape(t_len * n, hd)
        self.grads["b"] = flat_dz.sum(axis=0)
        return (flat_dz @ self.params["W"]).reshape(t_len, n, -1).transpose(1, 0, 2)

    def output_shape(self, input_shape):
        t_len, f = input_shape
        if f != self.n_in:
            raise ShapeMismatch(f"LSTM expects {self.n_in} features, got {f}")
        return (t_len, self.hidden) if self.return_sequences else (self.hidden,)

    def __repr__(self):
        return f"LSTM({self.n_in}->{self.hidden}, seq={self.return_sequences})"


class BLSTM(Layer):
    """Two independent LSTMs over the sequence and its reverse; outputs [h_fwd_t ; h_bwd_t]."""

    kind = "blstm"

    def __init__(self, n_in, hidden, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        self.fwd = LSTM(n_in, hidden, return_sequences=True, rng=rng)
        self.bwd = LSTM(n_in, hidden, return_sequences=True, rng=rng)
        for name, arr in self.fwd.params.items():
            self.params[f"fwd.{name}"] = arr
        for name, arr in self.bwd.params.items():
            self.params[f"bwd.{name}"] = arr

    def forward(self, x, training=False, rng=None):
        hf = self.fwd.forward(x)
        hb = self.bwd.forward(x[:, ::-1])[:, ::-1]
        return np.concatenate([hf, hb], axis=2)

    def clear(self):
        self.fwd.clear()
        self.bwd.clear()

    def backward(self, grad_out):
        hd = self.hidden
        dx = self.fwd.backward(grad_out[:, :, :hd])
        dx = dx + self.bwd.backward(grad_out[:, ::-1, hd:])[:, ::-1]
        for name in self.fwd.params:
            self.grads[f"fwd.{name}"] = self.fwd.grads[name]
            self.grads[f"bwd.{name}"] = self.bwd.grads[name]
        return dx

    def output_shape(self, input_shape):
        t_len, _ = input_shape
        self.fwd.output_shape(input_shape)
        return (t_len, 2 * self.hidden)

    def __repr__(self):
        return f"BLSTM({self.n_in}->2x{self.hidden})"
