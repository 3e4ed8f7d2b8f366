"""Layer specs and their forward/backward implementations.

Shapes are per-sample; at runtime every array carries one extra leading
batch axis.  Rank conventions for per-sample shapes:

    (F,)          vector
    (T, F)        sequence of vectors / 1-D multichannel signal
    (H, W, C)     image
    (T, H, W, C)  sequence of image frames (shared weights per frame)

`dense` and `output` flatten their whole per-sample input; `gru` flattens
everything after the leading sequence axis; convolutions keep rank and map
frames independently.  All convolutions and pools use valid padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import rng
from ..errors import ConfigError, ShapeMismatchError

KINDS = ("dense", "conv2d", "conv1d", "maxpool", "dropout", "relu", "gru", "output")


@dataclass
class LayerSpec:
    """Declarative description of one layer; see the constructor helpers."""

    kind: str
    name: str = ""
    units: int = 0
    filters: int = 0
    kernel: tuple[int, ...] = ()
    stride: tuple[int, ...] = ()
    pool: tuple[int, ...] = ()
    p: float = 0.0
    return_sequences: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.p < 1.0:
            raise ConfigError(f"dropout probability must be in [0,1), got {self.p}")
        if self.kind in ("dense", "gru") and self.units < 1:
            raise ConfigError(f"{self.kind} needs units >= 1, got {self.units}")
        if self.kind in ("conv2d", "conv1d") and self.filters < 1:
            raise ConfigError(f"{self.kind} needs filters >= 1, got {self.filters}")


def dense(units: int, name: str = "") -> LayerSpec:
    return LayerSpec("dense", name=name, units=units)


def relu(name: str = "") -> LayerSpec:
    return LayerSpec("relu", name=name)


def conv2d(filters: int, kh: int, kw: int, stride: int | tuple[int, int] = 1,
           name: str = "") -> LayerSpec:
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    return LayerSpec("conv2d", name=name, filters=filters, kernel=(kh, kw),
                     stride=(sh, sw))


def conv1d(filters: int, k: int, stride: int = 1, name: str = "") -> LayerSpec:
    return LayerSpec("conv1d", name=name, filters=filters, kernel=(k,),
                     stride=(stride,))


def maxpool(size: int | tuple[int, ...], stride: int | tuple[int, ...] | None = None,
            name: str = "") -> LayerSpec:
    """2-D pooling for images (int or 2-tuple size), 1-D for signals (1-tuple)."""
    pool = (size, size) if isinstance(size, int) else tuple(size)
    if stride is None:
        srd = pool
    else:
        srd = (stride,) * len(pool) if isinstance(stride, int) else tuple(stride)
    if len(srd) != len(pool):
        raise ConfigError("maxpool stride rank must match pool rank")
    return LayerSpec("maxpool", name=name, pool=pool, stride=srd)


def dropout(p: float, name: str = "") -> LayerSpec:
    return LayerSpec("dropout", name=name, p=p)


def gru(units: int, return_sequences: bool = False, name: str = "") -> LayerSpec:
    return LayerSpec("gru", name=name, units=units, return_sequences=return_sequences)


def output(name: str = "") -> LayerSpec:
    """Single logistic unit squashing to [0,1]; must be the last layer."""
    return LayerSpec("output", name=name)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _glorot(seed: int, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    flat = rng.split_uniform(seed, int(np.prod(shape)), -limit, limit)
    return flat.reshape(shape)


class Layer:
    """Runtime layer: spec + parameters + shape bookkeeping."""

    def __init__(self, spec: LayerSpec) -> None:
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.in_shape: tuple[int, ...] = ()
        self.out_shape: tuple[int, ...] = ()

    @property
    def name(self) -> str:
        return self.spec.name

    def infer_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def init(self, net_seed: int) -> None:
        """Default: no parameters."""

    def forward(self, x: np.ndarray, training: bool, gen: np.random.Generator | None):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache):
        raise NotImplementedError


class DenseLayer(Layer):
    def infer_shape(self, in_shape):
        if len(in_shape) < 1:
            raise ShapeMismatchError("dense needs a non-scalar input")
        return (self.spec.units,)

    def init(self, net_seed):
        fan_in = int(np.prod(self.in_shape))
        units = self.spec.units
        self.params = {
            "w": _glorot(rng.derive_seed(net_seed, "init", self.name, "w"),
                         (fan_in, units), fan_in, units),
            "b": np.zeros(units),
        }

    def forward(self, x, training, gen):
        b = x.shape[0]
        x2 = x.reshape(b, -1)
        return x2 @ self.params["w"] + self.params["b"], x2

    def backward(self, dy, cache):
        x2 = cache
        grads = {"w": x2.T @ dy, "b": dy.sum(axis=0)}
        dx = (dy @ self.params["w"].T).reshape((x2.shape[0],) + self.in_shape)
        return dx, grads


class ReluLayer(Layer):
    def infer_shape(self, in_shape):
        return in_shape

    def forward(self, x, training, gen):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, dy, cache):
        return dy * cache, {}


class DropoutLayer(Layer):
    def infer_shape(self, in_shape):
        return in_shape

    def forward(self, x, training, gen):
        p = self.spec.p
        if not training or p == 0.0:
            return x, None
        if gen is None:
            raise ConfigError("training forward through dropout needs a generator")
        mask = (gen.random(x.shape) >= p) / (1.0 - p)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class Conv2dLayer(Layer):
    def infer_shape(self, in_shape):
        if len(in_shape) not in (3, 4):
            raise ShapeMismatchError(
                f"conv2d needs an (H,W,C) or (T,H,W,C) input, got shape {in_shape}")
        h, w, _ = in_shape[-3:]
        kh, kw = self.spec.kernel
        sh, sw = self.spec.stride
        if h < kh or w < kw:
            raise ShapeMismatchError(
                f"conv2d kernel {kh}x{kw} larger than input {h}x{w}")
        ho = (h - kh) // sh + 1
        wo = (w - kw) // sw + 1
        return in_shape[:-3] + (ho, wo, self.spec.filters)

    def init(self, net_seed):
        kh, kw = self.spec.kernel
        c = self.in_shape[-1]
        f = self.spec.filters
        self.params = {
            "w": _glorot(rng.derive_seed(net_seed, "init", self.name, "w"),
                         (kh, kw, c, f), kh * kw * c, kh * kw * f),
            "b": np.zeros(f),
        }

    def _cols(self, x):
        """x: (N,H,W,C) -> (N,Ho,Wo,kh*kw*C) patch matrix."""
        kh, kw = self.spec.kernel
        sh, sw = self.spec.stride
        win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (N,Ho*,Wo*,C,kh,kw)
        win = win[:, ::sh, ::sw]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        n, ho, wo = cols.shape[:3]
        return cols.reshape(n, ho, wo, kh * kw * x.shape[-1])

    def forward(self, x, training, gen):
        lead = x.shape[:-3]
        xf = x.reshape((-1,) + x.shape[-3:])
        cols = self._cols(xf)
        f = self.spec.filters
        w2 = self.params["w"].reshape(-1, f)
        y = cols @ w2 + self.params["b"]
        return y.reshape(lead + y.shape[1:]), (cols, xf.shape, lead)

    def backward(self, dy, cache):
        cols, xf_shape, lead = cache
        kh, kw = self.spec.kernel
        sh, sw = self.spec.stride
        f = self.spec.filters
        dyf = dy.reshape((-1,) + dy.shape[len(lead):])
        n, ho, wo, _ = dyf.shape
        dy2 = dyf.reshape(-1, f)
        grads = {
            "w": (cols.reshape(-1, cols.shape[-1]).T @ dy2).reshape(self.params["w"].shape),
            "b": dy2.sum(axis=0),
        }
        w2 = self.params["w"].reshape(-1, f)
        dcols = (dy2 @ w2.T).reshape(n, ho, wo, kh, kw, xf_shape[-1])
        dxf = np.zeros(xf_shape)
        for i in range(kh):
            for j in range(kw):
                dxf[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += dcols[:, :, :, i, j, :]
        return dxf.reshape(lead + xf_shape[1:]), grads


class Conv1dLayer(Layer):
    def infer_shape(self, in_shape):
        if len(in_shape) == 1:
            shape = (in_shape[0], 1)  # promote a bare vector to a 1-channel signal
        elif len(in_shape) == 2:
            shape = in_shape
        else:
            raise ShapeMismatchError(
                f"conv1d needs an (L,) or (L,C) input, got shape {in_shape}")
        length, _ = shape
        (k,) = self.spec.kernel
        (s,) = self.spec.stride
        if length < k:
            raise ShapeMismatchError(f"conv1d kernel {k} larger than input length {length}")
        lo = (length - k) // s + 1
        return (lo, self.spec.filters)

    def init(self, net_seed):
        (k,) = self.spec.kernel
        c = 1 if len(self.in_shape) == 1 else self.in_shape[1]
        f = self.spec.filters
        self.params = {
            "w": _glorot(rng.derive_seed(net_seed, "init", self.name, "w"),
                         (k, c, f), k * c, k * f),
            "b": np.zeros(f),
        }

    def forward(self, x, training, gen):
        if len(self.in_shape) == 1:
            x = x[..., None]
        (k,) = self.spec.kernel
        (s,) = self.spec.stride
        f = self.spec.filters
        win = sliding_window_view(x, k, axis=1)[:, ::s]  # (N,Lo,C,k)
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2))
        n, lo = cols.shape[:2]
        cols = cols.reshape(n, lo, k * x.shape[-1])
        w2 = self.params["w"].reshape(-1, f)
        y = cols @ w2 + self.params["b"]
        return y, (cols, x.shape)

    def backward(self, dy, cache):
        cols, x_shape = cache
        (k,) = self.spec.kernel
        (s,) = self.spec.stride
        f = self.spec.filters
        n, lo, _ = dy.shape
        dy2 = dy.reshape(-1, f)
        grads = {
            "w": (cols.reshape(-1, cols.shape[-1]).T @ dy2).reshape(self.params["w"].shape),
            "b": dy2.sum(axis=0),
        }
        w2 = self.params["w"].reshape(-1, f)
        dcols = (dy2 @ w2.T).reshape(n, lo, k, x_shape[-1])
        dx = np.zeros(x_shape)
        for i in range(k):
            dx[:, i:i + s * lo:s, :] += dcols[:, :, i, :]
        if len(self.in_shape) == 1:
            dx = dx[..., 0]
        return dx, grads


class MaxPoolLayer(Layer):
    def infer_shape(self, in_shape):
        pool = self.spec.pool
        if len(pool) == 2:
            if len(in_shape) not in (3, 4):
                raise ShapeMismatchError(
                    f"2-D maxpool needs an (H,W,C) or (T,H,W,C) input, got {in_shape}")
            h, w, c = in_shape[-3:]
            ph, pw = pool
            sh, sw = self.spec.stride
            if h < ph or w < pw:
                raise ShapeMismatchError(f"pool {ph}x{pw} larger than input {h}x{w}")
            return in_shape[:-3] + ((h - ph) // sh + 1, (w - pw) // sw + 1, c)
        if len(in_shape) != 2:
            raise ShapeMismatchError(
                f"1-D maxpool needs an (L,C) input, got shape {in_shape}")
        length, c = in_shape
        (p,) = pool
        (s,) = self.spec.stride
        if length < p:
            raise ShapeMismatchError(f"pool {p} larger than input length {length}")
        return ((length - p) // s + 1, c)

    def forward(self, x, training, gen):
        if len(self.spec.pool) == 2:
            ph, pw = self.spec.pool
            sh, sw = self.spec.stride
            lead = x.shape[:-3]
            xf = x.reshape((-1,) + x.shape[-3:])
            win = sliding_window_view(xf, (ph, pw), axis=(1, 2))[:, ::sh, ::sw]
            # (N,Ho,Wo,C,ph,pw) -> flatten window
            flat = win.reshape(win.shape[:4] + (ph * pw,))
            arg = flat.argmax(axis=-1)
            y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
            return y.reshape(lead + y.shape[1:]), (arg, xf.shape, lead)
        (p,) = self.spec.pool
        (s,) = self.spec.stride
        win = sliding_window_view(x, p, axis=1)[:, ::s]  # (N,Lo,C,p)
        arg = win.argmax(axis=-1)
        y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return y, (arg, x.shape, None)

    def backward(self, dy, cache):
        arg, x_shape, lead = cache
        if len(self.spec.pool) == 2:
            ph, pw = self.spec.pool
            sh, sw = self.spec.stride
            dyf = dy.reshape((-1,) + dy.shape[len(lead):])
            n, ho, wo, c = dyf.shape
            dxf = np.zeros(x_shape)
            for k in range(ph * pw):
                i, j = divmod(k, pw)
                contrib = dyf * (arg == k)
                dxf[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += contrib
            return dxf.reshape(lead + x_shape[1:]), {}
        (p,) = self.spec.pool
        (s,) = self.spec.stride
        n, lo, c = dy.shape
        dx = np.zeros(x_shape)
        for k in range(p):
            dx[:, k:k + s * lo:s, :] += dy * (arg == k)
        return dx, {}


class GruLayer(Layer):
    """Gated recurrent unit over the leading sequence axis.

    z_t = sigmoid(x_t Wz + h Uz + bz)
    r_t = sigmoid(x_t Wr + h Ur + br)
    n_t = tanh(x_t Wn + r_t * (h Un) + bn)
    h_t = (1 - z_t) * h + z_t * n_t,  h_0 = 0
    """

    def infer_shape(self, in_shape):
        if len(in_shape) < 2:
            raise ShapeMismatchError(
                f"gru needs a sequence input (T, ...), got shape {in_shape}")
        t = in_shape[0]
        u = self.spec.units
        return (t, u) if self.spec.return_sequences else (u,)

    def init(self, net_seed):
        f = int(np.prod(self.in_shape[1:]))
        u = self.spec.units
        params = {}
        for gate in ("z", "r", "n"):
            params["w" + gate] = _glorot(
                rng.derive_seed(net_seed, "init", self.name, "w" + gate), (f, u), f, u)
            params["u" + gate] = _glorot(
                rng.derive_seed(net_seed, "init", self.name, "u" + gate), (u, u), u, u)
            params["b" + gate] = np.zeros(u)
        self.params = params

    def forward(self, x, training, gen):
        b = x.shape[0]
        t = self.in_shape[0]
        xf = x.reshape(b, t, -1)
        p = self.params
        h = np.zeros((b, self.spec.units))
        steps = []
        outs = []
        for i in range(t):
            xt = xf[:, i]
            z = _sigmoid(xt @ p["wz"] + h @ p["uz"] + p["bz"])
            r = _sigmoid(xt @ p["wr"] + h @ p["ur"] + p["br"])
            hu = h @ p["un"]
            n = np.tanh(xt @ p["wn"] + r * hu + p["bn"])
            h_new = (1.0 - z) * h + z * n
            steps.append((xt, h, z, r, n, hu))
            outs.append(h_new)
            h = h_new
        y = np.stack(outs, axis=1) if self.spec.return_sequences else h
        return y, steps

    def backward(self, dy, cache):
        p = self.params
        b = cache[0][0].shape[0]
        t = len(cache)
        u = self.spec.units
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dxf = np.zeros((b, t, int(np.prod(self.in_shape[1:]))))
        if self.spec.return_sequences:
            dseq = dy
            dh = np.zeros((b, u))
        else:
            dseq = None
            dh = dy
        for i in reversed(range(t)):
            if dseq is not None:
                dh = dh + dseq[:, i]
            xt, h_prev, z, r, n, hu = cache[i]
            dz = dh * (n - h_prev)
            dn = dh * z
            dh_prev = dh * (1.0 - z)
            da_n = dn * (1.0 - n * n)
            grads["wn"] += xt.T @ da_n
            grads["bn"] += da_n.sum(axis=0)
            dr = da_n * hu
            dhu = da_n * r
            grads["un"] += h_prev.T @ dhu
            dh_prev = dh_prev + dhu @ p["un"].T
            da_z = dz * z * (1.0 - z)
            grads["wz"] += xt.T @ da_z
            grads["uz"] += h_prev.T @ da_z
            grads["bz"] += da_z.sum(axis=0)
            dh_prev = dh_prev + da_z @ p["uz"].T
            da_r = dr * r * (1.0 - r)
            grads["wr"] += xt.T @ da_r
            grads["ur"] += h_prev.T @ da_r
            grads["br"] += da_r.sum(axis=0)
            dh_prev = dh_prev + da_r @ p["ur"].T
            dxf[:, i] = da_z @ p["wz"].T + da_r @ p["wr"].T + da_n @ p["wn"].T
            dh = dh_prev
        return dxf.reshape((b,) + self.in_shape), grads


class OutputLayer(Layer):
    """Affine map to one unit followed by the logistic function."""

    def infer_shape(self, in_shape):
        if len(in_shape) < 1:
            raise ShapeMismatchError("output layer needs a non-scalar input")
        return ()

    def init(self, net_seed):
        fan_in = int(np.prod(self.in_shape))
        self.params = {
            "w": _glorot(rng.derive_seed(net_seed, "init", self.name, "w"),
                         (fan_in, 1), fan_in, 1),
            "b": np.zeros(1),
        }

    def forward(self, x, training, gen):
        b = x.shape[0]
        x2 = x.reshape(b, -1)
        a = x2 @ self.params["w"] + self.params["b"]
        pred = _sigmoid(a[:, 0])
        return pred, (x2, pred)

    def backward(self, dy, cache):
        x2, pred = cache
        da = (dy * pred * (1.0 - pred))[:, None]
        grads = {"w": x2.T @ da, "b": da.sum(axis=0)}
        dx = (da @ self.params["w"].T).reshape((x2.shape[0],) + self.in_shape)
        return dx, grads


_LAYER_CLASSES = {
    "dense": DenseLayer,
    "relu": ReluLayer,
    "dropout": DropoutLayer,
    "conv2d": Conv2dLayer,
    "conv1d": Conv1dLayer,
    "maxpool": MaxPoolLayer,
    "gru": GruLayer,
    "output": OutputLayer,
}


def make_layer(spec: LayerSpec) -> Layer:
    return _LAYER_CLASSES[spec.kind](spec)
