"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the layer set needed here: dense, strided valid convolution
(optional symmetric zero padding), transposed convolution, max pooling, an
LSTM cell, elementwise math, and a fused mixture-density NLL.  Forward data
is float32 by default; float64 inputs stay float64 so tests can run
finite-difference checks at full precision.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import NonFiniteValueError, ShapeMismatchError

DEFAULT_DTYPE = np.float32

_STATE = threading.local()


def grad_enabled() -> bool:
    return not getattr(_STATE, "no_grad", False)


@contextmanager
def no_grad():
    """Disable graph construction (inference fast path, thread-local)."""
    prev = getattr(_STATE, "no_grad", False)
    _STATE.no_grad = True
    try:
        yield
    finally:
        _STATE.no_grad = prev


def _chk(a: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NonFiniteValueError(f"non-finite values in {what}")
    return a


def _as_array(data, dtype=None) -> np.ndarray:
    a = np.asarray(data)
    if dtype is not None:
        return a.astype(dtype, copy=False)
    if not np.issubdtype(a.dtype, np.floating):
        return a.astype(DEFAULT_DTYPE)
    return a


class Tensor:
    """Array node in the dynamic graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, dtype=None):
        self.data = _chk(_as_array(data, dtype), "tensor data")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and grad_enabled()
        self._parents = _parents if self.requires_grad else ()
        self._backward_fn = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse pass from a scalar output."""
        if self.data.size != 1:
            raise ShapeMismatchError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                _chk(node.grad, "gradient")
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _unary(x: Tensor, out_data: np.ndarray, dfn) -> Tensor:
    def bwd(g):
        x._accumulate(dfn(g))

    return Tensor(out_data, x.requires_grad, (x,), bwd)


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor(a.data + b.data, a.requires_grad or b.requires_grad, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return Tensor(a.data - b.data, a.requires_grad or b.requires_grad, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor(a.data * b.data, a.requires_grad or b.requires_grad, (a, b), bwd)


def add_const(x: Tensor, c) -> Tensor:
    return _unary(x, x.data + c, lambda g: g)


def mul_const(x: Tensor, c) -> Tensor:
    return _unary(x, x.data * c, lambda g: g * c)


def square(x: Tensor) -> Tensor:
    return _unary(x, x.data * x.data, lambda g: g * (2.0 * x.data))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out)


def log(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)
    return _unary(x, out, lambda g: g / x.data)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0), lambda g: g * mask)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _unary(x, out, lambda g: g * (1.0 - out * out))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _unary(x, out, lambda g: g * out * (1.0 - out))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)
    return _unary(x, out, lambda g: np.broadcast_to(g, x.data.shape).astype(x.data.dtype))


def reshape(x: Tensor, shape) -> Tensor:
    return _unary(x, x.data.reshape(shape), lambda g: g.reshape(x.data.shape))


# ---------------------------------------------------------------------------
# layers


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (B, In) @ w (In, Out) + b (Out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatchError(f"dense: x {x.data.shape} vs w {w.data.shape}")
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeMismatchError(f"dense: bias {b.data.shape} vs w {w.data.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return Tensor(out, any(p.requires_grad for p in parents), parents, bwd)


def _conv_geometry(h, w, kh, kw, stride, padding):
    ph, pw = h + 2 * padding, w + 2 * padding
    if kh > ph or kw > pw:
        raise ShapeMismatchError(f"conv: kernel ({kh},{kw}) larger than padded input ({ph},{pw})")
    return (ph - kh) // stride + 1, (pw - kw) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, shape, kh, kw, stride, oh, ow) -> np.ndarray:
    b, c, h, w = shape
    dxp = np.zeros(shape, dtype=dcols.dtype)
    dc = dcols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dc[:, :, i, j]
    return dxp


def conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Valid cross-correlation, NCHW input, (Out, In, kh, kw) kernels."""
    if x.data.ndim != 4 or k.data.ndim != 4 or x.data.shape[1] != k.data.shape[1]:
        raise ShapeMismatchError(f"conv2d: x {x.data.shape} vs k {k.data.shape}")
    bsz, cin, h, w = x.data.shape
    cout, _, kh, kw = k.data.shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)  # (B, F, P)
    k2 = k.data.reshape(cout, cin * kh * kw)
    out = np.matmul(k2, cols).reshape(bsz, cout, oh, ow)
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeMismatchError(f"conv2d: bias {b.data.shape} vs {cout} channels")
        out = out + b.data[:, None, None]
    parents = (x, k) if b is None else (x, k, b)

    def bwd(g):
        gy = g.reshape(bsz, cout, oh * ow)
        if k.requires_grad:
            dk = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0)
            k._accumulate(dk.reshape(k.data.shape))
        if x.requires_grad:
            dcols = np.matmul(k2.T, gy)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride, oh, ow)
            x._accumulate(dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp)
        if b is not None and b.requires_grad:
            b._accumulate(gy.sum(axis=(0, 2)))

    return Tensor(out, any(p.requires_grad for p in parents), parents, bwd)


def deconv2d(x: Tensor, k: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed convolution, kernels (In, Out, kh, kw); output (H-1)*s + kh."""
    if x.data.ndim != 4 or k.data.ndim != 4 or x.data.shape[1] != k.data.shape[0]:
        raise ShapeMismatchError(f"deconv2d: x {x.data.shape} vs k {k.data.shape}")
    bsz, cin, h, w = x.data.shape
    _, cout, kh, kw = k.data.shape
    oh, ow = (h - 1) * stride + kh, (w - 1) * stride + kw
    x2 = x.data.reshape(bsz, cin, h * w)
    k2 = k.data.reshape(cin, cout * kh * kw)
    cols = np.matmul(k2.T, x2)  # (B, Cout*kh*kw, H*W)
    out = _col2im(cols, (bsz, cout, oh, ow), kh, kw, stride, h, w)
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeMismatchError(f"deconv2d: bias {b.data.shape} vs {cout} channels")
        out = out + b.data[:, None, None]
    parents = (x, k) if b is None else (x, k, b)

    def bwd(g):
        dcols = _im2col(g, kh, kw, stride, h, w)  # gather (B, Cout*kh*kw, H*W)
        if x.requires_grad:
            x._accumulate(np.matmul(k2, dcols).reshape(x.data.shape))
        if k.requires_grad:
            dk = np.matmul(x2, dcols.transpose(0, 2, 1)).sum(axis=0)
            k._accumulate(dk.reshape(k.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor(out, any(p.requires_grad for p in parents), parents, bwd)


def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; ties route gradient to the first element
    in row-major window order."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"maxpool2d: expected NCHW, got {x.data.shape}")
    bsz, c, h, w = x.data.shape
    if h % window or w % window:
        raise ShapeMismatchError(f"maxpool2d: spatial dims ({h},{w}) not divisible by {window}")
    ho, wo = h // window, w // window
    tiles = (
        x.data.reshape(bsz, c, ho, window, wo, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(bsz, c, ho, wo, window * window)
    )
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        dt = np.zeros_like(tiles)
        np.put_along_axis(dt, idx[..., None], g[..., None], axis=-1)
        dx = (
            dt.reshape(bsz, c, ho, wo, window, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(bsz, c, h, w)
        )
        x._accumulate(dx)

    return Tensor(out, x.requires_grad, (x,), bwd)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One gated recurrent update. Gate order in the 4H axis: input, forget,
    candidate, output. Returns (h', c')."""
    bsz, nin = x.data.shape
    hid = h.data.shape[1]
    if h.data.shape != (bsz, hid) or c.data.shape != (bsz, hid):
        raise ShapeMismatchError("lstm_cell: state shapes inconsistent")
    if wx.data.shape != (nin, 4 * hid) or wh.data.shape != (hid, 4 * hid) or b.data.shape != (4 * hid,):
        raise ShapeMismatchError("lstm_cell: parameter shapes inconsistent")
    z = x.data @ wx.data + h.data @ wh.data + b.data
    gi = _sigmoid(z[:, :hid])
    gf = _sigmoid(z[:, hid : 2 * hid])
    gg = np.tanh(z[:, 2 * hid : 3 * hid])
    go = _sigmoid(z[:, 3 * hid :])
    c2_data = gf * c.data + gi * gg
    tc2 = np.tanh(c2_data)
    any_grad = any(t.requires_grad for t in (x, h, c, wx, wh, b))

    def _push_dz(dz):
        if x.requires_grad:
            x._accumulate(dz @ wx.data.T)
        if h.requires_grad:
            h._accumulate(dz @ wh.data.T)
        if wx.requires_grad:
            wx._accumulate(x.data.T @ dz)
        if wh.requires_grad:
            wh._accumulate(h.data.T @ dz)
        if b.requires_grad:
            b._accumulate(dz.sum(axis=0))

    def bwd_c2(g):
        dz = np.zeros_like(z)
        dz[:, :hid] = g * gg * gi * (1 - gi)
        dz[:, hid : 2 * hid] = g * c.data * gf * (1 - gf)
        dz[:, 2 * hid : 3 * hid] = g * gi * (1 - gg * gg)
        if c.requires_grad:
            c._accumulate(g * gf)
        _push_dz(dz)

    c2 = Tensor(c2_data, any_grad, (x, h, c, wx, wh, b), bwd_c2)

    def bwd_h2(g):
        if c2.requires_grad:
            c2._accumulate(g * go * (1 - tc2 * tc2))
        dz = np.zeros_like(z)
        dz[:, 3 * hid :] = g * tc2 * go * (1 - go)
        _push_dz(dz)

    h2 = Tensor(go * tc2, any_grad, (x, h, wx, wh, b, c2), bwd_h2)
    return h2, c2


def mdn_nll(logits: Tensor, mu: Tensor, log_sigma: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of the per-row mixture negative log likelihood.

    Inputs are (N, D, K); `target` is a constant (N, D).  Per (row, dim) the
    mixture is sum_k softmax(logits)_k * Normal(target; mu_k, exp(log_sigma)_k),
    reduced with a shifted log-sum-exp.
    """
    if not (logits.data.shape == mu.data.shape == log_sigma.data.shape):
        raise ShapeMismatchError("mdn_nll: parameter shapes differ")
    n, d, _ = logits.data.shape
    if target.shape != (n, d):
        raise ShapeMismatchError(f"mdn_nll: target {target.shape} vs params {logits.data.shape}")
    sig = np.exp(log_sigma.data)
    zscore = (target[..., None] - mu.data) / sig
    log_norm = -0.5 * zscore * zscore - log_sigma.data - 0.5 * np.log(2 * np.pi)
    a = logits.data + log_norm
    a_max = a.max(axis=-1, keepdims=True)
    lse_a = a_max[..., 0] + np.log(np.exp(a - a_max).sum(axis=-1))
    l_max = logits.data.max(axis=-1, keepdims=True)
    lse_l = l_max[..., 0] + np.log(np.exp(logits.data - l_max).sum(axis=-1))
    nll = (lse_l - lse_a).sum(axis=-1)  # (N,)
    out = np.asarray(nll.mean(), dtype=logits.data.dtype)
    parents = (logits, mu, log_sigma)

    def bwd(g):
        scale = float(g) / n
        post = np.exp(a - lse_a[..., None])  # responsibilities
        prior = np.exp(logits.data - lse_l[..., None])
        if logits.requires_grad:
            logits._accumulate(scale * (prior - post))
        if mu.requires_grad:
            mu._accumulate(scale * (-post * zscore / sig))
        if log_sigma.requires_grad:
            log_sigma._accumulate(scale * (-post * (zscore * zscore - 1.0)))

    return Tensor(out, any(p.requires_grad for p in parents), parents, bwd)


# ---------------------------------------------------------------------------
# parameters, init, optimizer


class ParamStore:
    """Named trainable tensors plus Adam moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(array, dtype=DEFAULT_DTYPE), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def names(self) -> list[str]:
        return sorted(self._params)

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self, include_optimizer: bool = True) -> dict[str, np.ndarray]:
        out = {n: t.data for n, t in self._params.items()}
        if include_optimizer:
            for n, m in self._m.items():
                out[f"adam_m.{n}"] = m
            for n, v in self._v.items():
                out[f"adam_v.{n}"] = v
            out["adam_t"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self._params.items():
            if n not in arrays:
                raise KeyError(f"checkpoint missing parameter {n!r}")
            if tuple(arrays[n].shape) != t.data.shape:
                raise ShapeMismatchError(f"checkpoint shape for {n!r}: {arrays[n].shape} vs {t.data.shape}")
            t.data = arrays[n].astype(DEFAULT_DTYPE)
        self._m = {n[7:]: a.copy() for n, a in arrays.items() if n.startswith("adam_m.")}
        self._v = {n[7:]: a.copy() for n, a in arrays.items() if n.startswith("adam_v.")}
        self.step_count = int(arrays["adam_t"][0]) if "adam_t" in arrays else 0


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected moment update on every parameter with a gradient."""
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store._params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(p.data)
        v = store._v.get(name)
        if v is None:
            v = store._v[name] = np.zeros_like(p.data)
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DEFAULT_DTYPE)


def init_dense(store: ParamStore, rng: np.random.Generator, name: str, n_in: int, n_out: int) -> tuple[Tensor, Tensor]:
    w = store.add(f"{name}.w", uniform_fan_in(rng, (n_in, n_out), n_in))
    b = store.add(f"{name}.b", np.zeros(n_out, dtype=DEFAULT_DTYPE))
    return w, b


def init_conv(store: ParamStore, rng: np.random.Generator, name: str, c_out: int, c_in: int, k: int) -> tuple[Tensor, Tensor]:
    w = store.add(f"{name}.k", uniform_fan_in(rng, (c_out, c_in, k, k), c_in * k * k))
    b = store.add(f"{name}.b", np.zeros(c_out, dtype=DEFAULT_DTYPE))
    return w, b


def init_deconv(store: ParamStore, rng: np.random.Generator, name: str, c_in: int, c_out: int, k: int) -> tuple[Tensor, Tensor]:
    w = store.add(f"{name}.k", uniform_fan_in(rng, (c_in, c_out, k, k), c_in * k * k))
    b = store.add(f"{name}.b", np.zeros(c_out, dtype=DEFAULT_DTYPE))
    return w, b


def init_lstm(store: ParamStore, rng: np.random.Generator, name: str, n_in: int, hid: int) -> tuple[Tensor, Tensor, Tensor]:
    """Scaled-uniform recurrent init with forget-gate bias set to 1."""
    wx = store.add(f"{name}.wx", uniform_fan_in(rng, (n_in, 4 * hid), n_in))
    wh = store.add(f"{name}.wh", uniform_fan_in(rng, (hid, 4 * hid), hid))
    bias = np.zeros(4 * hid, dtype=DEFAULT_DTYPE)
    bias[hid : 2 * hid] = 1.0
    b = store.add(f"{name}.b", bias)
    return wx, wh, b
