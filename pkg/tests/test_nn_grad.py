"""Finite-difference checks for every differentiable op.

All instances run in float64; the engine keeps float64 inputs in float64
precisely so these checks can resolve 1e-4 relative error.
"""

import numpy as np
import pytest

from clothwm import nn
from gradcheck import fd_gradients, max_rel_error

SEEDS = list(range(20))


def _proj_loss(out_tensor, proj):
    return nn.sum_all(nn.mul(out_tensor, nn.Tensor(proj)))


def _check(build, arrays, tol, h=1e-5):
    """build(tensors) -> scalar Tensor; arrays are float64 leaves."""
    tensors = [nn.Tensor(a, requires_grad=True) for a in arrays]
    loss = build(tensors)
    loss.backward()
    analytic = [t.grad for t in tensors]

    def f(arrs):
        ts = [nn.Tensor(a) for a in arrs]
        return float(build(ts).data)

    numeric = fd_gradients(f, arrays, h=h)
    err = max_rel_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(5)
    proj = rng.standard_normal((4, 5))
    _check(lambda ts: _proj_loss(nn.dense(*ts), proj), [x, w, b], 1e-4, h=1e-3)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    proj = rng.standard_normal((2, 4, 3, 3))
    _check(lambda ts: _proj_loss(nn.conv2d(ts[0], ts[1], ts[2], stride=2), proj), [x, k, b], 1e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_padded_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 6, 6))
    k = rng.standard_normal((3, 2, 5, 5))
    b = rng.standard_normal(3)
    proj = rng.standard_normal((1, 3, 6, 6))
    _check(lambda ts: _proj_loss(nn.conv2d(ts[0], ts[1], ts[2], stride=1, padding=2), proj), [x, k, b], 1e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_deconv2d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 4))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(2)
    proj = rng.standard_normal((2, 2, 9, 9))
    _check(lambda ts: _proj_loss(nn.deconv2d(ts[0], ts[1], ts[2], stride=2), proj), [x, k, b], 1e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool2d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 4, 4))
    proj = rng.standard_normal((1, 2, 2, 2))
    _check(lambda ts: _proj_loss(nn.maxpool2d(ts[0], 2), proj), [x], 1e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_bptt_gradients(seed):
    """Backprop through 5 recurrent steps against finite differences."""
    rng = np.random.default_rng(seed)
    n_in, hid, bsz, steps = 4, 6, 2, 5
    xs = [rng.standard_normal((bsz, n_in)) for _ in range(steps)]
    wx = rng.standard_normal((n_in, 4 * hid)) * 0.5
    wh = rng.standard_normal((hid, 4 * hid)) * 0.5
    b = rng.standard_normal(4 * hid) * 0.1
    h0 = rng.standard_normal((bsz, hid)) * 0.1
    c0 = rng.standard_normal((bsz, hid)) * 0.1
    proj = rng.standard_normal((bsz, hid))

    def build(ts):
        xts, wxt, wht, bt, ht, ct = ts[:steps], ts[steps], ts[steps + 1], ts[steps + 2], ts[steps + 3], ts[steps + 4]
        loss = None
        for t in range(steps):
            ht, ct = nn.lstm_cell(xts[t], ht, ct, wxt, wht, bt)
            term = _proj_loss(ht, proj)
            loss = term if loss is None else nn.add(loss, term)
        return loss

    _check(build, xs + [wx, wh, b, h0, c0], 1e-3)


@pytest.mark.parametrize("seed", SEEDS)
def test_mdn_nll_gradients(seed):
    rng = np.random.default_rng(seed)
    n, d, k = 3, 2, 4
    logits = rng.standard_normal((n, d, k))
    mu = rng.standard_normal((n, d, k))
    log_sigma = rng.standard_normal((n, d, k)) * 0.3
    target = rng.standard_normal((n, d))
    _check(lambda ts: nn.mdn_nll(ts[0], ts[1], ts[2], target), [logits, mu, log_sigma], 1e-4)


@pytest.mark.parametrize("seed", SEEDS[:5])
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4))
    y = rng.standard_normal((3, 4))
    proj = rng.standard_normal((3, 4))

    def build(ts):
        a, b = ts
        u = nn.mul(nn.tanh(a), nn.sigmoid(b))
        v = nn.add(nn.square(a), nn.exp(nn.mul_const(b, 0.5)))
        w = nn.add(u, nn.relu(nn.sub(v, nn.add_const(a, 0.3))))
        return _proj_loss(w, proj)

    _check(build, [x, y], 1e-4)
