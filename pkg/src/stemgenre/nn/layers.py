"""Forward/backward pairs for the layers used by the base classifiers.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Arrays are float64 and
batch-first.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import LabelError, ShapeError


# -- dense ------------------------------------------------------------------

def dense_forward(x, W, b):
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[1],):
        raise ShapeError(f"bad dense parameters W{W.shape} b{b.shape}")
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"input width {x.shape[-1]} does not match W rows {W.shape[0]}")
    return x @ W + b, (x, W)


def dense_backward(dy, cache):
    x, W = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return (dy2 @ W.T).reshape(x.shape), x2.T @ dy2, dy2.sum(axis=0)


# -- elementwise --------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def dropout_forward(x, rate, rng=None, train=False):
    """Inverted dropout; identity at inference or when ``rate == 0``."""
    if not train or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- convolution / pooling ----------------------------------------------------

def conv2d_forward(x, K, b, same_padding=True):
    """Stride-1 cross-correlation of ``x (N, C, H, W)`` with ``K (O, C, kh, kw)``.

    Implemented as one matrix product over an im2col view of the
    zero-padded input.
    """
    if x.ndim != 4 or K.ndim != 4 or x.shape[1] != K.shape[1] or b.shape != (K.shape[0],):
        raise ShapeError(f"conv2d shapes x{x.shape} K{K.shape} b{b.shape} incompatible")
    N, C, H, W = x.shape
    O, _, kh, kw = K.shape
    if same_padding:
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        pads = ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0))
    else:
        pads = ((0, 0),) * 4
    xp = np.pad(x.transpose(0, 2, 3, 1), pads)
    Ho, Wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError("kernel larger than padded input")
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2)).reshape(N * Ho * Wo, C * kh * kw)
    y = cols @ K.reshape(O, -1).T + b
    return y.reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2), (cols, K, xp.shape, x.shape, pads)


def conv2d_backward(dy, cache):
    cols, K, xpshape, xshape, pads = cache
    O, C, kh, kw = K.shape
    N, _, Ho, Wo = dy.shape
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, O)
    dK = (dy2.T @ cols).reshape(K.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ K.reshape(O, -1)).reshape(N, Ho, Wo, C, kh, kw)
    dxp = np.zeros(xpshape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + Ho, j:j + Wo, :] += dcols[..., i, j]
    (_, _), (ph, _), (pw, _), _ = pads
    dx = dxp[:, ph:ph + xshape[2], pw:pw + xshape[3], :].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx), dK, db


def maxpool2d_forward(x):
    """2x2 max pooling, stride 2; a trailing odd row/column is dropped."""
    N, C, H, W = x.shape
    if H < 2 or W < 2:
        raise ShapeError("max pooling needs spatial dims >= 2")
    Ho, Wo = H // 2, W // 2
    win = x[:, :, :2 * Ho, :2 * Wo].reshape(N, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(N, C, Ho, Wo, 4)
    # argmax returns the first maximum: ties go to the top-left cell
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def maxpool2d_backward(dy, cache):
    arg, xshape = cache
    N, C, H, W = xshape
    Ho, Wo = dy.shape[2], dy.shape[3]
    dwin = np.zeros((N, C, Ho, Wo, 4))
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dwin = dwin.reshape(N, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * Ho, 2 * Wo)
    dx = np.zeros(xshape)
    dx[:, :, :2 * Ho, :2 * Wo] = dwin
    return dx


# -- recurrent ------------------------------------------------------------------

def lstm_forward(x, Wx, Wh, b):
    """Unidirectional LSTM over ``x (N, T, F)`` with zero initial state.

    Gate blocks in ``Wx (F, 4H)``, ``Wh (H, 4H)`` and ``b (4H,)`` are ordered
    input, forget, output, candidate.
    """
    if x.ndim != 3 or Wx.shape[0] != x.shape[2] or Wh.shape[1] != Wx.shape[1] \
            or Wh.shape[0] * 4 != Wh.shape[1] or b.shape != (Wx.shape[1],):
        raise ShapeError(f"lstm shapes x{x.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape} incompatible")
    x = np.ascontiguousarray(x)
    N, T, F = x.shape
    H = Wh.shape[0]
    xw = (x.reshape(N * T, F) @ Wx + b).reshape(N, T, 4 * H)
    gates = np.empty((N, T, 4 * H))
    c = np.empty((N, T, H))
    h = np.empty((N, T, H))
    h_prev = np.zeros((N, H))
    c_prev = np.zeros((N, H))
    for t in range(T):
        z = xw[:, t] + h_prev @ Wh
        g = gates[:, t]
        g[:, :3 * H] = sigmoid(z[:, :3 * H])
        g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c_prev = g[:, H:2 * H] * c_prev + g[:, :H] * g[:, 3 * H:]
        h_prev = g[:, 2 * H:3 * H] * np.tanh(c_prev)
        c[:, t] = c_prev
        h[:, t] = h_prev
    return h, (x, Wx, Wh, gates, c, h)


def lstm_backward(dh, cache):
    x, Wx, Wh, gates, c, h = cache
    N, T, _ = x.shape
    H = Wh.shape[0]
    dz = np.empty((N, T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((N, H))
    dc_next = np.zeros((N, H))
    zeros = np.zeros((N, H))
    for t in reversed(range(T)):
        g = gates[:, t]
        i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(c[:, t])
        c_prev = c[:, t - 1] if t > 0 else zeros
        dht = dh[:, t] + dh_next
        dc = dc_next + dht * o * (1.0 - tc * tc)
        d = dz[:, t]
        d[:, :H] = dc * cand * i * (1.0 - i)
        d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dht * tc * o * (1.0 - o)
        d[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        if t > 0:
            dWh += h[:, t - 1].T @ d
        dh_next = d @ Wh.T
        dc_next = dc * f
    dz2 = dz.reshape(N * T, 4 * H)
    dWx = x.reshape(N * T, -1).T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz2 @ Wx.T).reshape(x.shape)
    return dx, dWx, dWh, db


def bilstm_forward(x, fwd, bwd):
    """Bidirectional LSTM; ``fwd`` and ``bwd`` are ``(Wx, Wh, b)`` triples.

    Accepts ``(T, F)`` or ``(N, T, F)`` input and returns ``(..., T, 2H)``
    with the forward-direction half first.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0:
        raise ShapeError("bilstm expects a non-empty (T, F) or (N, T, F) sequence")
    hf, cf = lstm_forward(x, *fwd)
    hb_rev, cb = lstm_forward(x[:, ::-1], *bwd)
    out = np.concatenate([hf, hb_rev[:, ::-1]], axis=-1)
    if single:
        out = out[0]
    return out, (cf, cb, hf.shape[-1], single)


def bilstm_backward(dout, cache):
    """Returns ``dx, (dWx, dWh, db) forward, (dWx, dWh, db) backward``."""
    cf, cb, H, single = cache
    if single:
        dout = dout[None]
    dxf, *gf = lstm_backward(dout[..., :H], cf)
    dxb_rev, *gb = lstm_backward(dout[..., H:][:, ::-1], cb)
    dx = dxf + dxb_rev[:, ::-1]
    if single:
        dx = dx[0]
    return dx, tuple(gf), tuple(gb)


# -- output -------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns ``(loss, dlogits)``. A single logit vector with a scalar label is
    accepted; for a batch, the loss and gradient are averaged over rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (z.shape[0],):
        raise ShapeError("one label per logit row required")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= z.shape[1]:
        raise LabelError(f"labels must be integers in [0, {z.shape[1]})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    d /= n
    return float(loss), (d[0] if single else d)
