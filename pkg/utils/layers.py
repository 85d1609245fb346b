"""Forward/backward primitives of the line recognizer.

Every forward returns (output, cache); the matching backward consumes the
upstream gradient and the cache and returns exact gradients. Feature maps are
(channels, height, width); sequences are (time, features).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, weight, bias):
    """Stride-1 convolution with zero "same" padding"""
    filters, channels, kh, kw = weight.shape
    _, height, width = x.shape
    pad_top, pad_left = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(x, ((0, 0), (pad_top, kh - 1 - pad_top), (pad_left, kw - 1 - pad_left)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(height * width, channels * kh * kw)
    out = cols @ weight.reshape(filters, -1).T + bias
    out = out.T.reshape(filters, height, width)
    return out, (cols, weight, padded.shape, pad_top, pad_left, height, width)


def conv2d_backward(dout, cache):
    cols, weight, padded_shape, pad_top, pad_left, height, width = cache
    filters, channels, kh, kw = weight.shape
    dout_mat = dout.reshape(filters, height * width).T
    dweight = (dout_mat.T @ cols).reshape(weight.shape)
    dbias = dout_mat.sum(axis=0)
    dcols = (dout_mat @ weight.reshape(filters, -1)).reshape(height, width, channels, kh, kw)
    dpadded = np.zeros(padded_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dpadded[:, i:i + height, j:j + width] += dcols[:, :, :, i, j].transpose(2, 0, 1)
    dx = dpadded[:, pad_top:pad_top + height, pad_left:pad_left + width]
    return dx, dweight, dbias


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, ph, pw):
    """Max pooling with stride = pool size; trailing rows/columns that do not fill a window are dropped"""
    channels, height, width = x.shape
    out_h, out_w = height // ph, width // pw
    cropped = x[:, :out_h * ph, :out_w * pw]
    blocks = cropped.reshape(channels, out_h, ph, out_w, pw).transpose(0, 1, 3, 2, 4)
    blocks = blocks.reshape(channels, out_h, out_w, ph * pw)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, (x.shape, argmax, ph, pw)


def maxpool_backward(dout, cache):
    shape, argmax, ph, pw = cache
    channels, out_h, out_w = argmax.shape
    dblocks = np.zeros((channels, out_h, out_w, ph * pw), dtype=dout.dtype)
    np.put_along_axis(dblocks, argmax[..., None], dout[..., None], axis=-1)
    dcropped = dblocks.reshape(channels, out_h, out_w, ph, pw).transpose(0, 1, 3, 2, 4)
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :out_h * ph, :out_w * pw] = dcropped.reshape(channels, out_h * ph, out_w * pw)
    return dx


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(x, w, u, b):
    """
    One direction of an LSTM over a (T, D) sequence

    Gate layout along the 4H axis: input, forget, cell candidate, output.
    """
    steps = x.shape[0]
    units = u.shape[1]
    projected = x @ w.T + b
    h = np.zeros(units, dtype=x.dtype)
    c = np.zeros(units, dtype=x.dtype)
    hs = np.zeros((steps, units), dtype=x.dtype)
    gates = np.zeros((steps, 4 * units), dtype=x.dtype)
    cs = np.zeros((steps, units), dtype=x.dtype)
    for t in range(steps):
        z = projected[t] + u @ h
        i = _sigmoid(z[:units])
        f = _sigmoid(z[units:2 * units])
        g = np.tanh(z[2 * units:3 * units])
        o = _sigmoid(z[3 * units:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, g, o])
        cs[t] = c
        hs[t] = h
    return hs, (x, w, u, gates, cs, hs)


def lstm_backward(dhs, cache):
    x, w, u, gates, cs, hs = cache
    steps = x.shape[0]
    units = u.shape[1]
    dprojected = np.zeros((steps, 4 * units), dtype=dhs.dtype)
    du = np.zeros_like(u)
    dh_next = np.zeros(units, dtype=dhs.dtype)
    dc_next = np.zeros(units, dtype=dhs.dtype)
    for t in reversed(range(steps)):
        i = gates[t, :units]
        f = gates[t, units:2 * units]
        g = gates[t, 2 * units:3 * units]
        o = gates[t, 3 * units:]
        c_prev = cs[t - 1] if t > 0 else np.zeros(units, dtype=dhs.dtype)
        h_prev = hs[t - 1] if t > 0 else np.zeros(units, dtype=dhs.dtype)
        tanh_c = np.tanh(cs[t])

        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            dh * tanh_c * o * (1.0 - o),
        ])
        dprojected[t] = dz
        du += np.outer(dz, h_prev)
        dh_next = u.T @ dz
        dc_next = dc * f
    dw = dprojected.T @ x
    db = dprojected.sum(axis=0)
    dx = dprojected @ w
    return dx, dw, du, db


def bilstm_forward(x, forward_weights, backward_weights):
    """Bidirectional LSTM; output is [forward states | backward states] per frame"""
    hs_fw, cache_fw = lstm_forward(x, *forward_weights)
    hs_bw, cache_bw = lstm_forward(x[::-1], *backward_weights)
    return np.concatenate([hs_fw, hs_bw[::-1]], axis=1), (cache_fw, cache_bw, hs_fw.shape[1])


def bilstm_backward(dout, cache):
    cache_fw, cache_bw, units = cache
    dx_fw, dw_fw, du_fw, db_fw = lstm_backward(dout[:, :units], cache_fw)
    dx_bw, dw_bw, du_bw, db_bw = lstm_backward(dout[::-1, units:], cache_bw)
    return dx_fw + dx_bw[::-1], (dw_fw, du_fw, db_fw), (dw_bw, du_bw, db_bw)


def dropout_forward(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))
