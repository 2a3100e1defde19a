"""Pure-numpy reference implementations of the sequential hot kernels.

These mirror the compiled extension exactly; either backend can serve the
layers above. The LSTM recurrence and the CTC lattice are the two loops
that cannot be expressed as single BLAS calls, which is why they live here
behind a swappable backend.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_forward(xp: np.ndarray, wh: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    """Run the gate recurrence given precomputed input projections.

    Args:
        xp: [N, T, 4H] input projections (x @ Wx + b), gate order i, f, g, o.
        wh: [H, 4H] recurrent weights.
        h0, c0: [N, H] initial state.

    Returns:
        (h, gates, c): outputs [N, T, H], activated gates [N, T, 4H], and
        cell states [N, T, H]; the latter two feed the backward pass.
    """
    n, t, h4 = xp.shape
    h = h4 // 4
    gates = np.empty_like(xp)
    cs = np.empty((n, t, h), dtype=xp.dtype)
    hs = np.empty((n, t, h), dtype=xp.dtype)
    hprev = h0
    cprev = c0
    for s in range(t):
        a = xp[:, s] + hprev @ wh
        gi = _sigmoid(a[:, :h])
        gf = _sigmoid(a[:, h : 2 * h])
        gg = np.tanh(a[:, 2 * h : 3 * h])
        go = _sigmoid(a[:, 3 * h :])
        c = gf * cprev + gi * gg
        hstep = go * np.tanh(c)
        gates[:, s, :h] = gi
        gates[:, s, h : 2 * h] = gf
        gates[:, s, 2 * h : 3 * h] = gg
        gates[:, s, 3 * h :] = go
        cs[:, s] = c
        hs[:, s] = hstep
        hprev = hstep
        cprev = c
    return hs, gates, cs


def lstm_backward(
    grad_h: np.ndarray,
    wh: np.ndarray,
    h0: np.ndarray,
    c0: np.ndarray,
    hs: np.ndarray,
    gates: np.ndarray,
    cs: np.ndarray,
):
    """Backpropagate through the gate recurrence.

    Returns (grad_xp [N, T, 4H], grad_wh [H, 4H]); the caller maps grad_xp
    back onto the input weights.
    """
    n, t, h = hs.shape
    dxp = np.empty_like(gates)
    dwh = np.zeros_like(wh)
    wht = wh.T.copy()
    dh_next = np.zeros((n, h), dtype=hs.dtype)
    dc_next = np.zeros((n, h), dtype=hs.dtype)
    for s in range(t - 1, -1, -1):
        gi = gates[:, s, :h]
        gf = gates[:, s, h : 2 * h]
        gg = gates[:, s, 2 * h : 3 * h]
        go = gates[:, s, 3 * h :]
        c = cs[:, s]
        tc = np.tanh(c)
        cprev = cs[:, s - 1] if s > 0 else c0
        hprev = hs[:, s - 1] if s > 0 else h0

        dh = grad_h[:, s] + dh_next
        dc = dh * go * (1.0 - tc * tc) + dc_next
        da = dxp[:, s]
        da[:, :h] = dc * gg * gi * (1.0 - gi)
        da[:, h : 2 * h] = dc * cprev * gf * (1.0 - gf)
        da[:, 2 * h : 3 * h] = dc * gi * (1.0 - gg * gg)
        da[:, 3 * h :] = dh * tc * go * (1.0 - go)

        dwh += hprev.T @ da
        dh_next = da @ wht
        dc_next = dc * gf
    return dxp, dwh


def _causal_windows(x: np.ndarray, k: int) -> np.ndarray:
    """[N, T, k, C] sliding windows of x left-padded with k-1 zeros."""
    n, t, c = x.shape
    xp = np.zeros((n, t + k - 1, c), dtype=x.dtype)
    xp[:, k - 1 :] = x
    sn, st, sc = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, t, k, c), strides=(sn, st, st, sc), writeable=False
    )


def stage_forward(
    x: np.ndarray,
    w: np.ndarray,
    bias: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    run_mean: np.ndarray,
    run_var: np.ndarray,
    momentum: float,
    eps: float,
    pool: int,
    train: bool,
):
    """One fused extractor stage: causal conv, batch norm, ReLU, max-pool.

    The conv is left-padded so its output length equals the input length;
    pooling then drops the T mod pool tail. Running statistics are updated
    in place in train mode. Returns (pooled, conv_out, mean, istd, sel)
    where sel holds each window's argmax for the backward pass.
    """
    n, t, c_in = x.shape
    k, _, c_out = w.shape
    win = _causal_windows(x, k)
    conv = np.tensordot(win, w, axes=([2, 3], [0, 1]))
    conv += bias
    if train:
        flat = conv.reshape(-1, c_out)
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        run_mean[...] = momentum * run_mean + (1.0 - momentum) * mean
        run_var[...] = momentum * run_var + (1.0 - momentum) * var
    else:
        mean = run_mean.astype(conv.dtype)
        var = run_var.astype(conv.dtype)
    istd = 1.0 / np.sqrt(var + eps)
    y = (conv - mean) * (istd * gamma) + beta
    np.maximum(y, 0, out=y)
    t_out = t // pool
    view = y[:, : t_out * pool].reshape(n, t_out, pool, c_out)
    sel = view.argmax(axis=2).astype(np.uint8)
    pooled = np.take_along_axis(view, sel[:, :, None, :].astype(np.intp), axis=2)[:, :, 0]
    return pooled, conv, mean.astype(conv.dtype), istd.astype(conv.dtype), sel


def stage_backward(
    grad_pooled: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    conv: np.ndarray,
    mean: np.ndarray,
    istd: np.ndarray,
    sel: np.ndarray,
    pool: int,
):
    """Backward pass of the fused stage (train-mode batch-norm statistics)."""
    n, t, c_in = x.shape
    k, _, c_out = w.shape
    t_out = grad_pooled.shape[1]

    xhat = (conv - mean) * istd
    relu_alive = (xhat * gamma + beta) > 0

    g_y = np.zeros_like(conv)
    view = g_y[:, : t_out * pool].reshape(n, t_out, pool, c_out)
    np.put_along_axis(
        view, sel[:, :, None, :].astype(np.intp), grad_pooled[:, :, None, :], axis=2
    )
    g_y *= relu_alive

    dgamma = (g_y * xhat).sum(axis=(0, 1))
    dbeta = g_y.sum(axis=(0, 1))
    m = n * t
    c1 = gamma * dbeta / m
    c2 = gamma * dgamma / m
    dconv = istd * (g_y * gamma - c1 - xhat * c2)

    dbias = dconv.sum(axis=(0, 1))
    win = _causal_windows(x, k)
    dw = np.tensordot(win, dconv, axes=([0, 1], [0, 1]))
    dxp = np.zeros((n, t + k - 1, c_in), dtype=x.dtype)
    for i in range(k):
        dxp[:, i : i + t] += dconv @ w[i].T
    dx = dxp[:, k - 1 :]
    return dx, dw, dbias, dgamma, dbeta


def ctc_forward_backward(log_probs: np.ndarray, ext: np.ndarray):
    """CTC negative log-likelihood and its gradient w.r.t. the log-probs.

    Args:
        log_probs: [T, K] per-frame log-probabilities.
        ext: blank-extended label sequence (blank, l1, blank, l2, ..., blank).

    Returns:
        (loss, grad) with grad[t, k] = d loss / d log_probs[t, k], i.e. the
        negated per-frame posterior over extended-label states emitting k.
    """
    lp = log_probs
    t_len, n_classes = lp.shape
    s_len = len(ext)
    ext = np.asarray(ext, dtype=np.int64)

    # skip transition s-2 -> s allowed when ext[s] is a label differing from ext[s-2]
    can_skip = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        can_skip[2:] = ext[2:] != ext[:-2]
        can_skip[2::2] = False  # even positions are blanks

    alpha = np.full((t_len, s_len), NEG_INF, dtype=np.float64)
    alpha[0, 0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        skip = np.full(s_len, NEG_INF)
        skip[2:][can_skip[2:]] = prev[:-2][can_skip[2:]]
        acc = np.logaddexp(acc, skip)
        alpha[t] = acc + lp[t, ext]

    tail = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[t_len - 1, s_len - 2])
    loglik = tail
    if not np.isfinite(loglik):
        return np.inf, np.zeros_like(lp)

    beta = np.full((t_len, s_len), NEG_INF, dtype=np.float64)
    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, ext]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        skip = np.full(s_len, NEG_INF)
        skip[:-2][can_skip[2:]] = nxt[2:][can_skip[2:]]
        acc = np.logaddexp(acc, skip)
        beta[t] = acc

    gamma = alpha + beta - loglik
    grad = np.zeros_like(lp)
    post = np.exp(gamma)
    for s in range(s_len):
        grad[:, ext[s]] -= post[:, s]
    return float(-loglik), grad
