"""Pure numpy versions of the RNN kernels.

Both entry points take a packed batch: ``tokens`` holds all sequences back to
back, ``offsets[b]:offsets[b+1]`` delimits sequence ``b`` and ``prefix[b]`` is
the number of leading conditioning tokens. Every token after the prefix is a
target, predicted from the hidden state of the token before it. Outputs are
packed the same way, sequence-major.

Recurrence: ``h_t = tanh(E[x_t] + W h_{t-1})`` with ``h_{-1} = 0``;
logits ``U h_t + c``.
"""
from __future__ import annotations

import numpy as np


def _layout(offsets: np.ndarray, prefix: np.ndarray):
    lengths = np.diff(offsets)
    steps = int(lengths.max()) - 1
    seq_idx, step_idx = [], []
    for b, (length, p) in enumerate(zip(lengths, prefix)):
        n = int(length) - int(p)
        seq_idx.append(np.full(n, b))
        step_idx.append(np.arange(int(p) - 1, int(length) - 1))
    return lengths, steps, np.concatenate(seq_idx), np.concatenate(step_idx)


def _inputs(tokens, offsets, lengths, steps):
    inp = np.zeros((len(lengths), steps), dtype=np.int64)
    for b in range(len(lengths)):
        s = offsets[b]
        n = lengths[b] - 1
        inp[b, :n] = tokens[s : s + n]
    return inp


def _run(E, W, inp, steps):
    B = inp.shape[0]
    hs = np.zeros((steps + 1, B, W.shape[0]))
    for i in range(steps):
        hs[i + 1] = np.tanh(E[inp[:, i]] + hs[i] @ W.T)
    return hs


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward_logprobs(E, W, U, c, tokens, offsets, prefix):
    lengths, steps, seq_idx, step_idx = _layout(offsets, prefix)
    inp = _inputs(tokens, offsets, lengths, steps)
    hs = _run(E, W, inp, steps)
    return _log_softmax(hs[step_idx + 1, seq_idx] @ U.T + c)


def loss_grad(E, W, U, c, tokens, offsets, prefix, ref_logp, beta, alpha, scale, gE, gW, gU, gc):
    """Accumulate ``scale * d(CE + beta*KL - alpha*H)`` into the gradient buffers.

    Returns the unscaled sums ``(ce, kl, entropy)`` over all target tokens.
    """
    lengths, steps, seq_idx, step_idx = _layout(offsets, prefix)
    inp = _inputs(tokens, offsets, lengths, steps)
    hs = _run(E, W, inp, steps)
    hsel = hs[step_idx + 1, seq_idx]
    logp = _log_softmax(hsel @ U.T + c)
    p = np.exp(logp)
    n = len(seq_idx)
    target_pos = offsets[seq_idx] + step_idx + 1
    y = tokens[target_pos]

    ce = -logp[np.arange(n), y]
    ent = -(p * logp).sum(axis=1)
    dz = p.copy()
    dz[np.arange(n), y] -= 1.0
    kl_sum = 0.0
    if beta != 0.0:
        r = np.exp(ref_logp)
        kl_sum = float((r * (ref_logp - logp)).sum())
        dz += beta * (p - r)
    if alpha != 0.0:
        dz += alpha * p * (logp + ent[:, None])
    dz *= scale

    gU += dz.T @ hsel
    gc += dz.sum(axis=0)
    dh_out = np.zeros_like(hs[1:])
    dh_out[step_idx, seq_idx] = dz @ U
    carry = np.zeros(hs.shape[1:])
    for i in range(steps - 1, -1, -1):
        dh = dh_out[i] + carry
        da = dh * (1.0 - hs[i + 1] ** 2)
        np.add.at(gE, inp[:, i], da)
        gW += da.T @ hs[i]
        carry = da @ W
    return float(ce.sum()), kl_sum, float(ent.sum())
