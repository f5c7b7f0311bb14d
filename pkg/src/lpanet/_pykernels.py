"""Pure-Python/numpy kernels.

Reference implementation of the hot loops.  ``_ckernels.pyx`` mirrors every
function here with the same signature; ``_backend`` picks one at import.

Parameter layout of the flat ``theta`` buffer (all row-major):

    preproc_w (d x d_in), preproc_b (d),
    per block: w_in (h x d), b_in (h), w_out (d x h), b_out (d),
    readout (d_y x d)
"""

import numpy as np

MASK64 = (1 << 64) - 1
_TWO_NEG53 = 1.0 / (1 << 53)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def _next(s):
    s0, s1, s2, s3 = s
    result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
    t = (s1 << 17) & MASK64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3
    return result


def _load(state):
    return [int(w) for w in state]


def _store(state, s):
    state[:] = np.array(s, dtype=np.uint64)


def xoshiro_fill_u64(state, out):
    s = _load(state)
    for k in range(out.shape[0]):
        out[k] = _next(s)
    _store(state, s)


def xoshiro_fill_uniform(state, out):
    s = _load(state)
    for k in range(out.shape[0]):
        out[k] = (_next(s) >> 11) * _TWO_NEG53
    _store(state, s)


def _bounded(s, n):
    # unbiased draw in [0, n) by rejecting the low 2^64 mod n outcomes
    threshold = ((1 << 64) - n) % n
    while True:
        r = _next(s)
        if r >= threshold:
            return r % n


def xoshiro_bounded(state, n):
    s = _load(state)
    r = _bounded(s, int(n))
    _store(state, s)
    return r


def xoshiro_shuffle(state, idx):
    s = _load(state)
    for i in range(idx.shape[0] - 1, 0, -1):
        j = _bounded(s, i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    _store(state, s)


def _unpack(theta, d_in, d, h, d_y, n_blocks):
    off = 0

    def take(rows, cols=None):
        nonlocal off
        size = rows * (cols or 1)
        a = theta[off:off + size]
        off += size
        return a.reshape(rows, cols) if cols else a

    pw = take(d, d_in)
    pb = take(d)
    blocks = []
    for _ in range(n_blocks):
        blocks.append((take(h, d), take(h), take(d, h), take(d)))
    r = take(d_y, d)
    return pw, pb, blocks, r


def loss_grad(theta, d_in, d, h, d_y, n_blocks, x, y, lam, grad):
    """Weighted multi-head MSE loss and its exact gradient.

    Returns ``(loss, per_layer)`` where ``per_layer[i]`` is the unweighted
    batch MSE of head ``i + 1`` and ``loss = sum(lam[i] * per_layer[i])``
    over heads with nonzero weight.  ``grad`` is overwritten in the
    ``theta`` layout.  Heads with ``lam[i] == 0`` do not enter the
    backward pass.
    """
    pw, pb, blocks, r = _unpack(theta, d_in, d, h, d_y, n_blocks)
    gpw, gpb, gblocks, gr = _unpack(grad, d_in, d, h, d_y, n_blocks)
    bsz = x.shape[0]
    scale = 2.0 / (bsz * d_y)

    xs = [x @ pw.T + pb]
    zs = []
    acts = []
    for w_in, b_in, w_out, b_out in blocks:
        z = xs[-1] @ w_in.T + b_in
        a = np.maximum(z, 0.0)
        zs.append(z)
        acts.append(a)
        xs.append(xs[-1] + (a @ w_out.T + b_out))

    per_layer = np.empty(n_blocks)
    resid = [None] * n_blocks
    for i in range(n_blocks):
        res = xs[i + 1] @ r.T - y
        resid[i] = res
        per_layer[i] = np.mean(res * res)

    loss = 0.0
    for i in range(n_blocks):
        if lam[i] != 0.0:
            loss += lam[i] * per_layer[i]

    gr[:] = 0.0
    g = np.zeros((bsz, d))
    for i in range(n_blocks - 1, -1, -1):
        if lam[i] != 0.0:
            dy = (lam[i] * scale) * resid[i]
            gr += dy.T @ xs[i + 1]
            g += dy @ r
        w_in, b_in, w_out, b_out = blocks[i]
        gw_in, gb_in, gw_out, gb_out = gblocks[i]
        gw_out[:] = g.T @ acts[i]
        gb_out[:] = g.sum(axis=0)
        dz = (g @ w_out) * (zs[i] > 0.0)
        gw_in[:] = dz.T @ xs[i]
        gb_in[:] = dz.sum(axis=0)
        g += dz @ w_in
    gpw[:] = g.T @ x
    gpb[:] = g.sum(axis=0)
    return float(loss), per_layer
