"""Pure-numpy temporal convolution and matching kernels.

Convolution kernels take channels-last tensors ``(batch, eeg_channels,
time, depth)`` and kernels ``(d_out, d_in, 2 * stride)``.  Inputs are
zero-padded by ``stride // 2`` samples on the left and ``stride - stride // 2``
on the right, so stride ``r`` maps ``t`` samples to ``t / r``.  In this layout
output window ``j`` is the contiguous run ``[j*r*d_in, (j+2)*r*d_in)`` of the
flattened padded input, which makes every kernel a single matrix product.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "python"


def _flat_kernel(K):
    # (d_out, d_in, k) -> (d_out, k * d_in), column index m * d_in + i
    d_out, d_in, k = K.shape
    return np.ascontiguousarray(np.asarray(K, dtype=np.float64).transpose(0, 2, 1)).reshape(d_out, k * d_in)


def _windows(x, r):
    """Overlapping windows ``(B, C, J, 2*r*d)`` of the zero-padded input (a copy)."""
    B, C, t, d = x.shape
    left = r // 2
    xp = np.zeros((B, C, t + r, d), dtype=np.float64)
    xp[:, :, left:left + t] = x
    J = t // r
    s = xp.strides
    win = as_strided(xp, shape=(B, C, J, 2 * r * d), strides=(s[0], s[1], r * d * s[3], s[3]),
                     writeable=False)
    return np.ascontiguousarray(win)


def corr_down(x, K, r):
    """``out[b,c,j,o] = sum_{m,i} K[o,i,m] xpad[b,c,j*r+m,i]``."""
    x = np.asarray(x, dtype=np.float64)
    return _windows(x, r) @ _flat_kernel(K).T


def scatter_up(y, K, r, t):
    """Adjoint of :func:`corr_down` in its input: ``(B, C, t/r, d_out)`` to ``(B, C, t, d_in)``."""
    y = np.asarray(y, dtype=np.float64)
    B, C, J, _ = y.shape
    d_in = K.shape[1]
    seg = y @ _flat_kernel(K)  # (B, C, J, 2*r*d_in)
    half = r * d_in
    blocks = np.zeros((B, C, J + 1, half), dtype=np.float64)
    blocks[:, :, :J] += seg[..., :half]
    blocks[:, :, 1:] += seg[..., half:]
    left = r // 2
    full = blocks.reshape(B, C, (J + 1) * r, d_in)
    return np.ascontiguousarray(full[:, :, left:left + t])


def kernel_grad(x, g, r):
    """``gK[o,i,m] = sum_{b,c,j} g[b,c,j,o] xpad[b,c,j*r+m,i]``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d_in = x.shape[3]
    d_out = g.shape[3]
    win = _windows(x, r).reshape(-1, 2 * r * d_in)
    flat = g.reshape(-1, d_out).T @ win  # (d_out, 2r*d_in)
    return np.ascontiguousarray(flat.reshape(d_out, 2 * r, d_in).transpose(0, 2, 1))


def cosine_argmax(targets, sources):
    """Best cosine match among ``sources`` for every row of ``targets``.

    Zero-norm sources never win (similarity ``-inf``).  A zero-norm target, or
    a target facing only zero-norm sources, returns index ``-1`` and
    similarity ``nan``.  Ties resolve to the lowest source index.
    """
    targets = np.asarray(targets, dtype=np.float64)
    sources = np.asarray(sources, dtype=np.float64)
    t_norm = np.sqrt(np.einsum("ij,ij->i", targets, targets))
    s_norm = np.sqrt(np.einsum("ij,ij->i", sources, sources))
    t_ok = t_norm > 0
    s_ok = s_norm > 0
    tn = np.zeros_like(targets)
    tn[t_ok] = targets[t_ok] / t_norm[t_ok, None]
    sn = np.zeros_like(sources)
    sn[s_ok] = sources[s_ok] / s_norm[s_ok, None]
    n = len(targets)
    if len(sources) == 0:
        return np.full(n, -1, dtype=np.int64), np.full(n, np.nan)
    sims = tn @ sn.T
    sims[:, ~s_ok] = -np.inf
    idx = np.argmax(sims, axis=1).astype(np.int64)
    best = sims[np.arange(n), idx]
    bad = ~t_ok | ~np.isfinite(best)
    idx[bad] = -1
    best[bad] = np.nan
    return idx, best
