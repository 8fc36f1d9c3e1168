"""Vectorized numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature. Inputs are assumed already validated and C-contiguous float64.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d_forward(xp, kernels, stride):
    """Cross-correlate padded input ``xp`` (N,Hp,Wp,C) with (kh,kw,C,F)."""
    kh, kw, c, f = kernels.shape
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    win = _windows(xp, kh, kw, stride, ho, wo)  # N,Ho,Wo,C,kh,kw
    kt = kernels.transpose(2, 0, 1, 3)  # C,kh,kw,F
    return np.ascontiguousarray(np.tensordot(win, kt, axes=([3, 4, 5], [0, 1, 2])))


def conv2d_backward(xp, kernels, upstream, stride):
    """Return (grad wrt padded input, grad wrt kernels)."""
    kh, kw, c, f = kernels.shape
    n, ho, wo, _ = upstream.shape
    win = _windows(xp, kh, kw, stride, ho, wo)
    dk = np.tensordot(win, upstream, axes=([0, 1, 2], [0, 1, 2]))  # C,kh,kw,F
    dk = np.ascontiguousarray(dk.transpose(1, 2, 0, 3))
    dcols = np.tensordot(upstream, kernels, axes=([3], [3]))  # N,Ho,Wo,kh,kw,C
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :] += dcols[:, :, :, i, j, :]
    return dxp, dk


def maxpool2x2_forward(x):
    """Pool an even-sized (N,H,W,C) array; argmax in 0..3 over the row-major 2x2 window."""
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = np.argmax(blocks, axis=-1).astype(np.int8)
    out = np.take_along_axis(blocks, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(idx, upstream):
    n, ho, wo, c = upstream.shape
    blocks = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(blocks, idx[..., None].astype(np.intp), upstream[..., None], axis=-1)
    return np.ascontiguousarray(
        blocks.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    )


def _round_robin(m):
    # circle-method tournament: m-1 rounds of m/2 disjoint pairs covering all pairs once
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol, max_sweeps):
    """Cyclic Jacobi with a parallel (round-robin) pair ordering.

    Returns (eigenvalues, eigenvectors as columns, sweeps used), unsorted.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), v, 0
    m = n + (n % 2)
    rounds = []
    for pairs in _round_robin(m):
        pq = np.array([(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n], dtype=np.intp)
        rounds.append((pq[:, 0], pq[:, 1]))
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol * scale:
            sweeps -= 1
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            nz = np.abs(apq) > 1e-300
            theta = np.where(nz, (aqq - app) / np.where(nz, 2.0 * apq, 1.0), 0.0)
            t = np.where(nz, np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap = a[p, :].copy()
            aq = a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            ap = a[:, p].copy()
            aq = a[:, q].copy()
            a[:, p] = ap * c - aq * s
            a[:, q] = ap * s + aq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp = v[:, p].copy()
            vq = v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    return np.diag(a).copy(), v, sweeps


def best_split(x, y, w, n_classes):
    """Best Gini split over the columns of ``x`` (n, n_candidates).

    ``y`` holds class indices, ``w`` positive sample weights. Returns
    (column, threshold, proxy) where a larger proxy means lower weighted
    child impurity; column is -1 when every column is constant.
    Ties keep the first column, then the lowest threshold.
    """
    n, m = x.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = w
    best_col, best_thr, best_val = -1, 0.0, -np.inf
    for j in range(m):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        total = left[-1] + onehot[order[-1]]
        right = total - left
        wl = left.sum(axis=1)
        wr = right.sum(axis=1)
        proxy = (left * left).sum(axis=1) / wl + (right * right).sum(axis=1) / wr
        proxy = np.where(valid, proxy, -np.inf)
        i = int(np.argmax(proxy))
        if proxy[i] > best_val:
            best_val = float(proxy[i])
            best_col = j
            thr = 0.5 * (xs[i] + xs[i + 1])
            if thr >= xs[i + 1]:
                thr = xs[i]
            best_thr = float(thr)
    return best_col, best_thr, best_val
