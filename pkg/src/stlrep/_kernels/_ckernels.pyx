# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


cdef void _im2col(double[:, :, :, ::1] xp, Py_ssize_t b, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                  double[:, ::1] cols) noexcept nogil:
    # row (oy, ox), column (ky, kx, ci): same order as kernels.reshape(-1, F)
    cdef Py_ssize_t c = xp.shape[3], wo = (xp.shape[2] - kw) // stride + 1
    cdef Py_ssize_t r, oy, ox, ky, kx, ci, col
    for r in range(cols.shape[0]):
        oy = r // wo
        ox = r - oy * wo
        col = 0
        for ky in range(kh):
            for kx in range(kw):
                for ci in range(c):
                    cols[r, col] = xp[b, oy * stride + ky, ox * stride + kx, ci]
                    col += 1


cdef void _col2im(double[:, ::1] dcols, Py_ssize_t b, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                  double[:, :, :, ::1] dxp) noexcept nogil:
    cdef Py_ssize_t c = dxp.shape[3], wo = (dxp.shape[2] - kw) // stride + 1
    cdef Py_ssize_t r, oy, ox, ky, kx, ci, col
    for r in range(dcols.shape[0]):
        oy = r // wo
        ox = r - oy * wo
        col = 0
        for ky in range(kh):
            for kx in range(kw):
                for ci in range(c):
                    dxp[b, oy * stride + ky, ox * stride + kx, ci] += dcols[r, col]
                    col += 1


def conv2d_forward(double[:, :, :, ::1] xp, double[:, :, :, ::1] kernels, Py_ssize_t stride):
    # per-sample im2col gather, then one BLAS matrix product
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = kernels.shape[0], kw = kernels.shape[1], f = kernels.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1, wo = (wp - kw) // stride + 1
    k2 = np.asarray(kernels).reshape(kh * kw * c, f)
    out_arr = np.empty((n, ho * wo, f))
    cols_arr = np.empty((ho * wo, kh * kw * c))
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t b
    for b in range(n):
        _im2col(xp, b, kh, kw, stride, cols)
        np.dot(cols_arr, k2, out=out_arr[b])
    return out_arr.reshape(n, ho, wo, f)


def conv2d_backward(double[:, :, :, ::1] xp, double[:, :, :, ::1] kernels,
                    double[:, :, :, ::1] upstream, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    cdef Py_ssize_t kh = kernels.shape[0], kw = kernels.shape[1], f = kernels.shape[3]
    cdef Py_ssize_t ho = upstream.shape[1], wo = upstream.shape[2]
    k2 = np.asarray(kernels).reshape(kh * kw * c, f)
    up = np.asarray(upstream).reshape(n, ho * wo, f)
    dxp_arr = np.zeros_like(np.asarray(xp))
    dk2 = np.zeros((kh * kw * c, f))
    cols_arr = np.empty((ho * wo, kh * kw * c))
    dcols_arr = np.empty((ho * wo, kh * kw * c))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] dcols = dcols_arr
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t b
    for b in range(n):
        _im2col(xp, b, kh, kw, stride, cols)
        dk2 += cols_arr.T @ up[b]
        np.dot(up[b], k2.T, out=dcols_arr)
        _col2im(dcols, b, kh, kw, stride, dxp)
    return dxp_arr, dk2.reshape(kh, kw, c, f)


def maxpool2x2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], ho = x.shape[1] // 2, wo = x.shape[2] // 2, c = x.shape[3]
    out_arr = np.empty((n, ho, wo, c))
    idx_arr = np.empty((n, ho, wo, c), dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, oy, ox, ci, k
    cdef double best, v
    cdef signed char arg
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for ci in range(c):
                    best = x[b, 2 * oy, 2 * ox, ci]
                    arg = 0
                    for k in range(1, 4):
                        v = x[b, 2 * oy + k // 2, 2 * ox + k % 2, ci]
                        if v > best:
                            best = v
                            arg = <signed char>k
                    out[b, oy, ox, ci] = best
                    idx[b, oy, ox, ci] = arg
    return out_arr, idx_arr


def maxpool2x2_backward(signed char[:, :, :, ::1] idx, double[:, :, :, ::1] upstream):
    cdef Py_ssize_t n = upstream.shape[0], ho = upstream.shape[1], wo = upstream.shape[2], c = upstream.shape[3]
    dx_arr = np.zeros((n, 2 * ho, 2 * wo, c))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, oy, ox, ci, k
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for ci in range(c):
                    k = idx[b, oy, ox, ci]
                    dx[b, 2 * oy + k // 2, 2 * ox + k % 2, ci] = upstream[b, oy, ox, ci]
    return dx_arr


cdef double _offdiag_norm(double[:, ::1] a, Py_ssize_t n):
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return sqrt(s)


def jacobi_eigh(a_in, double tol, int max_sweeps):
    """Row-cyclic Jacobi rotations; returns (eigenvalues, eigenvectors, sweeps), unsorted."""
    a_arr = np.array(a_in, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = a_arr.shape[0]
    v_arr = np.eye(n)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, r
    cdef int sweep = 0, done = 0
    cdef double apq, theta, t, c, s, tau, g, h, arp, arq
    cdef double scale = np.linalg.norm(a_arr)
    if scale == 0.0:
        scale = 2.2250738585072014e-308
    while sweep < max_sweeps:
        if _offdiag_norm(a, n) < tol * scale:
            done = 1
            break
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(n):
                    arp = a[p, r]
                    arq = a[q, r]
                    a[p, r] = c * arp - s * arq
                    a[q, r] = s * arp + c * arq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    g = v[r, p]
                    h = v[r, q]
                    v[r, p] = c * g - s * h
                    v[r, q] = s * g + c * h
    return np.diag(a_arr).copy(), v_arr, sweep


def best_split(x_in, y_in, w_in, Py_ssize_t n_classes):
    cdef double[:, :] x = np.asarray(x_in, dtype=np.float64)
    cdef Py_ssize_t[:] y = np.asarray(y_in, dtype=np.intp)
    cdef double[:] w = np.asarray(w_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    left_arr = np.zeros(n_classes)
    total_arr = np.zeros(n_classes)
    cdef double[:] left = left_arr
    cdef double[:] total = total_arr
    cdef Py_ssize_t j, i, k, oi, best_col = -1
    cdef double best_val = -np.inf, best_thr = 0.0, wl, wr, sl, sr, rk, proxy, cur, nxt, thr
    cdef Py_ssize_t[:] order
    for i in range(n):
        total[y[i]] += w[i]
    for j in range(m):
        order = np.argsort(np.asarray(x[:, j]), kind="stable")
        for k in range(n_classes):
            left[k] = 0.0
        for i in range(n - 1):
            oi = order[i]
            left[y[oi]] += w[oi]
            cur = x[oi, j]
            nxt = x[order[i + 1], j]
            if not (nxt > cur):
                continue
            wl = 0.0
            wr = 0.0
            sl = 0.0
            sr = 0.0
            for k in range(n_classes):
                rk = total[k] - left[k]
                wl += left[k]
                wr += rk
                sl += left[k] * left[k]
                sr += rk * rk
            proxy = sl / wl + sr / wr
            if proxy > best_val:
                best_val = proxy
                best_col = j
                thr = 0.5 * (cur + nxt)
                if thr >= nxt:
                    thr = cur
                best_thr = thr
    return best_col, best_thr, best_val
