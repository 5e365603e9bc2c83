# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Loops run in a fixed order so results are deterministic; no threading.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport tanh, sqrt, M_PI

cnp.import_array()


def dw3x3_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] w):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t b, c, h, v, ky, kx, hh, vv
    cdef floating acc, k
    for b in range(B):
        for c in range(C):
            for h in range(H):
                for v in range(W):
                    acc = 0
                    for ky in range(3):
                        hh = h + ky - 1
                        if hh < 0 or hh >= H:
                            continue
                        for kx in range(3):
                            vv = v + kx - 1
                            if vv < 0 or vv >= W:
                                continue
                            acc = acc + w[c, ky, kx] * x[b, c, hh, vv]
                    y[b, c, h, v] = acc
    return out


def dw3x3_backward(floating[:, :, :, ::1] x, floating[:, :, ::1] w, floating[:, :, :, ::1] gy):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((B, C, H, W), dtype=dtype)
    gw_arr = np.zeros((C, 3, 3), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, c, h, v, ky, kx, hh, vv
    cdef floating g
    cdef double acc[9]
    for c in range(C):
        for ky in range(9):
            acc[ky] = 0
        for b in range(B):
            for h in range(H):
                for v in range(W):
                    g = gy[b, c, h, v]
                    for ky in range(3):
                        hh = h + ky - 1
                        if hh < 0 or hh >= H:
                            continue
                        for kx in range(3):
                            vv = v + kx - 1
                            if vv < 0 or vv >= W:
                                continue
                            gx[b, c, hh, vv] += g * w[c, ky, kx]
                            acc[ky * 3 + kx] += g * x[b, c, hh, vv]
        for ky in range(3):
            for kx in range(3):
                gw[c, ky, kx] = <floating>acc[ky * 3 + kx]
    return gx_arr, gw_arr


def pool_bins(Py_ssize_t n, Py_ssize_t p):
    return [(i * n // p, ((i + 1) * n + p - 1) // p) for i in range(p)]


def adaptive_pool_forward(floating[:, :, :, ::1] x, Py_ssize_t p):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((B, C, p, p), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t b, c, i, j, h, v, r0, r1, c0, c1
    cdef double acc
    for b in range(B):
        for c in range(C):
            for i in range(p):
                r0 = i * H // p
                r1 = ((i + 1) * H + p - 1) // p
                for j in range(p):
                    c0 = j * W // p
                    c1 = ((j + 1) * W + p - 1) // p
                    acc = 0
                    for h in range(r0, r1):
                        for v in range(c0, c1):
                            acc += x[b, c, h, v]
                    y[b, c, i, j] = <floating>(acc / ((r1 - r0) * (c1 - c0)))
    return out


def adaptive_pool_backward(floating[:, :, :, ::1] gy, Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = gy.shape[0], C = gy.shape[1], p = gy.shape[2]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = out
    cdef Py_ssize_t b, c, i, j, h, v, r0, r1, c0, c1
    cdef floating g
    for b in range(B):
        for c in range(C):
            for i in range(p):
                r0 = i * H // p
                r1 = ((i + 1) * H + p - 1) // p
                for j in range(p):
                    c0 = j * W // p
                    c1 = ((j + 1) * W + p - 1) // p
                    g = gy[b, c, i, j] / ((r1 - r0) * (c1 - c0))
                    for h in range(r0, r1):
                        for v in range(c0, c1):
                            gx[b, c, h, v] += g
    return out


def im2col3x3(floating[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C * 9, H * W), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    cdef Py_ssize_t b, c, k, ky, kx, h, v, hh, vv
    for b in range(B):
        for c in range(C):
            for k in range(9):
                ky = k // 3
                kx = k % 3
                for h in range(H):
                    hh = h + ky - 1
                    if hh < 0 or hh >= H:
                        continue
                    for v in range(W):
                        vv = v + kx - 1
                        if vv < 0 or vv >= W:
                            continue
                        cols[b, c * 9 + k, h * W + v] = x[b, c, hh, vv]
    return out


def col2im3x3(floating[:, :, ::1] cols, Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = cols.shape[0], C = cols.shape[1] // 9
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = out
    cdef Py_ssize_t b, c, k, ky, kx, h, v, hh, vv
    for b in range(B):
        for c in range(C):
            for k in range(9):
                ky = k // 3
                kx = k % 3
                for h in range(H):
                    hh = h + ky - 1
                    if hh < 0 or hh >= H:
                        continue
                    for v in range(W):
                        vv = v + kx - 1
                        if vv < 0 or vv >= W:
                            continue
                        gx[b, c, hh, vv] += cols[b, c * 9 + k, h * W + v]
    return out


cdef double _K = sqrt(2.0 / M_PI)


def gelu_forward(x):
    cdef cnp.ndarray xa = np.ascontiguousarray(x)
    y_arr = np.empty_like(xa)
    t_arr = np.empty_like(xa)
    if xa.dtype == np.float32:
        _gelu_fwd[float](xa.reshape(-1), y_arr.reshape(-1), t_arr.reshape(-1))
    else:
        _gelu_fwd[double](xa.reshape(-1), y_arr.reshape(-1), t_arr.reshape(-1))
    return y_arr, t_arr


cdef void _gelu_fwd(floating[::1] x, floating[::1] y, floating[::1] t) noexcept:
    cdef Py_ssize_t i
    cdef double xi, ti
    for i in range(x.shape[0]):
        xi = x[i]
        ti = tanh(_K * (xi + 0.044715 * xi * xi * xi))
        t[i] = <floating>ti
        y[i] = <floating>(0.5 * xi * (1.0 + ti))


def gelu_backward(x, t, gy):
    cdef cnp.ndarray xa = np.ascontiguousarray(x)
    cdef cnp.ndarray ta = np.ascontiguousarray(t)
    cdef cnp.ndarray ga = np.ascontiguousarray(gy, dtype=xa.dtype)
    gx = np.empty_like(xa)
    if xa.dtype == np.float32:
        _gelu_bwd[float](xa.reshape(-1), ta.reshape(-1), ga.reshape(-1), gx.reshape(-1))
    else:
        _gelu_bwd[double](xa.reshape(-1), ta.reshape(-1), ga.reshape(-1), gx.reshape(-1))
    return gx


cdef void _gelu_bwd(floating[::1] x, floating[::1] t, floating[::1] g, floating[::1] out) noexcept:
    cdef Py_ssize_t i
    cdef double xi, ti, du
    for i in range(x.shape[0]):
        xi = x[i]
        ti = t[i]
        du = _K * (1.0 + 3 * 0.044715 * xi * xi)
        out[i] = <floating>(g[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * du))
