# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``.

Each function accepts float32 or float64 channels-last arrays and returns the
same values as its numpy counterpart.  The batch-norm kernels fuse the
normalisation and the activation into single passes over memory, and
accumulate channel statistics in double precision.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fmax, fmin, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline double _lrelu1(double u, double slope) noexcept nogil:
    # fmax/fmin compile to branch-free code; the u == u test keeps NaN visible
    if u == u:
        return fmax(u, 0.0) + slope * fmin(u, 0.0)
    return u


def _pads(int kh, int kw):
    return (kh - 1) // 2, kh - 1 - (kh - 1) // 2, (kw - 1) // 2, kw - 1 - (kw - 1) // 2


def im2col(x, int kh, int kw):
    """(B, H, W, C) -> (B*H*W, kh*kw*C) patch matrix, zero-padded at the borders."""
    x = np.ascontiguousarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float64)
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    out = np.empty((B * H * W, kh * kw * C), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, out, kh, kw)
    else:
        _im2col[double](x, out, kh, kw)
    return out


cdef void _im2col(real[:, :, :, ::1] x, real[:, ::1] out, int kh, int kw) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef int top = (kh - 1) // 2, left = (kw - 1) // 2
    cdef Py_ssize_t b, h, w, i, j, c, r, col, hh, ww
    r = 0
    for b in range(B):
        for h in range(H):
            for w in range(W):
                col = 0
                for i in range(kh):
                    hh = h + i - top
                    for j in range(kw):
                        ww = w + j - left
                        if 0 <= hh < H and 0 <= ww < W:
                            for c in range(C):
                                out[r, col + c] = x[b, hh, ww, c]
                        else:
                            for c in range(C):
                                out[r, col + c] = 0
                        col += C
                r += 1


def col2im(cols, shape, int kh, int kw):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to (B, H, W, C)."""
    cols = np.ascontiguousarray(cols)
    if cols.dtype != np.float32:
        cols = cols.astype(np.float64)
    B, H, W, C = shape
    out = np.zeros((B, H, W, C), dtype=cols.dtype)
    cols2 = cols.reshape(B * H * W, kh * kw * C)
    if cols.dtype == np.float32:
        _col2im[float](cols2, out, kh, kw)
    else:
        _col2im[double](cols2, out, kh, kw)
    return out


cdef void _col2im(real[:, ::1] cols, real[:, :, :, ::1] out, int kh, int kw) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], H = out.shape[1], W = out.shape[2], C = out.shape[3]
    cdef int top = (kh - 1) // 2, left = (kw - 1) // 2
    cdef Py_ssize_t b, h, w, i, j, c, r, col, hh, ww
    r = 0
    for b in range(B):
        for h in range(H):
            for w in range(W):
                col = 0
                for i in range(kh):
                    hh = h + i - top
                    for j in range(kw):
                        ww = w + j - left
                        if 0 <= hh < H and 0 <= ww < W:
                            for c in range(C):
                                out[b, hh, ww, c] += cols[r, col + c]
                        col += C
                r += 1


cdef void _bn_fwd(real[:, ::1] z, real[::1] gamma, real[::1] beta, double eps, double slope,
                  double[::1] mean, double[::1] var, real[:, ::1] y, real[:, ::1] xhat) noexcept nogil:
    cdef Py_ssize_t M = z.shape[0], C = z.shape[1], m, c
    cdef double s1[4096]
    cdef double s2[4096]
    cdef double inv[4096]
    cdef double sh[4096]
    cdef double xh, u, d
    cdef real* zr
    cdef real* yr
    cdef real* xr
    for c in range(C):
        s1[c] = 0
        s2[c] = 0
    for m in range(M):
        zr = &z[m, 0]
        for c in range(C):
            s1[c] += zr[c]
    for c in range(C):
        mean[c] = s1[c] / M
        sh[c] = mean[c]
    # second pass about the mean keeps the variance accurate
    for m in range(M):
        zr = &z[m, 0]
        for c in range(C):
            d = zr[c] - sh[c]
            s2[c] += d * d
    for c in range(C):
        var[c] = s2[c] / M
        inv[c] = 1.0 / sqrt(var[c] + eps)
    for m in range(M):
        zr = &z[m, 0]
        yr = &y[m, 0]
        xr = &xhat[m, 0]
        for c in range(C):
            xh = (zr[c] - sh[c]) * inv[c]
            xr[c] = <real>xh
            u = xh * gamma[c] + beta[c]
            yr[c] = _lrelu1(u, slope)


def _flat(a):
    a = np.ascontiguousarray(a)
    return a.reshape(-1, a.shape[a.ndim - 1])


def bn_act_forward(z, gamma, beta, double eps, double slope):
    """Batch-statistics normalisation followed by leaky ReLU, per channel (last axis).

    Returns ``(y, xhat, mean, var)`` with the biased batch variance.
    """
    dt = z.dtype
    C = z.shape[z.ndim - 1]
    if C > 4096:
        raise ValueError("at most 4096 channels")
    z2 = _flat(z)
    g = np.ascontiguousarray(gamma, dtype=dt)
    bt = np.ascontiguousarray(beta, dtype=dt)
    y = np.empty_like(z2)
    xhat = np.empty_like(z2)
    mean = np.empty(C)
    var = np.empty(C)
    if dt == np.float32:
        _bn_fwd[float](z2, g, bt, eps, slope, mean, var, y, xhat)
    else:
        _bn_fwd[double](z2, g, bt, eps, slope, mean, var, y, xhat)
    return y.reshape(z.shape), xhat.reshape(z.shape), mean.astype(dt), var.astype(dt)


cdef void _bn_apply(real[:, ::1] z, double[::1] scale, double[::1] shift, double slope,
                    real[:, ::1] y) noexcept nogil:
    cdef Py_ssize_t M = z.shape[0], C = z.shape[1], m, c
    cdef double u
    for m in range(M):
        for c in range(C):
            u = z[m, c] * scale[c] + shift[c]
            y[m, c] = _lrelu1(u, slope)


def bn_act_apply(z, mean, var, gamma, beta, double eps, double slope):
    """Inference path: fixed statistics, then leaky ReLU."""
    z2 = _flat(z)
    scale = np.asarray(gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + eps)
    shift = np.asarray(beta, np.float64) - np.asarray(mean, np.float64) * scale
    y = np.empty_like(z2)
    if z2.dtype == np.float32:
        _bn_apply[float](z2, scale, shift, slope, y)
    else:
        _bn_apply[double](z2, scale, shift, slope, y)
    return y.reshape(z.shape)


cdef void _bn_bwd(real[:, ::1] dy, real[:, ::1] y, real[:, ::1] xhat, real[::1] gamma,
                  real[::1] var, double eps, double slope, real[:, ::1] dz,
                  double[::1] dgamma, double[::1] dbeta) noexcept nogil:
    cdef Py_ssize_t M = dy.shape[0], C = dy.shape[1], m, c
    cdef double du
    cdef double k[4096]
    cdef double gs[4096]
    cdef double bs[4096]
    cdef real* dyr
    cdef real* yr
    cdef real* xr
    cdef real* dzr
    for c in range(C):
        gs[c] = 0
        bs[c] = 0
    for m in range(M):
        dyr = &dy[m, 0]
        yr = &y[m, 0]
        xr = &xhat[m, 0]
        for c in range(C):
            du = dyr[c] * (1.0 if yr[c] > 0 else slope)
            bs[c] += du
            gs[c] += du * xr[c]
    for c in range(C):
        k[c] = gamma[c] / sqrt(<double>var[c] + eps) / M
        dgamma[c] = gs[c]
        dbeta[c] = bs[c]
    for m in range(M):
        dyr = &dy[m, 0]
        yr = &y[m, 0]
        xr = &xhat[m, 0]
        dzr = &dz[m, 0]
        for c in range(C):
            du = dyr[c] * (1.0 if yr[c] > 0 else slope)
            dzr[c] = <real>(k[c] * (M * du - bs[c] - xr[c] * gs[c]))


def bn_act_backward(dy, y, xhat, gamma, var, double eps, double slope):
    """Gradients of :func:`bn_act_forward`: ``(dz, dgamma, dbeta)``."""
    dt = dy.dtype
    C = dy.shape[dy.ndim - 1]
    if C > 4096:
        raise ValueError("at most 4096 channels")
    dy2 = _flat(dy)
    dz = np.empty_like(dy2)
    dgamma = np.empty(C)
    dbeta = np.empty(C)
    args = (dy2, _flat(y.astype(dt, copy=False)), _flat(xhat.astype(dt, copy=False)),
            np.ascontiguousarray(gamma, dtype=dt), np.ascontiguousarray(var, dtype=dt))
    if dt == np.float32:
        _bn_bwd[float](*args, eps, slope, dz, dgamma, dbeta)
    else:
        _bn_bwd[double](*args, eps, slope, dz, dgamma, dbeta)
    return dz.reshape(dy.shape), dgamma.astype(dt), dbeta.astype(dt)


cdef void _lrelu(real[::1] x, double slope, real[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        y[i] = <real>(x[i] * (1.0 if x[i] > 0 else slope))


cdef void _lrelu_bwd(real[::1] dy, real[::1] x, double slope, real[::1] dx) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        dx[i] = <real>(dy[i] * (1.0 if x[i] > 0 else slope))


def leaky_relu(x, double slope):
    xf = np.ascontiguousarray(x).reshape(-1)
    if xf.dtype not in (np.float32, np.float64):
        return np.where(x > 0, x, slope * x)
    y = np.empty_like(xf)
    if xf.dtype == np.float32:
        _lrelu[float](xf, slope, y)
    else:
        _lrelu[double](xf, slope, y)
    return y.reshape(np.shape(x))


def leaky_relu_backward(dy, x, double slope):
    xf = np.ascontiguousarray(x).reshape(-1)
    dyf = np.ascontiguousarray(dy, dtype=xf.dtype).reshape(-1)
    if xf.dtype not in (np.float32, np.float64):
        return np.where(x > 0, dy, slope * dy)
    dx = np.empty_like(xf)
    if xf.dtype == np.float32:
        _lrelu_bwd[float](dyf, xf, slope, dx)
    else:
        _lrelu_bwd[double](dyf, xf, slope, dx)
    return dx.reshape(np.shape(x))
