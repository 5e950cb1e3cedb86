# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU sequence kernels.

Same contract as ``gru_py``: recurrent projections go through BLAS
(np.matmul into preallocated buffers), everything elementwise is fused
into typed loops so the time loop allocates nothing per step.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expf, tanh, tanhf

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline real _sig(real a) noexcept nogil:
    cdef real e
    if a >= 0:
        if real is float:
            return <real>1.0 / (<real>1.0 + expf(-a))
        else:
            return <real>1.0 / (<real>1.0 + exp(-a))
    if real is float:
        e = expf(a)
    else:
        e = exp(a)
    return e / (<real>1.0 + e)


cdef inline real _th(real a) noexcept nogil:
    if real is float:
        return tanhf(a)
    return tanh(a)


cdef void _fwd_zr(const real[:, ::1] xz_t, const real[:, ::1] az,
                  const real[:, ::1] xr_t, const real[:, ::1] ar,
                  const real[:, ::1] h, real[:, ::1] z, real[:, ::1] r,
                  real[:, ::1] rh) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            z[i, j] = _sig(xz_t[i, j] + az[i, j])
            r[i, j] = _sig(xr_t[i, j] + ar[i, j])
            rh[i, j] = r[i, j] * h[i, j]


cdef void _fwd_combine(const real[:, ::1] xn_t, const real[:, ::1] an,
                       const real[:, ::1] z, const real[:, ::1] h,
                       const real[::1] m, real[:, ::1] n,
                       real[:, ::1] hout) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef real nn, hnew
    for i in range(n.shape[0]):
        for j in range(n.shape[1]):
            nn = _th(xn_t[i, j] + an[i, j])
            n[i, j] = nn
            hnew = (<real>1.0 - z[i, j]) * h[i, j] + z[i, j] * nn
            hout[i, j] = m[i] * hnew + (<real>1.0 - m[i]) * h[i, j]


cdef void _bwd_stage1(const real[:, ::1] dhs_t, const real[:, ::1] z,
                      const real[:, ::1] n, const real[:, ::1] h_prev,
                      const real[::1] m, real[:, ::1] carry,
                      real[:, ::1] dz, real[:, ::1] dan) noexcept nogil:
    # carry holds dh on entry and the partial dh_prev on exit
    cdef Py_ssize_t i, j
    cdef real dh, dh_step, dn
    for i in range(dz.shape[0]):
        for j in range(dz.shape[1]):
            dh = dhs_t[i, j] + carry[i, j]
            dh_step = dh * m[i]
            dn = dh_step * z[i, j]
            dan[i, j] = dn * (<real>1.0 - n[i, j] * n[i, j])
            dz[i, j] = dh_step * (n[i, j] - h_prev[i, j])
            carry[i, j] = dh * (<real>1.0 - m[i]) + dh_step * (<real>1.0 - z[i, j])


cdef void _bwd_stage2(const real[:, ::1] dtmp, const real[:, ::1] h_prev,
                      const real[:, ::1] z, const real[:, ::1] r,
                      const real[:, ::1] dz, real[:, ::1] carry,
                      real[:, ::1] daz, real[:, ::1] dar) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef real dr
    for i in range(daz.shape[0]):
        for j in range(daz.shape[1]):
            dr = dtmp[i, j] * h_prev[i, j]
            dar[i, j] = dr * r[i, j] * (<real>1.0 - r[i, j])
            daz[i, j] = dz[i, j] * z[i, j] * (<real>1.0 - z[i, j])
            carry[i, j] += dtmp[i, j] * r[i, j]


cdef void _add_into(real[:, ::1] acc, const real[:, ::1] inc) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(acc.shape[0]):
        for j in range(acc.shape[1]):
            acc[i, j] += inc[i, j]


def _check(*arrays):
    dtype = arrays[0].dtype
    if dtype not in (np.float32, np.float64):
        raise TypeError(f"kernel supports float32/float64, got {dtype}")
    for a in arrays:
        if a.dtype != dtype:
            raise TypeError("kernel arguments must share one dtype")
    return dtype


def gru_forward(xz, xr, xn, uz, ur, un, h0, mask):
    _check(xz, xr, xn, uz, ur, un, h0, mask)
    T, B, H = xz.shape
    dtype = xz.dtype
    hs = np.empty((T, B, H), dtype=dtype)
    zs = np.empty_like(hs)
    rs = np.empty_like(hs)
    ns = np.empty_like(hs)
    az = np.empty((B, H), dtype=dtype)
    ar = np.empty((B, H), dtype=dtype)
    an = np.empty((B, H), dtype=dtype)
    rh = np.empty((B, H), dtype=dtype)
    h = np.ascontiguousarray(h0)
    if dtype == np.float32:
        fwd_zr, fwd_combine = _fwd_zr[float], _fwd_combine[float]
    else:
        fwd_zr, fwd_combine = _fwd_zr[double], _fwd_combine[double]
    for t in range(T):
        np.matmul(h, uz, out=az)
        np.matmul(h, ur, out=ar)
        fwd_zr(xz[t], az, xr[t], ar, h, zs[t], rs[t], rh)
        np.matmul(rh, un, out=an)
        fwd_combine(xn[t], an, zs[t], h, mask[t], ns[t], hs[t])
        h = hs[t]
    return hs, zs, rs, ns


def gru_backward(dhs, hs, zs, rs, ns, uz, ur, un, h0, mask):
    _check(dhs, hs, zs, rs, ns, uz, ur, un, h0, mask)
    T, B, H = dhs.shape
    dtype = dhs.dtype
    daz = np.empty((T, B, H), dtype=dtype)
    dar = np.empty_like(daz)
    dan = np.empty_like(daz)
    dz = np.empty((B, H), dtype=dtype)
    dtmp = np.empty((B, H), dtype=dtype)
    mm = np.empty((B, H), dtype=dtype)
    carry = np.zeros((B, H), dtype=dtype)
    uzT = np.ascontiguousarray(uz.T)
    urT = np.ascontiguousarray(ur.T)
    unT = np.ascontiguousarray(un.T)
    h0 = np.ascontiguousarray(h0)
    if dtype == np.float32:
        stage1, stage2, add_into = _bwd_stage1[float], _bwd_stage2[float], _add_into[float]
    else:
        stage1, stage2, add_into = _bwd_stage1[double], _bwd_stage2[double], _add_into[double]
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        stage1(dhs[t], zs[t], ns[t], h_prev, mask[t], carry, dz, dan[t])
        np.matmul(dan[t], unT, out=dtmp)
        stage2(dtmp, h_prev, zs[t], rs[t], dz, carry, daz[t], dar[t])
        np.matmul(daz[t], uzT, out=mm)
        add_into(carry, mm)
        np.matmul(dar[t], urT, out=mm)
        add_into(carry, mm)
    return daz, dar, dan, carry
