# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel hot loops: pointwise K(t,s) and the cell-integral matrix.

Mirrors fbmflow._kernels_py; the pure version remains the reference
implementation and the two are cross-checked in the test suite.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport pow, sqrt
from scipy.special cimport cython_special

cnp.import_array()


cdef double _beta(double a, double b) noexcept nogil:
    return cython_special.beta(a, b)


cdef double _betainc(double a, double b, double x) noexcept nogil:
    return cython_special.betainc(a, b, x)


def ch_const(double H):
    return sqrt(2.0 * H / ((1.0 - 2.0 * H) * _beta(1.0 - 2.0 * H, H + 0.5)))


def kernel_values(double H, t, s, gap=None):
    """Closed-form K(t,s) over broadcast arrays; 0 where the gap is <= 0."""
    t_arr = np.asarray(t, dtype=np.float64)
    s_arr = np.asarray(s, dtype=np.float64)
    gap_arr = t_arr - s_arr if gap is None else np.asarray(gap, dtype=np.float64)
    t_b, s_b, g_b = np.broadcast_arrays(t_arr, s_arr, gap_arr)
    cdef cnp.ndarray[double, ndim=1] tf = np.ascontiguousarray(t_b, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] sf = np.ascontiguousarray(s_b, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] gf = np.ascontiguousarray(g_b, dtype=np.float64).ravel()
    cdef Py_ssize_t n = tf.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef double a = 1.0 - 2.0 * H
    cdef double b = H + 0.5
    cdef double Bab = _beta(a, b)
    cdef double ch = sqrt(2.0 * H / ((1.0 - 2.0 * H) * Bab))
    cdef double ti, si, gi, first, inner
    with nogil:
        for i in range(n):
            ti = tf[i]; si = sf[i]; gi = gf[i]
            if gi <= 0.0:
                continue
            first = pow(ti / si, H - 0.5) * pow(gi, H - 0.5)
            inner = pow(si, 2.0 * H - 1.0) * Bab * (1.0 - _betainc(a, b, si / ti))
            out[i] = ch * (first + (0.5 - H) * pow(si, 0.5 - H) * inner)
    return out.reshape(t_b.shape)


def cell_integral_matrix(double H, Py_ssize_t n, double dt):
    """C[i-1, j] = int_{j dt}^{(j+1) dt} K(i dt, u) du for j < i, else 0."""
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((n, n), dtype=np.float64)
    cdef double a = 1.0 - 2.0 * H
    cdef double b = H + 0.5
    cdef double Bab = _beta(a, b)
    cdef double B2 = _beta(1.5 - H, b)
    cdef double ch = sqrt(2.0 * H / ((1.0 - 2.0 * H) * Bab))
    cdef double coef2 = (0.5 - H) * Bab / b
    cdef Py_ssize_t i, j
    cdef double t, lo, hi, i_lo, i_hi, up, down, term1, term2, acc_lo, acc_ilo
    with nogil:
        for i in range(1, n + 1):
            t = i * dt
            # sweep cells left to right reusing the right edge of the previous cell
            acc_lo = 0.0      # lo^b * (1 - I_{lo/t})
            acc_ilo = 0.0     # I_{lo/t}(3/2-H, b)
            for j in range(i):
                hi = (j + 1) * dt
                if hi > t:
                    hi = t
                i_hi = _betainc(1.5 - H, b, hi / t)
                term1 = pow(t, b) * B2 * (i_hi - acc_ilo) / b
                up = pow(hi, b) * (1.0 - _betainc(a, b, hi / t))
                term2 = coef2 * (up - acc_lo)
                out[i - 1, j] = ch * (term1 + term2)
                acc_lo = up
                acc_ilo = i_hi
    return out
