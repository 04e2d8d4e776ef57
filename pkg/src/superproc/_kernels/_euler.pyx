# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled path kernel; must mirror fallback.py operation for operation.

Compiled with -ffp-contract=off so no FMA contraction can change roundings
relative to the pure-Python reference.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, fabs, floor, sqrt
from numpy.random cimport bitgen_t
from scipy.special.cython_special cimport ndtri

cnp.import_array()

cdef double LAM_SEGMENT = 16.0
cdef int POISSON_KMAX = 1024


cdef inline long _poisson_one(double lam, double u) noexcept nogil:
    cdef double p = exp(-lam)
    cdef double c = p
    cdef long k = 0
    while u > c and k < POISSON_KMAX:
        k += 1
        p *= lam / k
        c += p
    return k


cdef inline long _poisson(double lam, bitgen_t *rng) noexcept nogil:
    cdef long nseg, s, tot
    cdef double lseg
    if lam <= LAM_SEGMENT:
        return _poisson_one(lam, rng.next_double(rng.state))
    nseg = <long> floor(lam / LAM_SEGMENT) + 1
    lseg = lam / nseg
    tot = 0
    for s in range(nseg):
        tot += _poisson_one(lseg, rng.next_double(rng.state))
    return tot


def simulate_chunk(
    const double[:, ::1] qT,
    const double[::1] beta,
    const double[::1] sig2,
    const double[::1] jump_comp,
    const long[::1] atom_off,
    const double[::1] atom_u,
    const double[::1] atom_w,
    const double[::1] x0,
    double dt,
    long n_steps,
    double mass_floor,
    list bitgens,
    double[:, ::1] out,
    long row0,
):
    """Simulate len(bitgens) paths, writing terminal states into out[row0:].

    Returns (sum, count) of per-step relative total-mass changes.
    """
    cdef long n = beta.shape[0]
    cdef long npaths = len(bitgens)
    cdef long j, i, jj, k, step
    cdef double dd, total_old, total_new, u, z, val, xi, xc, lam
    cdef double rel_sum = 0.0
    cdef long rel_n = 0
    cdef long cnt

    cdef cnp.ndarray[cnp.uintp_t, ndim=1] ptrs = np.empty(npaths, dtype=np.uintp)
    for j in range(npaths):
        ptrs[j] = <cnp.uintp_t> PyCapsule_GetPointer(bitgens[j].capsule, "BitGenerator")

    cdef cnp.ndarray[cnp.float64_t, ndim=1] x_arr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xn_arr = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] xn = xn_arr
    cdef double[::1] d = d_arr
    cdef bitgen_t *rng

    with nogil:
        for j in range(npaths):
            rng = <bitgen_t*> (<void*> ptrs[j])
            for i in range(n):
                x[i] = x0[i]
            for step in range(n_steps):
                for i in range(n):
                    dd = 0.0
                    for jj in range(n):
                        dd += qT[i, jj] * x[jj]
                    dd += beta[i] * x[i]
                    dd -= x[i] * jump_comp[i]
                    d[i] = dd
                total_old = 0.0
                for i in range(n):
                    total_old += x[i]
                for i in range(n):
                    xi = x[i]
                    xc = xi if xi > 0.0 else 0.0
                    u = rng.next_double(rng.state)
                    if u <= 0.0:
                        u = 5e-324
                    z = ndtri(u)
                    val = xi + dt * d[i] + sqrt(2.0 * sig2[i] * xc * dt) * z
                    for k in range(atom_off[i], atom_off[i + 1]):
                        lam = xc * atom_w[k] * dt
                        cnt = _poisson(lam, rng)
                        val += atom_u[k] * cnt
                    xn[i] = 0.0 if val < mass_floor else val
                for i in range(n):
                    x[i] = xn[i]
                total_new = 0.0
                for i in range(n):
                    total_new += x[i]
                if total_old > 0.0:
                    rel_sum += fabs(total_new - total_old) / total_old
                    rel_n += 1
            for i in range(n):
                out[row0 + j, i] = x[i]
    return rel_sum, rel_n
