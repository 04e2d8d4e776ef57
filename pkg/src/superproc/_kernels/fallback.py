"""Pure-Python path kernel, the reference for the compiled one.

Both backends must stay operation-for-operation identical: one uniform per
normal draw (inverse CDF), one uniform per Poisson segment, identical
floating-point evaluation order.  An ensemble simulated here is
bit-identical to one simulated by the compiled kernel.
"""

from __future__ import annotations

from math import exp, floor, sqrt

import numpy as np
from scipy.special import ndtri

LAM_SEGMENT = 16.0
POISSON_KMAX = 1024


def _poisson_one(lam: float, u: float) -> int:
    # single-uniform CDF inversion; lam <= LAM_SEGMENT keeps the loop short
    p = exp(-lam)
    c = p
    k = 0
    while u > c and k < POISSON_KMAX:
        k += 1
        p *= lam / k
        c += p
    return k


def _poisson(lam: float, next_u) -> int:
    if lam <= LAM_SEGMENT:
        return _poisson_one(lam, next_u())
    nseg = int(floor(lam / LAM_SEGMENT)) + 1
    lseg = lam / nseg
    tot = 0
    for _ in range(nseg):
        tot += _poisson_one(lseg, next_u())
    return tot


def simulate_chunk(
    qT,
    beta,
    sig2,
    jump_comp,
    atom_off,
    atom_u,
    atom_w,
    x0,
    dt,
    n_steps,
    mass_floor,
    bitgens,
    out,
    row0,
):
    """Simulate len(bitgens) paths, writing terminal states into out[row0:].

    Returns (sum, count) of per-step relative total-mass changes for the
    step-size warning diagnostic.
    """
    n = len(beta)
    qT_l = [[float(qT[i][j]) for j in range(n)] for i in range(n)]
    beta_l = [float(b) for b in beta]
    sig2_l = [float(s) for s in sig2]
    comp_l = [float(c) for c in jump_comp]
    off_l = [int(o) for o in atom_off]
    u_l = [float(u) for u in atom_u]
    w_l = [float(w) for w in atom_w]
    x0_l = [float(x) for x in x0]
    dt = float(dt)
    mass_floor = float(mass_floor)

    rel_sum = 0.0
    rel_n = 0
    for j, bg in enumerate(bitgens):
        rnd = np.random.Generator(bg).random
        x = list(x0_l)
        d = [0.0] * n
        for _ in range(n_steps):
            for i in range(n):
                dd = 0.0
                row = qT_l[i]
                for jj in range(n):
                    dd += row[jj] * x[jj]
                dd += beta_l[i] * x[i]
                dd -= x[i] * comp_l[i]
                d[i] = dd
            total_old = 0.0
            for i in range(n):
                total_old += x[i]
            xn = [0.0] * n
            for i in range(n):
                xi = x[i]
                xc = xi if xi > 0.0 else 0.0
                u = rnd()
                if u <= 0.0:
                    u = 5e-324
                z = ndtri(u)
                val = xi + dt * d[i] + sqrt(2.0 * sig2_l[i] * xc * dt) * z
                for k in range(off_l[i], off_l[i + 1]):
                    lam = xc * w_l[k] * dt
                    cnt = _poisson(lam, rnd)
                    val += u_l[k] * cnt
                xn[i] = 0.0 if val < mass_floor else val
            x = xn
            total_new = 0.0
            for i in range(n):
                total_new += x[i]
            if total_old > 0.0:
                rel_sum += abs(total_new - total_old) / total_old
                rel_n += 1
        for i in range(n):
            out[row0 + j, i] = x[i]
    return rel_sum, rel_n
