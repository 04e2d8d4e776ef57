"""Mean-growth semigroup and principal eigen-analysis.

On a finite site set the first-moment flow of the branching process is the
matrix exponential of ``A = Q + diag(beta)``; ``A`` is Metzler and, when the
motion is irreducible, it carries a simple real principal eigenvalue with
strictly positive right eigenvector ``phi`` and left probability eigenvector
``nu``, normalised so that ``nu . phi = 1``. All functions are pure and safe
for concurrent evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from .model import ModelError, SuperprocessModel, fn_vector, measure_vector

__all__ = [
    "SpectralError",
    "NotSubcriticalError",
    "SpectralTriple",
    "H1Diagnostic",
    "mean_generator",
    "mean_semigroup",
    "principal_triple",
    "require_subcritical",
    "h1_diagnostic",
    "first_moment",
    "spectral_report",
]


class SpectralError(RuntimeError):
    """Eigen-analysis preconditions violated or the solver failed."""


class NotSubcriticalError(SpectralError):
    """Principal eigenvalue is >= 0."""


def mean_generator(m: SuperprocessModel) -> np.ndarray:
    """Q + diag(beta), the generator of the first-moment semigroup."""
    return m.rates.q + np.diag(m.mech.beta)


def mean_semigroup(m: SuperprocessModel, t: float) -> np.ndarray:
    """exp(t (Q + diag beta)); entrywise nonnegative, identity at t = 0.

    Symmetric generators go through an eigendecomposition; the general case
    uses scaling-and-squaring Pade (scipy.linalg.expm).  The two paths
    cross-check each other in the test suite.
    """
    t = float(t)
    if t < 0 or math.isnan(t):
        raise ValueError(f"time must be >= 0 (got {t})")
    A = mean_generator(m)
    if t == 0.0:
        return np.eye(m.n)
    if np.allclose(A, A.T, rtol=0.0, atol=1e-13 * max(1.0, float(np.abs(A).max()))):
        w, V = np.linalg.eigh((A + A.T) / 2.0)
        P = (V * np.exp(t * w)) @ V.T
    else:
        P = scipy.linalg.expm(t * A)
    # exp of a Metzler matrix is nonnegative; clip rounding dust
    return np.maximum(P, 0.0)


@dataclass(frozen=True)
class SpectralTriple:
    """Principal eigenvalue with its normalised right/left eigenvectors.

    ``gap`` is the distance from ``lam`` to the largest real part among the
    remaining eigenvalues (``inf`` for a single site).
    """

    lam: float
    phi: np.ndarray
    nu: np.ndarray
    gap: float

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).copy()
        nu = np.asarray(self.nu, dtype=float).copy()
        phi.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "nu", nu)


def _require_irreducible(m: SuperprocessModel) -> None:
    q = m.rates.q
    support = scipy.sparse.csr_matrix((np.abs(q) > 0) & ~np.eye(m.n, dtype=bool))
    ncomp, _ = connected_components(support, directed=True, connection="strong")
    if ncomp != 1:
        raise SpectralError("reducible generator")


def principal_triple(m: SuperprocessModel, tol: float = 1e-12, max_iter: int = 500000) -> SpectralTriple:
    """Perron triple of Q + diag(beta) by power iteration on exp(h A).

    Using the exponential of the generator (strictly positive for any h > 0
    when the motion is irreducible) sidesteps complex-pair issues a general
    eigensolver can hit on Metzler matrices; a two-sided Rayleigh quotient
    gives the eigenvalue to quadratic accuracy.  Residuals are checked
    against ``tol`` before returning.
    """
    A = mean_generator(m)
    n = m.n
    if n == 1:
        lam = float(A[0, 0])
        return SpectralTriple(lam, np.array([1.0]), np.array([1.0]), math.inf)
    _require_irreducible(m)
    h = 1.0 / (1.0 + float(np.abs(np.diag(A)).max()))
    M = scipy.linalg.expm(h * A)
    v = np.full(n, 1.0 / n)
    w = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        v2 = M @ v
        v2 /= v2.sum()
        w2 = M.T @ w
        w2 /= w2.sum()
        delta = float(np.abs(v2 - v).max() + np.abs(w2 - w).max())
        v, w = v2, w2
        if delta < 1e-15:
            break
    lam = float((w @ (A @ v)) / (w @ v))
    nu = w / w.sum()
    phi = v / float(nu @ v)
    scale = max(1.0, float(np.abs(A).max())) * max(float(phi.max()), 1.0)
    res_r = float(np.abs(A @ phi - lam * phi).max())
    res_l = float(np.abs(A.T @ nu - lam * nu).max())
    if not (res_r < tol * scale and res_l < tol * scale) or (phi <= 0).any() or (nu <= 0).any():
        raise SpectralError("no real Perron root")
    ev = np.linalg.eigvals(A)
    others = np.delete(ev, int(np.argmin(np.abs(ev - lam))))
    gap = float(lam - others.real.max())
    return SpectralTriple(lam, phi, nu, gap)


def require_subcritical(triple: SpectralTriple) -> None:
    if not triple.lam < 0:
        raise NotSubcriticalError(f"not subcritical: principal eigenvalue {triple.lam} >= 0")


@dataclass(frozen=True)
class H1Diagnostic:
    """Worst relative deviation of exp(tA) from its rank-one eigen-profile.

    On a finite site set the deviation over all nonnegative test functions
    is attained at coordinate directions, so it equals
    max_{x,y} |P_t(x,y) / (e^{lam t} phi(x) nu(y)) - 1|.
    """

    t: float
    value: float


def h1_diagnostic(m: SuperprocessModel, triple: SpectralTriple, t: float) -> H1Diagnostic:
    t = float(t)
    if not t > 0:
        raise ValueError(f"time must be > 0 (got {t})")
    P = mean_semigroup(m, t)
    profile = math.exp(triple.lam * t) * np.outer(triple.phi, triple.nu)
    value = float(np.abs(P / profile - 1.0).max())
    return H1Diagnostic(t=t, value=value)


def first_moment(m: SuperprocessModel, triple: SpectralTriple, mu, f, t: float) -> float:
    """Expected mass integral mu . exp(tA) f; requires finite f."""
    if triple.phi.shape[0] != m.n:
        raise ModelError("triple does not match the model dimension")
    mu = measure_vector(mu, m.n)
    f = fn_vector(f, m.n)
    if np.isinf(f).any():
        raise ModelError("first moment needs finite test functions")
    return float(mu @ (mean_semigroup(m, t) @ f))


def spectral_report(m: SuperprocessModel, t_grid=None) -> dict:
    """JSON-ready report: eigen data, residuals, decay table of the profile gap."""
    triple = principal_triple(m)
    A = mean_generator(m)
    rate = triple.gap if math.isfinite(triple.gap) else abs(triple.lam)
    if t_grid is None:
        t_grid = [k / rate for k in (1, 2, 3, 5, 8, 10)]
    table = [
        {"t": float(t), "value": h1_diagnostic(m, triple, t).value} for t in t_grid
    ]
    return {
        "lambda": triple.lam,
        "gap": triple.gap if math.isfinite(triple.gap) else None,
        "phi": triple.phi.tolist(),
        "nu": triple.nu.tolist(),
        "eigen_residuals": {
            "right": float(np.abs(A @ triple.phi - triple.lam * triple.phi).max()),
            "left": float(np.abs(A.T @ triple.nu - triple.lam * triple.nu).max()),
        },
        "h1_decay": table,
        "subcritical": bool(triple.lam < 0),
    }
