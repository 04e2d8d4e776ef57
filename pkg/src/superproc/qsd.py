"""Survival-conditioned limits and the family of quasi-stationary laws.

The central object is the transform Y(f) = 1 - e^{-G f}, obtained as the
long-time limit of the conditioned ratio

    gamma_t(f) = (1 - e^{-nu(V_t f)}) / (1 - e^{-nu(v_t)}),

where v is the extinction function.  Every quasi-stationary law with decay
rate r in [lam, 0) is then a deterministic power of the limit:
Y_r(f) = Y(f)^{r/lam}.  Rates below lam admit no such law and are rejected
when a ``QsdSpec`` is built.

Convergence of gamma_t is geometric with rate e^{lam t}: the nu-integrals
of both numerator and denominator equal (const + O(e^{lam t})) e^{lam t},
with no dependence on the spectral gap (nu is an exact left eigenvector, so
profile-shape corrections never enter the nu-ratios).  The evaluator
therefore extrapolates its plateau with rate lam and records an empirical
rate fit next to it so the assumption stays auditable.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .cumulant import (
    CumulantTrajectory,
    SolverOptions,
    extinction_function,
    solve_cumulant,
    solve_extended,
)
from .model import ModelError, SuperprocessModel, fn_vector
from .spectral import SpectralTriple, require_subcritical

__all__ = [
    "QsdSpecError",
    "ConvergenceError",
    "QsdSpec",
    "gamma_t",
    "YaglomTransform",
    "yaglom_transform",
    "qsd_transform",
    "fixed_point_residual",
    "mass_decay_check",
    "functional_equation_residual",
]


class QsdSpecError(ValueError):
    """Requested decay rate is outside [lam, 0)."""


class ConvergenceError(RuntimeError):
    """Plateau not reached before the horizon cap; carries the last values."""

    def __init__(self, message: str, last_values=()):
        super().__init__(message)
        self.last_values = tuple(last_values)


@dataclass(frozen=True)
class QsdSpec:
    """A decay rate r in [lam, 0) with its compounding exponent gamma = r/lam."""

    r: float
    lam: float

    def __post_init__(self):
        if not self.lam < 0:
            raise QsdSpecError(f"model must be subcritical (lam = {self.lam})")
        if self.r < self.lam:
            raise QsdSpecError(
                f"no QSD exists for r < lam (r = {self.r}, lam = {self.lam})"
            )
        if not self.r < 0:
            raise QsdSpecError(f"decay rate must be negative (got {self.r})")

    @property
    def gamma(self) -> float:
        return self.r / self.lam


def _ratio(nu_vf: float, nu_v: float) -> float:
    """(1 - e^{-a}) / (1 - e^{-b}) through expm1, clipped into [0, 1]."""
    num = -math.expm1(-nu_vf)
    den = -math.expm1(-nu_v)
    if den == 0.0:
        raise ConvergenceError("denominator 1 - e^{-nu(v_t)} underflowed to 0")
    return min(max(num / den, 0.0), 1.0)


def gamma_t(
    m: SuperprocessModel,
    triple: SpectralTriple,
    f,
    t: float,
    opts: SolverOptions | None = None,
    t_min: float = 1e-3,
) -> float:
    """Conditioned ratio (1 - e^{-nu(V_t f)}) / (1 - e^{-nu(v_t)}) at one time."""
    if not t >= t_min:
        raise ValueError(f"need t >= t_min = {t_min}")
    f = fn_vector(f, m.n)
    v_traj = extinction_function(m, triple, T=t * (1 + 1e-9) + 1e-9, opts=opts, t_min=t_min)
    if np.isinf(f).all():
        return 1.0
    f_traj = solve_extended(m, triple, f, T=t * (1 + 1e-9) + 1e-9, opts=opts, t_min=t_min)
    return _ratio(float(triple.nu @ f_traj.value_at(t)), float(triple.nu @ v_traj.value_at(t)))


class YaglomTransform:
    """Evaluator of the limit transform Y(f) = 1 - e^{-G f}.

    ``evaluate`` walks gamma_t over geometrically spaced times until the
    values plateau (successive difference below ``plateau_tol``), then
    removes the leading e^{lam t} correction with one Richardson step.  Both
    the raw plateau and the extrapolated value are kept in the per-call
    record returned by ``evaluate_with_meta``.

    Evaluations are cached by the byte image of f; the cache is guarded by
    a lock so concurrent readers are safe and writers are isolated.
    """

    def __init__(
        self,
        model: SuperprocessModel,
        triple: SpectralTriple,
        opts: SolverOptions | None = None,
        plateau_tol: float = 1e-6,
        t_start: float | None = None,
        growth: float = 1.5,
        max_evals: int = 60,
        t_min: float = 1e-3,
    ):
        require_subcritical(triple)
        self.model = model
        self.triple = triple
        self.opts = opts or SolverOptions()
        self.plateau_tol = float(plateau_tol)
        self.growth = float(growth)
        self.max_evals = int(max_evals)
        self.t_min = float(t_min)
        self.t_start = float(t_start) if t_start is not None else 1.0 / abs(triple.lam)
        # horizons stay clear of e^{lam t} underflow
        self.t_cap = 600.0 / abs(triple.lam)
        self._lock = threading.Lock()
        self._cache: dict[bytes, tuple[float, dict]] = {}
        self._v_traj: CumulantTrajectory | None = None
        self._v_T = 0.0

    # -- extinction trajectory shared across evaluations ----------------------

    def _ensure_v(self, T: float) -> CumulantTrajectory:
        with self._lock:
            traj = self._v_traj
            have = self._v_T
        if traj is None or have < T:
            T_new = max(T, 32.0 / abs(self.triple.lam), 2 * self.t_min)
            traj = extinction_function(self.model, self.triple, T_new, self.opts, self.t_min)
            with self._lock:
                self._v_traj = traj
                self._v_T = T_new
        return traj

    def extinction_at(self, t: float) -> np.ndarray:
        """v_t as a vector (t >= t_min)."""
        if not t >= self.t_min:
            raise ValueError(f"need t >= t_min = {self.t_min}")
        return self._ensure_v(t).value_at(t)

    # -- evaluation ------------------------------------------------------------

    def _times(self):
        t = self.t_start
        for _ in range(self.max_evals):
            yield min(t, self.t_cap)
            if t >= self.t_cap:
                return
            t *= self.growth

    def evaluate_with_meta(self, f) -> tuple[float, dict]:
        f = fn_vector(f, self.model.n)
        key = f.tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        value, meta = self._evaluate(f)
        with self._lock:
            self._cache[key] = (value, meta)
        return value, meta

    def evaluate(self, f) -> float:
        return self.evaluate_with_meta(f)[0]

    def __call__(self, f) -> float:
        return self.evaluate(f)

    def _evaluate(self, f: np.ndarray) -> tuple[float, dict]:
        lam = self.triple.lam
        nu = self.triple.nu
        if not f.any():
            return 0.0, {"t_stop": 0.0, "plateau": 0.0, "extrapolated": 0.0,
                         "n_evals": 0, "assumed_rate": lam, "empirical_rate": None}
        if np.isinf(f).all():
            # numerator and denominator coincide for every t
            return 1.0, {"t_stop": 0.0, "plateau": 1.0, "extrapolated": 1.0,
                         "n_evals": 0, "assumed_rate": lam, "empirical_rate": None}

        ts = list(self._times())
        horizon = ts[-1]
        v_traj = self._ensure_v(horizon)
        f_traj = solve_extended(self.model, self.triple, f, horizon, self.opts, self.t_min)

        values: list[float] = []
        used: list[float] = []
        for tk in ts:
            nu_v = float(nu @ v_traj.value_at(tk))
            nu_vf = float(nu @ f_traj.value_at(tk))
            if nu_v < 1e-250:
                break
            values.append(_ratio(nu_vf, nu_v))
            used.append(tk)
            if len(values) >= 2 and abs(values[-1] - values[-2]) < self.plateau_tol:
                y1, y2 = values[-2], values[-1]
                dt = used[-1] - used[-2]
                denom = math.expm1(-lam * dt)  # e^{|lam| dt} - 1
                extra = min(max(y2 + (y2 - y1) / denom, 0.0), 1.0)
                emp = None
                if len(values) >= 3:
                    # with widening spacing, y_k - y_{k-1} ~ C e^{rate * t_{k-1}},
                    # so the rate reads off against the earlier grid times
                    d1 = abs(values[-2] - values[-3])
                    d2 = abs(values[-1] - values[-2])
                    if d1 > 0 and d2 > 0:
                        emp = math.log(d2 / d1) / (used[-2] - used[-3])
                meta = {
                    "t_stop": used[-1],
                    "t_plateau_start": used[-2],
                    "plateau": y2,
                    "extrapolated": extra,
                    "n_evals": len(values),
                    "assumed_rate": lam,
                    "empirical_rate": emp,
                }
                return extra, meta
        raise ConvergenceError(
            f"conditioned ratio did not plateau below {self.plateau_tol} "
            f"by t = {used[-1] if used else 0.0}",
            last_values=values[-2:],
        )


def yaglom_transform(
    m: SuperprocessModel,
    triple: SpectralTriple,
    opts: SolverOptions | None = None,
    **kwargs,
) -> YaglomTransform:
    """Build the limit-transform evaluator for a subcritical model."""
    return YaglomTransform(m, triple, opts, **kwargs)


def qsd_transform(yt: YaglomTransform, spec: QsdSpec, f) -> float:
    """1 - e^{-G_r f} = Y(f)^{r/lam} for the decay-rate-r member of the family."""
    return yt.evaluate(f) ** spec.gamma


def fixed_point_residual(
    m: SuperprocessModel,
    triple: SpectralTriple,
    yt: YaglomTransform,
    spec: QsdSpec,
    f,
    t: float,
    opts: SolverOptions | None = None,
) -> float:
    """|Y_r(V_t f) - e^{rt} Y_r(f)|: the defining invariance of the rate-r law."""
    if not t > 0:
        raise ValueError("t must be > 0")
    f = fn_vector(f, m.n)
    if np.isinf(f).any():
        raise ModelError("fixed-point residual needs finite f")
    if not f.any():
        return 0.0
    vt_f = solve_cumulant(m, triple, f, t, opts or yt.opts).final
    lhs = qsd_transform(yt, spec, vt_f)
    rhs = math.exp(spec.r * t) * qsd_transform(yt, spec, f)
    return abs(lhs - rhs)


def mass_decay_check(
    m: SuperprocessModel,
    triple: SpectralTriple,
    yt: YaglomTransform,
    spec: QsdSpec,
    t: float,
) -> tuple[float, float]:
    """(measured, expected) survival weight of the rate-r law at horizon t.

    measured = Y_r(v_t) (survival probability of the law pushed through the
    process), expected = e^{rt}.
    """
    v_t = yt.extinction_at(t)
    measured = qsd_transform(yt, spec, v_t)
    expected = math.exp(spec.r * t)
    return measured, expected


def functional_equation_residual(
    m: SuperprocessModel,
    triple: SpectralTriple,
    yt: YaglomTransform,
    f,
    s: float,
    opts: SolverOptions | None = None,
) -> float:
    """|Y(V_s f) - e^{s lam} Y(f)|: the flow covariance of the limit transform."""
    if not s > 0:
        raise ValueError("s must be > 0")
    f = fn_vector(f, m.n)
    if np.isinf(f).any():
        raise ModelError("functional-equation residual needs finite f")
    if not f.any():
        return 0.0
    vs_f = solve_cumulant(m, triple, f, s, opts or yt.opts).final
    return abs(yt.evaluate(vs_f) - math.exp(s * triple.lam) * yt.evaluate(f))
