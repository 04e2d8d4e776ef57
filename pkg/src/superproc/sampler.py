"""Monte Carlo engine for the finite-site branching process.

Paths follow the Euler scheme with full-truncation clipping: per step and
site the drift is (Q^T X)_i + beta_i X_i - X_i sum_k u_k w_k (jump
compensation folded into the drift), the noise is sqrt(2 sigma_i^2 X_i dt)
times a standard normal, and each atom k fires Poisson(X_i w_k dt) raw
jumps of size u_k.  Negative proposals and anything below ``mass_floor``
collapse to exact zero, which is absorbing.

Every path owns an RNG stream derived from (seed, path_index) by
counter-mode seed derivation, so ensembles are bit-identical no matter how
the work is chunked or threaded.  Heavy-tailed compounding counts come from
the integer law with generating function 1 - (1-s)^gamma.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cumulant import SolverOptions, extinction_function, mech_arrays
from .model import ModelError, SuperprocessModel, fn_vector, measure_vector
from .qsd import QsdSpec
from .spectral import principal_triple

__all__ = [
    "PathConfig",
    "ParticleEnsemble",
    "SibuyaParams",
    "ConditioningError",
    "simulate_path",
    "simulate_ensemble",
    "conditioned_ensemble",
    "empirical_laplace",
    "LaplaceEstimate",
    "sibuya_sample",
    "sample_qsd",
    "resolve_threads",
    "export_ensemble_csv",
    "ensemble_summary",
]

_CHUNK_PATHS = 8192
_REL_CHANGE_WARN = 0.5


class ConditioningError(RuntimeError):
    """No surviving paths to condition on."""


@dataclass(frozen=True)
class PathConfig:
    dt: float
    t_end: float
    n_paths: int
    seed: int = 0
    mass_floor: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")
        if self.mass_floor < 0:
            raise ValueError("mass_floor must be >= 0")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    @property
    def n_steps(self) -> int:
        # dt is nudged so that n_steps * dt_eff == t_end exactly
        return max(1, round(self.t_end / self.dt))

    @property
    def dt_eff(self) -> float:
        return self.t_end / self.n_steps


@dataclass(frozen=True)
class ParticleEnsemble:
    """Terminal states of simulated paths with survival flags."""

    terminal_states: np.ndarray  # (n_paths, n)
    survived: np.ndarray  # bool, parallel
    per_path_seed: dict
    stats: dict

    def __post_init__(self):
        ts = np.asarray(self.terminal_states, dtype=float)
        sv = np.asarray(self.survived, dtype=bool)
        if ts.shape[0] != sv.shape[0]:
            raise ValueError("terminal_states and survived lengths differ")
        ts.setflags(write=False)
        sv.setflags(write=False)
        object.__setattr__(self, "terminal_states", ts)
        object.__setattr__(self, "survived", sv)

    @property
    def n_paths(self) -> int:
        return self.terminal_states.shape[0]


def resolve_threads() -> int:
    """Thread cap from SUPERPROC_THREADS (0 or unset = auto)."""
    raw = os.environ.get("SUPERPROC_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"SUPERPROC_THREADS must be an integer (got {raw!r})")
    if cap < 0:
        raise ValueError("SUPERPROC_THREADS must be >= 0")
    auto = min(4, os.cpu_count() or 1)
    threads = auto if cap == 0 else min(cap, 32)
    if not _kernels.HAVE_COMPILED:
        return 1  # the fallback kernel holds the GIL; threads would only reorder overhead
    return threads


def _stream(seed: int, path_index: int) -> np.random.PCG64:
    ss = np.random.SeedSequence(seed, spawn_key=(path_index,))
    return np.random.PCG64(ss)


def _kernel_inputs(m: SuperprocessModel, mu0: np.ndarray):
    arr = mech_arrays(m)
    n = m.n
    atom_off = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        atom_off[i + 1] = atom_off[i] + len(m.mech.pi[i])
    jump_comp = np.zeros(n)
    for i, site in enumerate(m.mech.pi):
        jump_comp[i] = sum(a.u * a.w for a in site)
    return {
        "qT": np.ascontiguousarray(m.rates.q.T),
        "beta": np.ascontiguousarray(m.mech.beta),
        "sig2": np.ascontiguousarray(arr.sig2),
        "jump_comp": jump_comp,
        "atom_off": atom_off,
        "atom_u": np.ascontiguousarray(arr.atom_u),
        "atom_w": np.ascontiguousarray(arr.atom_w),
        "x0": np.ascontiguousarray(mu0),
    }


def simulate_path(m: SuperprocessModel, mu0, cfg: PathConfig, path_index: int) -> np.ndarray:
    """Terminal state of the single path driven by stream (seed, path_index)."""
    mu0 = measure_vector(mu0, m.n)
    ki = _kernel_inputs(m, mu0)
    out = np.zeros((1, m.n))
    _kernels.active.simulate_chunk(
        ki["qT"], ki["beta"], ki["sig2"], ki["jump_comp"],
        ki["atom_off"], ki["atom_u"], ki["atom_w"], ki["x0"],
        cfg.dt_eff, cfg.n_steps, cfg.mass_floor,
        [_stream(cfg.seed, int(path_index))], out, 0,
    )
    return out[0]


def simulate_ensemble(m: SuperprocessModel, mu0, cfg: PathConfig) -> ParticleEnsemble:
    """Simulate cfg.n_paths independent paths (chunked, optionally threaded).

    Results are merged in path-index order into a preallocated array, so the
    ensemble is identical whatever the thread count.
    """
    mu0 = measure_vector(mu0, m.n)
    ki = _kernel_inputs(m, mu0)
    out = np.zeros((cfg.n_paths, m.n))
    chunks = [
        (lo, min(lo + _CHUNK_PATHS, cfg.n_paths))
        for lo in range(0, cfg.n_paths, _CHUNK_PATHS)
    ]

    def run(chunk):
        lo, hi = chunk
        bitgens = [_stream(cfg.seed, p) for p in range(lo, hi)]
        return _kernels.active.simulate_chunk(
            ki["qT"], ki["beta"], ki["sig2"], ki["jump_comp"],
            ki["atom_off"], ki["atom_u"], ki["atom_w"], ki["x0"],
            cfg.dt_eff, cfg.n_steps, cfg.mass_floor, bitgens, out, lo,
        )

    threads = resolve_threads()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run, chunks))  # map preserves chunk order
    else:
        partials = [run(c) for c in chunks]
    rel_sum = sum(p[0] for p in partials)
    rel_n = sum(p[1] for p in partials)
    mean_rel = rel_sum / rel_n if rel_n else 0.0
    stats = {
        "backend": _kernels.backend_name(),
        "threads": threads,
        "dt_eff": cfg.dt_eff,
        "n_steps": cfg.n_steps,
        "mean_step_rel_change": mean_rel,
        "dt_warning": bool(mean_rel > _REL_CHANGE_WARN),
    }
    return ParticleEnsemble(
        terminal_states=out,
        survived=out.sum(axis=1) > 0.0,
        per_path_seed={
            "scheme": "seed-sequence spawn key = path index",
            "master_seed": int(cfg.seed),
        },
        stats=stats,
    )


def conditioned_ensemble(
    m: SuperprocessModel, mu0, cfg: PathConfig, opts: SolverOptions | None = None
) -> tuple[ParticleEnsemble, float]:
    """Survivor sub-ensemble at the horizon plus the empirical survival fraction.

    Refuses to run when the predicted survivor count (from the extinction
    function) is below 100: conditioning on so few paths is noise.
    """
    mu0 = measure_vector(mu0, m.n)
    if not mu0.any():
        raise ModelError("starting measure must be nonzero to condition on survival")
    triple = principal_triple(m)
    v = extinction_function(m, triple, T=max(cfg.t_end, 2e-3), opts=opts)
    p_surv = -math.expm1(-float(mu0 @ v.value_at(cfg.t_end)))
    expected = cfg.n_paths * p_surv
    if expected < 100:
        raise ValueError(
            f"expected survivors {expected:.1f} < 100 at t = {cfg.t_end}; "
            "use a smaller horizon or more paths"
        )
    ens = simulate_ensemble(m, mu0, cfg)
    frac = float(ens.survived.mean())
    if not ens.survived.any():
        raise ConditioningError("conditioning impossible at this horizon/sample size")
    stats = dict(ens.stats)
    stats.update({
        "survival_fraction": frac,
        "predicted_survival_fraction": p_surv,
        "n_total": ens.n_paths,
    })
    sub = ParticleEnsemble(
        terminal_states=ens.terminal_states[ens.survived],
        survived=np.ones(int(ens.survived.sum()), dtype=bool),
        per_path_seed=ens.per_path_seed,
        stats=stats,
    )
    return sub, frac


@dataclass(frozen=True)
class LaplaceEstimate:
    value: float
    se: float
    n: int


def empirical_laplace(ens: ParticleEnsemble, f, survivors_only: bool = False) -> LaplaceEstimate:
    """Mean of e^{-<X, f>} over paths with its standard error."""
    f = fn_vector(f, ens.terminal_states.shape[1])
    if np.isinf(f).any():
        raise ModelError("empirical Laplace needs finite f")
    states = ens.terminal_states[ens.survived] if survivors_only else ens.terminal_states
    if states.shape[0] == 0:
        raise ConditioningError("empty ensemble")
    vals = np.exp(-(states @ f))
    n = states.shape[0]
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return LaplaceEstimate(value=float(vals.mean()), se=se, n=n)


@dataclass(frozen=True)
class SibuyaParams:
    """Integer law with generating function E[s^Z] = 1 - (1-s)^gamma."""

    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1] (got {self.gamma})")


_SIBUYA_SWITCH = 4096


def _sibuya_tail(gamma: float, u: float, lo: int) -> int:
    # inverse CDF via the closed-form survival function
    # S(n) = Gamma(n+1-gamma) / (Gamma(1-gamma) Gamma(n+1)) = prod_{k<=n} (1 - gamma/k)
    target = 1.0 - u
    lg = math.lgamma(1.0 - gamma)

    def surv(n: int) -> float:
        return math.exp(math.lgamma(n + 1.0 - gamma) - lg - math.lgamma(n + 1.0))

    hi = lo
    while surv(hi) > target:
        hi *= 2
        if hi > 1 << 62:
            return hi
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if surv(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def sibuya_sample(p: SibuyaParams, rng: np.random.Generator) -> int:
    """One draw of Z >= 1 with P(Z=n) = gamma (1-gamma) ... (n-1-gamma) / n!.

    Inverse-CDF with the sequential pmf recursion p_{n+1} = p_n (n-gamma)/(n+1);
    deep tail excursions (heavy tail: infinite mean for gamma < 1) switch to
    the closed-form survival function, which is the same product.
    """
    gamma = p.gamma
    u = float(rng.random())
    pmf = gamma
    cum = pmf
    k = 1
    while u > cum:
        if k >= _SIBUYA_SWITCH:
            return _sibuya_tail(gamma, u, k)
        pmf *= (k - gamma) / (k + 1)
        k += 1
        cum += pmf
    return k


def sample_qsd(
    m: SuperprocessModel,
    source: ParticleEnsemble,
    spec: QsdSpec,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw rate-r law samples by compounding the survivor ensemble.

    Each sample sums Z independent draws (with replacement) from the source
    ensemble, Z from the gamma = r/lam compounding law; gamma = 1 reduces to
    plain source draws.  The source should be a conditioned ensemble at a
    horizon where the conditioned ratio has plateaued; record that horizon
    alongside any exported samples.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    states = source.terminal_states
    K = states.shape[0]
    if K == 0:
        raise ConditioningError("empty source ensemble")
    sib = SibuyaParams(spec.gamma)
    uniform = np.full(K, 1.0 / K)
    out = np.empty((count, m.n))
    for i in range(count):
        z = sibuya_sample(sib, rng)
        if z <= 4096:
            idx = rng.integers(0, K, size=z)
            out[i] = states[idx].sum(axis=0)
        else:
            # heavy-tail draws: multinomial occupation counts of z uniform
            # picks, identical in law to summing z indexed draws
            counts = rng.multinomial(z, uniform)
            out[i] = counts.astype(float) @ states
    return out


def export_ensemble_csv(ens: ParticleEnsemble, path, labels) -> None:
    """Write `path_index, survived, X[label1..]` rows."""
    header = "path_index,survived," + ",".join(f"X[{lab}]" for lab in labels)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for idx in range(ens.n_paths):
            cells = [str(idx), "1" if ens.survived[idx] else "0"]
            cells += [f"{x:.17g}" for x in ens.terminal_states[idx]]
            fh.write(",".join(cells) + "\n")


def ensemble_summary(ens: ParticleEnsemble) -> dict:
    surv = float(ens.survived.mean()) if ens.n_paths else 0.0
    n = ens.n_paths
    se = math.sqrt(max(surv * (1 - surv), 0.0) / n) if n > 1 else 0.0
    return {
        "n_paths": n,
        "survival_fraction": surv,
        "survival_se": se,
        "mean_total_mass": float(ens.terminal_states.sum(axis=1).mean()) if n else 0.0,
        "per_path_seed": ens.per_path_seed,
        "stats": ens.stats,
    }
