"""Finite-site branching models: sub-Markov motion plus a branching mechanism.

A model couples a jump process on finitely many sites (killing encoded as a
row-sum deficit of the rate matrix, so the cemetery never appears as an
explicit coordinate) with a per-site mechanism

    psi(x, z) = -beta[x] z + sigma[x]^2 z^2 + sum_k (e^{-z u_k} - 1 + z u_k) w_k,

where the atoms (u_k, w_k) are a finite list of jump sizes and rates.  All
types are immutable after construction and every operation here is pure.

Vectors over sites come in two flavours used throughout the package:
test functions (entrywise in [0, +inf], where +inf is a legal value with the
conventions x + inf = inf and, for indicator-style vectors, inf * 0 = 0) and
measures (finite, entrywise >= 0).  Both are plain read-only float arrays;
``fn_vector`` and ``measure_vector`` are the validating constructors.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ModelError",
    "ConfigError",
    "StateSpace",
    "RateMatrix",
    "JumpAtom",
    "BranchingMechanism",
    "SuperprocessModel",
    "ValidationReport",
    "GreyCheck",
    "fn_vector",
    "measure_vector",
    "validate_model",
    "psi_eval",
    "psi0_eval",
    "psi0_prime_eval",
    "grey_condition_check",
    "load_model",
    "parse_model_config",
]


class ModelError(ValueError):
    """A model or one of its inputs violates a structural rule."""


class ConfigError(ModelError):
    """Malformed model config file; message is anchored to file and line."""

    def __init__(self, message: str, path: str = "<config>", line: int | None = None):
        loc = f"{path}:{line}" if line is not None else path
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line


def _readonly(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def fn_vector(values, n: int | None = None) -> np.ndarray:
    """Validate a test-function vector: entries in [0, +inf], NaN rejected."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        if n is None:
            raise ModelError("scalar test function needs an explicit site count")
        v = np.full(n, float(v))
    if v.ndim != 1:
        raise ModelError("test function must be a 1-d vector")
    if n is not None and v.shape[0] != n:
        raise ModelError(f"test function has {v.shape[0]} entries, model has {n} sites")
    if np.isnan(v).any():
        raise ModelError("test function contains NaN")
    if (v < 0).any():
        raise ModelError("test function entries must be >= 0")
    return _readonly(v)


def measure_vector(weights, n: int | None = None) -> np.ndarray:
    """Validate a measure vector: finite entries >= 0."""
    v = fn_vector(weights, n)
    if np.isinf(v).any():
        raise ModelError("measure entries must be finite")
    return v


@dataclass(frozen=True)
class StateSpace:
    """Finite site set; labels double as column headers in exports."""

    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if len(self.labels) < 1:
            raise ModelError("state space needs at least one site")
        if len(set(self.labels)) != len(self.labels):
            raise ModelError("site labels must be pairwise distinct")

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class RateMatrix:
    """Sub-Markov rate matrix; the row-sum deficit is the killing rate."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ModelError("rate matrix must be square")
        if np.isnan(q).any() or np.isinf(q).any():
            raise ModelError("rate matrix entries must be finite")
        object.__setattr__(self, "q", _readonly(q))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def killing_rates(self) -> np.ndarray:
        return _readonly(-self.q.sum(axis=1))


@dataclass(frozen=True)
class JumpAtom:
    """One branching jump: mass ``u`` added at rate ``w`` per unit of mass."""

    u: float
    w: float


@dataclass(frozen=True)
class BranchingMechanism:
    """Per-site mechanism coefficients (beta, sigma, atom list)."""

    beta: np.ndarray
    sigma: np.ndarray
    pi: tuple[tuple[JumpAtom, ...], ...]

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if beta.ndim != 1 or sigma.ndim != 1 or beta.shape != sigma.shape:
            raise ModelError("beta and sigma must be 1-d vectors of equal length")
        if np.isnan(beta).any() or np.isinf(beta).any():
            raise ModelError("beta entries must be finite")
        if np.isnan(sigma).any() or np.isinf(sigma).any():
            raise ModelError("sigma entries must be finite")
        pi = tuple(tuple(JumpAtom(float(a.u), float(a.w)) for a in site) for site in self.pi)
        if len(pi) != beta.shape[0]:
            raise ModelError("pi must list atoms for every site")
        object.__setattr__(self, "beta", _readonly(beta))
        object.__setattr__(self, "sigma", _readonly(sigma))
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class SuperprocessModel:
    """The (motion, mechanism) pair on a finite site set."""

    space: StateSpace
    rates: RateMatrix
    mech: BranchingMechanism

    def __post_init__(self):
        if not (self.space.n == self.rates.n == self.mech.n):
            raise ModelError(
                f"dimension mismatch: {self.space.n} sites, "
                f"{self.rates.n}x{self.rates.n} rates, {self.mech.n} mechanism entries"
            )

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def labels(self) -> tuple[str, ...]:
        return self.space.labels


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]
    # sum_k (u_k ^ u_k^2) w_k per site; finite by construction, reported for audit
    kernel_bounds: tuple[float, ...]


def validate_model(m: SuperprocessModel) -> ValidationReport:
    """Report-style check of all model invariants; never raises, never mutates."""
    bad: list[str] = []
    q = m.rates.q
    off = q - np.diag(np.diag(q))
    if (off < 0).any():
        i, j = np.argwhere(off < 0)[0]
        bad.append(f"rates[{i}][{j}] = {q[i, j]} is negative off the diagonal")
    if (np.diag(q) > 0).any():
        i = int(np.argmax(np.diag(q) > 0))
        bad.append(f"rates[{i}][{i}] = {q[i, i]} must be <= 0")
    row_sums = q.sum(axis=1)
    tol = 1e-12 * max(1.0, float(np.abs(q).max()))
    if (row_sums > tol).any():
        i = int(np.argmax(row_sums > tol))
        bad.append(f"row {i} of rates sums to {row_sums[i]} > 0 (not sub-Markov)")
    if (m.mech.sigma < 0).any():
        i = int(np.argmax(m.mech.sigma < 0))
        bad.append(f"sigma[{i}] = {m.mech.sigma[i]} must be >= 0")
    for i, site in enumerate(m.mech.pi):
        for k, atom in enumerate(site):
            if not atom.u > 0:
                bad.append(f"pi[{i}][{k}]: atom mass must be positive (got {atom.u})")
            if not atom.w > 0:
                bad.append(f"pi[{i}][{k}]: atom rate must be positive (got {atom.w})")
    bounds = tuple(
        float(sum(min(a.u, a.u**2) * a.w for a in site)) for site in m.mech.pi
    )
    return ValidationReport(ok=not bad, violations=tuple(bad), kernel_bounds=bounds)


# --- pointwise mechanism evaluation -----------------------------------------

_SERIES_CUT = 1e-3


def _compensated_exp(a: float) -> float:
    """e^{-a} - 1 + a, stable for small a (direct expm1 cancels to noise)."""
    if a < _SERIES_CUT:
        # a^2/2 - a^3/6 + a^4/24 - a^5/120 + a^6/720, Horner form
        return a * a * (0.5 + a * (-1.0 / 6 + a * (1.0 / 24 + a * (-1.0 / 120 + a / 720))))
    return math.expm1(-a) + a


def _site(m: SuperprocessModel, site: int) -> int:
    site = int(site)
    if not 0 <= site < m.n:
        raise ModelError(f"site index {site} out of range for {m.n} sites")
    return site


def _check_z(z: float, allow_inf: bool) -> float:
    z = float(z)
    if math.isnan(z) or z < 0:
        raise ModelError(f"z must be >= 0 (got {z})")
    if math.isinf(z) and not allow_inf:
        raise ModelError("z must be finite")
    return z


def psi_eval(m: SuperprocessModel, site: int, z: float) -> float:
    """The mechanism -beta z + sigma^2 z^2 + sum (e^{-zu} - 1 + zu) w at one site."""
    site = _site(m, site)
    z = _check_z(z, allow_inf=False)
    return float(-m.mech.beta[site] * z + psi0_eval(m, site, z))


def psi0_eval(m: SuperprocessModel, site: int, z: float) -> float:
    """The noise part sigma^2 z^2 + sum (e^{-zu} - 1 + zu) w; z = +inf allowed.

    At z = +inf the monotone limit is returned: 0 for a noise-free site,
    +inf otherwise.
    """
    site = _site(m, site)
    z = _check_z(z, allow_inf=True)
    sig = float(m.mech.sigma[site])
    atoms = m.mech.pi[site]
    if math.isinf(z):
        return math.inf if (sig > 0 or atoms) else 0.0
    out = sig * sig * z * z
    for a in atoms:
        out += _compensated_exp(z * a.u) * a.w
    return out


def psi0_prime_eval(m: SuperprocessModel, site: int, z: float) -> float:
    """d/dz of the noise part: 2 sigma^2 z + sum (1 - e^{-zu}) u w; z = +inf allowed."""
    site = _site(m, site)
    z = _check_z(z, allow_inf=True)
    sig = float(m.mech.sigma[site])
    atoms = m.mech.pi[site]
    if math.isinf(z):
        if sig > 0:
            return math.inf
        return float(sum(a.u * a.w for a in atoms))
    out = 2.0 * sig * sig * z
    for a in atoms:
        out += -math.expm1(-z * a.u) * a.u * a.w
    return out


# --- spatially independent lower envelope and its tail integral -------------


@dataclass(frozen=True)
class GreyCheck:
    verdict: str  # "holds_sufficiently" | "inconclusive"
    beta_env: float
    sigma_env: float
    shared_atoms: tuple[JumpAtom, ...]
    detail: str
    tail_increments: tuple[float, ...] = ()

    @property
    def holds(self) -> bool:
        return self.verdict == "holds_sufficiently"


def grey_condition_check(m: SuperprocessModel) -> GreyCheck:
    """Sufficient finite-extinction test via a site-independent lower envelope.

    The envelope takes the largest beta, the smallest sigma and, for atom
    masses present at every site, the smallest rate.  A positive envelope
    sigma settles integrability of 1/envelope analytically; otherwise the
    tail integral is probed numerically on growing windows and the verdict
    stays inconclusive unless the increments visibly converge.
    """
    beta_env = float(m.mech.beta.max())
    sigma_env = float(m.mech.sigma.min())
    shared: list[JumpAtom] = []
    masses = set(a.u for a in m.mech.pi[0]) if m.mech.pi else set()
    for site in m.mech.pi[1:]:
        masses &= set(a.u for a in site)
    for u in sorted(masses):
        w = min(min(a.w for a in site if a.u == u) for site in m.mech.pi)
        shared.append(JumpAtom(u, w))
    shared_t = tuple(shared)

    if sigma_env > 0:
        return GreyCheck(
            "holds_sufficiently",
            beta_env,
            sigma_env,
            shared_t,
            "envelope has a quadratic term, tail integral of 1/envelope is finite",
        )

    def envelope(z: float) -> float:
        out = -beta_env * z
        for a in shared:
            out += _compensated_exp(z * a.u) * a.w
        return out

    # asymptotic slope of the envelope; <= 0 means it never diverges
    slope = -beta_env + sum(a.u * a.w for a in shared)
    if slope <= 0:
        return GreyCheck(
            "inconclusive", beta_env, sigma_env, shared_t,
            "envelope does not diverge at infinity",
        )
    z0 = 1.0
    while envelope(z0) <= 0:
        z0 *= 2.0
        if z0 > 1e15:
            return GreyCheck(
                "inconclusive", beta_env, sigma_env, shared_t,
                "envelope never becomes positive on the probed range",
            )
    increments = []
    lo = z0
    for _ in range(14):
        hi = lo * 4.0
        # 33-point Simpson on [lo, hi]
        xs = np.linspace(lo, hi, 33)
        ys = np.array([1.0 / envelope(x) for x in xs])
        h = xs[1] - xs[0]
        inc = h / 3.0 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum())
        increments.append(float(inc))
        lo = hi
    conv = increments[-1] < 1e-9 and all(
        increments[i + 1] < 0.6 * increments[i] for i in range(len(increments) - 4, len(increments) - 1)
    )
    verdict = "holds_sufficiently" if conv else "inconclusive"
    detail = "tail integral converges numerically" if conv else (
        "tail integral of 1/envelope does not visibly converge"
    )
    return GreyCheck(verdict, beta_env, sigma_env, shared_t, detail, tuple(increments))


# --- config files ------------------------------------------------------------


def _find_line(text: str, needle: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def parse_model_config(text: str, path: str = "<config>") -> SuperprocessModel:
    """Parse the JSON model description, anchoring complaints to their line.

    Expected keys: ``states`` (list of labels), ``rates`` (row-major n x n),
    ``beta`` and ``sigma`` (n-arrays), ``pi`` (per-site list of {"u":..,"w":..}).
    """
    for lineno, line in enumerate(text.splitlines(), 1):
        if re.search(r"\b(NaN|-?Infinity)\b", line):
            raise ConfigError("non-finite number literal is not allowed", path, lineno)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", path, e.lineno) from None
    if not isinstance(doc, dict):
        raise ConfigError("top-level value must be an object", path, 1)

    def fail(key: str, message: str):
        raise ConfigError(message, path, _find_line(text, f'"{key}"'))

    for key in ("states", "rates", "beta", "sigma", "pi"):
        if key not in doc:
            raise ConfigError(f"missing key '{key}'", path, 1)
    labels = doc["states"]
    if not isinstance(labels, list) or not labels:
        fail("states", "'states' must be a non-empty list of labels")
    n = len(labels)
    rates = doc["rates"]
    if (
        not isinstance(rates, list)
        or len(rates) != n
        or any(not isinstance(r, list) or len(r) != n for r in rates)
    ):
        fail("rates", f"'rates' must be an {n}x{n} row-major array")
    for key in ("beta", "sigma"):
        if not isinstance(doc[key], list) or len(doc[key]) != n:
            fail(key, f"'{key}' must be a list of {n} numbers")
    if (np.asarray(doc["sigma"], dtype=float) < 0).any():
        fail("sigma", "'sigma' entries must be >= 0")
    pi_doc = doc["pi"]
    if not isinstance(pi_doc, list) or len(pi_doc) != n:
        fail("pi", f"'pi' must list the atoms of each of the {n} sites")
    pi: list[tuple[JumpAtom, ...]] = []
    for i, site in enumerate(pi_doc):
        atoms = []
        for a in site:
            if not isinstance(a, dict) or "u" not in a or "w" not in a:
                fail("pi", f"'pi'[{i}]: each atom needs 'u' and 'w'")
            u, w = float(a["u"]), float(a["w"])
            if not u > 0:
                fail("pi", f"'pi'[{i}]: atom mass must be positive (got {u})")
            if not w > 0:
                fail("pi", f"'pi'[{i}]: atom rate must be positive (got {w})")
            atoms.append(JumpAtom(u, w))
        pi.append(tuple(atoms))

    try:
        model = SuperprocessModel(
            space=StateSpace(tuple(labels)),
            rates=RateMatrix(np.asarray(rates, dtype=float)),
            mech=BranchingMechanism(
                np.asarray(doc["beta"], dtype=float),
                np.asarray(doc["sigma"], dtype=float),
                tuple(pi),
            ),
        )
    except ModelError as e:
        raise ConfigError(str(e), path, 1) from None
    report = validate_model(model)
    if not report.ok:
        first = report.violations[0]
        key = "rates" if "rates" in first or "row" in first else (
            "sigma" if "sigma" in first else "pi"
        )
        raise ConfigError("; ".join(report.violations), path, _find_line(text, f'"{key}"'))
    return model


def load_model(path) -> SuperprocessModel:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_model_config(text, str(path))
