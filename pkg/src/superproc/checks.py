"""Named verification checks, shared by the CLI `verify` command and pytest.

Each check produces a CheckResult with the measured value, the expected
value, the tolerance it was held to, and a pass flag; suites group them per
module.  The ``acceptance`` suite is the exit gate: closed-form equivalence,
the functional equations of the limit family, and Monte Carlo consistency
at the pinned sample sizes.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as mdl
from . import qsd as qsdm
from . import sampler as smp
from .cumulant import (
    ExtinctionDivergesError,
    STRICT_OPTIONS,
    SolverOptions,
    extinction_function,
    mild_equation_residual,
    profile_diagnostics,
    ratio_diagnostic,
    semigroup_residual,
    solve_cumulant,
)
from .model import (
    BranchingMechanism,
    JumpAtom,
    RateMatrix,
    StateSpace,
    SuperprocessModel,
    grey_condition_check,
    psi0_eval,
    psi0_prime_eval,
    psi_eval,
    validate_model,
)
from .oracle import (
    FellerParams,
    feller_cumulant,
    feller_extinction,
    feller_model,
    feller_yaglom,
)
from .qsd import (
    QsdSpec,
    QsdSpecError,
    YaglomTransform,
    fixed_point_residual,
    functional_equation_residual,
    gamma_t,
    mass_decay_check,
    qsd_transform,
)
from .sampler import (
    PathConfig,
    SibuyaParams,
    conditioned_ensemble,
    empirical_laplace,
    sample_qsd,
    sibuya_sample,
    simulate_ensemble,
)
from .spectral import (
    first_moment,
    h1_diagnostic,
    mean_generator,
    mean_semigroup,
    principal_triple,
)

__all__ = [
    "CheckResult",
    "SUITES",
    "run_suite",
    "reference_config_text",
    "reference_model",
]


@dataclass
class CheckResult:
    name: str
    suite: str
    measured: float | str
    expected: float | str
    tolerance: float | None
    passed: bool
    inputs: str = ""
    detail: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def _near(suite, name, measured, expected, tol, inputs="", detail="") -> CheckResult:
    passed = bool(abs(measured - expected) <= tol)
    return CheckResult(name, suite, float(measured), float(expected), float(tol),
                       passed, inputs, detail)


def _below(suite, name, measured, tol, inputs="", detail="") -> CheckResult:
    return CheckResult(name, suite, float(measured), f"< {tol}", float(tol),
                       bool(measured < tol), inputs, detail)


def _flag(suite, name, passed, inputs="", detail="") -> CheckResult:
    return CheckResult(name, suite, "pass" if passed else "fail", "pass", None,
                       bool(passed), inputs, detail)


def reference_config_text(name: str) -> str:
    return (
        importlib.resources.files("superproc") / "configs" / f"{name}.json"
    ).read_text(encoding="utf-8")


def reference_model(name: str):
    text = reference_config_text(name)
    digest = hashlib.sha256(text.encode()).hexdigest()[:12]
    return mdl.parse_model_config(text, f"{name}.json"), f"{name}.json sha256:{digest}"


# --------------------------------------------------------------------------
# oracle suite: certify the closed forms before anything depends on them
# --------------------------------------------------------------------------


def suite_oracle() -> list[CheckResult]:
    from scipy.integrate import solve_ivp

    out = []
    rng = np.random.default_rng(101)
    p = FellerParams()
    worst = 0.0
    for _ in range(50):
        f, t, s = rng.uniform(0.05, 8, 3)
        worst = max(worst, abs(
            feller_cumulant(p, f, t + s) - feller_cumulant(p, feller_cumulant(p, f, s), t)
        ))
    out.append(_below("oracle", "flow-property", worst, 1e-12,
                      "50 random (f,t,s) in [0.05,8]"))

    worst = 0.0
    for b, c, f in ((1.0, 1.0, 1.0), (0.7, 2.0, 3.0), (2.5, 0.4, 0.1)):
        sol = solve_ivp(
            lambda t, u: [-(b * u[0] + c * u[0] ** 2)], (0.0, 4.0), [f],
            method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True,
        )
        for t in (0.3, 1.0, 4.0):
            ref = float(sol.sol(t)[0])
            worst = max(worst, abs(feller_cumulant(FellerParams(b, c), f, t) - ref) / ref)
    out.append(_below("oracle", "ode-substitution", worst, 1e-10,
                      "DOP853 at rtol 1e-12 on u' = -(bu + cu^2)"))

    p2 = FellerParams(0.8, 1.7)
    worst = max(
        abs(feller_cumulant(p2, 1e12, t) / feller_extinction(p2, t) - 1.0)
        for t in (0.1, 0.5, 2.0)
    )
    out.append(_below("oracle", "extinction-is-large-f-limit", worst, 1e-10,
                      "f = 1e12 vs closed-form limit"))
    vs = [feller_extinction(p2, t) for t in np.linspace(0.05, 6, 30)]
    out.append(_flag("oracle", "extinction-monotone-decreasing",
                     all(b < a for a, b in zip(vs, vs[1:])), "t grid [0.05, 6]"))

    worst = 0.0
    for b, c in ((1.0, 1.0), (0.5, 2.0)):
        pp = FellerParams(b, c)
        t = 20.0 / b
        for f in (0.3, 1.0, 4.0):
            ratio = -math.expm1(-feller_cumulant(pp, f, t)) / -math.expm1(
                -feller_extinction(pp, t)
            )
            worst = max(worst, abs(ratio - feller_yaglom(pp, f)))
    out.append(_below("oracle", "yaglom-limit-at-20-over-b", worst, 1e-6,
                      "conditioned ratio at t = 20/b"))

    worst = 0.0
    for b, c in ((1.0, 1.0), (0.6, 3.0), (2.0, 0.5)):
        pp = FellerParams(b, c)
        for t in (0.25, 1.0, 3.0):
            worst = max(worst, abs(feller_yaglom(pp, feller_extinction(pp, t)) - math.exp(-b * t)))
    out.append(_below("oracle", "mass-decay-identity", worst, 1e-10,
                      "Y(v_t) vs e^{-bt}, closed forms only"))
    return out


# --------------------------------------------------------------------------
# model suite
# --------------------------------------------------------------------------


def _grid_model() -> SuperprocessModel:
    return SuperprocessModel(
        StateSpace(("a", "b")),
        RateMatrix(np.array([[-0.5, 0.3], [0.4, -0.6]])),
        BranchingMechanism(
            np.array([-1.0, -0.7]),
            np.array([0.8, 0.0]),
            ((JumpAtom(0.5, 0.4), JumpAtom(2.0, 0.1)), (JumpAtom(1.0, 1.0),)),
        ),
    )


def suite_model() -> list[CheckResult]:
    out = []
    m1 = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([-1.0]), np.array([1.0]), ((),)),
    )
    out.append(_near("model", "psi(beta=-1,sigma=1,z=2)", psi_eval(m1, 0, 2.0), 6.0, 0.0,
                     "1-site"))
    out.append(_near("model", "psi(z=0)", psi_eval(m1, 0, 0.0), 0.0, 0.0))
    m_atom = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([0.0]), np.array([0.0]), ((JumpAtom(1.0, 1.0),),)),
    )
    out.append(_near("model", "psi(one-atom,z=1)", psi_eval(m_atom, 0, 1.0),
                     math.exp(-1.0), 1e-15, "beta=0 sigma=0 atom (1,1)"))
    m_sig = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([0.0]), np.array([1.0]), ((),)),
    )
    out.append(_near("model", "psi0(sigma=1,z=3)", psi0_eval(m_sig, 0, 3.0), 9.0, 0.0))
    out.append(_near("model", "psi0'(sigma=1,z=3)", psi0_prime_eval(m_sig, 0, 3.0), 6.0, 0.0))
    m_deg = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([0.0]), np.array([0.0]), ((),)),
    )
    out.append(_near("model", "psi0(degenerate,z=inf)", psi0_eval(m_deg, 0, math.inf), 0.0, 0.0))

    m = _grid_model()
    zs = np.linspace(0.0, 12.0, 121)
    ok_bound = ok_id = ok_mono = ok_convex = True
    worst_fd = 0.0
    for site in range(m.n):
        p0 = np.array([psi0_eval(m, site, z) for z in zs])
        p0p = np.array([psi0_prime_eval(m, site, z) for z in zs])
        ps = np.array([psi_eval(m, site, z) for z in zs])
        ok_bound &= bool((p0 <= zs * p0p + 1e-12).all())
        ok_id &= bool(np.allclose(ps, p0 - m.mech.beta[site] * zs, rtol=0, atol=1e-12))
        ok_mono &= bool((np.diff(p0) >= -1e-12).all() and (np.diff(p0p) >= -1e-12).all())
        ok_convex &= bool((np.diff(p0, 2) >= -1e-10).all())
        h = 1e-4
        for z in zs[1:-1]:
            fd = (psi0_eval(m, site, z + h) - psi0_eval(m, site, z - h)) / (2 * h)
            worst_fd = max(worst_fd, abs(fd - psi0_prime_eval(m, site, z)))
    out.append(_flag("model", "psi0 <= z psi0' on grid", ok_bound, "2-site grid z in [0,12]"))
    out.append(_flag("model", "psi = psi0 - beta z exactly", ok_id))
    out.append(_flag("model", "psi0, psi0' nondecreasing; psi0 convex", ok_mono and ok_convex))
    out.append(_below("model", "finite-difference derivative match", worst_fd, 1e-6,
                      "central differences h=1e-4, O(h^2) budget"))

    good = validate_model(m1)
    out.append(_flag("model", "validate: clean model passes", good.ok))
    bad_rows = SuperprocessModel(
        StateSpace(("a", "b")),
        RateMatrix(np.array([[-1.0, 2.0], [1.0, -1.0]])),
        BranchingMechanism(np.zeros(2), np.zeros(2), ((), ())),
    )
    rep = validate_model(bad_rows)
    out.append(_flag("model", "validate: positive row sum flagged",
                     (not rep.ok) and any("sums" in v for v in rep.violations)))
    bad_atom = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([0.0]), np.array([1.0]), ((JumpAtom(0.0, 1.0),),)),
    )
    rep = validate_model(bad_atom)
    out.append(_flag("model", "validate: zero atom mass flagged",
                     (not rep.ok) and any("mass" in v for v in rep.violations)))

    def two_site_sigma(s0, s1):
        return SuperprocessModel(
            StateSpace(("a", "b")),
            RateMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]])),
            BranchingMechanism(np.array([-1.0, -1.0]), np.array([s0, s1]), ((), ())),
        )

    out.append(_flag("model", "grey: sigma=(1,1) sufficient",
                     grey_condition_check(two_site_sigma(1.0, 1.0)).holds))
    out.append(_flag("model", "grey: sigma=(0,0) no atoms inconclusive",
                     not grey_condition_check(two_site_sigma(0.0, 0.0)).holds))
    out.append(_flag("model", "grey: sigma=(1,0) inconclusive (envelope min)",
                     not grey_condition_check(two_site_sigma(1.0, 0.0)).holds))
    return out


# --------------------------------------------------------------------------
# spectral suite
# --------------------------------------------------------------------------


def suite_spectral() -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(7)
    for name in ("two_site", "three_site"):
        m, dig = reference_model(name)
        tr = principal_triple(m)
        A = mean_generator(m)

        worst = 0.0
        for _ in range(6):
            t, s = rng.uniform(0.0, 5.0, 2)
            worst = max(worst, float(np.abs(
                mean_semigroup(m, t + s) - mean_semigroup(m, t) @ mean_semigroup(m, s)
            ).max()))
        out.append(_below("spectral", f"{name}: semigroup property", worst, 1e-10, dig))

        res_r = float(np.abs(A @ tr.phi - tr.lam * tr.phi).max())
        res_l = float(np.abs(A.T @ tr.nu - tr.lam * tr.nu).max())
        out.append(_below("spectral", f"{name}: eigen residuals", max(res_r, res_l), 1e-10, dig))

        worst = 0.0
        for t in (0.1, 1.0, 10.0):
            P = mean_semigroup(m, t)
            el = math.exp(tr.lam * t)
            worst = max(worst, float(np.abs(tr.nu @ P - el * tr.nu).max()),
                        float(np.abs(P @ tr.phi - el * tr.phi).max()))
        out.append(_below("spectral", f"{name}: eigen invariance at t=0.1,1,10",
                          worst, 1e-9, dig))

        g = tr.gap
        v3 = h1_diagnostic(m, tr, 3.0 / g).value
        v10 = h1_diagnostic(m, tr, 10.0 / g).value
        out.append(_flag("spectral", f"{name}: h1 decay (10/gap below 3/gap and < 1e-2)",
                         v10 < v3 and v10 < 1e-2, dig,
                         f"value(3/gap)={v3:.3e} value(10/gap)={v10:.3e}"))

        # deep window: slow secondary modes must die before the slope is clean
        ts = np.linspace(8.0 / g, 16.0 / g, 12)
        logs = np.log([h1_diagnostic(m, tr, t).value for t in ts])
        slope = float(np.polyfit(ts, logs, 1)[0])
        out.append(_near("spectral", f"{name}: h1 log-slope ~ -gap (10%)",
                         slope, -g, 0.1 * g, dig))

    m1 = feller_model()
    tr1 = principal_triple(m1)
    out.append(_near("spectral", "1-site lambda", tr1.lam, -1.0, 1e-12))
    out.append(_near("spectral", "1-site h1 value is 0",
                     h1_diagnostic(m1, tr1, 2.0).value, 0.0, 1e-12))
    out.append(_near("spectral", "1-site mean semigroup e^{-t}",
                     float(mean_semigroup(m1, 1.0)[0, 0]), math.exp(-1.0), 1e-13))

    m2, dig2 = reference_model("two_site")
    P = mean_semigroup(m2, 1.0)
    closed = math.exp(-1.0) * (1.0 + math.exp(-2.0)) / 2.0
    out.append(_near("spectral", "2-site diagonal closed form",
                     float(P[0, 0]), closed, 1e-12, dig2))
    tr2 = principal_triple(m2)
    out.append(_near("spectral", "2-site gap", tr2.gap, 2.0, 1e-9, dig2))

    m_kill = SuperprocessModel(
        StateSpace(("a", "b")),
        RateMatrix(np.array([[-2.0, 1.0], [1.0, -1.0]])),
        BranchingMechanism(np.zeros(2), np.zeros(2), ((), ())),
    )
    trk = principal_triple(m_kill)
    out.append(_near("spectral", "killing model lambda = (-3+sqrt5)/2",
                     trk.lam, (-3.0 + math.sqrt(5.0)) / 2.0, 1e-12))

    out.append(_near("spectral", "first moment f=phi t=1 equals e^{lam}",
                     first_moment(m2, tr2, tr2.nu, tr2.phi, 1.0),
                     math.exp(tr2.lam), 1e-12, dig2))
    return out


# --------------------------------------------------------------------------
# cumulant suite
# --------------------------------------------------------------------------


def suite_cumulant() -> list[CheckResult]:
    out = []
    p = FellerParams()
    m = feller_model()
    tr = principal_triple(m)
    m3, dig3 = reference_model("three_site")
    tr3 = principal_triple(m3)

    ts = np.linspace(0.05, 4.0, 12)
    worst = 0.0
    for f in (0.1, 1.0, 10.0):
        traj = solve_cumulant(m, tr, [f], 4.0)
        for t in ts:
            ref = feller_cumulant(p, f, t)
            worst = max(worst, abs(float(traj.value_at(t)[0]) - ref) / ref)
    out.append(_below("cumulant", "closed-form equivalence (light grid)", worst, 1e-6,
                      "feller b=c=1, f in {0.1,1,10}"))

    traj0 = solve_cumulant(m3, tr3, [0.0, 0.0, 0.0], 2.0)
    out.append(_near("cumulant", "zero is a fixed point",
                     float(np.abs(traj0.values).max()), 0.0, 0.0, dig3))

    eps = 1e-6
    traj_lin = solve_cumulant(m3, tr3, eps * tr3.phi, 2.0)
    worst = 0.0
    for t in (0.5, 1.0, 2.0):
        approx = eps * math.exp(tr3.lam * t) * tr3.phi
        worst = max(worst, float(np.abs(traj_lin.value_at(t) / approx - 1.0).max()))
    out.append(_below("cumulant", "small-mass linearisation (eps=1e-6)", worst, 1e-4, dig3))

    v = extinction_function(m, tr, T=1.5)
    out.append(_near("cumulant", "extinction value at ln 2",
                     float(v.value_at(math.log(2.0))[0]), 1.0, 1e-6, "feller b=c=1"))

    m_free = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([-1.0]), np.array([0.0]), ((),)),
    )
    tr_free = principal_triple(m_free)
    try:
        extinction_function(m_free, tr_free, T=1.5)
        diverged = False
    except ExtinctionDivergesError:
        diverged = True
    out.append(_flag("cumulant", "noise-free model: caps diverge", diverged,
                     "sigma=0, no atoms, beta=-1"))

    out.append(_flag("cumulant", "grey-sufficient model has finite extinction",
                     grey_condition_check(m3).holds
                     and bool(np.isfinite(extinction_function(m3, tr3, T=2.0).values[1:]).all()),
                     dig3))

    rng = np.random.default_rng(23)
    ok_mono = True
    worst = 0.0
    for _ in range(4):
        f = rng.uniform(0.0, 2.0, 3)
        g = f + rng.uniform(0.0, 1.5, 3)
        tf = solve_cumulant(m3, tr3, f, 1.5, STRICT_OPTIONS)
        tg = solve_cumulant(m3, tr3, g, 1.5, STRICT_OPTIONS)
        viol = float((tf.values - tg.values).max())
        worst = max(worst, viol)
        ok_mono &= viol <= 1e-9
    out.append(_flag("cumulant", "monotone in the starting function (1e-9)", ok_mono,
                     "4 random ordered pairs", f"worst violation {worst:.2e}"))

    worst = 0.0
    f = rng.uniform(0.2, 2.0, 3)
    traj = solve_cumulant(m3, tr3, f, 2.0, STRICT_OPTIONS)
    for t in (0.3, 1.0, 2.0):
        dom = mean_semigroup(m3, t) @ f
        worst = max(worst, float((traj.value_at(t) - dom).max()))
    out.append(_below("cumulant", "dominated by the linear flow (1e-9)",
                      max(worst, 0.0) if worst > 0 else 0.0, 1e-9, dig3,
                      f"worst excess {worst:.2e}"))

    us = np.linspace(0.0, 1.0, 5)
    sols = {u: solve_cumulant(m3, tr3, u * f, 1.0, STRICT_OPTIONS).final for u in us}
    ok_concave = True
    for i in range(len(us) - 2):
        mid = 0.5 * (sols[us[i]] + sols[us[i + 2]])
        ok_concave &= bool((sols[us[i + 1]] >= mid - 1e-9).all())
    out.append(_flag("cumulant", "concave in the scale of f (midpoint, 1e-9)", ok_concave, dig3))

    caps_ok = True
    prev = None
    for cap in (16.0, 256.0, 4096.0):
        vals = solve_cumulant(m3, tr3, np.full(3, cap), 1.0, STRICT_OPTIONS).values
        if prev is not None:
            caps_ok &= bool((prev <= vals + 1e-9).all())
        prev = vals
    out.append(_flag("cumulant", "truncation caps are monotone", caps_ok, dig3))

    res = semigroup_residual(m3, rng.uniform(0, 2, 3), 0.7, 0.7)
    out.append(_below("cumulant", "two-run semigroup residual", res, 1e-6, dig3))

    out.append(_below("cumulant", "mild-equation residual (feller f=1 t=1)",
                      mild_equation_residual(m, tr, [1.0], 1.0), 1e-6))
    m2, dig2 = reference_model("two_site")
    tr2 = principal_triple(m2)
    out.append(_below("cumulant", "mild-equation residual (2-site f=(1,0))",
                      mild_equation_residual(m2, tr2, [1.0, 0.0], 1.0), 1e-6, dig2))

    c4_early = profile_diagnostics(m2, tr2, [1.0, 0.0], 1.0 / tr2.gap)["c4_sup"]
    c4_late = profile_diagnostics(m2, tr2, [1.0, 0.0], 5.0 / tr2.gap)["c4_sup"]
    out.append(_flag("cumulant", "profile deviation decays, < 0.05 by 5/gap",
                     c4_late < c4_early and c4_late < 0.05, dig2,
                     f"c4(1/gap)={c4_early:.3e} c4(5/gap)={c4_late:.3e}"))

    r = ratio_diagnostic(m, tr, [1.0], 10.0, 1.0)
    out.append(_near("cumulant", "nu-ratio at t=10 (feller, s=1)", r, math.exp(-1.0), 1e-3))
    out.append(_near("cumulant", "nu-ratio at s=0 is 1",
                     ratio_diagnostic(m3, tr3, [1.0, 0.5, 2.0], 1.0, 0.0), 1.0, 0.0, dig3))
    t_ref = 10.0 / min(tr3.gap, abs(tr3.lam))
    rr = ratio_diagnostic(m3, tr3, [1.0, 1.0, 1.0], t_ref, 0.5)
    out.append(_near("cumulant", "nu-ratio at t=10/gap vs e^{lam s}",
                     rr, math.exp(tr3.lam * 0.5), 1e-3 * math.exp(tr3.lam * 0.5), dig3,
                     f"t={t_ref:.2f}, relative 1e-3"))
    return out


# --------------------------------------------------------------------------
# qsd suite
# --------------------------------------------------------------------------


def suite_qsd() -> list[CheckResult]:
    out = []
    p = FellerParams()
    m = feller_model()
    tr = principal_triple(m)
    yt = YaglomTransform(m, tr)

    out.append(_near("qsd", "gamma_t(inf) = 1",
                     gamma_t(m, tr, [math.inf], 0.5), 1.0, 0.0))
    out.append(_near("qsd", "gamma_t(0) = 0", gamma_t(m, tr, [0.0], 0.5), 0.0, 0.0))
    exact = -math.expm1(-1.0 / 3.0) / -math.expm1(-1.0)
    out.append(_near("qsd", "gamma_{ln2}(1) closed form",
                     gamma_t(m, tr, [1.0], math.log(2.0)), exact, 1e-7,
                     "feller", "ratio (1-e^{-1/3})/(1-e^{-1})"))

    worst = max(abs(yt.evaluate([f]) - feller_yaglom(p, f)) for f in (0.25, 0.5, 1.0, 2.0, 4.0))
    out.append(_below("qsd", "limit transform matches f/(1+f)", worst, 1e-4, "feller"))
    out.append(_near("qsd", "Y(0) = 0", yt.evaluate([0.0]), 0.0, 0.0))
    out.append(_near("qsd", "Y(inf) = 1", yt.evaluate([math.inf]), 1.0, 0.0))

    m3, dig3 = reference_model("three_site")
    tr3 = principal_triple(m3)
    yt3 = YaglomTransform(m3, tr3)
    rng = np.random.default_rng(31)
    ok_mono = True
    for _ in range(3):
        f = rng.uniform(0.0, 2.0, 3)
        g = f + rng.uniform(0.0, 2.0, 3)
        ok_mono &= yt3.evaluate(f) <= yt3.evaluate(g) + 1e-9
    out.append(_flag("qsd", "transform monotone on random pairs", ok_mono, dig3))

    f = rng.uniform(0.5, 2.0, 3)
    us = np.linspace(0.0, 1.0, 5)
    gvals = [-math.log1p(-yt3.evaluate(u * f)) for u in us]
    ok_concave = all(
        gvals[i + 1] >= 0.5 * (gvals[i] + gvals[i + 2]) - 1e-8 for i in range(len(us) - 2)
    )
    out.append(_flag("qsd", "-log(1-Y(uf)) concave in the scale (1e-8)", ok_concave, dig3))

    y1 = yt.evaluate([1.0])
    r1, r2 = tr.lam, 0.4 * tr.lam
    q1 = qsd_transform(yt, QsdSpec(r1, tr.lam), [1.0])
    q2 = qsd_transform(yt, QsdSpec(r2, tr.lam), [1.0])
    out.append(_near("qsd", "power-family exponent consistency",
                     q1 ** (r2 / r1), q2, 1e-10))
    out.append(_near("qsd", "r = lam member is the limit itself",
                     qsd_transform(yt, QsdSpec(tr.lam, tr.lam), [1.0]), y1, 0.0))

    try:
        QsdSpec(1.5 * tr.lam, tr.lam)
        rejected = False
    except QsdSpecError:
        rejected = True
    out.append(_flag("qsd", "r < lam rejected at construction", rejected))
    try:
        QsdSpec(0.0, tr.lam)
        rejected = False
    except QsdSpecError:
        rejected = True
    out.append(_flag("qsd", "r = 0 rejected at construction", rejected))

    spec_half = QsdSpec(tr.lam / 2.0, tr.lam)
    out.append(_below("qsd", "fixed point residual (r=lam, t=ln2)",
                      fixed_point_residual(m, tr, yt, QsdSpec(tr.lam, tr.lam), [1.0], math.log(2.0)),
                      1e-6, "feller"))
    out.append(_below("qsd", "fixed point residual (r=lam/2, t=ln2)",
                      fixed_point_residual(m, tr, yt, spec_half, [1.0], math.log(2.0)),
                      1e-6, "feller"))

    meas, expd = mass_decay_check(m, tr, yt, QsdSpec(tr.lam, tr.lam), 1.0)
    out.append(_near("qsd", "mass decay (r=lam, t=1)", meas / expd, 1.0, 1e-6, "feller"))
    meas, expd = mass_decay_check(m, tr, yt, spec_half, 2.0 * math.log(2.0))
    out.append(_near("qsd", "mass decay (r=lam/2, t=2ln2)", meas / expd, 1.0, 1e-6, "feller"))

    out.append(_below("qsd", "functional equation (feller, s=ln2)",
                      functional_equation_residual(m, tr, yt, [1.0], math.log(2.0)),
                      1e-6, "feller"))
    f = rng.uniform(0.2, 2.0, 3)
    out.append(_below("qsd", "functional equation (3-site, s=0.5)",
                      functional_equation_residual(m3, tr3, yt3, f, 0.5), 1e-4, dig3))
    return out


# --------------------------------------------------------------------------
# sampler suite (kept at moderate sample sizes; the acceptance suite runs
# the pinned-N versions)
# --------------------------------------------------------------------------


def suite_sampler() -> list[CheckResult]:
    out = []
    n_static = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([0.0]), np.array([0.0]), ((),)),
    )
    cfg = PathConfig(dt=1e-2, t_end=1.0, n_paths=8, seed=1)
    ens = simulate_ensemble(n_static, [1.3], cfg)
    out.append(_near("sampler", "no dynamics: mass constant",
                     float(np.abs(ens.terminal_states - 1.3).max()), 0.0, 0.0))

    m_det = SuperprocessModel(
        StateSpace(("s",)), RateMatrix(np.array([[0.0]])),
        BranchingMechanism(np.array([-1.0]), np.array([0.0]), ((),)),
    )
    ens = simulate_ensemble(m_det, [1.0], PathConfig(dt=1e-3, t_end=1.0, n_paths=4, seed=1))
    out.append(_near("sampler", "deterministic decay within O(dt)",
                     float(ens.terminal_states.mean()), math.exp(-1.0), 1e-3))

    m = feller_model()
    tr = principal_triple(m)
    p = FellerParams()
    cfg = PathConfig(dt=1e-3, t_end=0.5, n_paths=20000, seed=5)
    ens = simulate_ensemble(m, [1.0], cfg)
    lap = empirical_laplace(ens, [1.0])
    target = math.exp(-feller_cumulant(p, 1.0, 0.5))
    out.append(_near("sampler", "unconditioned Laplace within 3 SE (N=2e4)",
                     lap.value, target, 3 * lap.se, "feller t=0.5 seed=5",
                     f"se={lap.se:.2e}"))
    out.append(_near("sampler", "Laplace at f=0 is exactly 1",
                     empirical_laplace(ens, [0.0]).value, 1.0, 0.0))

    cfg1 = PathConfig(dt=1e-3, t_end=1.0, n_paths=20000, seed=6)
    ens1 = simulate_ensemble(m, [1.0], cfg1)
    surv = float(ens1.survived.mean())
    target = -math.expm1(-feller_extinction(p, 1.0))
    se = math.sqrt(target * (1 - target) / cfg1.n_paths)
    out.append(_near("sampler", "survival fraction within 3 SE (N=2e4)",
                     surv, target, 3 * se, "feller t=1 seed=6"))

    mass = ens1.terminal_states.sum(axis=1)
    se_m = float(mass.std(ddof=1) / math.sqrt(cfg1.n_paths))
    out.append(_near("sampler", "mean mass within 3 SE (N=2e4)",
                     float(mass.mean()), math.exp(-1.0), 3 * se_m, "feller t=1 seed=6"))

    rng = np.random.default_rng(9)
    sib = SibuyaParams(0.5)
    zs = np.array([sibuya_sample(sib, rng) for _ in range(20000)])
    out.append(_near("sampler", "compounding law P(Z=1)", float((zs == 1).mean()), 0.5,
                     3 * math.sqrt(0.25 / zs.size)))
    ok = True
    detail = []
    for s in (0.25, 0.5, 0.75):
        vals = s ** zs.astype(float)
        tgt = 1.0 - math.sqrt(1.0 - s)
        se = float(vals.std(ddof=1) / math.sqrt(zs.size))
        ok &= abs(float(vals.mean()) - tgt) <= 3 * se
        detail.append(f"s={s}: dev/SE={(float(vals.mean()) - tgt) / se:+.2f}")
    out.append(_flag("sampler", "compounding generating function at s=.25,.5,.75",
                     ok, "gamma=0.5 N=2e4", "; ".join(detail)))
    return out


# --------------------------------------------------------------------------
# acceptance criteria
# --------------------------------------------------------------------------


def acceptance_1() -> list[CheckResult]:
    """Closed-form flow equivalence, rel err < 1e-6, runtime < 5 s."""
    t0 = time.perf_counter()
    p = FellerParams()
    m = feller_model()
    tr = principal_triple(m)
    ts = np.linspace(0.01, 5.0, 60)
    worst = 0.0
    for f in (0.1, 1.0, 10.0):
        traj = solve_cumulant(m, tr, [f], 5.0)
        for t in ts:
            ref = feller_cumulant(p, f, t)
            worst = max(worst, abs(float(traj.value_at(t)[0]) - ref) / ref)
    elapsed = time.perf_counter() - t0
    return [
        _below("acceptance", "1: flow vs closed form, rel err", worst, 1e-6,
               "feller b=c=1, f in {0.1,1,10}, t in [0.01,5]"),
        _below("acceptance", "1: runtime (s)", elapsed, 5.0),
    ]


def acceptance_2() -> list[CheckResult]:
    """Limit transform equals f/(1+f) within 1e-4, runtime < 30 s."""
    t0 = time.perf_counter()
    m = feller_model()
    tr = principal_triple(m)
    yt = YaglomTransform(m, tr)
    worst = max(
        abs(yt.evaluate([f]) - f / (1.0 + f)) for f in (0.25, 0.5, 1.0, 2.0, 4.0)
    )
    elapsed = time.perf_counter() - t0
    return [
        _below("acceptance", "2: limit transform vs f/(1+f)", worst, 1e-4, "feller"),
        _below("acceptance", "2: runtime (s)", elapsed, 30.0),
    ]


def random_three_site(rng: np.random.Generator) -> SuperprocessModel:
    """Random irreducible 3-site model in the acceptance-3 family."""
    off = rng.uniform(0.1, 1.0, size=(3, 3))
    np.fill_diagonal(off, 0.0)
    kill = rng.uniform(0.0, 0.3, size=3)
    q = off.copy()
    np.fill_diagonal(q, -(off.sum(axis=1) + kill))
    beta = rng.uniform(-2.0, -0.5, size=3)
    sigma = rng.uniform(0.3, 1.0, size=3)
    pi = []
    for _ in range(3):
        atoms = tuple(
            JumpAtom(float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.05, 0.4)))
            for _ in range(int(rng.integers(0, 3)))
        )
        pi.append(atoms)
    return SuperprocessModel(
        StateSpace(("a", "b", "c")), RateMatrix(q),
        BranchingMechanism(beta, sigma, tuple(pi)),
    )


def acceptance_3() -> list[CheckResult]:
    """Flow covariance of the limit transform on 10 random models, < 1e-4."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    worst_at = ""
    for k in range(10):
        m = random_three_site(rng)
        tr = principal_triple(m)
        yt = YaglomTransform(m, tr)
        f = rng.uniform(0.1, 2.0, size=3)
        for s in (0.3, 0.7):
            res = functional_equation_residual(m, tr, yt, f, s)
            if res > worst:
                worst, worst_at = res, f"model {k}, s={s}"
    elapsed = time.perf_counter() - t0
    return [
        _below("acceptance", "3: |Y(V_s f) - e^{s lam} Y(f)| over 10 random models",
               worst, 1e-4, "seed 2024", f"worst at {worst_at}"),
        _below("acceptance", "3: runtime (s)", elapsed, 300.0),
    ]


def acceptance_4() -> list[CheckResult]:
    """Rate family: fixed point + mass decay at r in {lam, lam/2, lam/4}."""
    out = []
    m = feller_model()
    tr = principal_triple(m)
    yt = YaglomTransform(m, tr)
    for frac in (1.0, 0.5, 0.25):
        spec = QsdSpec(frac * tr.lam, tr.lam)
        worst_fp = max(
            fixed_point_residual(m, tr, yt, spec, [1.0], t) for t in (0.5, 1.0, 2.0)
        )
        out.append(_below("acceptance", f"4: fixed point residual (r={frac}*lam)",
                          worst_fp, 1e-3, "feller, t in {0.5,1,2}"))
        worst_md = 0.0
        for t in (0.5, 1.0, 2.0):
            meas, expd = mass_decay_check(m, tr, yt, spec, t)
            worst_md = max(worst_md, abs(meas / expd - 1.0))
        out.append(_below("acceptance", f"4: mass decay |measured/expected - 1| (r={frac}*lam)",
                          worst_md, 1e-3, "feller, t in {0.5,1,2}"))
    try:
        QsdSpec(1.5 * tr.lam, tr.lam)
        rejected = False
    except QsdSpecError:
        rejected = True
    out.append(_flag("acceptance", "4: r = 1.5 lam rejected", rejected))
    return out


def acceptance_5() -> list[CheckResult]:
    """Monte Carlo consistency at N = 1e5, dt = 1e-3, t = 1."""
    t0 = time.perf_counter()
    p = FellerParams()
    m = feller_model()
    target_lap = math.exp(-feller_cumulant(p, 1.0, 1.0))
    target_surv = -math.expm1(-feller_extinction(p, 1.0))

    cfg = PathConfig(dt=1e-3, t_end=1.0, n_paths=100_000, seed=11)
    ens = simulate_ensemble(m, [1.0], cfg)
    lap = empirical_laplace(ens, [1.0])
    surv = float(ens.survived.mean())
    se_surv = math.sqrt(target_surv * (1 - target_surv) / cfg.n_paths)

    cfg_half = PathConfig(dt=5e-4, t_end=1.0, n_paths=100_000, seed=12)
    ens_half = simulate_ensemble(m, [1.0], cfg_half)
    lap_half = empirical_laplace(ens_half, [1.0])
    surv_half = float(ens_half.survived.mean())

    se_diff_lap = math.sqrt(lap.se**2 + lap_half.se**2)
    se_diff_surv = math.sqrt(2.0) * se_surv
    elapsed = time.perf_counter() - t0
    return [
        _near("acceptance", "5: unconditioned Laplace within 3 SE",
              lap.value, target_lap, 3 * lap.se, "N=1e5 dt=1e-3 seed=11",
              f"dev/SE={(lap.value - target_lap) / lap.se:+.2f}"),
        _near("acceptance", "5: survival fraction within 3 SE",
              surv, target_surv, 3 * se_surv, "N=1e5 dt=1e-3 seed=11",
              f"dev/SE={(surv - target_surv) / se_surv:+.2f}"),
        _near("acceptance", "5: Laplace moved < 1 SE when dt halves",
              lap_half.value, lap.value, se_diff_lap, "seeds 11/12",
              f"|diff|/SE={(abs(lap_half.value - lap.value)) / se_diff_lap:.2f}"),
        _near("acceptance", "5: survival moved < 1 SE when dt halves",
              surv_half, surv, se_diff_surv, "seeds 11/12",
              f"|diff|/SE={(abs(surv_half - surv)) / se_diff_surv:.2f}"),
        _below("acceptance", "5: runtime (s)", elapsed, 180.0),
    ]


def acceptance_6() -> list[CheckResult]:
    """Heavy-tail compounding: generating function and the rate-lam/2 law."""
    out = []
    rng = np.random.default_rng(2718)
    sib = SibuyaParams(0.5)
    zs = np.array([sibuya_sample(sib, rng) for _ in range(100_000)])
    for s in (0.25, 0.5, 0.75):
        vals = s ** zs.astype(float)
        tgt = 1.0 - math.sqrt(1.0 - s)
        se = float(vals.std(ddof=1) / math.sqrt(zs.size))
        out.append(_near("acceptance", f"6: compounding pgf at s={s}",
                         float(vals.mean()), tgt, 3 * se, "gamma=0.5 N=1e5",
                         f"dev/SE={(float(vals.mean()) - tgt) / se:+.2f}"))

    m = feller_model()
    tr = principal_triple(m)
    yt = YaglomTransform(m, tr, plateau_tol=1e-3)
    y1, meta = yt.evaluate_with_meta([1.0])
    t_star = meta["t_plateau_start"]
    cfg = PathConfig(dt=2e-3, t_end=t_star, n_paths=200_000, seed=3)
    source, _frac = conditioned_ensemble(m, [1.0], cfg)
    spec = QsdSpec(tr.lam / 2.0, tr.lam)
    samples = sample_qsd(m, source, spec, 20_000, rng)
    vals = np.exp(-samples @ np.array([1.0]))
    target = 1.0 - math.sqrt(0.5)
    se_count = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    src_lap = empirical_laplace(source, [1.0])
    # source noise propagates through T(mhat) = 1 - (1 - mhat)^gamma
    d_src = spec.gamma * (1.0 - src_lap.value) ** (spec.gamma - 1.0)
    se_total = math.sqrt(se_count**2 + (d_src * src_lap.se) ** 2)
    out.append(_near("acceptance", "6: rate-lam/2 law empirical Laplace at f=1",
                     float(vals.mean()), target, 3 * se_total,
                     f"source horizon t*={t_star:.3f}, N_src=2e5, count=2e4",
                     f"dev/SE={(float(vals.mean()) - target) / se_total:+.2f}"))
    return out


def acceptance_7() -> list[CheckResult]:
    """Zero failures across every module invariant suite."""
    failures = []
    total = 0
    for name in ("oracle", "model", "spectral", "cumulant", "qsd", "sampler"):
        results = SUITES[name]()
        total += len(results)
        failures += [r for r in results if not r.passed]
    detail = "; ".join(f"{r.suite}:{r.name}" for r in failures) or f"{total} checks"
    return [
        CheckResult("7: invariant suites all green", "acceptance",
                    f"{len(failures)} failures", "0 failures", None,
                    not failures, "reference config set", detail)
    ]


def suite_acceptance() -> list[CheckResult]:
    out = []
    for fn in (acceptance_1, acceptance_2, acceptance_3, acceptance_4,
               acceptance_5, acceptance_6, acceptance_7):
        out.extend(fn())
    return out


SUITES = {
    "oracle": suite_oracle,
    "model": suite_model,
    "spectral": suite_spectral,
    "cumulant": suite_cumulant,
    "qsd": suite_qsd,
    "sampler": suite_sampler,
    "acceptance": suite_acceptance,
}


def run_suite(name: str) -> list[CheckResult]:
    """Run one suite, or every suite (oracle tier first) for name == 'all'."""
    if name == "all":
        out = []
        for key in ("oracle", "model", "spectral", "cumulant", "qsd", "sampler",
                    "acceptance"):
            out.extend(SUITES[key]())
        return out
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
