"""Command-line front end.

Subcommands wrap the library modules and emit machine-readable output:
JSON reports on stdout (or --export), CSV for trajectories and ensembles.
Every command is deterministic given (config bytes, flags, seed); reports
embed a manifest with the config digest so runs can be replayed.

Exit codes: 0 success, 2 validation error, 3 numerical failure
(divergence / non-convergence), 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .checks import SUITES, run_suite
from .cumulant import (
    ExtinctionDivergesError,
    SolverBlowupError,
    SolverOptions,
    export_trajectory_csv,
    extinction_function,
    solve_cumulant,
)
from .model import ConfigError, ModelError, load_model, validate_model
from .qsd import (
    ConvergenceError,
    QsdSpec,
    QsdSpecError,
    YaglomTransform,
    mass_decay_check,
    qsd_transform,
)
from .sampler import (
    ConditioningError,
    PathConfig,
    empirical_laplace,
    ensemble_summary,
    export_ensemble_csv,
    simulate_ensemble,
)
from .spectral import (
    NotSubcriticalError,
    SpectralError,
    principal_triple,
    require_subcritical,
    spectral_report,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


@dataclass
class RunManifest:
    command: str
    config: str
    options: dict
    seed: int | None
    version: str
    input_digest: str


def _manifest(command: str, config_path: str, config_bytes: bytes,
              options: dict, seed: int | None = None) -> dict:
    return asdict(RunManifest(
        command=command,
        config=str(config_path),
        options={k: v for k, v in sorted(options.items())},
        seed=seed,
        version=__version__,
        input_digest="sha256:" + hashlib.sha256(config_bytes).hexdigest(),
    ))


def _emit(report: dict, export: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if export:
        with open(export, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _read_config(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    model = load_model(path)
    report = validate_model(model)
    if not report.ok:
        raise ModelError("; ".join(report.violations))
    return model, raw


def _parse_f(spec: str, n: int) -> np.ndarray:
    """--f grammar: scalar, comma-separated per-site vector, or 'inf'."""
    spec = spec.strip().lower()
    if spec in ("inf", "+inf", "infinity"):
        return np.full(n, math.inf)
    parts = [p for p in spec.split(",") if p]
    vals = [float(p) for p in parts]
    if len(vals) == 1:
        return np.full(n, vals[0])
    if len(vals) != n:
        raise ModelError(f"--f needs 1 or {n} entries (got {len(vals)})")
    return np.asarray(vals)


def cmd_spectral(args) -> int:
    model, raw = _read_config(args.config)
    report = spectral_report(model)
    if args.require_subcritical:
        require_subcritical(principal_triple(model))
    report["manifest"] = _manifest("spectral", args.config, raw,
                                   {"require_subcritical": args.require_subcritical})
    _emit(report, args.export)
    return EXIT_OK


def cmd_cumulant(args) -> int:
    model, raw = _read_config(args.config)
    triple = principal_triple(model)
    f = _parse_f(args.f, model.n)
    opts = SolverOptions()
    if np.isinf(f).all():
        traj = extinction_function(model, triple, T=args.t, opts=opts)
    else:
        if np.isinf(f).any():
            from .cumulant import solve_extended

            traj = solve_extended(model, triple, f, T=args.t, opts=opts)
        else:
            traj = solve_cumulant(model, triple, f, T=args.t, opts=opts)
    if args.export:
        export_trajectory_csv(traj, args.export, model.labels)
    summary = {
        "manifest": _manifest("cumulant", args.config, raw,
                              {"f": args.f, "t": args.t, "export": args.export}),
        "final_time": float(traj.times[-1]),
        "final_values": [float(x) for x in traj.final],
        "truncation_level": traj.truncation_level,
        "solver_stats": {k: v for k, v in traj.solver_stats.items() if k != "cap_deltas"},
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_yaglom(args) -> int:
    model, raw = _read_config(args.config)
    triple = principal_triple(model)
    require_subcritical(triple)
    yt = YaglomTransform(model, triple)
    rows = []
    for fs in args.f_list.split(","):
        f = float(fs)
        value, meta = yt.evaluate_with_meta(np.full(model.n, f))
        rows.append({"f": f, "Y": value,
                     "plateau": meta["plateau"], "t_stop": meta["t_stop"],
                     "empirical_rate": meta["empirical_rate"]})
    report = {
        "manifest": _manifest("yaglom", args.config, raw, {"f_list": args.f_list}),
        "lambda": triple.lam,
        "values": rows,
    }
    _emit(report, args.export)
    return EXIT_OK


def cmd_qsd(args) -> int:
    model, raw = _read_config(args.config)
    triple = principal_triple(model)
    require_subcritical(triple)
    spec = QsdSpec(r=args.r, lam=triple.lam)
    yt = YaglomTransform(model, triple)
    rows = []
    for fs in args.f_list.split(","):
        f = float(fs)
        rows.append({"f": f, "Y_r": qsd_transform(yt, spec, np.full(model.n, f))})
    decay = []
    for t in (0.5, 1.0, 2.0):
        meas, expd = mass_decay_check(model, triple, yt, spec, t)
        decay.append({"t": t, "measured": meas, "expected": expd})
    report = {
        "manifest": _manifest("qsd", args.config, raw,
                              {"r": args.r, "f_list": args.f_list}),
        "lambda": triple.lam,
        "r": spec.r,
        "gamma": spec.gamma,
        "values": rows,
        "mass_decay": decay,
    }
    _emit(report, args.export)
    return EXIT_OK


def cmd_verify(args) -> int:
    model_digest = ""
    if args.config:
        with open(args.config, "rb") as fh:
            model_digest = "sha256:" + hashlib.sha256(fh.read()).hexdigest()
    results = run_suite(args.suite)
    n_failed = sum(1 for r in results if not r.passed)
    report = {
        "manifest": {
            "command": "verify",
            "suite": args.suite,
            "config": args.config or "<built-in reference set>",
            "input_digest": model_digest,
            "version": __version__,
        },
        "checks": [r.to_json() for r in results],
        "n_checks": len(results),
        "n_failed": n_failed,
    }
    _emit(report, args.export)
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"[{mark}] {r.suite}: {r.name}", file=sys.stderr)
    return EXIT_OK if n_failed == 0 else EXIT_NUMERICAL


def cmd_simulate(args) -> int:
    model, raw = _read_config(args.config)
    cfg = PathConfig(dt=args.dt, t_end=args.t, n_paths=args.n, seed=args.seed)
    mu0 = np.full(model.n, 1.0) if args.mu is None else _parse_f(args.mu, model.n)
    if np.isinf(mu0).any():
        raise ModelError("starting measure must be finite")
    ens = simulate_ensemble(model, mu0, cfg)
    if args.export:
        export_ensemble_csv(ens, args.export, model.labels)
    summary = ensemble_summary(ens)
    summary["empirical_laplace_at_1"] = asdict(empirical_laplace(ens, np.ones(model.n)))
    summary["manifest"] = _manifest(
        "simulate", args.config, raw,
        {"n": args.n, "t": args.t, "dt": args.dt, "export": args.export,
         "mu": args.mu}, seed=args.seed,
    )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="superproc",
        description="Branching mass processes on finite site spaces: spectra, "
                    "nonlinear mass flow, survival-conditioned limits, sampling.",
    )
    ap.add_argument("--version", action="version", version=f"superproc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectral", help="eigen-analysis report for a model config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--export", default=None)
    sp.add_argument("--require-subcritical", action="store_true")
    sp.set_defaults(func=cmd_spectral)

    cu = sub.add_parser("cumulant", help="solve the mass flow; CSV trajectory export")
    cu.add_argument("--config", required=True)
    cu.add_argument("--f", required=True, help="scalar, per-site vector, or 'inf'")
    cu.add_argument("--t", type=float, required=True)
    cu.add_argument("--export", default=None)
    cu.set_defaults(func=cmd_cumulant)

    ya = sub.add_parser("yaglom", help="evaluate the survival-conditioned limit transform")
    ya.add_argument("--config", required=True)
    ya.add_argument("--f-list", default="0.25,0.5,1,2,4")
    ya.add_argument("--export", default=None)
    ya.set_defaults(func=cmd_yaglom)

    qs = sub.add_parser("qsd", help="rate-r member of the quasi-stationary family")
    qs.add_argument("--config", required=True)
    qs.add_argument("--r", type=float, required=True)
    qs.add_argument("--f-list", default="0.25,0.5,1,2,4")
    qs.add_argument("--export", default=None)
    qs.set_defaults(func=cmd_qsd)

    ve = sub.add_parser("verify", help="run invariant/acceptance check suites")
    ve.add_argument("--suite", default="all",
                    choices=sorted(SUITES) + ["all"])
    ve.add_argument("--config", default=None,
                    help="optional config to digest into the manifest")
    ve.add_argument("--export", default=None)
    ve.set_defaults(func=cmd_verify)

    si = sub.add_parser("simulate", help="Monte Carlo ensemble; CSV export")
    si.add_argument("--config", required=True)
    si.add_argument("--n", type=int, required=True)
    si.add_argument("--t", type=float, required=True)
    si.add_argument("--dt", type=float, default=1e-3)
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--mu", default=None, help="starting measure (scalar or per-site)")
    si.add_argument("--export", default=None)
    si.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError, QsdSpecError, NotSubcriticalError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SpectralError as e:
        # reducible generator and friends are config problems
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ExtinctionDivergesError, SolverBlowupError, ConvergenceError,
            ConditioningError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
