"""Command-line driver: ``seed``, ``continue``, ``separatrix`` and ``validate``.

Exit codes: 0 success, 2 configuration or input-file error, 3 non-convergence,
4 numerical failure (including a failed ``validate``).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io, orbits, seqsolve, spo, systems
from .integrate import IntegrationError, IntegratorConfig, StroboscopicMap
from .separatrix import SeparatrixError, fundamental_domain, parameterize, sample_curves

log = logging.getLogger("subharmonic")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_NUMERIC = 0, 2, 3, 4

_NONCONV = (spo.NewtonNonConvergenceError, spo.ContinuationStalledError,
            orbits.OrbitNotFoundError, seqsolve.SequenceSolveError)
_NUMERIC = (spo.SPOError, SeparatrixError, IntegrationError, np.linalg.LinAlgError,
            FloatingPointError)


class ValidationFailed(RuntimeError):
    pass


# ------------------------------------------------------------- building

def build_system(cfg):
    name = cfg["system"]["name"]
    params = cfg["system"]["params"]
    ctor = {"forced_pendulum": systems.forced_pendulum_test,
            "jupiter_europa_ganymede": systems.jupiter_europa_ganymede,
            "ccr4bp": systems.ccr4bp}[name]
    try:
        return ctor(**params)
    except (TypeError, ValueError) as exc:
        raise io.ConfigError("system.params", str(exc)) from exc


def build_map(cfg, theta0, eps=0.0):
    integ = cfg["integrator"]
    icfg = IntegratorConfig(abs_tol=float(integ["abs_tol"]), rel_tol=float(integ["rel_tol"]),
                            max_steps=int(integ["max_steps"]))
    return StroboscopicMap(build_system(cfg), float(eps), float(theta0), icfg)


def seed_point(cfg, system):
    """``(x0, theta0)`` for the configured seed method."""
    seed = cfg["seed"]
    label = systems.ResonanceLabel.parse(cfg["resonance"])
    if seed["method"] == "point":
        return np.array(seed["point"], dtype=float), float(seed["theta0"])
    if seed["method"] == "pendulum":
        x0, _ = orbits.pendulum_resonant_seed(system, label, sign=float(seed["sign"]))
        return x0, float(seed["theta0"])
    mu = system.params.get("mu")
    if mu is None:
        raise io.ConfigError("system.name", "symmetric seeds need a mass ratio")
    orb = orbits.resonant_symmetric_orbit(
        systems.pcr3bp(mu), label, tuple(seed["x_bracket"]), float(seed["py_guess"]),
        float(seed["half_period_guess"]), forcing_period=system.period)
    pt, th = orbits.symmetric_phase_candidates(orb)[int(seed["candidate"])]
    return np.asarray(pt, dtype=float), float(th)


def _out_dir(cfg):
    return Path(cfg["output"]["dir"])


def _config_for(args, meta=None):
    """Config from ``--config`` if given, else the one embedded in the input file."""
    if args.config is not None or meta is None:
        return io.load_config(args.config, args.set)
    cfg = io.apply_overrides(meta["config"], args.set)
    return io.validate_config(cfg)


def _read_solution(path):
    try:
        return io.read_solution(path)
    except io.FileFormatError as exc:
        raise io.ConfigError(str(path), str(exc)) from exc


# ------------------------------------------------------------- commands

def cmd_seed(args):
    cfg = _config_for(args)
    system = build_system(cfg)
    x0, theta0 = seed_point(cfg, system)
    smap0 = build_map(cfg, theta0)
    label = systems.ResonanceLabel.parse(cfg["resonance"])
    X0, DK = spo.seed_unperturbed(smap0, x0, label, tol=float(cfg["seed"]["tol"]))
    sol, _ = spo.initialize_solution(smap0, X0, DK, label, tol=float(cfg["continuation"]["tol"]))
    path = Path(args.out) if args.out else _out_dir(cfg) / "seed.json"
    io.write_solution(path, sol, cfg, theta0=theta0)
    print(f"seed {label} n={sol.n} theta0={theta0:.17g} |E|={sol.norm_E:.3e} "
          f"|E_red|={sol.norm_E_red:.3e} -> {path}")
    return EXIT_OK


def nominal_step(cfg):
    cont = cfg["continuation"]
    if cont["n_steps"] is not None:
        return float(cont["eps_final"]) / int(cont["n_steps"])
    return float(cont["step"])


def remaining_steps(eps, eps_final, h_nom):
    """Steps left on the nominal grid; resuming mid-run lands on the same grid."""
    return max(1, math.ceil((eps_final - eps) / h_nom - 1e-6))


def cmd_continue(args):
    sol, meta = _read_solution(args.solution)
    cfg = _config_for(args, meta)
    theta0 = meta.get("theta0", 0.0)
    cont = cfg["continuation"]
    eps_final = float(cont["eps_final"])
    h_nom = nominal_step(cfg)
    out = Path(args.out_dir) if args.out_dir else _out_dir(cfg) / "continue"
    if sol.eps >= eps_final:
        print(f"already at eps={sol.eps:.17g} >= eps_final")
        io.write_solution(out / "final.json", sol, cfg, theta0=theta0)
        return EXIT_OK
    n = remaining_steps(sol.eps, eps_final, h_nom)
    smap = build_map(cfg, theta0, sol.eps)

    def save(s):
        idx = int(round(s.eps / h_nom))
        tag = f"{idx:05d}" if math.isclose(idx * h_nom, s.eps, rel_tol=1e-9) else f"{s.eps:.6e}"
        io.write_solution(out / f"step_{tag}.json", s, cfg, theta0=theta0)
        print(f"eps={s.eps:.6e} {s.classification} |E|={s.norm_E:.2e} "
              f"|E_red|={s.norm_E_red:.2e} iters={len(s.history) - 1}")

    sols = spo.continue_family(smap, sol, eps_final, n, tol=float(cont["tol"]),
                               max_iter=int(cont["max_iter"]),
                               max_halvings=int(cont["max_halvings"]), callback=save)
    path = io.write_solution(out / "final.json", sols[-1], cfg, theta0=theta0)
    print(f"final eps={sols[-1].eps:.17g} -> {path}")
    return EXIT_OK


def cmd_separatrix(args):
    sol, meta = _read_solution(args.solution)
    cfg = _config_for(args, meta)
    theta0 = meta.get("theta0", 0.0)
    sep = cfg["separatrix"]
    smap = build_map(cfg, theta0, sol.eps)
    out = Path(args.out_dir) if args.out_dir else _out_dir(cfg) / "separatrix"
    branches = ("weak_stable", "weak_unstable") if sep["branch"] == "both" else (sep["branch"],)
    alpha = sep["alpha"] if sep["alpha"] == "auto" else float(sep["alpha"])
    for br in branches:
        param = parameterize(smap, sol, br, d_max=int(sep["d_max"]), alpha=alpha)
        param = fundamental_domain(smap, param, float(sep["E_tol"]), n_grid=int(sep["n_grid"]))
        rows = sample_curves(param, int(sep["n_per_k"]))
        io.write_parameterization(out / f"{br}.json", param, cfg, theta0=theta0)
        csv_path = io.write_curves_csv(out / f"{br}.csv", rows)
        print(f"{br}: lam={param.lam:.12g} alpha={param.alpha:.4g} "
              f"D in [{param.D.min():.4g}, {param.D.max():.4g}] rows={len(rows)} -> {csv_path}")
    return EXIT_OK


def validation_report(smap, sol, *, tol=None):
    """Recomputed checks as ``{name: (value, threshold)}``; each passes when value < threshold."""
    tol = sol.tol if tol is None else tol
    FX, DF = smap.evaluate_with_jacobian(sol.X)
    res = spo.compute_residual(smap, sol, FX=FX, DF=DF)
    J = systems.J4
    sympl = float(np.max(np.abs(np.swapaxes(DF, -1, -2) @ J @ DF - J)))
    ps, pu = sol.lam.products()
    q = sol.n
    det = abs(sol.lam.lam1 ** q * sol.lam.lam2 ** q * ps * pu - 1.0)
    return {
        "norm_E": (res.norm_E, tol),
        "norm_E_red": (res.norm_E_red, tol),
        "symplecticity": (sympl, 1e-8),
        "prod_lam_s_lam_u": (abs(ps * pu - 1.0), 1e-6),
        "det_identity": (float(det), 1e-5),
    }


def cmd_validate(args):
    sol, meta = _read_solution(args.solution)
    cfg = _config_for(args, meta)
    smap = build_map(cfg, meta.get("theta0", 0.0), sol.eps)
    report = validation_report(smap, sol, tol=args.tol)
    ok = True
    print(f"solution {sol.label} eps={sol.eps:.17g} n={sol.n} version={meta.get('version')}")
    for name, (val, thr) in report.items():
        good = bool(val < thr)
        ok &= good
        print(f"  {'ok  ' if good else 'FAIL'} {name:18s} {val:.3e} (< {thr:.0e})")
    print(f"  lam1={sol.lam.lam1:.15g} lam2={sol.lam.lam2:.15g} -> {sol.classification}")
    if not ok:
        raise ValidationFailed("validation failed")
    return EXIT_OK


# ------------------------------------------------------------------ main

def make_parser():
    ap = argparse.ArgumentParser(prog="subharmonic", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_file):
        if with_file:
            p.add_argument("solution", help="solution JSON file")
        p.add_argument("-c", "--config", help="YAML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration field, e.g. continuation.tol=1e-8")

    p = sub.add_parser("seed", help="eps = 0 orbit with frames and multipliers")
    common(p, False)
    p.add_argument("-o", "--out", help="output file (default <output.dir>/seed.json)")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("continue", help="continue a solution file to continuation.eps_final")
    common(p, True)
    p.add_argument("-o", "--out-dir", help="directory for per-step files")
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("separatrix", help="separatrix parameterizations and CSV curves")
    common(p, True)
    p.add_argument("-o", "--out-dir", help="output directory")
    p.set_defaults(func=cmd_separatrix)

    p = sub.add_parser("validate", help="recompute residuals and multiplier identities")
    common(p, True)
    p.add_argument("--tol", type=float, default=None, help="residual threshold (default: file tol)")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NONCONV as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except ValidationFailed as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERIC
    except _NUMERIC as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
