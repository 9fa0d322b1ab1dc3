"""Command line front end: ``glevy <subcommand> --config run.json``.

Reports are JSON (stdout or ``--out``); grids and paths go to CSV files.
Exit codes: 0 all checks passed, 1 a check failed, 2 configuration or usage
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import acceptance
from .compensator import StepRandomField, verify_ab_identity, verify_martingale_mc
from .config import RunConfig, digest
from .control_sim import McParams, Mesh, duality_gap, mc_expect, sample_paths
from .cylinder import CylinderFunctional, Lattice, martingale_lattice, scheme_tol as cyl_scheme_tol
from .decomposition import apriori_check, decompose, embedding_check, norm_estimates, stability_check
from .errors import ConfigError, GLevyError, ModelError, NumericError
from .model import nondegeneracy_report
from .payoff import TerminalFunction, parse
from .pide import derivatives, prepare_terminal, solve_backward
from .policy import constant_policies

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def check(name, value, tolerance, passed, margin=None) -> dict:
    return {"name": name, "value": value, "tolerance": tolerance,
            "margin": margin, "passed": bool(passed)}


def le_check(name, value, tolerance) -> dict:
    return check(name, float(value), float(tolerance), value <= tolerance, float(tolerance - value))


def _mc(cfg: RunConfig, args) -> McParams:
    sec = dict(cfg.raw.get("mc", {}))
    sec.pop("seed", None)
    return McParams(seed=cfg.seed(args.seed), threads=args.threads, **sec)


def _csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _sidecar(args, suffix: str) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    return out.with_name(out.stem + suffix)


def cmd_validate(cfg: RunConfig, args) -> tuple[dict, list]:
    U = cfg.model()
    rep = nondegeneracy_report(U, seed=cfg.raw.get("seed", 0) or 0)
    checks = []
    if rep.density_ratio_ok is not None:
        checks.append(check("density_ratio", U.c_lower, 0.0, rep.density_ratio_ok, U.c_lower))
    if rep.ellipticity_ok is not None:
        checks.append(check("ellipticity", rep.worst_margin, 0.0, rep.ellipticity_ok, rep.worst_margin))
    if rep.lk_bound is not None:
        checks.append(check("lk_bound_finite", rep.lk_bound, None, np.isfinite(rep.lk_bound)))
    res = {"c_lower": U.c_lower, "c_upper": U.c_upper, "lambda_max": U.lambda_max,
           "n_measures": len(U.measures), "n_vols": len(U.vols), "report": rep.to_dict(),
           "notes": list(U.warnings)}
    return res, checks


def cmd_solve(cfg: RunConfig, args) -> tuple[dict, list]:
    U, g, phi = cfg.model(), cfg.grid(), cfg.terminal()
    sol = solve_backward(U, prepare_terminal(phi, g), g, estimate_tol=True)
    M = max(phi.bound, float(np.max(np.abs(sol.u[-1]))))
    path = _sidecar(args, ".csv")
    if path is not None:
        du, d2u = derivatives(sol)
        stride = max(1, args.every)
        ks = range(0, sol.t.size, stride)
        rows = (np.column_stack([np.full(sol.x.size, sol.t[k]), sol.x, sol.u[k], du[k], d2u[k]])
                for k in ks)
        _csv(path, ["t", "x", "u", "Du", "D2u"], (r for block in rows for r in block))
    res = {"u00": sol.u00, "scheme_tol": sol.scheme_tol, "cfl": sol.cfl,
           "nt": int(sol.t.size - 1), "dx": g.dx, "csv": str(path) if path else None}
    return res, [le_check("bound_propagation", float(np.max(np.abs(sol.u))) - M, 1e-12)]


def _cylinder(cfg: RunConfig):
    sec = cfg.section("cylinder")
    xi = CylinderFunctional(tuple(sec["times"]), parse(sec["payoff"]))
    lat = Lattice(**sec["lattice"]) if "lattice" in sec else None
    return xi, lat


def cmd_expect(cfg: RunConfig, args) -> tuple[dict, list]:
    U, g = cfg.model(), cfg.grid()
    xi, lat = _cylinder(cfg)
    ml = martingale_lattice(U, xi, g, lat)
    tol = cyl_scheme_tol(U, xi, g, lat, value=ml.value)
    bound = ml.layer_bound()
    res = {"value": ml.value, "scheme_tol": tol, "interpolation_tol": ml.interpolation_tol,
           "n": xi.n, "lattice": {"radius": ml.lattice.radius, "nx": ml.lattice.nx}}
    return res, [le_check("layer_bound_excess", bound - max(xi.bound, abs(ml.value)), 1e-12)]


def cmd_simulate(cfg: RunConfig, args) -> tuple[dict, list]:
    U, phi = cfg.model(), cfg.terminal()
    mc = _mc(cfg, args)
    T = cfg.grid().T if "grid" in cfg.raw else float(cfg.section("mc").get("T", 1.0))
    mesh = Mesh.from_dt(T, mc.mesh_dt)
    out = []
    for pol in constant_policies(U):
        out.append({"policy": pol.name, **mc_expect(U, pol, phi, mc.n_paths, mesh, mc.seed,
                                                    threads=mc.threads).to_dict()})
    path = _sidecar(args, "_paths.csv")
    if path is not None and args.dump_paths:
        batch = sample_paths(U, constant_policies(U)[0], args.dump_paths, mesh, mc.seed)
        rows = ([i, t, x] for i in range(len(batch)) for t, x in zip(mesh.times, batch.X[i]))
        _csv(path, ["path", "t", "X"], rows)
    return {"T": T, "mesh_dt": mesh.dt, "estimates": out}, [
        check("finite_estimates", None, None, all(np.isfinite(e["mean"]) for e in out))]


def cmd_duality(cfg: RunConfig, args) -> tuple[dict, list]:
    U, g, phi = cfg.model(), cfg.grid(), cfg.terminal()
    rep = duality_gap(U, phi, g, mc=_mc(cfg, args))
    checks = [le_check(f"{r.name}:violation", r.violation, 0.0) for r in rep.results]
    checks.append(le_check("greedy_relative_gap", rep.greedy_gap, 0.05))
    return rep.to_dict(), checks


def cmd_decompose(cfg: RunConfig, args) -> tuple[dict, list]:
    U, g, phi = cfg.model(), cfg.grid(), cfg.terminal()
    triple = decompose(U, phi, g)
    mc = _mc(cfg, args)
    ne, resid = norm_estimates(U, triple, mc.n_paths, mc.seed, mc.threads)
    tol = float(cfg.raw.get("checks", {}).get("residual_rms", 2e-2))
    checks = [le_check(f"{r.policy}:residual_rms", r.rms, tol) for r in resid]
    checks += [le_check(f"{r.policy}:negative_Kc_increment", -r.kc_min_increment, 1e-10) for r in resid]
    p1, p2 = _sidecar(args, "_fields.csv"), _sidecar(args, "_jumps.csv")
    if p1 is not None:
        _csv(p1, ["t", "x", "H", "Kc_rate"], triple.csv_rows())
        _csv(p2, ["t", "x", "z", "Kd"], triple.csv_jump_rows())
    res = {"value": triple.value, "scheme_tol": triple.solution.scheme_tol,
           "residuals": [r.to_dict() for r in resid], "norms": ne.to_dict(),
           "csv": [str(p1), str(p2)] if p1 else None}
    return res, checks


def cmd_verify(cfg: RunConfig | None, args) -> tuple[dict, list]:
    what = args.what
    if what == "all":
        seed = args.seed if args.seed is not None else (cfg.seed() if cfg else acceptance.Settings.seed)
        s = acceptance.Settings(seed=seed, timing=not args.no_timing)
        crits = acceptance.run_all(s, progress=lambda line: print(line, file=sys.stderr))
        checks = [dict(c.to_dict(), name=f"criterion {k.number}: {c.name}") for k in crits for c in k.checks]
        return {"criteria": [k.to_dict() for k in crits]}, checks
    U = cfg.model()
    mc = _mc(cfg, args)
    extra = cfg.raw.get("checks", {})
    if what == "compensator":
        K = StepRandomField.from_config(cfg.section("field"))
        rep = verify_martingale_mc(U, K, mc.n_paths, mc.seed, threads=mc.threads)
        ab = verify_ab_identity(U, K, [[float(extra.get("H", 1.0))]])
        checks = [le_check("supermartingale_excess", -rep.margins["supermartingale"], 0.0),
                  le_check("sup_mean_excess", -rep.margins["sup_attained"], 0.0),
                  le_check("ab_gap", ab.gap, 1e-12)]
        return {"martingale": rep.to_dict(), "ab": ab.to_dict()}, checks
    g, phi = cfg.grid(), cfg.terminal()
    if what == "apriori":
        rep = apriori_check(U, decompose(U, phi, g), mc)
    elif what == "stability":
        pert = extra.get("perturbation", {"gauss": {"var": 0}, "width": 1.0})
        scale = float(extra.get("perturbation_scale", 0.1))
        phi2 = TerminalFunction.from_payoff(parse({"lin": [[1.0, cfg.raw["payoff"]], [scale, pert]]}))
        rep = stability_check(U, phi, phi2, g, mc)
    elif what == "embedding":
        rep = embedding_check(U, phi, float(extra.get("p", 4.0)), g, mc)
    else:  # pragma: no cover - argparse restricts the choices
        raise ConfigError(f"unknown verify target {what}")
    return rep.to_dict(), [check(rep.name, rep.lhs, rep.rhs + rep.slack, rep.passed, rep.margin)]


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "expect": cmd_expect,
            "simulate": cmd_simulate, "duality": cmd_duality, "decompose": cmd_decompose,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glevy", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration, or builtin:<name>")
    common.add_argument("--out", help="write the JSON report here (CSV files go beside it)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo blocks")
    common.add_argument("--no-timing", action="store_true", help="omit wall-clock fields from the report")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "expect", "duality", "decompose"):
        sub.add_parser(name, parents=[common])
    sp = sub.add_parser("solve", parents=[common])
    sp.add_argument("--every", type=int, default=1, help="write every N-th time layer to the CSV")
    sp = sub.add_parser("simulate", parents=[common])
    sp.add_argument("--dump-paths", type=int, default=0, help="write this many sample paths to CSV")
    sp = sub.add_parser("verify", parents=[common])
    sp.add_argument("what", choices=["compensator", "apriori", "stability", "embedding", "all"])
    return p


def run(argv=None) -> tuple[int, dict | None]:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = None
        if args.config:
            cfg = RunConfig.load(args.config)
        elif not (args.command == "verify" and args.what == "all"):
            raise ConfigError("--config is required")
        results, checks = COMMANDS[args.command](cfg, args)
    except (ConfigError, ModelError) as exc:
        print(f"glevy: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    except NumericError as exc:
        print(f"glevy: numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC, None
    except GLevyError as exc:
        print(f"glevy: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    report = {"command": args.command if args.command != "verify" else f"verify {args.what}",
              "inputs_digest": cfg.digest if cfg else digest({"builtin": "acceptance"}),
              "seed": args.seed if args.seed is not None else (cfg.raw.get("seed") if cfg else None),
              "results": results, "checks": checks,
              "passed": all(c["passed"] for c in checks)}
    if not args.no_timing:
        report["wall_clock_s"] = time.perf_counter() - t0
    text = json.dumps(report, indent=2, default=_json_default) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return (EXIT_OK if report["passed"] else EXIT_CHECK), report


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
