"""Command-line orchestration of all experiments.

    varspde <kind> --config run.toml [--seed-override N] [--workers W] [--out DIR]
    varspde validate --config run.toml
    varspde psi-test --q 3 --m-list 1,2,5

Exit codes: 0 success, 2 config/validation error, 3 numeric failure
(blow-up or divergence), each with a machine-readable error JSON in the
output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import dissipation as dp
from . import quasilinear as ql
from . import stein
from ._parallel import worker_count
from .config import (
    ConfigError,
    build_coefficients,
    build_data,
    build_noise,
    build_pair,
    build_triple,
    load_config,
    validate_config,
)
from .linear import (
    DivergenceError,
    LinearProblem,
    NumericsError,
    estimate_Cp,
    estimate_solution_map_norm,
    solve_linear,
)
from .operators import CoercivityError, check_coercivity
from .quasilinear import WindowError
from .runio import write_csv, write_json, write_manifest, write_vspd
from .triple import H, V, lp_norm_kind, sup_norm_kind

_EXIT_VALIDATION = 2
_EXIT_NUMERIC = 3


def _norm_rows(ensemble):
    lp2 = ensemble.lp_time_norms(2, V)
    sup = ensemble.sup_time_norms(H)
    return [(i, lp2[i], sup[i]) for i in range(ensemble.n_paths)]


def _write_ensemble_outputs(out, ensemble, problem=None, dump=False):
    files = []
    files.append(
        write_csv(
            out / "per_path_norms.csv",
            ["path", "l2_V", "sup_H"],
            _norm_rows(ensemble),
        )
    )
    moments = dg.moment_estimates(
        ensemble, [(lp_norm_kind(2, V), 2), (sup_norm_kind(H), 2)]
    )
    summary = {
        "paths": ensemble.n_paths,
        "steps": len(ensemble.grid) - 1,
        "T": float(ensemble.grid[-1]),
        "l2_V_ensemble": ensemble.ensemble_lp_V(2),
        "sup_H_ensemble": ensemble.ensemble_sup_H(2),
        "moments": [
            {"norm": e.label, "p": e.p, "estimate": e.moment, "se": e.se}
            for e in moments.entries
        ],
    }
    if problem is not None:
        rep = dg.classical_estimate_report(ensemble, problem)
        summary["classical_ratio"] = rep.ratio
        summary["data_size"] = rep.data_size
    files.append(write_json(out / "summary.json", summary))
    if dump:
        files.append(write_vspd(out / "trajectories.vspd", ensemble.paths.real))
    return files


def _run_solve_linear(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    pair = build_pair(cfg, triple)
    f, g, u0 = build_data(cfg, triple, noise.modes)
    problem = LinearProblem(triple=triple, pair=pair, noise=noise, f=f, g=g, u0=u0)
    num = cfg.section("numerics")
    ens = solve_linear(
        problem,
        int(num.get("paths", 8)),
        M=float(num.get("M", 0.0)),
        workers=workers,
    )
    dump = bool(cfg.section("outputs").get("dump_trajectories", False))
    return _write_ensemble_outputs(out, ens, problem, dump)


def _run_solve_ql(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    coeffs = build_coefficients(cfg)
    sec = cfg.section("coefficients")
    _, _, u0 = build_data(cfg, triple, noise.modes)
    num = cfg.section("numerics")
    ens = ql.solve_ql(
        coeffs,
        triple,
        noise,
        u0 if u0 is not None else np.zeros((coeffs.N, triple.dim)),
        int(num.get("paths", 8)),
        m=sec.get("m"),
        R_trunc=sec.get("R_trunc"),
        window=float(sec.get("window", 8.0)),
        collocation_factor=int(num.get("collocation_factor", 4)),
        workers=workers,
    )
    dump = bool(cfg.section("outputs").get("dump_trajectories", False))
    return _write_ensemble_outputs(out, ens, None, dump)


def _run_check_coercivity(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    pair = build_pair(cfg, triple)
    M = float(cfg.section("numerics").get("M", 0.0))
    report = check_coercivity(pair, triple, M=M)
    path = out / "coercivity.json"
    path.write_text(report.to_json() + "\n")
    return [path]


def _run_stein_verify(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    pair = build_pair(cfg, triple)
    sec = cfg.section("stein")
    report = check_coercivity(pair, triple)
    Cp = sec.get("Cp")
    if Cp is None:
        Cp = estimate_Cp(triple, noise.grid, p=2)
    c = sec.get("c")
    if c is None:
        c = estimate_solution_map_norm(pair, triple, noise)
    params = stein.SteinParams.from_report(
        report, q=float(sec.get("q", 4.0)), Cp=float(Cp), c=float(c),
        r=sec.get("r"), R=sec.get("R"),
    )
    family = stein.build_family(pair, params)
    dist = stein.verify_distance_bound(pair, triple, params)
    strip = stein.verify_strip_coercivity(family)
    endpoint = stein.endpoint_perturbation_margins(family, Cp=float(Cp))
    payload = {
        **params.summary(),
        "Cp_used": float(Cp),
        "c_used": float(c),
        "distance_ok": bool(dist.ok),
        "distance_form_margin": dist.form_margin,
        "distance_operator": dist.op_distance,
        "min_margin_strip": strip.min_lhs,
        "strip_bound": strip.global_bound,
        "strip_slack": strip.min_slack,
        "endpoint_margins": endpoint,
        "endpoint_margin_min": min(endpoint),
    }
    return [write_json(out / "stein.json", payload)]


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _run_psi_test(cfg, out, seed_override, workers, q=None, m_list=None, grid_step=0.01):
    sec = cfg.section("psi") if cfg is not None else {}
    qs = [float(q)] if q is not None else [float(v) for v in _as_list(sec.get("q", [2.5, 3.0, 4.0]))]
    ms = (
        [float(v) for v in m_list]
        if m_list is not None
        else [float(v) for v in _as_list(sec.get("m", [1.0, 2.0, 5.0]))]
    )
    step = float(sec.get("grid_step", grid_step))
    rows = []
    all_ok = True
    for qv in qs:
        for mv in ms:
            p = dp.PsiM(qv, mv)
            grid = np.arange(-10.0 * mv, 10.0 * mv + 1e-12, step)
            rep = dp.verify_psi_properties(p, grid)
            rows.append(
                {
                    "q": qv,
                    "m": mv,
                    "ok": rep.ok,
                    "min_slack": rep.worst(),
                    "matching": max(rep.matching_defects),
                }
            )
            all_ok &= rep.ok
    lines = [f"{'q':>6} {'m':>6} {'result':>8} {'min_slack':>12} {'matching':>12}"]
    for r in rows:
        lines.append(
            f"{r['q']:>6g} {r['m']:>6g} {'PASS' if r['ok'] else 'FAIL':>8} "
            f"{r['min_slack']:>12.3e} {r['matching']:>12.3e}"
        )
    table = out / "psi_table.txt"
    table.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    files = [table, write_json(out / "psi.json", {"cases": rows, "all_ok": all_ok})]
    if not all_ok:
        raise NumericsError("psi property check failed")
    return files


def _run_bootstrap(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    coeffs = build_coefficients(cfg)
    sec = cfg.section("bootstrap")
    num = cfg.section("numerics")
    _, _, u0 = build_data(cfg, triple, noise.modes)
    if u0 is None:
        u0 = np.zeros((coeffs.N, triple.dim))
    q = float(sec.get("q", 4.0))
    radii = [float(r) for r in sec.get("R_list", [1.0, 2.0, 4.0, 8.0])]
    m_psi = [float(m) for m in sec.get("m_list", [1.0, 2.0, 4.0])]
    results = []
    for R in radii:
        ens = ql.solve_ql(
            coeffs, triple, noise, u0, int(num.get("paths", 64)),
            m=cfg.section("coefficients").get("m"), R_trunc=R, workers=workers,
        )
        for m in m_psi:
            rep = dp.energy_bootstrap(ens, dp.PsiM(q, m), u0=u0)
            results.append(
                {"R_trunc": R, "m": m, "ratio": rep.ratio, "se": rep.se,
                 "psi_mass": rep.psi_mass, "grad_mass": rep.grad_mass}
            )
    return [write_json(out / "bootstrap.json", {"q": q, "results": results})]


def _run_moments(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    pair = build_pair(cfg, triple)
    f, g, u0 = build_data(cfg, triple, noise.modes)
    problem = LinearProblem(triple=triple, pair=pair, noise=noise, f=f, g=g, u0=u0)
    num = cfg.section("numerics")
    ens = solve_linear(problem, int(num.get("paths", 64)), workers=workers)
    sec = cfg.section("moments")
    thetas = [float(v) for v in sec.get("theta", [0.0, 0.1, 0.2, 0.3, 0.4])]
    ps = [float(v) for v in sec.get("p", [2.0])]
    kinds = []
    from .triple import complex_interp, gagliardo_kind

    for th in thetas:
        for p in ps:
            space = complex_interp(max(0.0, 1.0 - 2.0 * th))
            kind = (
                gagliardo_kind(th, p, space) if th > 0 else lp_norm_kind(p, space)
            )
            kinds.append((kind, p))
    C = dg.data_norm(problem, noise.grid, p=2, u0_tag=H)
    report = dg.moment_estimates(ens, kinds, data_size=C)
    rows = [
        (e.label, e.p, e.moment, e.se, e.ratio if e.ratio is not None else np.nan)
        for e in report.entries
    ]
    files = [
        write_csv(out / "moments.csv", ["norm", "p", "estimate", "se", "ratio"], rows),
        write_json(
            out / "moments.json",
            {"data_size": C, "entries": [vars(e) for e in report.entries]},
        ),
    ]
    return files


def _run_tightness(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    sec = cfg.section("tightness")
    theta = float(sec.get("theta", 0.45))
    p = float(sec.get("p", 2.5))
    eps = float(sec.get("eps", 0.05))
    num = cfg.section("numerics")
    paths = int(num.get("paths", 128))
    battery = sec.get("battery_seeds", [cfg.section("pair").get("seed", 0)])
    reports = []
    for bseed in battery:
        pair_cfg = dict(cfg.raw.get("pair", {}))
        pair_cfg["seed"] = int(bseed)
        sub = type(cfg)(kind=cfg.kind, raw={**cfg.raw, "pair": pair_cfg})
        pair = build_pair(sub, triple)
        f, g, u0 = build_data(cfg, triple, noise.modes)
        problem = LinearProblem(triple=triple, pair=pair, noise=noise, f=f, g=g, u0=u0)
        ens = solve_linear(problem, paths, workers=workers)
        reports.append(dg.tightness_check(ens, theta, p, eps=eps))
    R_univ = dg.universal_tightness_radius(reports, eps)
    rows = []
    for i, rep in enumerate(reports):
        for R, tail, bound, se in zip(
            rep.radii, rep.empirical_tail, rep.chebyshev_bound, rep.tail_se
        ):
            rows.append((i, R, tail, bound, se))
    files = [
        write_csv(out / "tails.csv", ["pair", "radius", "tail", "chebyshev", "se"], rows),
        write_json(
            out / "tightness.json",
            {
                "theta": theta,
                "p": p,
                "eps": eps,
                "dominated": [bool(r.dominated) for r in reports],
                "R_eps": [r.R_eps for r in reports],
                "universal_radius": R_univ,
            },
        ),
    ]
    return files


def _run_analyticity(cfg, out, seed_override, workers):
    triple = build_triple(cfg)
    noise = build_noise(cfg, seed_override)
    pair = build_pair(cfg, triple)
    f, g, u0 = build_data(cfg, triple, noise.modes)
    sec = cfg.section("analyticity")
    report = check_coercivity(pair, triple)
    Cp = float(sec.get("Cp", 2.0))
    c = float(sec.get("c", 2.0))
    params = stein.SteinParams.from_report(report, q=4.0, Cp=Cp, c=c)
    family = stein.build_family(pair, params)
    zs = [complex(z) for z in sec.get("z", [0.25, 0.5, 0.75])]
    h = float(sec.get("h", 1e-3))
    arep = dg.analyticity_check(
        family, noise, zs, h=h, paths=int(cfg.section("numerics").get("paths", 4)),
        f=f, g=g, u0=u0,
    )
    payload = {
        "h": h,
        "z": [{"re": z.real, "im": z.imag} for z in arep.z_values],
        "residuals": arep.residuals,
        "max_residual": arep.max_residual,
    }
    return [write_json(out / "analyticity.json", payload)]


_RUNNERS = {
    "solve-linear": _run_solve_linear,
    "solve-ql": _run_solve_ql,
    "check-coercivity": _run_check_coercivity,
    "stein-verify": _run_stein_verify,
    "psi-test": _run_psi_test,
    "bootstrap": _run_bootstrap,
    "moments": _run_moments,
    "tightness": _run_tightness,
    "analyticity": _run_analyticity,
}


def _error_payload(code, message):
    return {"error": {"code": code, "message": message}}


def run(config_path, seed_override=None, workers=None, out=None):
    """Execute the experiment described by the config; returns the manifest."""
    cfg = load_config(config_path)
    issues = validate_config(cfg)
    out_dir = Path(out if out is not None else cfg.raw.get("out", "varspde-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    if issues:
        write_json(out_dir / "error.json", _error_payload("validation", issues))
        raise ConfigError("; ".join(issues))
    t0 = time.perf_counter()
    try:
        files = _RUNNERS[cfg.kind](cfg, out_dir, seed_override, workers)
    except (NumericsError, DivergenceError, CoercivityError, WindowError) as exc:
        write_json(out_dir / "error.json", _error_payload("numeric", str(exc)))
        raise
    wall = time.perf_counter() - t0
    return write_manifest(out_dir, cfg.canonical_json(), __version__, wall, files)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="varspde",
        description="simulation and verification for variational stochastic PDE",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    kinds = list(_RUNNERS) + ["validate"]
    for kind in kinds:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=kind != "psi-test")
        sp.add_argument("--seed-override", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", default=None)
        if kind == "psi-test":
            sp.add_argument("--q", type=float, default=None)
            sp.add_argument("--m-list", default=None)
            sp.add_argument("--grid-step", type=float, default=0.01)
    args = parser.parse_args(argv)

    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            issues = validate_config(cfg)
            print(json.dumps({"issues": issues}, indent=2))
            return 0 if not issues else _EXIT_VALIDATION
        if args.command == "psi-test" and args.config is None:
            out_dir = Path(args.out or "varspde-out")
            out_dir.mkdir(parents=True, exist_ok=True)
            m_list = args.m_list.split(",") if args.m_list else None
            _run_psi_test(
                None, out_dir, None, None, q=args.q, m_list=m_list,
                grid_step=args.grid_step,
            )
            return 0
        manifest = run(
            args.config,
            seed_override=args.seed_override,
            workers=worker_count(args.workers),
            out=args.out,
        )
        print(json.dumps(manifest, indent=2))
        return 0
    except ConfigError as exc:
        print(json.dumps(_error_payload("validation", str(exc)), indent=2), file=sys.stderr)
        return _EXIT_VALIDATION
    except (NumericsError, DivergenceError, CoercivityError, WindowError) as exc:
        print(json.dumps(_error_payload("numeric", str(exc)), indent=2), file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
