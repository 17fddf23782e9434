"""Command-line interface.

Subcommands: sample-fbm, solve, error-table, verify-limit, constants, classify.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .calculus import gaussian_moment_kappa
from .config import CONFIG_KEYS, ConfigError, ExperimentConfig, load_config
from .experiment import (
    ExperimentSetup,
    correlation_with_se,
    ks_standard_normal,
    require_determined,
    run_experiment,
)
from .grid_fbm import (
    DyadicGrid,
    SamplerError,
    SeedSpec,
    restrict_path,
    sample_fbm,
    write_path_binary,
    write_path_csv,
)
from .limits import RegimeUndetermined
from .reference import JacobianError, reference_solution
from .report import plot_error_rates, plot_ratios, plot_standardized, write_csv, write_sidecar
from .schemes import CNConvergenceError, SchemeStepError, classify_regime, parse_scheme, run_scheme
from .variations import c_10star_constant, c_l_constant

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _setup(cfg: ExperimentConfig) -> ExperimentSetup:
    return ExperimentSetup(cfg.model, cfg.scheme, cfg.h, cfg.m_levels, cfg.m_ref, cfg.n_paths,
                           cfg.seed, cfg.horizon_T, cfg.batch_size, cfg.order_margin, cfg.workers)


def _meta(cfg: ExperimentConfig, command: str, regime) -> dict:
    return {"command": command, "config": cfg.raw, "regime": str(regime),
            "regime_note": regime.note}


def _outdir(cfg: ExperimentConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def cmd_sample_fbm(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    grid = DyadicGrid(cfg.m_ref, cfg.horizon_T)
    files = []
    for i in range(cfg.n_paths):
        path = sample_fbm(grid, cfg.h, SeedSpec(cfg.seed, i))
        if cfg.path_format == "csv":
            files.append(write_path_csv(path, out / f"fbm_{i:05d}.csv"))
        else:
            files.append(write_path_binary(path, out / f"fbm_{i:05d}.bin"))
    write_sidecar(out / "fbm_paths.json",
                  {"command": "sample-fbm", "config": cfg.raw, "files": [f.name for f in files]},
                  args.reproducible)
    print(f"wrote {len(files)} paths to {out}")
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    grid = DyadicGrid(cfg.m_ref, cfg.horizon_T)
    m = max(cfg.m_levels)
    regime = classify_regime(cfg.scheme, cfg.h, cfg.model.b_vanishes)
    for i in range(cfg.n_paths):
        fine = sample_fbm(grid, cfg.h, SeedSpec(cfg.seed, i))
        ref = reference_solution(cfg.model, fine, cfg.order_margin).restrict(m)
        coarse = restrict_path(fine, m)
        sol = run_scheme(cfg.scheme, cfg.model, coarse)
        rows = zip(coarse.grid.points, coarse.values, sol.values, ref.values, ref.jacobian)
        write_csv(out / f"solve_{i:05d}.csv", ["t", "B", "Y_hat", "Y_ref", "J"], rows,
                  [f"scheme={cfg.scheme}", f"m={m}", f"m_ref={cfg.m_ref}", f"regime: {regime}"],
                  args.reproducible)
    write_sidecar(out / "solve.json", _meta(cfg, "solve", regime), args.reproducible)
    print(f"wrote {cfg.n_paths} trajectories to {out}")
    return EXIT_OK


def cmd_error_table(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    res = run_experiment(_setup(cfg))
    regime = res.regime
    z = res.normalized()
    pred = res.prediction
    rows = []
    for li, m in enumerate(cfg.m_levels):
        for p in range(cfg.n_paths):
            rows.append((m, p, res.err_T[li, p], res.err_max[li, p],
                         None if z is None else z[li, p],
                         None if pred is None else pred[p]))
    pred_name = "predicted_variance" if regime.limit_kind == "mixed_normal" else "predicted_limit"
    write_csv(out / "error_table.csv",
              ["m", "path", "error_T", "max_abs_error", "normalized_error", pred_name], rows,
              [f"regime: {regime}"], args.reproducible)
    mean_abs = np.mean(np.abs(res.err_T), axis=1)
    se = np.std(np.abs(res.err_T), axis=1, ddof=1) / np.sqrt(cfg.n_paths) if cfg.n_paths > 1 \
        else np.zeros_like(mean_abs)
    ratios = res.ratios()
    summary = []
    for li, m in enumerate(cfg.m_levels):
        summary.append((m, mean_abs[li], se[li], np.mean(np.abs(res.err_max[li])),
                        None if ratios is None else np.median(ratios[li])))
    write_csv(out / "error_summary.csv",
              ["m", "mean_abs_error_T", "se", "mean_max_abs_error", "median_ratio"], summary,
              [f"regime: {regime}"], args.reproducible)
    meta = _meta(cfg, "error-table", regime)
    if len(cfg.m_levels) > 1:
        slope, slope_se = res.slope()
        meta.update(slope=slope, slope_se=slope_se, slope_ci95=[slope - 1.96 * slope_se,
                                                                 slope + 1.96 * slope_se])
        if not args.no_figures:
            plot_error_rates(out / "error_rates.png", cfg.m_levels, mean_abs, se, slope,
                             regime.rate_exponent, f"{cfg.scheme}, H={cfg.h:g}: {regime.limit_kind}")
    meta["constants"] = res.constants
    write_sidecar(out / "error_table.json", meta, args.reproducible)
    print(f"regime: {regime}")
    if "slope" in meta:
        print(f"slope {meta['slope']:.4f} +/- {meta['slope_se']:.4f}")
    return EXIT_OK


def cmd_verify_limit(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    setup = _setup(cfg)
    regime = require_determined(setup)
    res = run_experiment(setup)
    meta = _meta(cfg, "verify-limit", regime)
    meta["constants"] = res.constants
    summary = []
    if regime.limit_kind == "almost_sure_drift_integral":
        ratios = res.ratios()
        for li, m in enumerate(cfg.m_levels):
            r = ratios[li]
            inside = np.mean((r >= cfg.ratio_low) & (r <= cfg.ratio_high))
            summary.append((m, np.median(r), np.percentile(r, 25), np.percentile(r, 75), inside))
        write_csv(out / "limit_summary.csv",
                  ["m", "median_ratio", "q25_ratio", "q75_ratio", "fraction_in_band"], summary,
                  [f"regime: {regime}"], args.reproducible)
        write_csv(out / "limit_paths.csv", ["path", "B_T", "normalized_error", "predicted", "ratio"],
                  zip(range(cfg.n_paths), res.B_T, res.normalized()[-1], res.prediction, ratios[-1]),
                  [f"regime: {regime}", f"m={cfg.m_levels[-1]}"], args.reproducible)
        med = float(np.median(ratios[-1]))
        meta.update(median_ratio=med, passed=bool(cfg.ratio_low <= med <= cfg.ratio_high))
        if not args.no_figures:
            plot_ratios(out / "limit_ratios.png", cfg.m_levels, ratios, cfg.ratio_low, cfg.ratio_high,
                        f"{cfg.scheme}, H={cfg.h:g}")
    else:
        zs = res.standardized()
        for li, m in enumerate(cfg.m_levels):
            stat, p = ks_standard_normal(zs[li])
            r, r_se = correlation_with_se(zs[li], res.B_T)
            summary.append((m, np.mean(zs[li]), np.var(zs[li], ddof=1), stat, p, r, r_se))
        write_csv(out / "limit_summary.csv",
                  ["m", "mean_z", "var_z", "ks_stat", "ks_pvalue", "corr_B_T", "corr_se"], summary,
                  [f"regime: {regime}"], args.reproducible)
        write_csv(out / "limit_paths.csv", ["path", "B_T", "normalized_error", "conditional_var", "z"],
                  zip(range(cfg.n_paths), res.B_T, res.normalized()[-1], res.prediction, zs[-1]),
                  [f"regime: {regime}", f"m={cfg.m_levels[-1]}"], args.reproducible)
        last = summary[-1]
        meta.update(ks_pvalue=last[4], corr_B_T=last[5], corr_se=last[6],
                    passed=bool(last[4] > cfg.ks_alpha and abs(last[5]) <= cfg.se_factor * last[6]))
        if not args.no_figures:
            plot_standardized(out / "limit_standardized.png", zs[-1],
                              f"{cfg.scheme}, H={cfg.h:g}, m={cfg.m_levels[-1]}")
    write_sidecar(out / "limit_check.json", meta, args.reproducible)
    print(f"regime: {regime}")
    print("passed" if meta["passed"] else "failed")
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_constants(args) -> int:
    rows = []
    for h in _floats(args.h):
        if not 0 < h <= 0.5:
            raise ConfigError("h", f"constants are tabulated for 0 < H <= 1/2, got {h}")
        for l in [int(v) for v in args.l.split(",")]:
            c = c_l_constant(l, h, args.tol)
            rows.append((c.name, h, c.value, c.truncation_terms, c.truncation_error_bound,
                         gaussian_moment_kappa(l)))
        c = c_10star_constant(h, args.tol)
        rows.append((c.name, h, c.value, c.truncation_terms, c.truncation_error_bound, None))
    header = ["name", "H", "value", "truncation_terms", "bound", "kappa_l"]
    if args.output:
        write_csv(Path(args.output), header, rows, reproducible=args.reproducible)
    else:
        import csv
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows([["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in r]
                     for r in rows])
    return EXIT_OK


def cmd_classify(args) -> int:
    spec = parse_scheme(args.scheme)
    hs = _floats(args.h)
    print("scheme,H,b_vanishes,condition,rate,limit,coefficient")
    for h in hs:
        if not 0 < h < 1:
            raise ConfigError("h", f"Hurst parameter must lie in (0, 1), got {h}")
        rep = classify_regime(spec, h, args.b_vanishes)
        rho = "" if rep.rate_exponent is None else repr(rep.rate_exponent)
        print(f"{spec},{h!r},{args.b_vanishes},{rep.condition},{rho},{rep.limit_kind},"
              f"{rep.coefficient_descriptor}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:14s} {v}" for k, v in CONFIG_KEYS.items())
    p = argparse.ArgumentParser(
        prog="fbm-schemes",
        description="Numerical schemes for fBm-driven SDEs and checks of their asymptotic errors.",
        epilog=f"configuration keys (flat 'key = value' file):\n{keys}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("sample-fbm", "write fBm paths at m_ref"),
                           ("solve", "write scheme and reference trajectories"),
                           ("error-table", "error table, rate fit and figure"),
                           ("verify-limit", "compare normalized errors with the predicted limit")]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="path to a key = value configuration file")
        sp.add_argument("--output-dir", help="override output_dir")
        sp.add_argument("--workers", type=int, help="override workers")
        sp.add_argument("--reproducible", action="store_true", help="omit timestamps from outputs")
        sp.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    sp = sub.add_parser("constants", help="C_(l) and C_10* with truncation metadata")
    sp.add_argument("--h", default="0.25,0.3,0.35,0.4,0.5", help="comma-separated Hurst values")
    sp.add_argument("--l", default="2,3,4", help="comma-separated Hermite ranks")
    sp.add_argument("--tol", type=float, default=1e-10, help="series truncation tolerance")
    sp.add_argument("--output", help="CSV file (default stdout)")
    sp.add_argument("--reproducible", action="store_true", help="omit timestamps from outputs")
    sp = sub.add_parser("classify", help="convergence regime of a scheme")
    sp.add_argument("--scheme", required=True, help="'em', 'cn' or 'milstein:k'")
    sp.add_argument("--h", required=True, help="one or more comma-separated Hurst values")
    sp.add_argument("--b-vanishes", action="store_true", help="driftless model")
    return p


_COMMANDS = {"sample-fbm": cmd_sample_fbm, "solve": cmd_solve,
             "error-table": cmd_error_table, "verify-limit": cmd_verify_limit}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "constants":
            return cmd_constants(args)
        if args.command == "classify":
            return cmd_classify(args)
        cfg = load_config(args.config)
        if args.output_dir:
            cfg = dataclasses.replace(cfg, output_dir=Path(args.output_dir))
        if args.workers:
            cfg = dataclasses.replace(cfg, workers=args.workers)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, RegimeUndetermined) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemeStepError, CNConvergenceError, JacobianError, SamplerError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
