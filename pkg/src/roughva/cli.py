"""Command-line experiment runner.

Subcommands ``price``, ``fair-fee``, ``calibrate`` and ``plots`` read a YAML
config (see :mod:`roughva.config`) and write JSON reports and CSV tables to
the output directory.  Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 fee-solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import SWEEP_PARAMETERS, ExperimentConfig, load_config
from .exceptions import ConfigError, InputError, NumericalError, SolverError
from .fairfee import FeeProblem, price_at_fee, solve_fair_fee
from .frackernel import KernelSpec, build_soe, fractional_kernel
from .lsmc import backward_induction, evaluate_policy, no_surrender_price, signature_features
from .mortality import (
    calibrate_mortality,
    read_life_table,
    simulate_mortality,
    synthetic_life_table,
)
from .noise import draw_noise
from .paths import simulate_bundle, write_path_dump

log = logging.getLogger("roughva")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SOLVER = 0, 2, 3, 4

KERNEL_HURST_GRID = (0.55, 0.65, 0.75, 0.85, 0.95)


# --------------------------------------------------------------------------
# helpers


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _report(cfg: ExperimentConfig, command: str, result: dict, timing: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "result": result,
        "timing_seconds": timing,
    }


def _mortality_params(cfg: ExperimentConfig):
    """Mortality parameters, calibrated first when the config asks for it."""
    m = cfg["mortality"]
    params = cfg.mortality
    if not m["calibrate"]:
        return params, None
    table = read_life_table(m["life_table"])
    res = calibrate_mortality(table, m["x"], m["calibration_horizon"], params, scheme=m["scheme"])
    return res.params, res


def _bundles(cfg: ExperimentConfig, mortality=None, keep_noise=False):
    n = cfg["numerics"]
    market = cfg.market
    mortality = mortality or cfg.mortality
    grid = cfg.grid
    soe = build_soe(market.kernel, grid.h, grid.T, n["xi"]) if n["variance_scheme"] == "fast" else None
    kw = dict(
        soe=soe,
        xi=n["xi"],
        variance_scheme=n["variance_scheme"],
        mortality_scheme=cfg["mortality"]["scheme"],
        keep_noise=keep_noise,
    )
    test_paths = n["test_paths"] or n["paths"]
    train = simulate_bundle(market, mortality, grid, n["paths"], n["seed_train"], **kw)
    test = simulate_bundle(market, mortality, grid, test_paths, n["seed_test"], **kw)
    return train, test, soe


def _dumps(cfg, out, train, test, soe, ftr=None) -> dict:
    o = cfg["output"]
    files = {}
    if o["dump_paths"]:
        write_path_dump(test, os.path.join(out, "paths_test.csv"), o["dump_paths"])
        files["paths"] = "paths_test.csv"
    if o["dump_soe"] and soe is not None:
        soe.to_csv(os.path.join(out, "soe.csv"))
        files["soe"] = "soe.csv"
    if o["dump_features"]:
        if ftr is None:
            ftr = signature_features(train, cfg["numerics"]["K"], first=max(cfg.contract.n_min, 1))
        n = int(ftr.dates[len(ftr.dates) // 2])
        ftr.to_csv(os.path.join(out, f"features_date{n}.csv"), n, o["dump_features"])
        files["features"] = f"features_date{n}.csv"
    return files


def _sweep_points(cfg: ExperimentConfig):
    sw = cfg["sweep"]
    if sw["parameter"] is None:
        return [(None, None, cfg)]
    block, key = SWEEP_PARAMETERS[sw["parameter"]]
    return [(sw["parameter"], v, cfg.with_value(block, key, v)) for v in sw["values"]]


# --------------------------------------------------------------------------
# subcommands


def _price_once(cfg: ExperimentConfig, out: str, tag: str = "") -> dict:
    n = cfg["numerics"]
    contract = cfg.contract
    t0 = time.perf_counter()
    mortality, _ = _mortality_params(cfg)
    train, test, soe = _bundles(cfg, mortality)
    t1 = time.perf_counter()
    ftr = signature_features(train, n["K"], first=max(contract.n_min, 1))
    fte = signature_features(test, n["K"], first=max(contract.n_min, 1))
    fit = backward_induction(
        train, contract, cfg.netcfg, n["K"], n["seed_net"], ftr, n["death_timing"]
    )
    res = evaluate_policy(test, fit.regressors, contract, fte, n["death_timing"])
    ns = no_surrender_price(test, contract, n["death_timing"])
    t2 = time.perf_counter()
    rec = res.record
    rec.to_csv(os.path.join(out, f"decisions{tag}.csv"))
    ratios = rec.surrender_ratio_by_year()
    _write_csv(
        os.path.join(out, f"surrender_ratio{tag}.csv"),
        ["year", "surrender_ratio"],
        [[k + 1, f"{v:.10g}"] for k, v in enumerate(ratios)],
    )
    fit.regressors.save(os.path.join(out, f"regressors{tag}.npz"))
    files = _dumps(cfg, out, train, test, soe, ftr)
    result = {
        "test": res.to_dict(),
        "train": {"price": fit.price, "se": fit.se, "n_paths": train.n_paths},
        "no_surrender": ns.to_dict(),
        "mortality": {"mu_x": mortality.mu_x, "lam": mortality.lam, "sigma": mortality.sigma,
                      "hurst": mortality.hurst},
        "files": files,
    }
    return result, {"simulate": t1 - t0, "train_and_evaluate": t2 - t1}


def run_price(cfg: ExperimentConfig) -> dict:
    """Price report plus decision and surrender-ratio CSVs."""
    out = cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    points = _sweep_points(cfg)
    if points[0][0] is None:
        result, timing = _price_once(cfg, out)
        report = _report(cfg, "price", result, timing)
    else:
        rows, results, timing = [], [], {}
        for i, (name, value, sub) in enumerate(points):
            res, t = _price_once(sub, out, tag=f"_{i}")
            results.append({"parameter": name, "value": value, **res})
            timing[f"{name}={value}"] = sum(t.values())
            rows.append([name, value, res["test"]["price"], res["test"]["se"], res["no_surrender"]["price"],
                         res["no_surrender"]["se"], res["test"]["surrender_fraction"]])
        _write_csv(os.path.join(out, "price_sweep.csv"),
                   ["parameter", "value", "price", "se", "no_surrender_price", "no_surrender_se",
                    "surrender_fraction"], rows)
        report = _report(cfg, "price", {"sweep": results}, timing)
    _write_json(os.path.join(out, "price_report.json"), report)
    return report


def _fees_once(cfg: ExperimentConfig) -> dict:
    n, s = cfg["numerics"], cfg["solver"]
    mortality, _ = _mortality_params(cfg)
    train, test, soe = _bundles(cfg, mortality)
    out = {}
    modes = [m for m, on in (("with_surrender", s["surrender"]), ("no_surrender", s["no_surrender"])) if on]
    for mode in modes:
        problem = FeeProblem(
            train, test, cfg.contract, cfg.netcfg, n["K"], n["seed_net"],
            surrender=(mode == "with_surrender"), death_timing=n["death_timing"],
        )
        res = solve_fair_fee(cfg.solver, lambda c, p=problem: price_at_fee(c, p), cfg.contract.F0)
        out[mode] = res.to_dict()
    return out


def run_fair_fee(cfg: ExperimentConfig) -> dict:
    """Fair fee with and without surrender; a sweep adds ``fee_table.csv``."""
    if cfg["sweep"]["parameter"] == "c":
        raise ConfigError("the fee itself cannot be swept in a fair-fee run", cfg.lines.get("sweep.parameter"))
    out = cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    points = _sweep_points(cfg)
    results, rows, timing = [], [], {}
    for name, value, sub in points:
        t0 = time.perf_counter()
        res = _fees_once(sub)
        timing[f"{name}={value}" if name else "fair_fee"] = time.perf_counter() - t0
        results.append({"parameter": name, "value": value, **res})
        rows.append([
            name or "", "" if value is None else value,
            res.get("with_surrender", {}).get("c_star", ""),
            res.get("no_surrender", {}).get("c_star", ""),
            res.get("with_surrender", {}).get("iterations", ""),
        ])
    _write_csv(os.path.join(out, "fee_table.csv"),
               ["parameter", "value", "fee_with_surrender", "fee_no_surrender", "iterations_with_surrender"], rows)
    report = _report(cfg, "fair-fee", {"points": results}, timing)
    _write_json(os.path.join(out, "fee_report.json"), report)
    return report


def run_calibrate(cfg: ExperimentConfig) -> dict:
    """Fit the mortality model to a life table (synthetic when none given)."""
    m = cfg["mortality"]
    out = cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    start = cfg.mortality
    t0 = time.perf_counter()
    if m["life_table"] is None:
        table = synthetic_life_table(start, m["calibration_horizon"] + 1, scheme=m["scheme"])
        mu_x = start.mu_x
    else:
        table = read_life_table(m["life_table"])
        mu_x = None
    res = calibrate_mortality(table, m["x"], m["calibration_horizon"], start, mu_x=mu_x, scheme=m["scheme"])
    _write_csv(
        os.path.join(out, "calibration_curve.csv"),
        ["age", "observed", "model"],
        [[int(a), f"{o:.12g}", f"{p:.12g}"] for a, o, p in zip(res.ages, res.observed, res.model)],
    )
    result = {
        "table": m["life_table"] or "synthetic",
        "fitted": res.report(),
        "start": {"mu_x": start.mu_x, "lam": start.lam, "sigma": start.sigma, "hurst": start.hurst},
    }
    report = _report(cfg, "calibrate", result, {"calibrate": time.perf_counter() - t0})
    _write_json(os.path.join(out, "calibration_report.json"), report)
    return report


def run_plots(cfg: ExperimentConfig, n_mortality_paths: int = 20) -> dict:
    """CSV data for the mortality-path, decision-scatter, surrender-ratio and
    kernel figures (plus the calibration curve when a life table is set)."""
    out = cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    grid = cfg.grid
    n = cfg["numerics"]
    files = {}

    noise = draw_noise(n_mortality_paths, grid, cfg.market.rho, n["seed_test"])
    mu = simulate_mortality(cfg.mortality, grid, noise, scheme=cfg["mortality"]["scheme"])
    rows = [[i, k, f"{grid.times[k]:.10g}", f"{mu[i, k]:.12g}"] for i in range(mu.shape[0]) for k in range(grid.N + 1)]
    _write_csv(os.path.join(out, "fig1_mortality_paths.csv"), ["path", "step", "t", "mu"], rows)
    files["mortality_paths"] = "fig1_mortality_paths.csv"

    mortality, _ = _mortality_params(cfg)
    train, test, _ = _bundles(cfg, mortality)
    contract = cfg.contract
    fit = backward_induction(train, contract, cfg.netcfg, n["K"], n["seed_net"], death_timing=n["death_timing"])
    res = evaluate_policy(test, fit.regressors, contract, death_timing=n["death_timing"], K=n["K"])
    rec = res.record
    tf = test.with_fee(contract.c)
    rows = []
    # one row per path and year-end date up to its stopping time
    for k in range(12 if grid.N >= 12 else 1, grid.N, max(grid.N // int(round(grid.T)), 1)):
        alive = rec.tau >= k
        idx = np.nonzero(alive)[0]
        for i in idx:
            rows.append([f"{grid.times[k]:.10g}", f"{tf.F[i, k]:.10g}", f"{test.V[i, k]:.10g}",
                         f"{test.mu[i, k]:.10g}", int(rec.exercise[i, k])])
    _write_csv(os.path.join(out, "fig4_decisions.csv"), ["t", "F", "V", "mu", "decision"], rows)
    files["decisions"] = "fig4_decisions.csv"

    ratios = rec.surrender_ratio_by_year()
    _write_csv(os.path.join(out, "fig5_surrender_ratio.csv"), ["year", "surrender_ratio"],
               [[k + 1, f"{v:.10g}"] for k, v in enumerate(ratios)])
    files["surrender_ratio"] = "fig5_surrender_ratio.csv"

    t = np.linspace(grid.h, grid.T, 400)
    curves = [fractional_kernel(t, KernelSpec(H)) for H in KERNEL_HURST_GRID]
    _write_csv(os.path.join(out, "fig6_kernel.csv"), ["t"] + [f"H={H}" for H in KERNEL_HURST_GRID],
               [[f"{t[j]:.10g}"] + [f"{c[j]:.12g}" for c in curves] for j in range(t.size)])
    files["kernel"] = "fig6_kernel.csv"

    if cfg["mortality"]["life_table"] is not None:
        cal = run_calibrate(cfg)
        files["calibration_curve"] = "calibration_curve.csv"
        files["calibration_report"] = "calibration_report.json"
        del cal
    report = _report(cfg, "plots", {"files": files, "test_price": res.to_dict()}, {})
    _write_json(os.path.join(out, "plots_report.json"), report)
    return report


COMMANDS = {
    "price": run_price,
    "fair-fee": run_fair_fee,
    "calibrate": run_calibrate,
    "plots": run_plots,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughva", description="Variable annuity valuation under rough volatility "
                                "and Volterra mortality.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--preset", choices=["desk", "paper"], help="numerical scale preset")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed-train", type=int)
    p.add_argument("--seed-test", type=int)
    p.add_argument("--dump-paths", type=int, metavar="N", help="write the first N test paths")
    p.add_argument("--dump-soe", action="store_true", help="write SOE nodes and weights")
    p.add_argument("--dump-features", type=int, metavar="N", help="write N feature rows at a middle date")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, preset=args.preset, seed_train=args.seed_train,
                          seed_test=args.seed_test, out_dir=args.out)
        for flag, key in ((args.dump_paths, "dump_paths"), (args.dump_features, "dump_features")):
            if flag is not None:
                cfg = cfg.with_value("output", key, flag)
        if args.dump_soe:
            cfg = cfg.with_value("output", "dump_soe", True)
        report = COMMANDS[args.command](cfg)
    except (ConfigError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SolverError as exc:
        print(f"fee solver failure: {exc}", file=sys.stderr)
        if exc.endpoint_prices:
            print(f"endpoint prices: {exc.endpoint_prices}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(report["result"], indent=2, sort_keys=True, default=str)[:4000])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
