"""Command-line surface, configuration, and run persistence.

Every invocation creates a fresh timestamped run directory under the output
root (flag ``--out``, else ``$QBWALK_OUT``, else ``./runs``), writes
``manifest.json`` first (full configuration echo, master seed, input hash),
then the results JSON and any CSVs.  Exit codes: 0 success, 1 configuration
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .diagnostics import (
    autocovariance_series,
    clt_fit,
    conductance_proxy,
    mixing_scaling,
    tv_to_normal,
)
from .estimator import qb_point_estimate
from .isoperimetry import random_fuzz_case, run_fuzz_case
from .models import (
    ExpFamilySpec,
    SyntheticSpec,
    gaussian_location_family,
    gen_synthetic,
    linear_regression_problem,
    localize,
    make_exp_target,
    make_z_target,
    quantile_problem,
    read_dataset_csv,
    write_dataset_csv,
)
from .rng import child_seed, stream
from .schedule import METHODS, ScheduleInputs, SchedulePlan, plan
from .walk import WalkConfig, run_chain, sigma_default, write_trace_csv

ENV_OUT_ROOT = "QBWALK_OUT"

FAMILIES = ("gaussian_location", "linear_z", "quantile_z")

_SYNTH_FAMILY = {
    "gaussian_location": "gaussian_location",
    "linear_z": "linear_regression",
    "quantile_z": "quantile",
}


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 1."""


# ---------------------------------------------------------------------------
# configuration


_ALLOWED_KEYS = {
    "family",
    "dim",
    "n",
    "theta0",
    "alpha",
    "data",
    "sigma",
    "support_c",
    "steps",
    "burn_in",
    "method",
    "eps",
    "phi",
    "phi_source",
    "ln_m",
    "g_bar",
    "gamma0",
    "m",
    "maxlag",
    "dims",
    "beta",
    "cases",
    "iso_family",
    "out",
    "seed",
    "workers",
}


def load_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(cfg) - _ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def merged_config(args: argparse.Namespace) -> dict[str, Any]:
    """File config overridden by any CLI flags that were actually given."""
    cfg: dict[str, Any] = {}
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for key, value in vars(args).items():
        if key in _ALLOWED_KEYS and value is not None:
            cfg[key] = value
    return cfg


def _require(cfg: dict[str, Any], key: str) -> Any:
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"missing required config field: {key}")
    return cfg[key]


# ---------------------------------------------------------------------------
# run directories and manifests


def _out_root(cfg: dict[str, Any]) -> Path:
    root = cfg.get("out") or os.environ.get(ENV_OUT_ROOT) or "runs"
    return Path(root)


def make_run_dir(root: Path, subcommand: str, seed: int) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    base = f"{subcommand.replace(' ', '-')}-{stamp}-s{seed}"
    run_dir = root / base
    counter = 1
    while run_dir.exists():
        run_dir = root / f"{base}-{counter}"
        counter += 1
    run_dir.mkdir(parents=True)
    return run_dir


def _content_hash(cfg: dict[str, Any], seed: int) -> str:
    payload = json.dumps({"config": cfg, "seed": seed}, sort_keys=True).encode()
    h = hashlib.sha256(payload)
    data_path = cfg.get("data")
    if data_path:
        h.update(Path(data_path).read_bytes())
    return h.hexdigest()


def write_manifest(run_dir: Path, subcommand: str, cfg: dict[str, Any], seed: int) -> dict:
    manifest = {
        "subcommand": subcommand,
        "config": cfg,
        "master_seed": seed,
        "artifact_version": __version__,
        "started_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "finished_at": None,
        "input_hash": _content_hash(cfg, seed),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def finish_manifest(run_dir: Path, manifest: dict) -> None:
    manifest["finished_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _write_results(run_dir: Path, results: dict) -> None:
    (run_dir / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    print(json.dumps(results, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# model plumbing


def _model_and_data(cfg: dict[str, Any], seed: int):
    family = _require(cfg, "family")
    if family not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}, got {family!r}")
    dim = int(_require(cfg, "dim"))
    theta0 = np.asarray(cfg.get("theta0") or np.zeros(dim), dtype=float)
    if theta0.shape != (dim,):
        raise ConfigError("theta0 length must equal dim")
    alpha = float(cfg.get("alpha", 0.5))
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if cfg.get("data"):
        data = read_dataset_csv(cfg["data"])
    else:
        n = int(_require(cfg, "n"))
        spec = SyntheticSpec(_SYNTH_FAMILY[family], dim, tuple(theta0), alpha)
        data = gen_synthetic(spec, n, child_seed(seed, 0))
    if family == "gaussian_location":
        model = gaussian_location_family(dim)
    elif family == "linear_z":
        model = linear_regression_problem(dim)
    else:
        model = quantile_problem(dim, alpha, theta0)
    return model, data, theta0


def _build_target(cfg: dict[str, Any], seed: int):
    model, data, theta0 = _model_and_data(cfg, seed)
    loc = localize(model, data, theta0)
    C = float(cfg.get("support_c", 2.0))
    if isinstance(model, ExpFamilySpec):
        target, _ = make_exp_target(model, data, loc, C=C)
    else:
        target, _ = make_z_target(model, data, loc, C=C)
    return target


def _walk_sigma(cfg: dict[str, Any], target) -> float:
    if cfg.get("sigma") is not None:
        sigma = float(cfg["sigma"])
        if sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {sigma}")
        return sigma
    return sigma_default(target.dim, target.reference.lambda_max, target.support.radius)


def _schedule_inputs(cfg: dict[str, Any]) -> ScheduleInputs:
    try:
        return ScheduleInputs(
            phi=float(_require(cfg, "phi")),
            ln_M=float(cfg.get("ln_m", 0.0)),
            g_bar=float(cfg.get("g_bar", 1.0)),
            gamma0=float(cfg.get("gamma0", 1.0)),
            eps=float(_require(cfg, "eps")),
            phi_source=str(cfg.get("phi_source", "user")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_schedule_plan(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    inputs = _schedule_inputs(cfg)
    methods = [cfg["method"]] if cfg.get("method") else list(METHODS)
    plans = {}
    for method in methods:
        p = plan(method, inputs)
        plans[method] = {"B": p.B, "N": p.N, "S": p.S, "phi_source": p.phi_source}
    return {"plans": plans, "inputs": dataclasses.asdict(inputs)}


def cmd_sample(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    target = _build_target(cfg, seed)
    steps = int(cfg.get("steps", 10000))
    sigma = _walk_sigma(cfg, target)
    config = WalkConfig(sigma=sigma, seed=child_seed(seed, 1), init=np.zeros(target.dim))
    trace = run_chain(target, config, steps)
    write_trace_csv(trace, str(run_dir / "trace.csv"))
    return {
        "steps": steps,
        "sigma": sigma,
        "acceptance_rate": trace.acceptance_rate,
        "proper_move_rate": float(trace.proper.mean()) if steps else 0.0,
        "proposals_outside": trace.proposals_outside,
        "trace_csv": "trace.csv",
    }


def _empirical_phi(cfg: dict[str, Any], target, sigma: float, seed: int) -> tuple[float, float]:
    """Pilot chain conductance proxy and integrand variance estimate."""
    pilot_steps = int(cfg.get("steps", 20000))
    config = WalkConfig(sigma=sigma, seed=child_seed(seed, 7), init=np.zeros(target.dim))
    trace = run_chain(target, config, pilot_steps)
    series = trace.states[pilot_steps // 10 :, 0]
    maxlag = max(3, min(int(cfg.get("maxlag", 200)), len(series) // 10))
    table = autocovariance_series(series, maxlag)
    proxy = conductance_proxy(table)
    return proxy.phi_hat, float(table.gammas[0])


def cmd_estimate(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    model, data, theta0 = _model_and_data(cfg, seed)
    loc = localize(model, data, theta0)
    C = float(cfg.get("support_c", 2.0))
    if cfg["family"] == "gaussian_location":
        target, _ = make_exp_target(model, data, loc, C=C)
    else:
        target, _ = make_z_target(model, data, loc, C=C)
    sigma = _walk_sigma(cfg, target)
    method = cfg.get("method", "long_run")
    if cfg.get("phi") is not None:
        inputs = _schedule_inputs(cfg)
    else:
        phi_hat, gamma0 = _empirical_phi(cfg, target, sigma, seed)
        try:
            inputs = ScheduleInputs(
                phi=phi_hat,
                ln_M=float(cfg.get("ln_m", 0.0)),
                g_bar=float(cfg.get("g_bar", target.support.radius)),
                gamma0=float(cfg.get("gamma0", gamma0)),
                eps=float(_require(cfg, "eps")),
                phi_source="empirical_proxy",
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    p = plan(method, inputs)
    theta_hat = qb_point_estimate(model, data, p, child_seed(seed, 3), anchor=theta0, sigma=sigma)
    return {
        "theta_hat": [float(v) for v in theta_hat],
        "plan": {"method": p.method, "B": p.B, "N": p.N, "S": p.S, "phi_source": p.phi_source},
        "sigma": sigma,
        "n": data.n,
    }


def cmd_diagnose_clt(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    target = _build_target(cfg, seed)
    m = int(cfg.get("m", 2000))
    fit = clt_fit(target, target.reference, m, child_seed(seed, 2))
    return {
        "eps1": fit.eps1,
        "eps2": fit.eps2,
        "beta": fit.beta,
        "n_samples": fit.n_samples,
        "max_residual": fit.max_residual,
        "worst_lambda": [float(v) for v in fit.worst_lambda],
    }


def cmd_diagnose_tv(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    target = _build_target(cfg, seed)
    m = int(cfg.get("m", 10000))
    value = tv_to_normal(target, target.reference, m, child_seed(seed, 2))
    return {"tv_estimate": value, "draws": m}


def cmd_diagnose_conductance(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    target = _build_target(cfg, seed)
    sigma = _walk_sigma(cfg, target)
    steps = int(cfg.get("steps", 50000))
    config = WalkConfig(sigma=sigma, seed=child_seed(seed, 1), init=np.zeros(target.dim))
    trace = run_chain(target, config, steps)
    burn = steps // 10
    series = trace.states[burn:, 0]
    maxlag = min(int(cfg.get("maxlag", 200)), len(series) // 10)
    table = autocovariance_series(series, maxlag)
    proxy = conductance_proxy(table)
    return {
        "rho_hat": proxy.rho_hat,
        "phi_hat": proxy.phi_hat,
        "lags_used": list(proxy.lags_used),
        "r_squared": proxy.r_squared,
        "note": proxy.note,
        "gamma0": float(table.gammas[0]),
        "sigma": sigma,
    }


def cmd_bench_mixing(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    dims_raw = _require(cfg, "dims")
    if isinstance(dims_raw, str):
        dims = [int(v) for v in dims_raw.split(",") if v]
    else:
        dims = [int(v) for v in dims_raw]
    steps = int(cfg.get("steps", 200000))
    workers = int(cfg.get("workers", 1))
    result = mixing_scaling(dims, steps, seed, workers=workers)
    with open(run_dir / "mixing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "iat"])
        for d, tau in result.rows:
            w.writerow([d, format(tau, ".17g")])
    return {
        "rows": [{"dim": d, "iat": tau} for d, tau in result.rows],
        "slope": result.slope,
        "steps_per_dim": steps,
        "csv": "mixing.csv",
    }


def cmd_iso_verify(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    family = cfg.get("iso_family", "step")
    beta = float(cfg.get("beta", 1.0))
    dim = int(cfg.get("dim", 1))
    cases = int(cfg.get("cases", 100))
    rng = stream(seed)
    rows = []
    violations = 0
    for i in range(cases):
        case = random_fuzz_case(family, beta, dim, rng)
        res = run_fuzz_case(case)
        rows.append((i, res.lhs, res.rhs, res.margin, res.holds))
        if not res.holds:
            violations += 1
    with open(run_dir / "cases.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "lhs", "rhs", "margin", "holds"])
        for i, lhs, rhs, margin, holds in rows:
            w.writerow([i, format(lhs, ".17g"), format(rhs, ".17g"), format(margin, ".17g"), int(holds)])
    return {
        "family": family,
        "beta": beta,
        "dim": dim,
        "cases": cases,
        "violations": violations,
        "csv": "cases.csv",
    }


def cmd_gen_data(cfg: dict[str, Any], seed: int, run_dir: Path) -> dict:
    family = _require(cfg, "family")
    if family not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}, got {family!r}")
    dim = int(_require(cfg, "dim"))
    n = int(_require(cfg, "n"))
    theta0 = np.asarray(cfg.get("theta0") or np.zeros(dim), dtype=float)
    alpha = float(cfg.get("alpha", 0.5))
    spec = SyntheticSpec(_SYNTH_FAMILY[family], dim, tuple(theta0), alpha)
    data = gen_synthetic(spec, n, child_seed(seed, 0))
    write_dataset_csv(data, str(run_dir / "data.csv"))
    return {"family": family, "dim": dim, "n": n, "csv": "data.csv"}


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--out", default=None, help=f"output root (default ${ENV_OUT_ROOT} or ./runs)")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=FAMILIES, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--theta0", type=float, nargs="+", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--data", default=None, help="ingest records from this CSV instead of simulating")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--support-c", dest="support_c", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbwalk",
        description="Quasi-Bayesian estimation with a Gaussian Metropolis walk",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one chain and export its trace")
    _add_common(p)
    _add_model(p)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("estimate", help="quasi-posterior mean of a model")
    _add_common(p)
    _add_model(p)
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--ln-m", dest="ln_m", type=float, default=None)
    p.add_argument("--g-bar", dest="g_bar", type=float, default=None)
    p.add_argument("--gamma0", type=float, default=None)
    p.add_argument("--steps", type=int, default=None, help="pilot chain length for the phi proxy")
    p.add_argument("--maxlag", type=int, default=None)

    p = sub.add_parser("schedule", help="burn-in and averaging schedules")
    sched_sub = p.add_subparsers(dest="subcommand", required=True)
    sp = sched_sub.add_parser("plan", help="print Theorem-style schedule lengths")
    _add_common(sp)
    sp.add_argument("--method", choices=METHODS, default=None)
    sp.add_argument("--phi", type=float, default=None)
    sp.add_argument("--ln-m", dest="ln_m", type=float, default=None)
    sp.add_argument("--g-bar", dest="g_bar", type=float, default=None)
    sp.add_argument("--gamma0", type=float, default=None)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--phi-source", dest="phi_source", default=None)

    p = sub.add_parser("diagnose", help="CLT-condition and mixing diagnostics")
    diag_sub = p.add_subparsers(dest="subcommand", required=True)
    for name in ("clt", "tv", "conductance"):
        dp = diag_sub.add_parser(name)
        _add_common(dp)
        _add_model(dp)
        dp.add_argument("--m", type=int, default=None)
        dp.add_argument("--steps", type=int, default=None)
        dp.add_argument("--maxlag", type=int, default=None)

    p = sub.add_parser("bench", help="benchmarks")
    bench_sub = p.add_subparsers(dest="subcommand", required=True)
    bp = bench_sub.add_parser("mixing", help="IAT scaling across dimensions")
    _add_common(bp)
    bp.add_argument("--dims", default=None, help="comma-separated dimensions, e.g. 2,4,8")
    bp.add_argument("--steps", type=int, default=None)
    bp.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("iso", help="iso-perimetric inequality checks")
    iso_sub = p.add_subparsers(dest="subcommand", required=True)
    ip = iso_sub.add_parser("verify", help="fuzz random slab partitions")
    _add_common(ip)
    ip.add_argument("--iso-family", dest="iso_family", choices=("step", "smooth"), default=None)
    ip.add_argument("--beta", type=float, default=None)
    ip.add_argument("--dim", type=int, default=None)
    ip.add_argument("--cases", type=int, default=None)

    p = sub.add_parser("gen", help="synthetic data")
    gen_sub = p.add_subparsers(dest="subcommand", required=True)
    gp = gen_sub.add_parser("data", help="emit a synthetic dataset as CSV")
    _add_common(gp)
    _add_model(gp)

    return parser


_DISPATCH = {
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "schedule plan": cmd_schedule_plan,
    "diagnose clt": cmd_diagnose_clt,
    "diagnose tv": cmd_diagnose_tv,
    "diagnose conductance": cmd_diagnose_conductance,
    "bench mixing": cmd_bench_mixing,
    "iso verify": cmd_iso_verify,
    "gen data": cmd_gen_data,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    name = args.command
    if getattr(args, "subcommand", None):
        name = f"{args.command} {args.subcommand}"
    handler = _DISPATCH[name]

    try:
        cfg = merged_config(args)
        seed = int(cfg.get("seed", 0))
        run_dir = make_run_dir(_out_root(cfg), name, seed)
        manifest = write_manifest(run_dir, name, cfg, seed)
        try:
            results = handler(cfg, seed, run_dir)
        except (ConfigError, KeyboardInterrupt):
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        results["run_dir"] = str(run_dir)
        _write_results(run_dir, results)
        finish_manifest(run_dir, manifest)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, ZeroDivisionError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
