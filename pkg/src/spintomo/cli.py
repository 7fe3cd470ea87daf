"""Command-line surface tying the simulation and reconstruction together.

Subcommands: gen-waveforms, simulate, reconstruct, calibrate-epsilon,
suite, mismatch, fit.  Every command is fully seeded (no wall-clock or
ambient randomness) and embeds the digest of its resolved configuration
into each output file, so reruns with the same flags produce identical
bytes regardless of thread count.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ioformats as io
from .dynamics import ensemble_observables, random_waveforms
from .estimators import (
    EstimatorError,
    SolverConfig,
    calibrate_epsilon,
    solve_cs,
    solve_ls,
)
from .pipeline import (
    DynamicsModel,
    SuiteConfig,
    fit_exponential,
    mismatch_experiment,
    run_suite,
)
from .records import design_matrix, synthesize_record
from .spin_system import (
    SpinSpace,
    basis_state,
    fidelity,
    haar_random_pure_state,
    hermitian_basis,
    maximally_mixed,
    pure_density,
)


def _fail_solver(exc: EstimatorError) -> int:
    sys.stderr.write(json.dumps({"error_class": exc.code, "message": str(exc)}) + "\n")
    return 1


def _series_from_files(waveforms_path, params_path, sample_dt_us, T_us=None):
    wf = io.load_waveforms(waveforms_path)
    params, inhomog = io.load_params(params_path)
    series = ensemble_observables(wf, params, inhomog, sample_dt_us, T_us)
    return wf, params, inhomog, series


def _load_state(args, dim=16):
    """Initial state from a file or a named kind; returns a density matrix."""
    if args.state is not None:
        payload = io.load_json(args.state)
        arr_re = np.asarray(payload["re"], dtype=float)
        if arr_re.ndim == 2:
            return io.payload_operator(payload)
        return pure_density(io.load_state_vector(args.state))
    kind = args.state_kind
    if kind == "haar":
        return pure_density(haar_random_pure_state(dim, args.state_seed))
    if kind == "mixed":
        return maximally_mixed(dim)
    if kind == "stretched":
        space = SpinSpace.cesium()
        return pure_density(basis_state(space, space.spins[0], space.spins[0]))
    raise ValueError(f"unknown state kind {kind!r}")


def _solver_from_args(args) -> SolverConfig:
    cfg = SolverConfig()
    if getattr(args, "max_iter", None) is not None:
        cfg = replace(cfg, max_iter=args.max_iter)
    return cfg


def cmd_gen_waveforms(args) -> int:
    T_us = args.T_ms * 1000.0
    digest = io.config_digest({"cmd": "gen-waveforms", "T_ms": args.T_ms, "seed": args.seed})
    wf = random_waveforms(T_us, args.seed)
    io.save_waveforms(args.out, wf, extra={"config_digest": digest})
    print(f"wrote {args.out}: {len(wf.phi_x)} rf steps per axis, {len(wf.phi_uw)} uw steps")
    return 0


def cmd_simulate(args) -> int:
    resolved = {
        "cmd": "simulate",
        "waveforms": str(args.waveforms),
        "params": str(args.params),
        "state": str(args.state) if args.state else args.state_kind,
        "state_seed": args.state_seed,
        "K": args.K,
        "sigma": args.sigma,
        "noise_seed": args.noise_seed,
        "sample_dt_us": args.sample_dt_us,
        "T_ms": args.T_ms,
    }
    digest = io.config_digest(resolved)
    T_us = args.T_ms * 1000.0 if args.T_ms is not None else None
    _, _, _, series = _series_from_files(args.waveforms, args.params, args.sample_dt_us, T_us)
    rho0 = _load_state(args, dim=series.dim)
    record = synthesize_record(rho0, series, args.K, args.sigma, args.noise_seed)
    io.save_record(args.out, record, digest=digest)
    print(f"wrote {args.out}: {len(record)} samples")
    return 0


def cmd_reconstruct(args) -> int:
    record = io.load_record(args.record)
    K = args.K if args.K is not None else record.K
    _, _, _, series = _series_from_files(
        args.waveforms, args.params, args.sample_dt_us, record.times_us[-1]
    )
    basis = hermitian_basis(series.dim)
    design = design_matrix(series, basis, K)
    if len(design) != len(record):
        raise SystemExit(
            f"series has {len(design)} samples but record has {len(record)}; "
            "check sample spacing"
        )
    solver = _solver_from_args(args)
    resolved = {
        "cmd": "reconstruct",
        "record": str(args.record),
        "waveforms": str(args.waveforms),
        "params": str(args.params),
        "estimator": args.estimator,
        "epsilon": args.epsilon,
        "epsilon_rule": str(args.epsilon_rule) if args.epsilon_rule else None,
        "K": K,
    }
    digest = io.config_digest(resolved)
    try:
        if args.estimator == "ls":
            est = solve_ls(record, design, solver)
        else:
            eps = args.epsilon
            if eps is None:
                rule = io.load_epsilon_rule(args.epsilon_rule)
                eps = rule(len(record))
            est = solve_cs(record, design, eps, solver)
    except EstimatorError as exc:
        return _fail_solver(exc)
    io.save_estimate(args.out, est, digest=digest)
    line = (
        f"wrote {args.out}: estimator={est.estimator} delta={est.delta:.6g} "
        f"iterations={est.iterations} converged={est.converged}"
    )
    if args.truth:
        psi = io.load_state_vector(args.truth)
        line += f" fidelity={fidelity(psi, est.rho):.6f}"
    print(line)
    return 0


def cmd_calibrate_epsilon(args) -> int:
    _, _, _, series = _series_from_files(args.waveforms, args.params, args.sample_dt_us)
    rho0 = _load_state(args, dim=series.dim)
    w = np.linalg.eigvalsh(rho0)
    if w.max() < 1 - 1e-9:
        raise SystemExit("calibration state must be pure")
    vecs = np.linalg.eigh(rho0)[1]
    psi = vecs[:, -1]
    T_grid_us = [1000.0 * t for t in args.T_grid_ms]
    resolved = {
        "cmd": "calibrate-epsilon",
        "state": str(args.state) if args.state else args.state_kind,
        "state_seed": args.state_seed,
        "K": args.K,
        "sigma": args.sigma,
        "T_grid_ms": list(args.T_grid_ms),
        "seed": args.seed,
    }
    digest = io.config_digest(resolved)
    try:
        rule = calibrate_epsilon(psi, series, args.K, args.sigma, T_grid_us, args.seed)
    except EstimatorError as exc:
        return _fail_solver(exc)
    io.save_epsilon_rule(args.out, rule, digest=digest)
    print(f"wrote {args.out}: slope={rule.slope:.6g} intercept={rule.intercept:.6g}")
    return 0


def _suite_config_from_args(args) -> SuiteConfig:
    if args.config:
        cfg = io.payload_suite_config(io.load_json(args.config))
    else:
        cfg = SuiteConfig()
    overrides = {}
    if args.n_states is not None:
        overrides["n_states"] = args.n_states
    if args.sigma is not None:
        overrides["sigma"] = args.sigma
    if args.K is not None:
        overrides["K"] = args.K
    if args.T_total_ms is not None:
        overrides["T_total_us"] = args.T_total_ms * 1000.0
    if args.T_grid_ms is not None:
        overrides["T_grid_us"] = tuple(1000.0 * t for t in args.T_grid_ms)
    if args.cal_T_grid_ms is not None:
        overrides["calibration_T_grid_us"] = tuple(1000.0 * t for t in args.cal_T_grid_ms)
    if args.seed_states is not None:
        overrides["seed_states"] = args.seed_states
    if args.seed_noise is not None:
        overrides["seed_noise"] = args.seed_noise
    if args.seed_waveforms is not None:
        overrides["seed_waveforms"] = args.seed_waveforms
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _write_suite_outputs(outdir: Path, result, digest: str, fit_window_ms: float) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    io.save_curves(outdir / "curves.csv", result.curves, digest=digest)
    io.save_per_state(outdir / "per_state.csv", result.curves, digest=digest)
    fits = []
    window_us = fit_window_ms * 1000.0
    for name, mean in (("cs", result.curves.mean_cs), ("ls", result.curves.mean_ls)):
        try:
            fits.append(
                fit_exponential(result.curves.T_us, mean, window_us, estimator=name)
            )
        except Exception:
            pass
    io.save_fits(outdir / "fits.csv", fits, digest=digest)
    if result.epsilon_rule is not None:
        io.save_epsilon_rule(outdir / "epsilon_rule.json", result.epsilon_rule, digest=digest)


def cmd_suite(args) -> int:
    cfg = _suite_config_from_args(args)
    payload = io.suite_config_payload(cfg)
    digest = io.config_digest({"cmd": "suite", "config": payload})
    result = run_suite(cfg, n_threads=args.threads)
    outdir = Path(args.outdir)
    _write_suite_outputs(outdir, result, digest, args.fit_window_ms)
    manifest = {
        "cmd": "suite",
        "config": payload,
        "config_digest": digest,
        "errors": [list(e) for e in result.errors],
    }
    io.save_json(outdir / "manifest.json", manifest)
    print(f"wrote suite outputs to {outdir} ({len(result.errors)} solver errors)")
    return 0


def cmd_mismatch(args) -> int:
    cfg = _suite_config_from_args(args)
    if not cfg.truth.inhomog.enabled:
        truth = DynamicsModel(
            params=cfg.truth.params,
            inhomog=replace(cfg.truth.inhomog, enabled=True),
        )
        cfg = replace(cfg, truth=truth)
    payload = io.suite_config_payload(cfg)
    digest = io.config_digest({"cmd": "mismatch", "config": payload})
    result = mismatch_experiment(cfg, n_threads=args.threads)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    io.save_curves(outdir / "curves_accurate.csv", result.suite_accurate.curves, digest=digest)
    io.save_curves(
        outdir / "curves_mismatched.csv", result.suite_mismatched.curves, digest=digest
    )
    io.save_eta(outdir / "eta.csv", result.eta, digest=digest)
    manifest = {
        "cmd": "mismatch",
        "config": payload,
        "config_digest": digest,
        "errors_accurate": [list(e) for e in result.suite_accurate.errors],
        "errors_mismatched": [list(e) for e in result.suite_mismatched.errors],
    }
    io.save_json(outdir / "manifest.json", manifest)
    print(f"wrote mismatch outputs to {outdir}")
    return 0


def cmd_fit(args) -> int:
    table = io.load_curves_table(args.curves)
    T_us = table["T_ms"] * 1000.0
    digest = io.config_digest(
        {"cmd": "fit", "curves": str(args.curves), "window_ms": args.window_ms}
    )
    fits = []
    for name, col in (("cs", "Fbar_CS"), ("ls", "Fbar_LS")):
        if col in table:
            fits.append(
                fit_exponential(T_us, table[col], args.window_ms * 1000.0, estimator=name)
            )
    io.save_fits(args.out, fits, digest=digest)
    for fit in fits:
        print(f"{fit.estimator}: tau={fit.tau_us / 1000.0:.4f} ms rel_residual={fit.rel_residual:.4f}")
    return 0


def _add_state_args(p):
    p.add_argument("--state", help="state file (vector or density matrix)")
    p.add_argument(
        "--state-kind", default="haar", choices=["haar", "mixed", "stretched"],
        help="named initial state when no file is given",
    )
    p.add_argument("--state-seed", type=int, default=1, help="seed for --state-kind haar")


def _add_series_args(p):
    p.add_argument("--waveforms", required=True, help="waveform file")
    p.add_argument("--params", required=True, help="control parameter file")
    p.add_argument("--sample-dt-us", type=float, default=1.0)


def _add_suite_args(p):
    p.add_argument("--config", help="suite config file (flags override)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--fit-window-ms", type=float, default=1.0)
    p.add_argument("--n-states", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--K", type=float)
    p.add_argument("--T-total-ms", type=float)
    p.add_argument("--T-grid-ms", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--cal-T-grid-ms", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--seed-states", type=int)
    p.add_argument("--seed-noise", type=int)
    p.add_argument("--seed-waveforms", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spintomo",
        description="Continuous-measurement spin tomography simulation and reconstruction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-waveforms", help="draw random phase waveforms")
    p.add_argument("--T-ms", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_waveforms)

    p = sub.add_parser("simulate", help="synthesize a measurement record")
    _add_series_args(p)
    _add_state_args(p)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--T-ms", type=float, help="truncate the series to this duration")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="estimate the state from a record")
    p.add_argument("--record", required=True)
    _add_series_args(p)
    p.add_argument("--estimator", required=True, choices=["ls", "cs"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epsilon-rule", help="threshold rule file (used when --epsilon absent)")
    p.add_argument("--K", type=float, help="override the record's gain")
    p.add_argument("--truth", help="state-vector file; prints fidelity when given")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("calibrate-epsilon", help="fit the residual threshold rule")
    _add_series_args(p)
    _add_state_args(p)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument(
        "--T-grid-ms", type=lambda s: [float(v) for v in s.split(",")], required=True
    )
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_epsilon)

    p = sub.add_parser("suite", help="run the random-state evaluation suite")
    _add_suite_args(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("mismatch", help="rerun a suite with the inhomogeneity left out")
    _add_suite_args(p)
    p.set_defaults(func=cmd_mismatch)

    p = sub.add_parser("fit", help="fit the rise time constant of saved curves")
    p.add_argument("--curves", required=True)
    p.add_argument("--window-ms", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "reconstruct" and args.estimator == "cs":
        if args.epsilon is None and args.epsilon_rule is None:
            parser.error("--estimator cs needs --epsilon or --epsilon-rule")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
