"""File formats: structured-text (JSON) documents and CSV tables.

CSV numeric fields are written with 17 significant digits so that every
float round-trips bit-exactly; JSON numbers rely on Python's
shortest-round-trip float representation, which is also exact.  Output
files produced by the command-line tools embed the digest of the fully
resolved configuration, making reruns byte-comparable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dynamics import ControlParams, ControlWaveforms, InhomogeneityModel
from .estimators import EpsilonRule, Estimate
from .records import MeasurementRecord

BASIS_ORDER_NOTE = "spin blocks in listed order, m ascending within each block"


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_digest(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def save_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


# -- operators and states ---------------------------------------------------

def operator_payload(op: np.ndarray, note: str = BASIS_ORDER_NOTE) -> dict:
    op = np.asarray(op, dtype=complex)
    return {
        "dim": op.shape[0],
        "re": [[float(v) for v in row] for row in op.real],
        "im": [[float(v) for v in row] for row in op.imag],
        "basis_order": note,
    }


def payload_operator(payload: dict) -> np.ndarray:
    d = int(payload["dim"])
    re = np.asarray(payload["re"], dtype=float)
    im = np.asarray(payload["im"], dtype=float)
    if re.shape != (d, d) or im.shape != (d, d):
        raise ValueError(f"matrix blocks do not match dim {d}")
    return re + 1j * im


def save_operator(path, op: np.ndarray, extra: dict | None = None) -> None:
    payload = operator_payload(op)
    if extra:
        payload.update(extra)
    save_json(path, payload)


def load_operator(path) -> np.ndarray:
    return payload_operator(load_json(path))


def save_state_vector(path, psi: np.ndarray, extra: dict | None = None) -> None:
    psi = np.asarray(psi, dtype=complex)
    payload = {
        "dim": psi.size,
        "re": [float(v) for v in psi.real],
        "im": [float(v) for v in psi.imag],
        "basis_order": BASIS_ORDER_NOTE,
    }
    if extra:
        payload.update(extra)
    save_json(path, payload)


def load_state_vector(path) -> np.ndarray:
    payload = load_json(path)
    return np.asarray(payload["re"], dtype=float) + 1j * np.asarray(payload["im"], dtype=float)


# -- waveforms and control parameters ---------------------------------------

def waveforms_payload(wf: ControlWaveforms) -> dict:
    return {
        "T_us": wf.T_us,
        "seed": wf.seed,
        "phi_x": [float(v) for v in wf.phi_x],
        "phi_y": [float(v) for v in wf.phi_y],
        "phi_uw": [float(v) for v in wf.phi_uw],
    }


def payload_waveforms(payload: dict) -> ControlWaveforms:
    return ControlWaveforms(
        T_us=float(payload["T_us"]),
        phi_x=np.asarray(payload["phi_x"], dtype=float),
        phi_y=np.asarray(payload["phi_y"], dtype=float),
        phi_uw=np.asarray(payload["phi_uw"], dtype=float),
        seed=payload.get("seed"),
    )


def save_waveforms(path, wf: ControlWaveforms, extra: dict | None = None) -> None:
    payload = waveforms_payload(wf)
    if extra:
        payload.update(extra)
    save_json(path, payload)


def load_waveforms(path) -> ControlWaveforms:
    return payload_waveforms(load_json(path))


def params_payload(params: ControlParams, inhomog: InhomogeneityModel) -> dict:
    return {
        "omega_rf_rad_per_s": params.omega_rf,
        "omega_uw_rad_per_s": params.omega_uw,
        "detuning_rf_rad_per_s": params.detuning_rf,
        "detuning_uw_rad_per_s": params.detuning_uw,
        "g_ratio": params.g_ratio,
        "inhomogeneity": {
            "enabled": inhomog.enabled,
            "fractional_spread": inhomog.fractional_spread,
            "n_samples": inhomog.n_samples,
            "scheme": inhomog.scheme,
        },
    }


def payload_params(payload: dict) -> tuple[ControlParams, InhomogeneityModel]:
    params = ControlParams(
        omega_rf=float(payload["omega_rf_rad_per_s"]),
        omega_uw=float(payload["omega_uw_rad_per_s"]),
        detuning_rf=float(payload.get("detuning_rf_rad_per_s", 0.0)),
        detuning_uw=float(payload.get("detuning_uw_rad_per_s", 0.0)),
        g_ratio=float(payload.get("g_ratio", -1.0)),
    )
    blk = payload.get("inhomogeneity", {})
    inhomog = InhomogeneityModel(
        enabled=bool(blk.get("enabled", False)),
        fractional_spread=float(blk.get("fractional_spread", 0.01)),
        n_samples=int(blk.get("n_samples", 5)),
        scheme=blk.get("scheme", "gauss-hermite"),
    )
    return params, inhomog


def save_params(path, params: ControlParams, inhomog: InhomogeneityModel) -> None:
    save_json(path, params_payload(params, inhomog))


def load_params(path) -> tuple[ControlParams, InhomogeneityModel]:
    return payload_params(load_json(path))


# -- measurement records -----------------------------------------------------

def record_sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json")


def save_record(path, record: MeasurementRecord, digest: str | None = None) -> None:
    """Write the record CSV plus its metadata sidecar."""
    lines = []
    if digest is not None:
        lines.append(f"# config_digest={digest}")
    lines.append("t_us,M")
    for t, v in zip(record.times_us, record.values):
        lines.append(f"{fmt17(t)},{fmt17(v)}")
    Path(path).write_text("\n".join(lines) + "\n")
    meta = {
        "K": record.K,
        "sigma": record.sigma,
        "noise_seed": record.noise_seed,
        "provenance": list(record.provenance) if record.provenance else None,
    }
    if digest is not None:
        meta["config_digest"] = digest
    save_json(record_sidecar_path(path), meta)


def load_record(path) -> MeasurementRecord:
    times, values = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("t_us"):
            continue
        t, v = line.split(",")
        times.append(float(t))
        values.append(float(v))
    meta_path = record_sidecar_path(path)
    K, sigma, seed, provenance = 1.0, 0.0, None, None
    if meta_path.exists():
        meta = load_json(meta_path)
        K = float(meta.get("K", 1.0))
        sigma = float(meta.get("sigma", 0.0))
        seed = meta.get("noise_seed")
        prov = meta.get("provenance")
        provenance = tuple(prov) if prov else None
    return MeasurementRecord(
        times_us=np.asarray(times),
        values=np.asarray(values),
        K=K,
        sigma=sigma,
        noise_seed=seed,
        provenance=provenance,
    )


# -- estimates and threshold rules -------------------------------------------

def save_estimate(path, estimate: Estimate, digest: str | None = None) -> None:
    payload = operator_payload(estimate.rho)
    payload["diagnostics"] = {
        "estimator": estimate.estimator,
        "delta": estimate.delta,
        "iterations": estimate.iterations,
        "converged": estimate.converged,
        "mu": estimate.mu,
        "trace_pre_normalization": estimate.trace_pre,
    }
    if digest is not None:
        payload["config_digest"] = digest
    save_json(path, payload)


def load_estimate(path) -> Estimate:
    payload = load_json(path)
    diag = payload["diagnostics"]
    return Estimate(
        rho=payload_operator(payload),
        delta=float(diag["delta"]),
        iterations=int(diag["iterations"]),
        converged=bool(diag["converged"]),
        estimator=diag["estimator"],
        mu=diag.get("mu"),
        trace_pre=diag.get("trace_pre_normalization"),
    )


def save_epsilon_rule(path, rule: EpsilonRule, digest: str | None = None) -> None:
    payload = {"slope": rule.slope, "intercept": rule.intercept, "calibration": rule.meta}
    if digest is not None:
        payload["config_digest"] = digest
    save_json(path, payload)


def load_epsilon_rule(path) -> EpsilonRule:
    payload = load_json(path)
    return EpsilonRule(
        slope=float(payload["slope"]),
        intercept=float(payload.get("intercept", 0.0)),
        meta=payload.get("calibration", {}),
    )


# -- suite configuration -------------------------------------------------------

def suite_config_payload(cfg) -> dict:
    return {
        "n_states": cfg.n_states,
        "T_total_us": cfg.T_total_us,
        "T_grid_us": list(cfg.T_grid_us),
        "calibration_T_grid_us": list(cfg.calibration_T_grid_us),
        "sample_dt_us": cfg.sample_dt_us,
        "K": cfg.K,
        "sigma": cfg.sigma,
        "seed_states": cfg.seed_states,
        "seed_noise": cfg.seed_noise,
        "seed_waveforms": cfg.seed_waveforms,
        "truth": params_payload(cfg.truth.params, cfg.truth.inhomog),
        "recon": params_payload(cfg.recon.params, cfg.recon.inhomog),
        "solver": {
            "max_iter": cfg.solver.max_iter,
            "tol": cfg.solver.tol,
            "kkt_tol": cfg.solver.kkt_tol,
            "power_iters": cfg.solver.power_iters,
            "restart": cfg.solver.restart,
            "bisect_rel_tol": cfg.solver.bisect_rel_tol,
            "max_bisect": cfg.solver.max_bisect,
        },
        "calibration_evals": cfg.calibration_evals,
    }


def payload_suite_config(payload: dict):
    from .estimators import SolverConfig
    from .pipeline import DynamicsModel, SuiteConfig

    base = SuiteConfig()
    kwargs = {}
    for key in (
        "n_states",
        "T_total_us",
        "sample_dt_us",
        "K",
        "sigma",
        "seed_states",
        "seed_noise",
        "seed_waveforms",
        "calibration_evals",
    ):
        if key in payload:
            kwargs[key] = payload[key]
    if "T_grid_us" in payload:
        kwargs["T_grid_us"] = tuple(payload["T_grid_us"])
    if "calibration_T_grid_us" in payload:
        kwargs["calibration_T_grid_us"] = tuple(payload["calibration_T_grid_us"])
    for key in ("truth", "recon"):
        if key in payload:
            params, inhomog = payload_params(payload[key])
            kwargs[key] = DynamicsModel(params=params, inhomog=inhomog)
    if "solver" in payload:
        kwargs["solver"] = SolverConfig(**payload["solver"])
    from dataclasses import replace as _replace

    return _replace(base, **kwargs)


# -- suite tables --------------------------------------------------------------

def write_csv(path, header: str, rows, digest: str | None = None) -> None:
    lines = []
    if digest is not None:
        lines.append(f"# config_digest={digest}")
    lines.append(header)
    lines.extend(",".join(fields) for fields in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def save_curves(path, curves, digest: str | None = None) -> None:
    rows = [
        (
            fmt17(T / 1000.0),
            fmt17(fc),
            fmt17(sc),
            fmt17(fl),
            fmt17(sl),
            str(int(n)),
        )
        for T, fc, sc, fl, sl, n in zip(
            curves.T_us, curves.mean_cs, curves.sd_cs, curves.mean_ls, curves.sd_ls, curves.counts
        )
    ]
    write_csv(path, "T_ms,Fbar_CS,sd_CS,Fbar_LS,sd_LS,n_states", rows, digest)


def save_per_state(path, curves, digest: str | None = None) -> None:
    rows = []
    n_eval = curves.per_state_cs.shape[0]
    for i in range(n_eval):
        for j, T in enumerate(curves.T_us):
            rows.append(
                (
                    str(i + 1),
                    fmt17(T / 1000.0),
                    fmt17(curves.per_state_cs[i, j]),
                    fmt17(curves.per_state_ls[i, j]),
                )
            )
    write_csv(path, "state,T_ms,F_CS,F_LS", rows, digest)


def save_eta(path, eta, digest: str | None = None) -> None:
    rows = [
        (fmt17(T / 1000.0), fmt17(ec), fmt17(el))
        for T, ec, el in zip(eta.T_us, eta.eta_cs, eta.eta_ls)
    ]
    write_csv(path, "T_ms,eta_CS,eta_LS", rows, digest)


def save_fits(path, fits, digest: str | None = None) -> None:
    rows = [
        (fit.estimator or "", fmt17(fit.tau_us / 1000.0), fmt17(fit.residual_norm))
        for fit in fits
    ]
    write_csv(path, "estimator,tau_ms,residual", rows, digest)


def load_curves_table(path) -> dict:
    """Read a curves.csv back into arrays keyed by column name."""
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line.split(",")
            continue
        rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"no header found in {path}")
    cols = np.asarray(rows, dtype=float).T if rows else np.empty((len(header), 0))
    return {name: cols[k] for k, name in enumerate(header)}
