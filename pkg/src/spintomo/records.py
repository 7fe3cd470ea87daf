"""Synthetic measurement records and the state-to-record design map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ObservableSeries
from .spin_system import OperatorBasis


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Sampled record M_i = K <probe(t_i)> + sigma * w_i.

    ``noiseless`` keeps the exact signal component when the record was
    synthesized; it is diagnostic only and estimators never read it.
    """

    times_us: np.ndarray
    values: np.ndarray
    K: float
    sigma: float
    noise_seed: int | None = None
    noiseless: np.ndarray | None = None
    provenance: tuple | None = None

    def __post_init__(self):
        t = np.asarray(self.times_us, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be matching 1-d arrays")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("record values must be finite")
        object.__setattr__(self, "times_us", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.times_us)

    def head(self, n: int) -> "MeasurementRecord":
        noiseless = None if self.noiseless is None else self.noiseless[:n]
        return MeasurementRecord(
            times_us=self.times_us[:n],
            values=self.values[:n],
            K=self.K,
            sigma=self.sigma,
            noise_seed=self.noise_seed,
            noiseless=noiseless,
            provenance=self.provenance,
        )


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Linear map from state coefficients to predicted record samples."""

    A: np.ndarray  # (N, d^2) real, A_ia = K Tr(O_i E_a)
    K: float
    basis: OperatorBasis
    provenance: tuple | None = None

    def __len__(self) -> int:
        return len(self.A)

    def head(self, n: int) -> "DesignMatrix":
        return DesignMatrix(A=self.A[:n], K=self.K, basis=self.basis, provenance=self.provenance)


def expectation_series(rho0: np.ndarray, series: ObservableSeries) -> np.ndarray:
    """Expectation values Tr(rho0 O_i) along the series."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (series.dim, series.dim):
        raise ValueError(f"state shape {rho0.shape} does not match series dim {series.dim}")
    n = len(series)
    return np.einsum("nij,ji->n", series.operators, rho0).real.reshape(n)


def synthesize_record(
    rho0: np.ndarray,
    series: ObservableSeries,
    K: float,
    sigma: float,
    seed=None,
) -> MeasurementRecord:
    """Simulate a record from a known state: signal plus white Gaussian noise."""
    if K <= 0:
        raise ValueError("gain K must be positive")
    if sigma < 0:
        raise ValueError("noise level must be non-negative")
    signal = K * expectation_series(rho0, series)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        values = signal + sigma * rng.standard_normal(len(signal))
    else:
        values = signal.copy()
    seed_val = int(seed) if seed is not None and np.isscalar(seed) else None
    return MeasurementRecord(
        times_us=series.times_us.copy(),
        values=values,
        K=K,
        sigma=sigma,
        noise_seed=seed_val,
        noiseless=signal,
        provenance=series.provenance,
    )


def _count_through(times_us: np.ndarray, T_us: float) -> int:
    if T_us <= 0:
        raise ValueError("truncation time must be positive")
    if T_us > times_us[-1] + 1e-9:
        raise ValueError(f"T={T_us} exceeds record duration {times_us[-1]}")
    return int(np.searchsorted(times_us, T_us + 1e-9, side="right"))


def truncate_record(record: MeasurementRecord, T_us: float) -> MeasurementRecord:
    """Keep the samples with t_i <= T."""
    return record.head(_count_through(record.times_us, T_us))


def truncate_series(series: ObservableSeries, T_us: float) -> ObservableSeries:
    """Keep the observables with t_i <= T."""
    return series.head(_count_through(series.times_us, T_us))


def design_matrix(series: ObservableSeries, basis: OperatorBasis, K: float) -> DesignMatrix:
    """Assemble A_ia = K Tr(O_i E_a); reusable across estimators and sweeps.

    The observables are traceless, so the identity column (a = 0) is zero
    in exact arithmetic; it is pinned to exactly zero here rather than
    carrying propagation round-off into the estimators.
    """
    if basis.dim != series.dim:
        raise ValueError(f"basis dim {basis.dim} does not match series dim {series.dim}")
    traces = np.abs(np.einsum("nii->n", series.operators))
    if len(traces) and traces.max() > 1e-8:
        raise ValueError(f"series observables are not traceless (max |trace| {traces.max():.2e})")
    a = K * basis.expand_stack(series.operators)
    a[:, 0] = 0.0
    return DesignMatrix(A=a, K=K, basis=basis, provenance=series.provenance)
