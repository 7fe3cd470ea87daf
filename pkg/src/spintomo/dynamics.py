"""Phase-modulated control dynamics and Heisenberg-picture observables.

The control model is a rotating-frame, rotating-wave picture of the
driven cesium ground manifold.  Two rf coils drive Larmor precession in
both hyperfine blocks (with opposite sense, set by ``g_ratio``) and a
microwave tone couples the stretched pair |3,3> <-> |4,4>.  The controls
are three phase waveforms: the rf phases step every 15 us, the microwave
phase every 10 us.  Between steps the Hamiltonian is constant, so the
propagator is a product of exact matrix exponentials.

Units: angular frequencies are rad/s, times are microseconds.  The phase
accumulated over a step of ``dt`` microseconds is ``H * dt * 1e-6``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .spin_system import (
    SpinSpace,
    angular_momentum_ops,
    check_hermitian,
    embed_block,
    probe_observable,
)

RF_STEP_US = 15.0
UW_STEP_US = 10.0
TWO_PI = 2 * math.pi

#: Default drive amplitudes.  Chosen so that a few Rabi cycles fit into
#: 2 ms and the observable set spans operator space within a few ms
#: (verified by the design-rank diagnostic).  Config-overridable.
DEFAULT_OMEGA_RF = TWO_PI * 25e3
DEFAULT_OMEGA_UW = TWO_PI * 27.5e3

RENORMALIZE_EVERY = 500  # polar-correct the accumulated propagator


def _digest(payload) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _n_steps(T_us: float, step_us: float) -> int:
    return int(math.ceil(T_us / step_us - 1e-9))


@dataclass(frozen=True)
class ControlWaveforms:
    """The three random phase waveforms driving one tomography run."""

    T_us: float
    phi_x: np.ndarray  # rf x-coil phases, one per 15 us step
    phi_y: np.ndarray  # rf y-coil phases, one per 15 us step
    phi_uw: np.ndarray  # microwave phases, one per 10 us step
    seed: int | None = None

    def __post_init__(self):
        if self.T_us <= 0:
            raise ValueError(f"duration must be positive, got {self.T_us}")
        n_rf = _n_steps(self.T_us, RF_STEP_US)
        n_uw = _n_steps(self.T_us, UW_STEP_US)
        for name, arr, n in (
            ("phi_x", self.phi_x, n_rf),
            ("phi_y", self.phi_y, n_rf),
            ("phi_uw", self.phi_uw, n_uw),
        ):
            arr = np.asarray(arr, dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have {n} entries for T={self.T_us} us")
            if np.any(arr < 0) or np.any(arr >= TWO_PI):
                raise ValueError(f"{name} phases must lie in [0, 2*pi)")

    def digest(self) -> str:
        return _digest(
            {
                "T_us": self.T_us,
                "phi_x": self.phi_x.tolist(),
                "phi_y": self.phi_y.tolist(),
                "phi_uw": self.phi_uw.tolist(),
            }
        )


def random_waveforms(T_us: float, seed) -> ControlWaveforms:
    """Draw phases i.i.d. uniform on [0, 2*pi), deterministically per seed."""
    if T_us <= 0:
        raise ValueError(f"duration must be positive, got {T_us}")
    rng = np.random.default_rng(seed)
    n_rf = _n_steps(T_us, RF_STEP_US)
    n_uw = _n_steps(T_us, UW_STEP_US)
    phi_x = rng.uniform(0.0, TWO_PI, n_rf)
    phi_y = rng.uniform(0.0, TWO_PI, n_rf)
    phi_uw = rng.uniform(0.0, TWO_PI, n_uw)
    seed_val = int(seed) if np.isscalar(seed) else None
    return ControlWaveforms(T_us=T_us, phi_x=phi_x, phi_y=phi_y, phi_uw=phi_uw, seed=seed_val)


@dataclass(frozen=True)
class ControlParams:
    """Drive amplitudes and detunings (rad/s) plus the relative Larmor sense."""

    omega_rf: float = DEFAULT_OMEGA_RF
    omega_uw: float = DEFAULT_OMEGA_UW
    detuning_rf: float = 0.0
    detuning_uw: float = 0.0
    g_ratio: float = -1.0

    def __post_init__(self):
        if self.omega_rf < 0 or self.omega_uw < 0:
            raise ValueError("drive amplitudes must be non-negative")

    def digest(self) -> str:
        return _digest(
            {
                "omega_rf": self.omega_rf,
                "omega_uw": self.omega_uw,
                "detuning_rf": self.detuning_rf,
                "detuning_uw": self.detuning_uw,
                "g_ratio": self.g_ratio,
            }
        )


@dataclass(frozen=True)
class InhomogeneityModel:
    """Quadrature average over a spread of the rf amplitude.

    Node j scales omega_rf by (1 + fractional_spread * x_j).  The default
    scheme places the nodes at Gauss-Hermite points of a standard normal;
    "uniform" uses equally weighted, equally spaced nodes on [-2, 2].
    """

    enabled: bool = False
    fractional_spread: float = 0.01
    n_samples: int = 5
    scheme: str = "gauss-hermite"

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.scheme not in ("gauss-hermite", "uniform"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.enabled:
            return np.zeros(1), np.ones(1)
        if self.n_samples == 1:
            return np.zeros(1), np.ones(1)
        if self.scheme == "gauss-hermite":
            # probabilists' nodes: weight function exp(-x^2/2)
            x, w = np.polynomial.hermite_e.hermegauss(self.n_samples)
        else:
            x = np.linspace(-2.0, 2.0, self.n_samples)
            w = np.ones(self.n_samples)
        return x, w / w.sum()

    def digest(self) -> str:
        return _digest(
            {
                "enabled": self.enabled,
                "fractional_spread": self.fractional_spread,
                "n_samples": self.n_samples,
                "scheme": self.scheme,
            }
        )


@dataclass(frozen=True, eq=False)
class ObservableSeries:
    """Heisenberg-picture observables O_i sampled on a regular time grid."""

    times_us: np.ndarray  # (N,)
    operators: np.ndarray  # (N, d, d) complex
    provenance: tuple[str, str, str]  # waveform, params, inhomogeneity digests

    def __len__(self) -> int:
        return len(self.times_us)

    @property
    def dim(self) -> int:
        return self.operators.shape[1]

    def head(self, n: int) -> "ObservableSeries":
        return ObservableSeries(self.times_us[:n], self.operators[:n], self.provenance)


class _SpaceOps:
    """Embedded operator bundle for one two-block space."""

    def __init__(self, space: SpinSpace):
        if len(space.spins) != 2:
            raise ValueError("control model needs a two-block space")
        f_lo, f_hi = space.spins
        lx, ly, lz = angular_momentum_ops(f_lo)
        ux, uy, uz = angular_momentum_ops(f_hi)
        self.fx_lo = embed_block(lx, space, f_lo)
        self.fy_lo = embed_block(ly, space, f_lo)
        self.fz_lo = embed_block(lz, space, f_lo)
        self.fx_hi = embed_block(ux, space, f_hi)
        self.fy_hi = embed_block(uy, space, f_hi)
        self.fz_hi = embed_block(uz, space, f_hi)
        i_lo = space.index_of(f_lo, f_lo)
        i_hi = space.index_of(f_hi, f_hi)
        self.raise_stretched = np.zeros((space.dim, space.dim), dtype=complex)
        self.raise_stretched[i_hi, i_lo] = 1.0  # |f_hi,f_hi><f_lo,f_lo|
        self.proj_diff = np.zeros((space.dim, space.dim), dtype=complex)
        self.proj_diff[i_hi, i_hi] = 0.5
        self.proj_diff[i_lo, i_lo] = -0.5
        self.probe = probe_observable(space)


_SPACE_CACHE: dict[SpinSpace, _SpaceOps] = {}


def _space_ops(space: SpinSpace) -> _SpaceOps:
    ops = _SPACE_CACHE.get(space)
    if ops is None:
        ops = _SPACE_CACHE[space] = _SpaceOps(space)
    return ops


def _phase_index(t_us: float, step_us: float, n: int) -> int:
    return min(int(math.floor((t_us + 1e-9) / step_us)), n - 1)


def hamiltonian_at(
    waveforms: ControlWaveforms,
    params: ControlParams,
    t_us: float,
    space: SpinSpace | None = None,
) -> np.ndarray:
    """The (Hermitian) control Hamiltonian at time t, in rad/s."""
    if not 0 <= t_us < waveforms.T_us:
        raise ValueError(f"time {t_us} outside [0, {waveforms.T_us})")
    space = space or SpinSpace.cesium()
    ops = _space_ops(space)
    phx = waveforms.phi_x[_phase_index(t_us, RF_STEP_US, len(waveforms.phi_x))]
    phy = waveforms.phi_y[_phase_index(t_us, RF_STEP_US, len(waveforms.phi_y))]
    phu = waveforms.phi_uw[_phase_index(t_us, UW_STEP_US, len(waveforms.phi_uw))]
    w_rf, g = params.omega_rf, params.g_ratio
    h = w_rf * (math.cos(phx) * ops.fx_hi + math.sin(phx) * ops.fy_hi)
    h += g * w_rf * (math.cos(phx) * ops.fx_lo - math.sin(phx) * ops.fy_lo)
    h += w_rf * (math.cos(phy) * ops.fy_hi + math.sin(phy) * ops.fx_hi)
    h += g * w_rf * (math.cos(phy) * ops.fy_lo - math.sin(phy) * ops.fx_lo)
    uw = 0.5 * params.omega_uw * np.exp(1j * phu) * ops.raise_stretched
    h += uw + uw.conj().T
    if params.detuning_rf:
        h += params.detuning_rf * (ops.fz_hi + g * ops.fz_lo)
    if params.detuning_uw:
        h += params.detuning_uw * ops.proj_diff
    return h


def propagator_step(h: np.ndarray, dt_us: float) -> np.ndarray:
    """Exact unitary exp(-i H dt) via eigendecomposition (H in rad/s, dt in us)."""
    check_hermitian(h)
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    phase = np.exp(-1j * w * dt_us * 1e-6)
    return (v * phase) @ v.conj().T


def _polar_unitary(u: np.ndarray) -> np.ndarray:
    w, _, vh = np.linalg.svd(u)
    return w @ vh


def _check_sampling(sample_dt_us: float) -> None:
    if sample_dt_us <= 0:
        raise ValueError("sample_dt must be positive")
    for step in (RF_STEP_US, UW_STEP_US):
        ratio = step / sample_dt_us
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"sample_dt={sample_dt_us} us does not align with the {step} us phase grid"
            )


def evolve_observables(
    waveforms: ControlWaveforms,
    params: ControlParams,
    sample_dt_us: float = 1.0,
    T_us: float | None = None,
    space: SpinSpace | None = None,
) -> ObservableSeries:
    """Propagate the probe observable through the control dynamics.

    Returns O_i = U(t_i)^dag O_0 U(t_i) on the grid t_i = i * sample_dt,
    i = 0 .. floor(T / sample_dt).  The propagator accumulates exact
    per-segment exponentials; within one segment the Hamiltonian is
    constant, so the only error source is round-off, which the periodic
    polar correction keeps below drift tolerance.
    """
    T_us = waveforms.T_us if T_us is None else T_us
    if T_us <= 0:
        raise ValueError("duration must be positive")
    if T_us > waveforms.T_us + 1e-9:
        raise ValueError(f"T={T_us} exceeds waveform duration {waveforms.T_us}")
    _check_sampling(sample_dt_us)
    space = space or SpinSpace.cesium()
    ops = _space_ops(space)
    o0 = ops.probe

    n = int(math.floor(T_us / sample_dt_us + 1e-9)) + 1
    times = np.arange(n) * sample_dt_us
    obs = np.empty((n, space.dim, space.dim), dtype=complex)
    obs[0] = o0

    u = np.eye(space.dim, dtype=complex)
    seg_key = None
    step_u = None
    for i in range(1, n):
        t0 = (i - 1) * sample_dt_us
        key = (
            _phase_index(t0, RF_STEP_US, len(waveforms.phi_x)),
            _phase_index(t0, UW_STEP_US, len(waveforms.phi_uw)),
        )
        if key != seg_key:
            h = hamiltonian_at(waveforms, params, t0, space)
            step_u = propagator_step(h, sample_dt_us)
            seg_key = key
        u = step_u @ u
        if i % RENORMALIZE_EVERY == 0:
            u = _polar_unitary(u)
        oi = u.conj().T @ o0 @ u
        obs[i] = (oi + oi.conj().T) / 2

    provenance = (waveforms.digest(), params.digest(), InhomogeneityModel().digest())
    return ObservableSeries(times_us=times, operators=obs, provenance=provenance)


def ensemble_observables(
    waveforms: ControlWaveforms,
    params: ControlParams,
    inhomog: InhomogeneityModel,
    sample_dt_us: float = 1.0,
    T_us: float | None = None,
    space: SpinSpace | None = None,
) -> ObservableSeries:
    """Observable series averaged over the rf-amplitude inhomogeneity.

    The average of unitarily conjugated observables is Hermitian and
    traceless but in general no longer isospectral to the probe.
    """
    nodes, weights = inhomog.nodes_weights()
    series = None
    acc = None
    for x, w in zip(nodes, weights):
        scaled = replace(params, omega_rf=params.omega_rf * (1 + inhomog.fractional_spread * x))
        one = evolve_observables(waveforms, scaled, sample_dt_us, T_us, space)
        if acc is None:
            series, acc = one, w * one.operators
        else:
            acc = acc + w * one.operators
    provenance = (waveforms.digest(), params.digest(), inhomog.digest())
    return ObservableSeries(times_us=series.times_us, operators=acc, provenance=provenance)


def informational_completeness(series: ObservableSeries, basis, K: float):
    """Numerical rank and conditioning of the observable-to-record map.

    Builds A_ia = K Tr(O_i E_a) and returns (rank, condition, singular
    values), where rank counts singular values above 1e-9 * sigma_max and
    the condition number is taken over the traceless columns a >= 1.
    """
    if len(series) == 0:
        raise ValueError("series is empty")
    from .records import design_matrix

    a = design_matrix(series, basis, K).A
    svals = np.linalg.svd(a, compute_uv=False)
    smax = svals[0] if len(svals) else 0.0
    rank = int(np.sum(svals > 1e-9 * smax)) if smax > 0 else 0
    sv_traceless = np.linalg.svd(a[:, 1:], compute_uv=False)
    n_cols = a.shape[1] - 1
    full_rank = len(sv_traceless) == n_cols and sv_traceless.min() > 1e-9 * sv_traceless.max()
    condition = float(sv_traceless.max() / sv_traceless.min()) if full_rank else math.inf
    return rank, condition, svals
