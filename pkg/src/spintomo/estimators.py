"""Reconstruction of the initial state from a measurement record.

Two convex estimators over the positive-semidefinite cone:

* least squares: minimize the squared misfit Delta(rho) = ||M - A r||^2
  subject to Tr(rho) = 1, rho >= 0, solved by accelerated projected
  gradient with a spectral projection onto the trace-one PSD set;

* trace minimization: minimize Tr(rho) subject to Delta(rho) <= epsilon,
  rho >= 0, a convex surrogate for rank minimization.  Solved along the
  Lagrangian path min Delta + mu Tr(rho) with mu found by bisection so
  the residual lands on epsilon; the result is renormalized to unit
  trace.

Both work in the coefficient space of an orthonormal Hermitian operator
basis, where the Frobenius geometry of matrices is the Euclidean
geometry of coefficients, so spectral projections can be applied to the
reconstructed matrix and mapped back without distortion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lapack

from .records import (
    DesignMatrix,
    MeasurementRecord,
    design_matrix,
    synthesize_record,
    truncate_record,
)
from .spin_system import (
    OperatorBasis,
    check_hermitian,
    fidelity,
    hermitian_basis,
    pure_density,
)

_L_MARGIN = 1.05  # headroom on the power-iteration Lipschitz estimate


class EstimatorError(Exception):
    """Base class for reconstruction failures."""

    code = "estimator_error"


class InfeasibleEpsilonError(EstimatorError):
    """epsilon is below the smallest attainable residual."""

    code = "infeasible_epsilon"


class ZeroStateError(EstimatorError):
    """epsilon admits rho = 0, so the trace-minimal solution is degenerate."""

    code = "zero_state"


class CalibrationError(EstimatorError):
    """No usable epsilon found anywhere in the calibration bracket."""

    code = "calibration_failed"


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 20000
    tol: float = 1e-9  # relative objective tolerance
    kkt_tol: float = 1e-7  # projected-gradient norm target, relative to ||A^T M||
    power_iters: int = 50
    restart: bool = True
    bisect_rel_tol: float = 0.01  # |Delta - epsilon| / epsilon target
    max_bisect: int = 60

    def __post_init__(self):
        if self.tol <= 0 or self.kkt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class Estimate:
    """Reconstructed state plus solver diagnostics."""

    rho: np.ndarray
    delta: float  # squared residual at rho
    iterations: int
    converged: bool
    estimator: str
    mu: float | None = None  # CS: active trace multiplier
    trace_pre: float | None = None  # CS: trace before renormalization


@dataclass(frozen=True)
class EpsilonRule:
    """Residual threshold as a function of record length: eps(N) = a N + b."""

    slope: float
    intercept: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("slope must be positive")

    def __call__(self, n_samples: int) -> float:
        return self.slope * n_samples + self.intercept


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex.

    Sorted-threshold rule: find the largest k such that shifting the top-k
    entries by a common offset lands them on the simplex, clip the rest.
    """
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, len(v) + 1)
    cond = u - (css - 1.0) / idx > 0
    k = int(np.nonzero(cond)[0][-1])
    theta = (css[k] - 1.0) / (k + 1)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def project_psd(h: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clip negative eigenvalues to zero."""
    check_hermitian(h)
    w, v = np.linalg.eigh((h + np.asarray(h).conj().T) / 2)
    w = np.maximum(w, 0.0)
    return (v * w) @ v.conj().T


def project_density(h: np.ndarray) -> np.ndarray:
    """Frobenius-nearest density matrix: project eigenvalues onto the simplex."""
    check_hermitian(h)
    w, v = np.linalg.eigh((h + np.asarray(h).conj().T) / 2)
    lam = simplex_project(w)
    return (v * lam) @ v.conj().T


def residual_delta(rho: np.ndarray, record: MeasurementRecord, design: DesignMatrix) -> float:
    """Squared misfit Delta = ||M - A expand(rho)||^2."""
    if len(record) != len(design):
        raise ValueError(f"record length {len(record)} != design rows {len(design)}")
    r = design.basis.expand(rho)
    resid = record.values - design.A @ r
    return float(resid @ resid)


def _lambda_max(g: np.ndarray, iters: int) -> float:
    n = g.shape[0]
    v = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(iters):
        w = g @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(v @ (g @ v))


def _eigh_fast(h: np.ndarray):
    w, v, info = lapack.zheevd(h)
    if info != 0:
        w, v = np.linalg.eigh(h)
    return w, v


def _density_projector(basis: OperatorBasis):
    """Spectral projection onto {rho >= 0, Tr rho = 1} in coefficient space."""

    def project(r):
        w, v = _eigh_fast(basis.reconstruct(r))
        lam = simplex_project(w)
        return basis.expand((v * lam) @ v.conj().T)

    return project


def _psd_projector(basis: OperatorBasis):
    """Spectral projection onto the PSD cone in coefficient space."""

    def project(r):
        w, v = _eigh_fast(basis.reconstruct(r))
        np.maximum(w, 0.0, out=w)
        return basis.expand((v * w) @ v.conj().T)

    return project


def _apg_quadratic(g, h, const, lin, project, x0, lam, config, history=None):
    """Minimize f(r) = r^T g r - 2 h^T r + const [+ lin . r] over a convex set.

    Accelerated projected gradient with function-value restart; returns
    (best iterate, best objective, iterations, converged).  Every iterate
    is a projection output, so the best iterate is always feasible.

    Convergence: once the objective stops improving by more than the
    relative tolerance, stationarity is verified directly by taking one
    plain projected-gradient step and measuring the gradient-mapping norm
    against ``kkt_tol * ||h||``.
    """
    step = 1.0 / max(2.0 * lam * _L_MARGIN, 1e-300)
    pg_target = config.kkt_tol * max(np.linalg.norm(h), 1e-300)

    def fval(r, gr):
        # objective from the cached product gr = g @ r
        val = float(r @ gr - 2.0 * (h @ r) + const)
        if lin is not None:
            val += float(lin @ r)
        return max(val, 0.0)

    def gradient(r, gr):
        out = 2.0 * (gr - h)
        if lin is not None:
            out = out + lin
        return out

    x = project(np.asarray(x0, dtype=float))
    gx = g @ x
    x_prev, gx_prev = x, gx
    f_x = fval(x, gx)
    best_x, best_f = x, f_x
    tol_abs = config.tol * max(f_x, 1e-300)
    t = 1.0
    it = 0
    for it in range(1, config.max_iter + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        y = x + beta * (x - x_prev)
        gy = gx + beta * (gx - gx_prev)  # g @ y, by linearity
        base = y
        x_new = project(y - step * gradient(y, gy))
        gx_new = g @ x_new
        f_new = fval(x_new, gx_new)
        if config.restart and f_new > f_x:
            t_next = 1.0
            base = x
            x_new = project(x - step * gradient(x, gx))
            gx_new = g @ x_new
            f_new = fval(x_new, gx_new)
        improved = f_new < best_f - tol_abs
        if f_new < best_f:
            best_x, best_f = x_new, f_new
        if history is not None:
            history.append(best_f)
        x_prev, gx_prev, x, gx, t, f_x = x, gx, x_new, gx_new, t_next, f_new
        if not improved:
            gm = np.linalg.norm(x_new - base) / step
            if gm <= pg_target:
                x_chk = project(x_new - step * gradient(x_new, gx_new))
                if np.linalg.norm(x_new - x_chk) / step <= pg_target:
                    g_chk = g @ x_chk
                    f_chk = fval(x_chk, g_chk)
                    if f_chk <= best_f:
                        best_x, best_f = x_chk, f_chk
                    return best_x, best_f, it, True
    return best_x, best_f, it, False


def _gram(design: DesignMatrix, gram: np.ndarray | None) -> np.ndarray:
    if gram is not None:
        return gram
    return design.A.T @ design.A


def _check_aligned(record: MeasurementRecord, design: DesignMatrix) -> None:
    if len(record) == 0:
        raise ValueError("empty record")
    if len(record) != len(design):
        raise ValueError(f"record length {len(record)} != design rows {len(design)}")


def solve_ls(
    record: MeasurementRecord,
    design: DesignMatrix,
    config: SolverConfig | None = None,
    gram: np.ndarray | None = None,
    lam: float | None = None,
    history=None,
) -> Estimate:
    """Least-squares estimate over {rho >= 0, Tr(rho) = 1}.

    Starts from the maximally mixed state; with a rank-deficient design
    the returned iterate is the one reached from that start, which makes
    short-record estimates deterministic.  ``gram`` and ``lam`` accept
    precomputed A^T A and its largest eigenvalue for repeated solves
    against one design.
    """
    config = config or SolverConfig()
    _check_aligned(record, design)
    basis = design.basis
    m = record.values
    g = _gram(design, gram)
    h = design.A.T @ m
    const = float(m @ m)
    if lam is None:
        lam = _lambda_max(g, config.power_iters)

    x0 = np.zeros(basis.size)
    x0[0] = 1.0 / math.sqrt(basis.dim)
    x, _, iters, converged = _apg_quadratic(
        g, h, const, None, _density_projector(basis), x0, lam, config, history=history
    )
    rho = project_density(basis.reconstruct(x))
    resid = m - design.A @ basis.expand(rho)
    return Estimate(
        rho=rho,
        delta=float(resid @ resid),
        iterations=iters,
        converged=converged,
        estimator="ls",
    )


def solve_cs(
    record: MeasurementRecord,
    design: DesignMatrix,
    epsilon: float,
    config: SolverConfig | None = None,
    gram: np.ndarray | None = None,
    lam: float | None = None,
    history=None,
) -> Estimate:
    """Trace-minimizing estimate with residual constraint Delta <= epsilon.

    Solves min Delta + mu Tr(rho) over the PSD cone, bisecting mu until
    the residual matches epsilon within ``config.bisect_rel_tol``, then
    renormalizes to unit trace.  The search solves the intermediate
    penalized problems at relaxed precision and polishes the final one at
    full precision.  Raises ZeroStateError when rho = 0 is feasible
    (epsilon >= ||M||^2) and InfeasibleEpsilonError when epsilon is below
    the attainable residual floor.
    """
    config = config or SolverConfig()
    _check_aligned(record, design)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    basis = design.basis
    m = record.values
    const = float(m @ m)
    if const <= epsilon:
        raise ZeroStateError(
            f"epsilon={epsilon} admits the zero matrix (||M||^2={const}); cannot renormalize"
        )
    g = _gram(design, gram)
    h = design.A.T @ m
    if lam is None:
        lam = _lambda_max(g, config.power_iters)
    sqrt_d = math.sqrt(basis.dim)
    project = _psd_projector(basis)
    relaxed = replace(
        config,
        kkt_tol=config.kkt_tol * 50,
        max_iter=max(config.max_iter // 4, 500),
    )
    total = 0
    last_ok = True

    def inner(mu, x_start, cfg):
        nonlocal total, last_ok
        lin = np.zeros(basis.size)
        lin[0] = mu * sqrt_d
        x, _, iters, ok = _apg_quadratic(
            g, h, const, lin, project, x_start, lam, cfg, history=history
        )
        total += iters
        last_ok = ok
        delta = max(float(x @ (g @ x) - 2.0 * (h @ x) + const), 0.0)
        return x, delta

    # Above mu_zero the penalized minimizer is exactly zero: the gradient
    # of the objective at 0, as a matrix, is mu I - 2 reconstruct(h),
    # which is PSD iff mu >= lambda_max(2 reconstruct(h)).
    mu_zero = float(np.linalg.eigvalsh(basis.reconstruct(2.0 * h)).max())
    if mu_zero <= 0:
        raise InfeasibleEpsilonError(
            "no positive direction reduces the residual from zero; "
            f"residual floor ||M||^2={const} exceeds epsilon={epsilon}"
        )

    rel = config.bisect_rel_tol
    # expand mu downward until the residual drops to (or below) epsilon;
    # Delta(mu) collapses onto its floor quadratically as mu -> 0, so a
    # stalling residual still above epsilon means epsilon is unattainable
    mu_hi = mu_zero
    mu = mu_zero / 4.0
    x = np.zeros(basis.size)
    delta_prev = const
    stagnant = 0
    while True:
        x, delta = inner(mu, x, relaxed)
        if delta <= epsilon * (1.0 + rel):
            mu_lo = mu
            break
        stagnant = stagnant + 1 if delta > delta_prev * (1.0 - 1e-3) else 0
        delta_prev = delta
        mu_hi = mu
        mu /= 4.0
        if stagnant >= 3 or mu < mu_zero * 1e-16:
            if delta > 1.5 * epsilon:
                # the floor estimate is well above epsilon; no tight
                # confirmation needed
                raise InfeasibleEpsilonError(
                    f"attainable residual floor near {delta} exceeds epsilon={epsilon}"
                )
            x, delta = inner(0.0, x, config)
            if delta > epsilon * (1.0 + rel):
                raise InfeasibleEpsilonError(
                    f"attainable residual floor {delta} exceeds epsilon={epsilon}"
                )
            mu_lo = 0.0
            break

    mu_star, x_star, delta_star = mu_lo, x, delta

    def bisect(mu_lo, mu_hi, mu_star, x_star, delta_star, cfg, steps):
        x = x_star
        for _ in range(steps):
            if abs(delta_star - epsilon) <= rel * epsilon:
                break
            mu = math.sqrt(mu_lo * mu_hi) if mu_lo > 0 else mu_hi / 2.0
            x, delta = inner(mu, x, cfg)
            if abs(delta - epsilon) < abs(delta_star - epsilon):
                mu_star, x_star, delta_star = mu, x, delta
            if delta > epsilon:
                mu_hi = mu
            else:
                mu_lo = mu
        return mu_lo, mu_hi, mu_star, x_star, delta_star

    mu_lo, mu_hi, mu_star, x_star, delta_star = bisect(
        mu_lo, mu_hi, mu_star, x_star, delta_star, relaxed, config.max_bisect
    )
    # polish the chosen multiplier at full precision; if the refined
    # residual drifts out of the window, finish with tight bisection steps
    # and polish whatever incumbent they leave
    x_star, delta_star = inner(mu_star, x_star, config)
    if abs(delta_star - epsilon) > rel * epsilon:
        if delta_star > epsilon:
            mu_hi = mu_star
        else:
            mu_lo = mu_star
        _, _, mu_star, x_star, delta_star = bisect(
            mu_lo, mu_hi, mu_star, x_star, delta_star, config, 15
        )
        x_star, delta_star = inner(mu_star, x_star, config)
    solve_ok = last_ok
    bisect_ok = abs(delta_star - epsilon) <= rel * epsilon

    trace_pre = sqrt_d * x_star[0]
    if trace_pre <= 1e-12:
        raise ZeroStateError(
            f"trace-penalized solution collapsed to trace {trace_pre}; cannot renormalize"
        )
    rho_pre = project_psd(basis.reconstruct(x_star))
    rho = rho_pre / np.trace(rho_pre).real
    resid = m - design.A @ basis.expand(rho)
    return Estimate(
        rho=rho,
        delta=float(resid @ resid),
        iterations=total,
        converged=bool(bisect_ok and solve_ok),
        estimator="cs",
        mu=float(mu_star),
        trace_pre=float(trace_pre),
    )


def _golden_max(fn, lo: float, hi: float, n_evals: int):
    """Golden-section maximization of a unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = fn(c1), fn(c2)
    best = (c1, f1) if f1 >= f2 else (c2, f2)
    for _ in range(max(n_evals - 2, 0)):
        if f1 >= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = fn(c1)
            cand = (c1, f1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = fn(c2)
            cand = (c2, f2)
        if cand[1] > best[1]:
            best = cand
    return best


def _scan_then_golden(fn, lo: float, hi: float, n_evals: int, n_scan: int = 8):
    """Coarse log-spaced scan, then golden section around the best point.

    The objective can be undefined (-inf) over whole stretches of the
    bracket where the threshold is unattainable; the scan localizes the
    informative region before the unimodal search runs.
    """
    n_scan = min(n_scan, max(n_evals - 2, 2))
    xs = np.linspace(lo, hi, n_scan)
    vals = [fn(x) for x in xs]
    k = int(np.argmax(vals))
    best = (xs[k], vals[k])
    if not math.isfinite(best[1]):
        return best
    a = xs[k - 1] if k > 0 else xs[0]
    b = xs[k + 1] if k < n_scan - 1 else xs[-1]
    refined = _golden_max(fn, a, b, n_evals - n_scan)
    return refined if refined[1] > best[1] else best


def calibrate_epsilon(
    state: np.ndarray,
    series,
    K: float,
    sigma: float,
    T_grid_us,
    seed,
    basis: OperatorBasis | None = None,
    config: SolverConfig | None = None,
    truth_series=None,
    n_evals: int = 24,
) -> EpsilonRule:
    """Fit the residual threshold rule eps(N) = a N from one calibration state.

    For each record length in the grid, a golden-section search over a
    log-spaced epsilon bracket picks the threshold that maximizes the
    reconstruction fidelity of the calibration state; a least-squares
    line through the optima gives the rule.  ``truth_series`` (when the
    reconstruction model differs from the synthesis model) is used only
    to generate the calibration record.  The search only needs to rank
    candidate thresholds, so its solves run at relaxed precision.

    The intercept is kept at zero unless the affine fit shrinks the
    residual of the proportional fit by more than a factor of two.
    """
    T_grid_us = sorted(float(t) for t in T_grid_us)
    if not T_grid_us:
        raise ValueError("empty calibration grid")
    basis = basis or hermitian_basis(series.dim)
    config = config or SolverConfig()
    search_cfg = replace(
        config,
        kkt_tol=config.kkt_tol * 100,
        max_iter=max(config.max_iter // 4, 500),
    )
    truth = truth_series if truth_series is not None else series
    record_full = synthesize_record(pure_density(state), truth, K, sigma, seed)
    design_full = design_matrix(series, basis, K)

    lengths, optima = [], []
    for T in T_grid_us:
        rec = truncate_record(record_full, T)
        n = len(rec)
        dsg = design_full.head(n)
        g = dsg.A.T @ dsg.A
        lam = _lambda_max(g, config.power_iters)
        norm2 = float(rec.values @ rec.values)
        lo = max(1e-9 * norm2, 1e-14)
        hi = 0.99 * norm2
        if hi <= lo:
            raise CalibrationError(f"record at T={T} us too weak to bracket epsilon")

        def fid_at(log_eps, rec=rec, dsg=dsg, g=g, lam=lam):
            try:
                est = solve_cs(rec, dsg, math.exp(log_eps), search_cfg, gram=g, lam=lam)
            except EstimatorError:
                return -math.inf
            return fidelity(state, est.rho)

        log_best, fid_best = _scan_then_golden(fid_at, math.log(lo), math.log(hi), n_evals)
        if not math.isfinite(fid_best):
            raise CalibrationError(f"no feasible epsilon at T={T} us")
        lengths.append(n)
        optima.append(math.exp(log_best))

    n_arr = np.asarray(lengths, dtype=float)
    e_arr = np.asarray(optima, dtype=float)
    slope = float(n_arr @ e_arr / (n_arr @ n_arr))
    intercept = 0.0
    resid_lin = float(np.linalg.norm(e_arr - slope * n_arr))
    if len(n_arr) >= 3:
        coef = np.polyfit(n_arr, e_arr, 1)
        resid_aff = float(np.linalg.norm(e_arr - np.polyval(coef, n_arr)))
        if coef[0] > 0 and resid_aff < resid_lin / 2.0:
            slope, intercept = float(coef[0]), float(coef[1])
    meta = {
        "K": K,
        "sigma": sigma,
        "T_grid_us": list(T_grid_us),
        "record_lengths": [int(v) for v in lengths],
        "optimal_epsilons": [float(v) for v in optima],
        "fit_residual": resid_lin,
    }
    return EpsilonRule(slope=slope, intercept=intercept, meta=meta)
