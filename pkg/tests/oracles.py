"""Brute-force search oracles, independent of the package's solvers.

Everything here works by exhaustive evaluation on an iteratively refined
grid; no gradients, no spectral projections.  Hermitian matrices are
parametrized by their raw entries so none of the package's operator
bases enter the computation.
"""

import numpy as np


def refine_minimize(fn, center, halfwidth, rounds, n_points=5, feasible=None, chunk=200_000):
    """Grid-refinement minimizer over a box around ``center``.

    ``fn`` maps an (m, k) array of parameter rows to m objective values;
    ``feasible`` (optional) maps the same to a boolean mask.  The center
    must be feasible.  Each round evaluates an n_points^k grid, recenters
    on the best feasible point, and shrinks the box by 0.75, so the search
    converges geometrically for convex problems.
    """
    c = np.asarray(center, dtype=float).copy()
    w = np.asarray(halfwidth, dtype=float).copy()
    k = len(c)
    best_x, best_f = None, np.inf
    for _ in range(rounds):
        axes = [np.linspace(c[i] - w[i], c[i] + w[i], n_points) for i in range(k)]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=-1)
        round_best_x, round_best_f = None, np.inf
        for start in range(0, len(grid), chunk):
            pts = grid[start : start + chunk]
            if feasible is not None:
                mask = feasible(pts)
                pts = pts[mask]
            if not len(pts):
                continue
            vals = fn(pts)
            i = int(np.argmin(vals))
            if vals[i] < round_best_f:
                round_best_f, round_best_x = vals[i], pts[i]
        if round_best_x is not None:
            c = round_best_x
            if round_best_f < best_f:
                best_f, best_x = round_best_f, round_best_x
        w = 0.75 * w
    return best_x, best_f


# -- Hermitian parametrizations (raw entries, no operator basis) -------------

def herm2_from_params(p):
    """(m, 4) rows (d0, d1, re01, im01) -> (m, 2, 2) Hermitian."""
    p = np.atleast_2d(p)
    out = np.zeros((len(p), 2, 2), dtype=complex)
    out[:, 0, 0] = p[:, 0]
    out[:, 1, 1] = p[:, 1]
    out[:, 0, 1] = p[:, 2] + 1j * p[:, 3]
    out[:, 1, 0] = p[:, 2] - 1j * p[:, 3]
    return out


def herm3_from_params(p):
    """(m, 9) rows (d0, d1, d2, re01, im01, re02, im02, re12, im12) -> (m, 3, 3)."""
    p = np.atleast_2d(p)
    out = np.zeros((len(p), 3, 3), dtype=complex)
    for i in range(3):
        out[:, i, i] = p[:, i]
    pairs = [(0, 1, 3), (0, 2, 5), (1, 2, 7)]
    for j, k, idx in pairs:
        out[:, j, k] = p[:, idx] + 1j * p[:, idx + 1]
        out[:, k, j] = p[:, idx] - 1j * p[:, idx + 1]
    return out


def params_from_herm(h):
    """Inverse of the parametrizations above, for 2x2 or 3x3 Hermitian."""
    h = np.asarray(h)
    if h.shape == (2, 2):
        return np.array([h[0, 0].real, h[1, 1].real, h[0, 1].real, h[0, 1].imag])
    if h.shape == (3, 3):
        return np.array(
            [
                h[0, 0].real, h[1, 1].real, h[2, 2].real,
                h[0, 1].real, h[0, 1].imag,
                h[0, 2].real, h[0, 2].imag,
                h[1, 2].real, h[1, 2].imag,
            ]
        )
    raise ValueError(f"unsupported shape {h.shape}")


def psd2_mask(mats, slack=1e-12):
    """PSD test for stacked 2x2 Hermitian: trace and determinant non-negative."""
    tr = np.real(mats[:, 0, 0] + mats[:, 1, 1])
    det = np.real(
        mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    )
    return (tr >= -slack) & (det >= -slack)


def psd3_mask(mats, slack=1e-12):
    """PSD test for stacked 3x3 Hermitian via characteristic coefficients.

    With all-real eigenvalues, lambda^3 - c2 lambda^2 + c1 lambda - c0 has
    only non-negative roots iff c2, c1, c0 >= 0.
    """
    a = mats
    c2 = np.real(a[:, 0, 0] + a[:, 1, 1] + a[:, 2, 2])
    m01 = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    m02 = a[:, 0, 0] * a[:, 2, 2] - a[:, 0, 2] * a[:, 2, 0]
    m12 = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
    c1 = np.real(m01 + m02 + m12)
    c0 = np.real(
        a[:, 0, 0] * (a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1])
        - a[:, 0, 1] * (a[:, 1, 0] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 0])
        + a[:, 0, 2] * (a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0])
    )
    return (c2 >= -slack) & (c1 >= -slack) & (c0 >= -slack)


def frob_dist2(mats, target):
    d = mats - target[None, :, :]
    return np.sum(np.abs(d) ** 2, axis=(1, 2)).real


def misfit(mats, observables, m_values, K):
    """Delta = sum_i (M_i - K Tr(rho O_i))^2, traces taken entrywise."""
    preds = K * np.real(np.einsum("mjk,ikj->mi", mats, observables))
    resid = m_values[None, :] - preds
    return np.sum(resid**2, axis=1)


def nearest_psd2_bruteforce(h, rounds=60):
    """Frobenius-nearest 2x2 PSD matrix by refined grid search."""
    scale = max(np.abs(h).max(), 1.0)
    center = np.zeros(4)
    halfwidth = np.full(4, 2.0 * scale)

    def fn(p):
        return frob_dist2(herm2_from_params(p), h)

    best, _ = refine_minimize(fn, center, halfwidth, rounds, feasible=psd2_mask)
    return herm2_from_params(best)[0]


def nearest_density3_bruteforce(h, rounds=60):
    """Frobenius-nearest 3x3 density matrix; trace eliminated from the grid."""
    # parametrize (d0, d1, re01, im01, re02, im02, re12, im12); d2 = 1 - d0 - d1
    def to_full(p):
        p = np.atleast_2d(p)
        q = np.empty((len(p), 9))
        q[:, 0] = p[:, 0]
        q[:, 1] = p[:, 1]
        q[:, 2] = 1.0 - p[:, 0] - p[:, 1]
        q[:, 3:] = p[:, 2:]
        return herm3_from_params(q)

    def fn(p):
        return frob_dist2(to_full(p), h)

    def feas(p):
        return psd3_mask(to_full(p))

    center = np.array([1 / 3, 1 / 3, 0, 0, 0, 0, 0, 0])
    scale = max(np.abs(h).max(), 1.0)
    halfwidth = np.full(8, 1.5 * scale)
    best, _ = refine_minimize(fn, center, halfwidth, rounds, feasible=feas)
    return to_full(best)[0]


def ls_estimate_bruteforce(observables, m_values, K, dim, rounds=50):
    """Grid-search least squares over the trace-one PSD set."""
    if dim == 2:
        def to_full(p):
            p = np.atleast_2d(p)
            q = np.empty((len(p), 4))
            q[:, 0] = p[:, 0]
            q[:, 1] = 1.0 - p[:, 0]
            q[:, 2:] = p[:, 1:]
            return herm2_from_params(q)

        center = np.array([0.5, 0.0, 0.0])
        halfwidth = np.full(3, 1.0)
        mask = psd2_mask
    elif dim == 3:
        def to_full(p):
            p = np.atleast_2d(p)
            q = np.empty((len(p), 9))
            q[:, 0] = p[:, 0]
            q[:, 1] = p[:, 1]
            q[:, 2] = 1.0 - p[:, 0] - p[:, 1]
            q[:, 3:] = p[:, 2:]
            return herm3_from_params(q)

        center = np.array([1 / 3, 1 / 3, 0, 0, 0, 0, 0, 0])
        halfwidth = np.full(8, 1.0)
        mask = psd3_mask
    else:
        raise ValueError("only dim 2 and 3 supported")

    def fn(p):
        return misfit(to_full(p), observables, m_values, K)

    def feas(p):
        return mask(to_full(p))

    best, _ = refine_minimize(fn, center, halfwidth, rounds, feasible=feas)
    return to_full(best)[0]


def cs_estimate_bruteforce(observables, m_values, K, epsilon, feasible_start, rounds=50):
    """Grid-search trace minimization over {Delta <= epsilon, PSD}, unnormalized.

    ``feasible_start`` must satisfy the constraints (e.g. the noiseless
    truth state); the search recenters only on feasible points, so the
    incumbent stays feasible throughout.
    """
    dim = feasible_start.shape[0]
    if dim == 2:
        to_full, mask, k = herm2_from_params, psd2_mask, 4
    elif dim == 3:
        to_full, mask, k = herm3_from_params, psd3_mask, 9
    else:
        raise ValueError("only dim 2 and 3 supported")

    def fn(p):
        mats = to_full(p)
        return np.real(np.trace(mats, axis1=1, axis2=2))

    def feas(p):
        mats = to_full(p)
        return mask(mats) & (misfit(mats, observables, m_values, K) <= epsilon)

    center = params_from_herm(feasible_start)
    halfwidth = np.full(k, 1.5)
    best, _ = refine_minimize(fn, center, halfwidth, rounds, feasible=feas)
    return to_full(best)[0]
