"""Operators and states for a two-manifold atomic spin system.

The default space is the 16-level cesium ground manifold: an f=3 block
(7 sublevels) followed by an f=4 block (9 sublevels), with the basis
ordered |3,-3> ... |3,3>, |4,-4> ... |4,4> (m ascending within each
block).  All operators are dense complex matrices in this fixed order;
states are either unit vectors or density matrices in the same basis.

Everything here is a pure function of its inputs.  Randomness enters
only through explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-10
EIGENVALUE_TOL = 1e-10
STATE_NORM_TOL = 1e-12
FIDELITY_CLIP = 1e-10


def angular_momentum_ops(f: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin-f angular momentum matrices (f_x, f_y, f_z) in the m-ascending basis.

    f_z is diagonal with entries -f..+f; f_x and f_y are built from the
    ladder operator f_+ with <m+1|f_+|m> = sqrt(f(f+1) - m(m+1)).
    """
    two_f = round(2 * f)
    if two_f < 0 or abs(2 * f - two_f) > 1e-12:
        raise ValueError(f"spin must be a non-negative half-integer, got {f!r}")
    n = two_f + 1
    m = -f + np.arange(n)
    fz = np.diag(m).astype(complex)
    c = np.sqrt(f * (f + 1) - m[:-1] * (m[:-1] + 1))
    fplus = np.zeros((n, n), dtype=complex)
    fplus[np.arange(1, n), np.arange(n - 1)] = c
    fx = (fplus + fplus.conj().T) / 2
    fy = (fplus - fplus.conj().T) / 2j
    return fx, fy, fz


@dataclass(frozen=True)
class SpinSpace:
    """Direct sum of angular-momentum blocks, in basis order."""

    spins: tuple[float, ...]

    def __post_init__(self):
        if not self.spins:
            raise ValueError("need at least one spin block")
        for f in self.spins:
            if round(2 * f) != 2 * f or f < 0:
                raise ValueError(f"invalid spin quantum number {f!r}")

    @classmethod
    def cesium(cls) -> "SpinSpace":
        """The 16-dimensional f=3 + f=4 ground manifold."""
        return cls((3.0, 4.0))

    @property
    def block_dims(self) -> tuple[int, ...]:
        return tuple(int(round(2 * f + 1)) for f in self.spins)

    @property
    def dim(self) -> int:
        return sum(self.block_dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for n in self.block_dims:
            out.append(acc)
            acc += n
        return tuple(out)

    def block_slice(self, f: float) -> slice:
        for spin, off, n in zip(self.spins, self.offsets, self.block_dims):
            if spin == f:
                return slice(off, off + n)
        raise KeyError(f"no block with spin {f!r}")

    def index_of(self, f: float, m: float) -> int:
        """Index of the |f, m> basis vector."""
        sl = self.block_slice(f)
        k = round(m + f)
        if k < 0 or k >= sl.stop - sl.start or round(2 * m) != 2 * m:
            raise KeyError(f"no level |{f},{m}>")
        return sl.start + k

    def labels(self) -> list[tuple[float, float]]:
        out = []
        for f, n in zip(self.spins, self.block_dims):
            out.extend((f, -f + k) for k in range(n))
        return out


def embed_block(op: np.ndarray, space: SpinSpace, f: float) -> np.ndarray:
    """Place a block operator on its diagonal sub-square of the full space."""
    sl = space.block_slice(f)
    n = sl.stop - sl.start
    if op.shape != (n, n):
        raise ValueError(f"operator shape {op.shape} does not match block dim {n}")
    full = np.zeros((space.dim, space.dim), dtype=complex)
    full[sl, sl] = op
    return full


def probe_observable(space: SpinSpace) -> np.ndarray:
    """The measured observable: f_z of the lowest block, zero elsewhere."""
    f = space.spins[0]
    _, _, fz = angular_momentum_ops(f)
    return embed_block(fz, space, f)


@dataclass(frozen=True, eq=False)
class OperatorBasis:
    """Orthonormal Hermitian operator basis {E_a}, a = 0 .. dim^2 - 1.

    E_0 = I/sqrt(dim); the remaining elements are traceless.  Ordering:
    E_0, then the diagonal traceless set, then symmetric pair elements
    (|j><k| + |k><j|)/sqrt(2), then antisymmetric pair elements
    i(|j><k| - |k><j|)/sqrt(2), pairs in lexicographic (j, k) with j < k.
    """

    dim: int
    elements: np.ndarray  # (dim^2, dim, dim) complex

    def __post_init__(self):
        d = self.dim
        flat = self.elements.reshape(d**2, d**2)
        object.__setattr__(self, "_flat_conj", flat.conj())
        # sparse-transform bookkeeping: the basis touches O(d^2) entries,
        # so expand/reconstruct avoid the dense d^2 x d^2 product
        iu = np.triu_indices(d, 1)
        dmat = np.zeros((d - 1, d))
        for l in range(1, d):
            dmat[l - 1, :l] = 1.0
            dmat[l - 1, l] = -float(l)
            dmat[l - 1] /= np.sqrt(l * (l + 1))
        object.__setattr__(self, "_iu", iu)
        object.__setattr__(self, "_dmat", dmat)
        object.__setattr__(self, "_n_pairs", d * (d - 1) // 2)

    @property
    def size(self) -> int:
        return self.dim**2

    def expand(self, op: np.ndarray) -> np.ndarray:
        """Coefficients r_a = Tr(op E_a) of a Hermitian operator."""
        if op.shape != (self.dim, self.dim):
            raise ValueError(f"operator shape {op.shape} does not match dim {self.dim}")
        op = np.asarray(op, dtype=complex)
        d, p = self.dim, self._n_pairs
        rows, cols = self._iu
        diag = op.diagonal().real
        upper = op[rows, cols]
        lower = op[cols, rows]
        r = np.empty(d * d)
        r[0] = diag.sum() / np.sqrt(d)
        r[1:d] = self._dmat @ diag
        r[d : d + p] = (upper.real + lower.real) / np.sqrt(2)
        r[d + p :] = (upper.imag - lower.imag) / np.sqrt(2)
        return r

    def expand_stack(self, ops: np.ndarray) -> np.ndarray:
        """Row-wise expand of a stack of Hermitian operators, shape (N, dim^2)."""
        ops = np.asarray(ops, dtype=complex)
        if ops.ndim != 3 or ops.shape[1:] != (self.dim, self.dim):
            raise ValueError(f"stack shape {ops.shape} does not match dim {self.dim}")
        return (ops.reshape(len(ops), -1) @ self._flat_conj.T).real

    def reconstruct(self, r: np.ndarray) -> np.ndarray:
        """Operator sum_a r_a E_a from a real coefficient vector."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.size,):
            raise ValueError(f"coefficient shape {r.shape} does not match {self.size}")
        d, p = self.dim, self._n_pairs
        rows, cols = self._iu
        out = np.zeros((d, d), dtype=complex)
        idx = np.arange(d)
        out[idx, idx] = r[0] / np.sqrt(d) + self._dmat.T @ r[1:d]
        off = (r[d : d + p] + 1j * r[d + p :]) / np.sqrt(2)
        out[rows, cols] = off
        out[cols, rows] = off.conj()
        return out


def hermitian_basis(d: int) -> OperatorBasis:
    """Generalized Gell-Mann basis of Hermitian operators on a d-level space."""
    if d < 2:
        raise ValueError(f"need dimension >= 2, got {d}")
    elems = np.zeros((d * d, d, d), dtype=complex)
    elems[0] = np.eye(d) / np.sqrt(d)
    k = 1
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -float(l)
        elems[k] = np.diag(diag / np.sqrt(l * (l + 1)))
        k += 1
    for j in range(d):
        for j2 in range(j + 1, d):
            elems[k, j, j2] = elems[k, j2, j] = 1 / np.sqrt(2)
            k += 1
    for j in range(d):
        for j2 in range(j + 1, d):
            elems[k, j, j2] = 1j / np.sqrt(2)
            elems[k, j2, j] = -1j / np.sqrt(2)
            k += 1
    return OperatorBasis(dim=d, elements=elems)


def haar_random_pure_state(d: int, seed) -> np.ndarray:
    """Sample a Haar-distributed pure state: first column of a random unitary.

    QR-decomposes a complex Ginibre matrix and fixes the phases of R's
    diagonal so the resulting Q is Haar distributed.  Deterministic for
    a given seed.
    """
    if d < 1:
        raise ValueError(f"need dimension >= 1, got {d}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    r00 = r[0, 0]
    phase = r00 / abs(r00) if r00 != 0 else 1.0
    psi = q[:, 0] * phase
    return psi / np.linalg.norm(psi)


def pure_density(psi: np.ndarray) -> np.ndarray:
    """Rank-one density matrix |psi><psi|."""
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def basis_state(space: SpinSpace, f: float, m: float) -> np.ndarray:
    """Unit vector for the |f, m> level."""
    psi = np.zeros(space.dim, dtype=complex)
    psi[space.index_of(f, m)] = 1.0
    return psi


def maximally_mixed(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex) / d


def fidelity(psi0: np.ndarray, rho: np.ndarray) -> float:
    """Pure-state overlap <psi0| rho |psi0>, clipped to [0, 1] for round-off."""
    psi0 = np.asarray(psi0, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (psi0.size, psi0.size):
        raise ValueError(f"dimension mismatch: state {psi0.size}, matrix {rho.shape}")
    val = float(np.real(np.vdot(psi0, rho @ psi0)))
    if val < -FIDELITY_CLIP or val > 1 + FIDELITY_CLIP:
        raise ValueError(f"overlap {val} outside [0,1] beyond round-off window")
    return min(max(val, 0.0), 1.0)


def check_hermitian(op: np.ndarray, tol: float = HERMITICITY_TOL) -> None:
    op = np.asarray(op)
    scale = max(np.abs(op).max(), 1.0)
    dev = np.abs(op - op.conj().T).max()
    if dev > tol * scale:
        raise ValueError(f"matrix not Hermitian: max deviation {dev:.3e}")


def check_density_matrix(rho: np.ndarray) -> None:
    """Raise if rho is not Hermitian, PSD, and unit trace within tolerances."""
    check_hermitian(rho)
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"trace {tr} deviates from 1 beyond {TRACE_TOL}")
    w = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    if w.min() < -EIGENVALUE_TOL:
        raise ValueError(f"negative eigenvalue {w.min():.3e} beyond {EIGENVALUE_TOL}")


def check_pure_state(psi: np.ndarray) -> None:
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > STATE_NORM_TOL:
        raise ValueError(f"state norm {nrm} deviates from 1")
