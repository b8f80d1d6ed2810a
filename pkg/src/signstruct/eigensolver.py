"""Lowest eigenpairs of sector Hamiltonians, degeneracy grouping, real canonical form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as sla

from .hamiltonian import DENSE_MAX_DIM, HamiltonianIR, apply_terms, dense_matrix
from .lattice import SectorBasis

GROUP_TOL = 1e-9
TIE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class NotRealError(ValueError):
    def __init__(self, residual):
        super().__init__(f"state is not real up to a global phase (max imaginary part {residual:.3e})")
        self.residual = residual


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    residual_norms: np.ndarray
    degeneracy_groups: list
    method: str

    def __len__(self):
        return self.eigenvalues.shape[0]

    def vector(self, i):
        return self.eigenvectors[:, i]


def degeneracy_groups(eigenvalues, group_tol: float = GROUP_TOL):
    """Maximal runs of ascending eigenvalues whose consecutive gaps are below
    ``group_tol * max(1, |lambda|)``."""
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        return []
    groups = [[0]]
    for i in range(1, ev.size):
        if ev[i] - ev[i - 1] < group_tol * max(1.0, abs(ev[i])):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _residuals(H, basis, values, vectors, threads):
    return np.array([
        np.linalg.norm(apply_terms(H, basis, vectors[:, i], threads=threads) - values[i] * vectors[:, i])
        for i in range(values.shape[0])
    ])


def _rayleigh_ritz(H, basis, V, threads):
    Q, _ = np.linalg.qr(V)
    HQ = np.column_stack([apply_terms(H, basis, Q[:, i], threads=threads) for i in range(Q.shape[1])])
    small = Q.conj().T @ HQ
    small = (small + small.conj().T) / 2
    w, U = np.linalg.eigh(small)
    return w, Q @ U


MAX_DEFLATION_ROUNDS = 32


def _norm_bound(H):
    # every factor has operator norm <= 1
    return float(np.sum(np.abs(H.compiled.coef)))


def _deflated_lanczos(H, basis, k, tol, max_iterations, seed, group_tol, threads):
    """ARPACK Lanczos, repeated on H + shift * P_found until no state is missing.

    A single Krylov sequence sees one direction per eigenspace (plus whatever
    rounding adds), so degenerate copies can be missed. Each round shifts the
    vectors found so far out of the low spectrum and looks for any eigenvalue
    below the current k-th one; new vectors are merged by Rayleigh-Ritz.
    """
    dim = basis.dim
    dtype = np.float64 if H.compiled.real else np.complex128
    rng = np.random.default_rng(seed)
    shift = 2.0 * _norm_bound(H) + 1.0
    ncv = min(dim, max(2 * k + 1, 24))
    V = None
    values = None
    for _ in range(MAX_DEFLATION_ROUNDS):
        P = V

        def matvec(x, P=P):
            y = apply_terms(H, basis, x, threads=threads)
            if P is not None:
                y = y + shift * (P @ (P.conj().T @ x))
            return y

        op = sla.LinearOperator((dim, dim), matvec=matvec, dtype=dtype)
        v0 = rng.standard_normal(dim)
        if dtype is np.complex128:
            v0 = v0 + 1j * rng.standard_normal(dim)
        if P is not None:
            v0 = v0 - P @ (P.conj().T @ v0)
        try:
            w, X = sla.eigsh(op, k=k, which="SA", tol=tol / 10, v0=v0, ncv=ncv, maxiter=max_iterations)
        except sla.ArpackNoConvergence as exc:
            vals = np.asarray(exc.eigenvalues)
            res = _residuals(H, basis, vals, exc.eigenvectors, threads) if vals.size else None
            raise ConvergenceError("Lanczos did not converge", residuals=res) from exc
        if V is None:
            values, V = _rayleigh_ritz(H, basis, X[:, np.argsort(w)], threads)
            continue
        margin = group_tol * max(1.0, abs(values[-1]))
        fresh = w < values[-1] - margin
        if not np.any(fresh):
            break
        allv, allV = _rayleigh_ritz(H, basis, np.column_stack([V, X[:, fresh]]), threads)
        values, V = allv[:k], allV[:, :k]
    else:
        raise ConvergenceError("deflation did not settle", residuals=None)
    return values, V


def lowest_eigenpairs(
    H: HamiltonianIR,
    basis: SectorBasis,
    k: int = 1,
    tol: float = 1e-9,
    max_iterations: int | None = None,
    seed: int = 1,
    method: str = "auto",
    dense_max_dim: int = DENSE_MAX_DIM,
    group_tol: float = GROUP_TOL,
    threads: int = 1,
) -> EigenResult:
    """The ``k`` lowest eigenpairs of ``H`` restricted to ``basis``.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense up to
    ``dense_max_dim``). The Lanczos path is ARPACK's implicitly restarted
    Lanczos with a seeded start vector, rerun with the found vectors shifted
    away until no missing low state turns up (so degenerate levels are
    complete), then a Rayleigh-Ritz cleanup.
    """
    dim = basis.dim
    if k < 1 or k > dim:
        raise ValueError(f"k={k} must be in [1, {dim}]")
    if method == "auto":
        method = "dense" if dim <= dense_max_dim else "lanczos"
    if method == "lanczos" and k >= dim - 1:
        method = "dense"

    if method == "dense":
        M = dense_matrix(H, basis, max_dim=max(dense_max_dim, dim))
        values, vectors = scipy.linalg.eigh(M, subset_by_index=[0, k - 1], driver="evr")
    elif method == "lanczos":
        values, vectors = _deflated_lanczos(H, basis, k, tol, max_iterations, seed, group_tol, threads)
    else:
        raise ValueError(f"unknown method {method!r}")

    residuals = _residuals(H, basis, values, vectors, threads)
    limit = tol * max(1.0, float(np.max(np.abs(values))))
    if np.any(residuals > max(limit, 1e-8)):
        raise ConvergenceError(f"residuals above tolerance: {residuals.max():.3e}", residuals=residuals)
    return EigenResult(
        eigenvalues=np.asarray(values, dtype=float),
        eigenvectors=vectors,
        residual_norms=residuals,
        degeneracy_groups=degeneracy_groups(values, group_tol),
        method=method,
    )


@dataclass
class GroundLevel:
    energy: float
    vectors: np.ndarray  # (dim, g) orthonormal basis of the ground level
    result: EigenResult

    @property
    def degeneracy(self) -> int:
        return self.vectors.shape[1]


def ground_level(H, basis, k: int = 6, group_tol: float = GROUP_TOL, **kwargs) -> GroundLevel:
    """Lowest level with its full degenerate subspace.

    ``k`` is grown until the lowest group no longer touches the last computed
    eigenvalue (or the whole sector is computed).
    """
    k = min(k, basis.dim)
    while True:
        res = lowest_eigenpairs(H, basis, k=k, group_tol=group_tol, **kwargs)
        g = res.degeneracy_groups[0]
        if len(g) < k or k == basis.dim:
            break
        k = min(2 * k, basis.dim)
    return GroundLevel(float(res.eigenvalues[0]), res.eigenvectors[:, g], res)


def reference_index(state) -> int:
    """Index of the largest-magnitude amplitude, ties broken by lowest index."""
    mag = np.abs(np.asarray(state))
    top = mag.max()
    return int(np.nonzero(mag >= top * (1 - TIE_TOL))[0][0])


def canonicalize_real(state, phase_tol: float = 1e-8):
    """Remove the global phase so the reference amplitude is positive real.

    Returns ``(real_vector, max_imaginary_residual)``; raises
    :class:`NotRealError` if the residual exceeds ``phase_tol``.
    """
    v = np.asarray(state)
    r = reference_index(v)
    ref = v[r]
    if ref == 0:
        raise ValueError("zero state")
    w = v * (abs(ref) / ref)
    residual = float(np.max(np.abs(np.imag(w)))) if np.iscomplexobj(w) else 0.0
    if residual > phase_tol:
        raise NotRealError(residual)
    return np.real(w).astype(float), residual
