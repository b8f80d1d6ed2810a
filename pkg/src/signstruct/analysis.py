"""J2 sweeps of sign metrics, reference overlaps, degenerate-level
positivization and entanglement entropy."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .eigensolver import GROUP_TOL, ConvergenceError, canonicalize_real, ground_level
from .hamiltonian import TooLargeError, heisenberg_terms
from .lattice import Boundary, SectorBasis, build_chain, enumerate_sector
from .protocols import (
    Protocol,
    abab_b_sites,
    abba_b_sites,
    best_rotation,
    level_report,
    named_protocol,
    odd_even_protocol,
    real_subspace,
    sign_average,
    subspace_overlap,
)

SWEEP_HEADER = ("n", "boundary", "j2", "protocol", "sign_avg", "neg_frac", "energy", "degeneracy")
ENTROPY_HEADER = ("n", "boundary", "j2", "partition", "state_kind", "entropy_bits")
OVERLAP_HEADER = ("n", "boundary", "j2", "reference", "overlap")
MAX_PARTITION_SITES = 16


def default_grid(step: float = 0.1, lo: float = 0.0, hi: float = 2.0):
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


@dataclass
class SweepSpec:
    n_sites: list
    boundary: str = "open"
    j2_grid: list = field(default_factory=default_grid)
    protocols: list = field(default_factory=lambda: ["mpr"])
    j1: float = 1.0
    n_up: int | None = None
    group_tol: float = GROUP_TOL
    seed: int = 1
    threads: int = 1
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.n_sites or not self.j2_grid or not self.protocols:
            raise ValueError("n_sites, j2_grid and protocols must be non-empty")
        if any(not 0.0 <= j <= 2.0 for j in self.j2_grid):
            raise ValueError("j2 grid must lie in [0, 2]")
        if list(self.j2_grid) != sorted(self.j2_grid):
            raise ValueError("j2 grid must be ascending")
        self.boundary = Boundary.parse(self.boundary).value


@dataclass
class SweepRow:
    n: int
    boundary: str
    j2: float
    protocol: str
    sign_avg: float
    neg_frac: float
    energy: float
    degeneracy: int
    negative_weight: float = float("nan")
    error: str = ""

    def csv_fields(self):
        return [self.n, Boundary.parse(self.boundary).short, f"{self.j2:g}", self.protocol,
                repr(self.sign_avg), repr(self.neg_frac), repr(self.energy), self.degeneracy]

    @property
    def ok(self):
        return not self.error


@dataclass
class SweepTable:
    rows: list

    def select(self, **match):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def series(self, n, protocol):
        rows = self.select(n=n, protocol=protocol)
        return np.array([r.j2 for r in rows]), np.array([r.sign_avg for r in rows])

    @property
    def ok(self):
        return all(r.ok for r in self.rows)


def solve_ground(n, boundary, j1, j2, n_up=None, group_tol=GROUP_TOL, seed=1, **solver):
    model = build_chain(n, boundary, j1, j2)
    basis = enumerate_sector(n, n // 2 if n_up is None else n_up)
    H = heisenberg_terms(model)
    level = ground_level(H, basis, group_tol=group_tol, seed=seed, **solver)
    return model, basis, level


def _sweep_point(spec, n, j2):
    try:
        _, basis, level = solve_ground(n, spec.boundary, spec.j1, j2, spec.n_up, spec.group_tol,
                                       spec.seed, **spec.solver)
    except (ConvergenceError, ValueError) as exc:
        return [SweepRow(n, spec.boundary, j2, str(p), math.nan, math.nan, math.nan, 0, error=str(exc))
                for p in spec.protocols]
    rows = []
    for p in spec.protocols:
        name = p.label if isinstance(p, Protocol) else str(p)
        try:
            if name == "raw":
                v, _ = canonicalize_real(level.vectors[:, 0])
                rep = sign_average(v)
            else:
                prot = p if isinstance(p, Protocol) else named_protocol(p, n)
                _, rep = level_report(prot, basis, level.vectors, seed=spec.seed)
        except ValueError as exc:
            rows.append(SweepRow(n, spec.boundary, j2, name, math.nan, math.nan, level.energy,
                                 level.degeneracy, error=str(exc)))
            continue
        rows.append(SweepRow(n, spec.boundary, j2, name, rep.sign_average, rep.negative_fraction,
                             level.energy, level.degeneracy, rep.negative_weight))
    return rows


def run_sweep(spec: SweepSpec) -> SweepTable:
    """One row per (n, j2, protocol).

    Degenerate ground levels are scored by the in-level vector with the
    largest <Sign> after the protocol. The pseudo-protocol ``raw`` reports the
    untransformed first ground vector with its largest amplitude positive.
    """
    jobs = [(n, j2) for n in spec.n_sites for j2 in spec.j2_grid]
    if spec.threads > 1:
        with ThreadPoolExecutor(spec.threads) as pool:
            parts = list(pool.map(lambda job: _sweep_point(spec, *job), jobs))
    else:
        parts = [_sweep_point(spec, *job) for job in jobs]
    return SweepTable([row for part in parts for row in part])


def energy_jumps(j2s, energies, factor: float = 10.0):
    """Indices where the energy step exceeds ``factor`` times both neighbouring steps."""
    e = np.asarray(energies, dtype=float)
    d = np.abs(np.diff(e))
    bad = []
    for i in range(1, d.size - 1):
        if d[i] > factor * max(d[i - 1], d[i + 1], 1e-12):
            bad.append(i + 1)
    return bad


def sign_curve_minimum(j2s, values):
    """Location and value of the curve minimum by a parabola through the grid
    minimum and its two neighbours."""
    x = np.asarray(j2s, dtype=float)
    y = np.asarray(values, dtype=float)
    i = int(np.argmin(y))
    i = min(max(i, 1), x.size - 2)
    xs, ys = x[i - 1:i + 2], y[i - 1:i + 2]
    a, b, c = np.polyfit(xs, ys, 2)
    if a <= 0:
        j = int(np.argmin(y))
        return float(x[j]), float(y[j])
    xm = float(np.clip(-b / (2 * a), xs[0], xs[-1]))
    return xm, float(np.polyval([a, b, c], xm))


# --------------------------------------------------------------------------
# degenerate-level positivization
# --------------------------------------------------------------------------

@dataclass
class PositivizedSet:
    vectors: np.ndarray  # columns after the protocol, real, oriented <Sign> >= 0
    raw_vectors: np.ndarray  # same rotation applied to the untransformed level
    signs: np.ndarray
    converged: bool


def _signs(X):
    return np.sum(X * np.abs(X), axis=0)


def _jacobi(X, Q, tol, max_sweeps):
    k = X.shape[1]
    for _ in range(max_sweeps):
        gain = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                xi, xj = X[:, i], X[:, j]
                cur = _signs(X[:, [i, j]]).sum()
                # rotation: (c xi + s xj, -s xi + c xj); reflection: (c xi + s xj, s xi - c xj)
                t1, v1 = best_rotation(np.concatenate([xi, xj]), np.concatenate([xj, -xi]))
                t2, v2 = best_rotation(np.concatenate([xi, -xj]), np.concatenate([xj, xi]))
                if max(v1, v2) <= cur + tol:
                    continue
                c, s = (np.cos(t1), np.sin(t1)) if v1 >= v2 else (np.cos(t2), np.sin(t2))
                G = np.array([[c, -s], [s, c]]) if v1 >= v2 else np.array([[c, s], [s, -c]])
                X[:, [i, j]] = X[:, [i, j]] @ G
                Q[:, [i, j]] = Q[:, [i, j]] @ G
                gain += max(v1, v2) - cur
        neg = _signs(X) < 0
        if np.any(neg):
            gain += -2 * _signs(X)[neg].sum()
            X[:, neg] *= -1
            Q[:, neg] *= -1
        if gain < tol:
            return True
    return False


def positivize_degenerate_subspace(eigenvectors, protocol: Protocol, basis: SectorBasis,
                                   restarts: int = 8, seed: int = 1, tol: float = 1e-10,
                                   max_sweeps: int = 200) -> PositivizedSet:
    """Orthogonal mixing of a degenerate level maximizing the summed <Sign>
    of the protocol-transformed vectors.

    Pairwise (Jacobi-style) rotations and reflections are applied until a full
    sweep gains less than ``tol``; the identity start plus ``restarts`` seeded
    random orthogonal starts are tried and the best is kept.
    """
    V = np.asarray(eigenvectors).reshape(basis.dim, -1)
    W = real_subspace(protocol, basis, V)
    k = W.shape[1]
    rng = np.random.default_rng(seed)
    best = None
    for r in range(restarts + 1):
        if r == 0 or k == 1:
            Q = np.eye(k)
        else:
            Q, R = np.linalg.qr(rng.standard_normal((k, k)))
            Q = Q * np.sign(np.diag(R))
        X = W @ Q
        conv = _jacobi(X, Q, tol, max_sweeps)
        total = _signs(X).sum()
        if best is None or total > best[0] + tol:
            best = (total, X.copy(), Q.copy(), conv)
        if k == 1:
            break
    _, X, Q, conv = best
    raw = V @ Q
    # real_subspace removed one global phase; keep raw vectors real when V is
    if not np.iscomplexobj(V):
        raw = np.real(raw)
    return PositivizedSet(X, raw, _signs(X), conv)


# --------------------------------------------------------------------------
# overlaps with exactly positivizable references
# --------------------------------------------------------------------------

REFERENCES = {"i": (1.0, 0.0), "ii": (1.0, 0.5), "iii": (0.0, 1.0)}


def reference_overlap_curves(n_sites, boundary, j2_grid, j1: float = 1.0, seed: int = 1, **solver):
    """Rows (n, boundary, j2, reference, overlap) with |<ref|psi_ED(j2)>| (not squared).

    Degenerate levels are compared through the largest overlap between unit
    vectors of the two levels; a degenerate reference (iii) is first mixed into
    its odd/even-positivized basis and the best of those vectors is used.
    """
    boundary = Boundary.parse(boundary).value
    refs = {}
    for name, (rj1, rj2) in REFERENCES.items():
        _, basis, lvl = solve_ground(n_sites, boundary, rj1, rj2, seed=seed, **solver)
        vecs = lvl.vectors
        if name == "iii" and lvl.degeneracy > 1:
            pos = positivize_degenerate_subspace(vecs, odd_even_protocol(n_sites), basis, seed=seed)
            refs[name] = ("each", pos.raw_vectors)
        else:
            refs[name] = ("span", vecs)
    rows = []
    for j2 in j2_grid:
        _, _, lvl = solve_ground(n_sites, boundary, j1, j2, seed=seed, **solver)
        for name, (how, R) in refs.items():
            if how == "each":
                val = max(subspace_overlap(R[:, [m]], lvl.vectors) for m in range(R.shape[1]))
            else:
                val = subspace_overlap(R, lvl.vectors)
            rows.append((n_sites, Boundary.parse(boundary).short, j2, name, val))
    return rows


# --------------------------------------------------------------------------
# entanglement entropy
# --------------------------------------------------------------------------

PARTITION_KINDS = ("contiguous_half", "abba_sublattice", "abab_sublattice")


def bipartition_masks(n_sites: int, kind: str):
    """Sites of subsystem A: the left half, the B set of the ABBA pattern, or
    the odd sites (B set of the ABAB pattern)."""
    if kind == "contiguous_half":
        return tuple(range(n_sites // 2))
    if kind == "abba_sublattice":
        return tuple(abba_b_sites(n_sites))
    if kind == "abab_sublattice":
        return tuple(abab_b_sites(n_sites))
    raise ValueError(f"unknown partition kind {kind!r}")


def _compress(configs, sites):
    code = np.zeros_like(configs)
    for m, s in enumerate(sites):
        code |= ((configs >> s) & 1) << m
    return code


def reduced_density_spectrum(state, basis: SectorBasis, partition_mask) -> np.ndarray:
    """Eigenvalues of rho_A, built blockwise per magnetization of A."""
    sites = sorted(set(int(s) for s in partition_mask))
    if len(sites) > MAX_PARTITION_SITES:
        raise TooLargeError(f"subsystem of {len(sites)} sites exceeds {MAX_PARTITION_SITES}")
    if any(not 0 <= s < basis.n_sites for s in sites):
        raise ValueError("partition sites out of range")
    rest = [s for s in range(basis.n_sites) if s not in sites]
    psi = np.asarray(state)
    a = _compress(basis.configs, sites)
    b = _compress(basis.configs, rest)
    na = np.array([bin(int(x)).count("1") for x in range(1 << len(sites))])[a] if sites else np.zeros_like(a)
    spectrum = []
    for block in np.unique(na):
        sel = na == block
        ua, ra = np.unique(a[sel], return_inverse=True)
        ub, rb = np.unique(b[sel], return_inverse=True)
        M = np.zeros((ua.size, ub.size), dtype=psi.dtype)
        M[ra, rb] = psi[sel]
        spectrum.append(np.linalg.svd(M, compute_uv=False) ** 2)
    return np.sort(np.concatenate(spectrum))[::-1]


def entanglement_entropy(state, basis: SectorBasis, partition_mask) -> float:
    """von Neumann entropy of the reduced state of ``partition_mask``, in bits."""
    p = reduced_density_spectrum(state, basis, partition_mask)
    p = p[p > 1e-300]
    return float(max(0.0, -np.sum(p * np.log2(p))))
