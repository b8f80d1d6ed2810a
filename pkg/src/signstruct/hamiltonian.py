"""Term-list spin Hamiltonians and their conjugation by diagonal circuits.

Operators are products of single-site factors from {Sz, S+, S-, Z}. ``Z`` is
the computational-basis Pauli matrix, ``Z|b> = (-1)^b |b>``; with bit 1 being
spin up this is ``Z = -2 Sz``. Normalization rewrites every surviving ``Z``
into ``Sz`` so that like terms have a unique key.

Conjugation rules (U H U^dagger):

* Rz(theta) on site i: ``S+_i -> e^{i theta} S+_i``, ``S-_i -> e^{-i theta} S-_i``.
* CZ on (a, b): ``S±_a -> S±_a Z_b``, ``S±_b -> S±_b Z_a``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from . import _kernels
from .lattice import Boundary, ChainModel, SectorBasis

MERGE_TOL = 1e-14
DENSE_MAX_DIM = 5000

_I_POWERS = (1 + 0j, 1j, -1 + 0j, -1j)


class NonHermitianError(RuntimeError):
    pass


class SectorError(RuntimeError):
    """A term maps a basis state outside of the sector."""


class TooLargeError(ValueError):
    pass


class UnsupportedBoundaryError(ValueError):
    pass


class Kind(str, Enum):
    SZ = "Sz"
    SPLUS = "S+"
    SMINUS = "S-"
    PAULIZ = "Z"

    @property
    def flips(self):
        return self in (Kind.SPLUS, Kind.SMINUS)

    @property
    def dagger(self):
        return {Kind.SPLUS: Kind.SMINUS, Kind.SMINUS: Kind.SPLUS}.get(self, self)


_KIND_ORDER = {Kind.SZ: 0, Kind.SPLUS: 1, Kind.SMINUS: 2, Kind.PAULIZ: 3}


@dataclass(frozen=True)
class Factor:
    site: int
    kind: Kind

    def __str__(self):
        return f"{self.site}:{self.kind.value}"


def _factors(*pairs):
    return tuple(Factor(s, Kind(k)) for s, k in pairs)


@dataclass(frozen=True)
class Term:
    coefficient: complex
    factors: tuple[Factor, ...]

    def __post_init__(self):
        sites = [f.site for f in self.factors]
        if len(set(sites)) != len(sites):
            raise ValueError(f"factors of a term must act on distinct sites: {sites}")
        if not np.isfinite(complex(self.coefficient)):
            raise ValueError("non-finite coefficient")

    @property
    def key(self):
        return tuple((f.site, _KIND_ORDER[f.kind]) for f in sorted(self.factors, key=lambda f: f.site))

    def dagger(self):
        return Term(complex(self.coefficient).conjugate(),
                    tuple(Factor(f.site, f.kind.dagger) for f in self.factors))

    def __str__(self):
        c = complex(self.coefficient)
        return " ".join([repr(c.real), repr(c.imag)] + [str(f) for f in self.factors])


@dataclass(frozen=True, eq=False)
class HamiltonianIR:
    n_sites: int
    terms: tuple[Term, ...]

    def __post_init__(self):
        for t in self.terms:
            for f in t.factors:
                if not 0 <= f.site < self.n_sites:
                    raise ValueError(f"site {f.site} out of range for {self.n_sites} sites")

    def __len__(self):
        return len(self.terms)

    @property
    def is_real(self) -> bool:
        return all(abs(complex(t.coefficient).imag) == 0.0 for t in self.terms)

    @cached_property
    def compiled(self):
        return _compile(self)

    def as_dict(self):
        out = defaultdict(complex)
        for t in normalize(self).terms:
            out[t.key] += complex(t.coefficient)
        return dict(out)


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------

def exchange_terms(i, j, coupling):
    """J (Sx Sx + Sy Sy + Sz Sz) on (i, j) in S+/S- form."""
    return [
        Term(complex(coupling), _factors((i, "Sz"), (j, "Sz"))),
        Term(complex(coupling) / 2, _factors((i, "S+"), (j, "S-"))),
        Term(complex(coupling) / 2, _factors((i, "S-"), (j, "S+"))),
    ]


def heisenberg_terms(model: ChainModel) -> HamiltonianIR:
    terms = []
    for i, j, coupling in model.bonds():
        if coupling != 0:
            terms.extend(exchange_terms(i, j, coupling))
    return HamiltonianIR(model.n_sites, tuple(terms))


def even_odd_transformed(model: ChainModel, parity=None) -> HamiltonianIR:
    """Open-chain Hamiltonian after pi rotations on the B sites of the ABBA pattern.

    Exchange terms on (2k, 2k+1) bonds and on every next-nearest bond change
    sign; (2k+1, 2k+2) exchange terms and all Sz Sz terms are kept. The form
    is the same for odd and even ``n_sites/2``; ``parity`` is only checked.
    """
    if model.boundary is not Boundary.OPEN:
        raise UnsupportedBoundaryError("the closed form is stated for open chains only")
    half = model.n_sites // 2
    if parity is not None:
        expect = "odd" if half % 2 else "even"
        if parity != expect:
            raise ValueError(f"n_sites/2 = {half} is {expect}, got parity={parity!r}")
    terms = []
    for i, j in model.j1_bonds:
        flip = -1.0 if i % 2 == 0 else 1.0
        terms.append(Term(complex(model.j1), _factors((i, "Sz"), (j, "Sz"))))
        terms.append(Term(complex(flip * model.j1 / 2), _factors((i, "S+"), (j, "S-"))))
        terms.append(Term(complex(flip * model.j1 / 2), _factors((i, "S-"), (j, "S+"))))
    for i, j in model.j2_bonds:
        terms.append(Term(complex(model.j2), _factors((i, "Sz"), (j, "Sz"))))
        terms.append(Term(complex(-model.j2 / 2), _factors((i, "S+"), (j, "S-"))))
        terms.append(Term(complex(-model.j2 / 2), _factors((i, "S-"), (j, "S+"))))
    return normalize(HamiltonianIR(model.n_sites, tuple(terms)))


def mpr_cz_transformed(model: ChainModel, four_spin_coefficient: float = 4.0) -> HamiltonianIR:
    """Closed form of U H U^dagger for U = prod_k Rz(pi)_{2k+1} CZ_{2k,2k+1}.

    Four-spin terms carry ``four_spin_coefficient * J * sum_mu`` with mu in
    {x, y}; 4 is the value consistent with S = sigma / 2 (two Pauli Z factors
    become 4 Sz Sz).
    """
    n = model.n_sites
    periodic = model.periodic
    c = float(four_spin_coefficient)

    def site(x):
        return x % n if periodic else x

    def ok(*xs):
        return periodic or all(x < n for x in xs)

    def xy_pair(a, b, coupling, extra=()):
        # sum_mu S^mu_a S^mu_b (times diagonal extras) = 1/2 (S+_a S-_b + S-_a S+_b)
        return [
            Term(complex(coupling / 2), _factors((a, "S+"), (b, "S-"), *extra)),
            Term(complex(coupling / 2), _factors((a, "S-"), (b, "S+"), *extra)),
        ]

    terms = []
    for i, j in model.j1_bonds:
        terms.append(Term(complex(model.j1), _factors((i, "Sz"), (j, "Sz"))))
    for i, j in model.j2_bonds:
        terms.append(Term(complex(model.j2), _factors((i, "Sz"), (j, "Sz"))))
    for k in range(n // 2):
        a = 2 * k
        terms += xy_pair(a, a + 1, -model.j1)
        if ok(a + 2, a + 3):
            s0, s1, s2, s3 = a, a + 1, site(a + 2), site(a + 3)
            terms += xy_pair(s1, s2, -c * model.j1, ((s0, "Sz"), (s3, "Sz")))
            terms += xy_pair(s0, s2, c * model.j2, ((s1, "Sz"), (s3, "Sz")))
            terms += xy_pair(s1, s3, c * model.j2, ((s0, "Sz"), (s2, "Sz")))
    return normalize(HamiltonianIR(n, tuple(terms)))


# --------------------------------------------------------------------------
# normalization and checks
# --------------------------------------------------------------------------

def _diag_value(kind, bit):
    if kind is Kind.SZ:
        return 0.5 if bit else -0.5
    return -1.0 if bit else 1.0  # Pauli Z


def _collapse_site(kinds):
    """Reduce an ordered product of single-site operators (rightmost acts first).

    Returns (scalar, kind or None for identity).
    """
    flips = [p for p, k in enumerate(kinds) if k.flips]
    if len(flips) > 1:
        raise ValueError(f"unsupported single-site product {[k.value for k in kinds]}")
    if flips:
        p = flips[0]
        b_in = 0 if kinds[p] is Kind.SPLUS else 1
        scalar = 1.0
        for q, k in enumerate(kinds):
            if q > p:
                scalar *= _diag_value(k, b_in)
            elif q < p:
                scalar *= _diag_value(k, 1 - b_in)
        return scalar, kinds[p]
    v0 = math.prod(_diag_value(k, 0) for k in kinds)
    v1 = math.prod(_diag_value(k, 1) for k in kinds)
    if v0 == v1:
        return v0, None
    # v0 == -v1: a multiple of Sz = diag(-1/2, +1/2)
    return 2.0 * v1, Kind.SZ


def _reduce_product(coefficient, factor_list):
    """Collapse an ordered factor list to a Term with one factor per site."""
    by_site = defaultdict(list)
    for f in factor_list:
        by_site[f.site].append(f.kind)
    coef = complex(coefficient)
    out = []
    for s in sorted(by_site):
        scalar, kind = _collapse_site(by_site[s])
        coef *= scalar
        if kind is not None:
            out.append(Factor(s, kind))
    return Term(coef, tuple(out))


def normalize(H: HamiltonianIR, tol: float = MERGE_TOL) -> HamiltonianIR:
    """Canonical form: Z -> -2 Sz, like terms merged, |c| <= tol dropped, sorted."""
    acc = {}
    for t in H.terms:
        red = _reduce_product(t.coefficient, t.factors)
        coef = complex(red.coefficient)
        facs = []
        for f in red.factors:
            if f.kind is Kind.PAULIZ:
                coef *= -2.0
                facs.append(Factor(f.site, Kind.SZ))
            else:
                facs.append(f)
        term = Term(coef, tuple(facs))
        key = term.key
        if key in acc:
            acc[key] = Term(complex(acc[key].coefficient) + coef, acc[key].factors)
        else:
            acc[key] = term
    terms = []
    for key in sorted(acc, key=lambda k: (len(k), k)):
        t = acc[key]
        c = complex(t.coefficient)
        c = complex(0.0 if abs(c.real) <= tol else c.real, 0.0 if abs(c.imag) <= tol else c.imag)
        if abs(c) > tol:
            terms.append(Term(c, t.factors))
    return HamiltonianIR(H.n_sites, tuple(terms))


def check_hermitian(H: HamiltonianIR, tol: float = 1e-12) -> None:
    table = {t.key: complex(t.coefficient) for t in normalize(H).terms}
    for t in normalize(H).terms:
        d = t.dagger()
        other = table.get(d.key)
        if other is None or abs(other - complex(d.coefficient)) > tol:
            raise NonHermitianError(f"missing or mismatched Hermitian partner for term {t}")


def ir_difference(a: HamiltonianIR, b: HamiltonianIR, tol: float = 1e-12):
    """Terms whose coefficients differ between ``a`` and ``b``: list of (key, ca, cb)."""
    da, db = a.as_dict(), b.as_dict()
    out = []
    for key in sorted(set(da) | set(db), key=lambda k: (len(k), k)):
        ca, cb = da.get(key, 0j), db.get(key, 0j)
        if abs(ca - cb) > tol:
            out.append((key, ca, cb))
    return out


def key_string(key):
    inv = {v: k for k, v in _KIND_ORDER.items()}
    return " ".join(f"{s}:{inv[k].value}" for s, k in key)


# --------------------------------------------------------------------------
# conjugation
# --------------------------------------------------------------------------

def _as_half_pi(angles):
    out = []
    for theta in angles:
        q = float(theta) / (math.pi / 2)
        r = round(q)
        if abs(q - r) > 1e-12:
            return None
        out.append(int(r))
    return out


def conjugate_by_diagonal(H: HamiltonianIR, angles) -> HamiltonianIR:
    """U H U^dagger for U = prod_i Rz(angles[i]); angles in radians."""
    angles = list(angles)
    if len(angles) != H.n_sites:
        raise ValueError("need one angle per site")
    quarter = _as_half_pi(angles)
    terms = []
    for t in H.terms:
        if quarter is not None:
            m = sum(quarter[f.site] * (1 if f.kind is Kind.SPLUS else -1)
                    for f in t.factors if f.kind.flips)
            phase = _I_POWERS[m % 4]
        else:
            phase = np.exp(1j * sum(angles[f.site] * (1 if f.kind is Kind.SPLUS else -1)
                                    for f in t.factors if f.kind.flips))
        terms.append(Term(complex(t.coefficient) * phase, t.factors))
    out = normalize(HamiltonianIR(H.n_sites, tuple(terms)))
    check_hermitian(out)
    return out


def _check_pairs(pairs, n_sites):
    seen = set()
    for a, b in pairs:
        if a == b or not (0 <= a < n_sites and 0 <= b < n_sites) or a in seen or b in seen:
            from .protocols import InvalidProtocolError

            raise InvalidProtocolError(f"CZ pairs must be disjoint site pairs in range: {pairs}")
        seen.update((a, b))


def conjugate_by_cz(H: HamiltonianIR, pairs) -> HamiltonianIR:
    pairs = [tuple(p) for p in pairs]
    _check_pairs(pairs, H.n_sites)
    partner = {}
    for a, b in pairs:
        partner[a] = b
        partner[b] = a
    terms = []
    for t in H.terms:
        facs = []
        for f in t.factors:
            facs.append(f)
            if f.kind.flips and f.site in partner:
                facs.append(Factor(partner[f.site], Kind.PAULIZ))
        terms.append(_reduce_product(t.coefficient, facs))
    out = normalize(HamiltonianIR(H.n_sites, tuple(terms)))
    check_hermitian(out)
    return out


def conjugate_by_protocol(H: HamiltonianIR, protocol) -> HamiltonianIR:
    out = conjugate_by_diagonal(H, protocol.angles)
    if protocol.cz_pairs:
        out = conjugate_by_cz(out, protocol.cz_pairs)
    return out


# --------------------------------------------------------------------------
# numerics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Compiled:
    coef: np.ndarray
    flip: np.ndarray
    plus: np.ndarray
    szm: np.ndarray
    pzm: np.ndarray
    real: bool


def _compile(H: HamiltonianIR) -> _Compiled:
    n = len(H.terms)
    coef = np.empty(n, np.complex128)
    flip, plus, szm, pzm = (np.zeros(n, np.int64) for _ in range(4))
    for m, t in enumerate(H.terms):
        coef[m] = complex(t.coefficient)
        n_plus = n_minus = 0
        for f in t.factors:
            bit = np.int64(1) << f.site
            if f.kind is Kind.SPLUS:
                flip[m] |= bit
                plus[m] |= bit  # gather form: output bit is 1 where S+ acted
                n_plus += 1
            elif f.kind is Kind.SMINUS:
                flip[m] |= bit
                n_minus += 1
            elif f.kind is Kind.SZ:
                szm[m] |= bit
            else:
                pzm[m] |= bit
        if n_plus != n_minus:
            raise SectorError(f"term {t} does not conserve total Sz")
    real = bool(np.all(coef.imag == 0))
    return _Compiled(coef.real.copy() if real else coef, flip, plus, szm, pzm, real)


def _check_basis(H, basis):
    if H.n_sites != basis.n_sites:
        raise ValueError(f"Hamiltonian has {H.n_sites} sites, basis has {basis.n_sites}")


def apply_terms(H: HamiltonianIR, basis: SectorBasis, state, threads: int = 1, kernels=None) -> np.ndarray:
    """Matrix-free H|state>, gathered row by row."""
    _check_basis(H, basis)
    kern = kernels or _kernels.impl
    c = H.compiled
    x = np.asarray(state)
    if x.shape != (basis.dim,):
        raise ValueError(f"state has shape {x.shape}, basis dimension is {basis.dim}")
    dtype = np.result_type(x.dtype, np.float64 if c.real else np.complex128)
    x = x.astype(dtype, copy=False)
    coef = c.coef.astype(dtype, copy=False)
    out = np.zeros(basis.dim, dtype=dtype)
    dim = basis.dim
    if threads > 1 and dim >= 4096:
        bounds = np.linspace(0, dim, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            codes = list(pool.map(
                lambda k: kern.matvec(basis.configs, coef, c.flip, c.plus, c.szm, c.pzm, x,
                                      int(bounds[k]), int(bounds[k + 1]), out),
                range(threads)))
    else:
        codes = [kern.matvec(basis.configs, coef, c.flip, c.plus, c.szm, c.pzm, x, 0, dim, out)]
    if any(code < 0 for code in codes):
        raise SectorError("a term maps a basis state outside the sector")
    return out


def dense_matrix(H: HamiltonianIR, basis: SectorBasis, max_dim: int = DENSE_MAX_DIM, kernels=None) -> np.ndarray:
    _check_basis(H, basis)
    if basis.dim > max_dim:
        raise TooLargeError(f"sector dimension {basis.dim} exceeds dense cap {max_dim}")
    kern = kernels or _kernels.impl
    c = H.compiled
    entries = kern.coo_entries(basis.configs, c.coef.astype(np.complex128), c.flip, c.plus, c.szm, c.pzm)
    if entries is None:
        raise SectorError("a term maps a basis state outside the sector")
    rows, cols, vals = entries
    M = np.zeros((basis.dim, basis.dim), np.complex128)
    np.add.at(M, (rows, cols), vals)
    if not np.allclose(M, M.conj().T, atol=1e-12, rtol=0):
        raise NonHermitianError("dense matrix is not Hermitian")
    return M.real.copy() if c.real else M


def sparse_matrix(H: HamiltonianIR, basis: SectorBasis, kernels=None):
    """CSR matrix of H on the sector (used by benchmarks and large checks)."""
    import scipy.sparse as sp

    _check_basis(H, basis)
    kern = kernels or _kernels.impl
    c = H.compiled
    entries = kern.coo_entries(basis.configs, c.coef.astype(np.complex128), c.flip, c.plus, c.szm, c.pzm)
    if entries is None:
        raise SectorError("a term maps a basis state outside the sector")
    rows, cols, vals = entries
    if c.real:
        vals = vals.real
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))


# --------------------------------------------------------------------------
# text listing
# --------------------------------------------------------------------------

def to_listing(H: HamiltonianIR) -> str:
    """Deterministic text form: header line, then ``re im site:kind ...`` per term."""
    Hn = normalize(H)
    lines = [f"# n_sites {Hn.n_sites} terms {len(Hn.terms)}"]
    lines += [str(t) for t in Hn.terms]
    return "\n".join(lines) + "\n"


def from_listing(text: str) -> HamiltonianIR:
    n_sites = None
    terms = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if "n_sites" in parts:
                n_sites = int(parts[parts.index("n_sites") + 1])
            continue
        parts = line.split()
        coef = complex(float(parts[0]), float(parts[1]))
        facs = []
        for tok in parts[2:]:
            s, k = tok.split(":")
            facs.append(Factor(int(s), Kind(k)))
        terms.append(Term(coef, tuple(facs)))
    if n_sites is None:
        n_sites = 1 + max((f.site for t in terms for f in t.factors), default=0)
    return HamiltonianIR(n_sites, tuple(terms))
