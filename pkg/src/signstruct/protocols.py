"""Positivization protocols, their action on states, and sign-structure metrics.

A protocol is a layer of single-qubit ``Rz(theta)`` gates with
``theta in {0, ±pi/2, ±pi}`` followed by an optional layer of disjoint CZ
gates. ``Rz(theta) = diag(e^{-i theta/2}, e^{+i theta/2})`` on ``(|0>, |1>)``.
Angles are stored exactly as integers in units of pi/2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .eigensolver import NotRealError, canonicalize_real, reference_index
from .lattice import SectorBasis

ZERO_THRESHOLD = 1e-12
PHASE_TOL = 1e-8

_S = math.sqrt(0.5)
# exp(i pi m / 4), exact at multiples of pi/2
_EIGHTH_ROOTS = np.array([1, _S + _S * 1j, 1j, -_S + _S * 1j, -1, -_S - _S * 1j, -1j, _S - _S * 1j],
                         dtype=np.complex128)


class InvalidProtocolError(ValueError):
    pass


class UnsupportedParityError(ValueError):
    pass


@dataclass(frozen=True)
class Protocol:
    angles_half_pi: tuple[int, ...]
    cz_pairs: tuple[tuple[int, int], ...] = ()
    label: str = ""

    def __post_init__(self):
        a = tuple(int(x) for x in self.angles_half_pi)
        object.__setattr__(self, "angles_half_pi", a)
        if any(x not in (-2, -1, 0, 1, 2) for x in a):
            raise InvalidProtocolError(f"angles must be in {{0, ±pi/2, ±pi}}: {a}")
        pairs = tuple(tuple(sorted((int(p), int(q)))) for p, q in self.cz_pairs)
        object.__setattr__(self, "cz_pairs", pairs)
        seen = set()
        for p, q in pairs:
            if p == q or not (0 <= p < len(a) and 0 <= q < len(a)) or p in seen or q in seen:
                raise InvalidProtocolError(f"CZ pairs must be disjoint in-range site pairs: {pairs}")
            seen.update((p, q))

    @property
    def n_sites(self) -> int:
        return len(self.angles_half_pi)

    @property
    def angles(self) -> tuple[float, ...]:
        return tuple(x * math.pi / 2 for x in self.angles_half_pi)

    @property
    def n_gates(self) -> int:
        return sum(1 for x in self.angles_half_pi if x) + len(self.cz_pairs)

    @property
    def single_qubit_only(self) -> bool:
        return not self.cz_pairs

    def with_label(self, label):
        return Protocol(self.angles_half_pi, self.cz_pairs, label)

    def to_dict(self):
        return {"label": self.label, "angles_half_pi": list(self.angles_half_pi),
                "cz_pairs": [list(p) for p in self.cz_pairs]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["angles_half_pi"]), tuple(tuple(p) for p in d.get("cz_pairs", [])),
                   d.get("label", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# named protocols
# --------------------------------------------------------------------------

def identity_protocol(n_sites: int) -> Protocol:
    return Protocol((0,) * n_sites, label="identity")


def abab_b_sites(n_sites: int):
    return [i for i in range(n_sites) if i % 2 == 1]


def abba_b_sites(n_sites: int, align: str = "left"):
    """B sublattice of the A,B,B,A,... pattern truncated at ``n_sites``.

    ``align="right"`` anchors the pattern at the last site instead (the mirror
    image), which only differs when ``n_sites`` is not a multiple of 4.
    """
    left = [i for i in range(n_sites) if i % 4 in (1, 2)]
    if align == "left":
        return left
    if align == "right":
        return sorted(n_sites - 1 - i for i in left)
    raise ValueError(f"align must be 'left' or 'right', got {align!r}")


def _pi_on(n_sites, sites, label):
    a = [0] * n_sites
    for s in sites:
        a[s] = 2
    return Protocol(tuple(a), label=label)


def mpr_protocol(n_sites: int) -> Protocol:
    return _pi_on(n_sites, abab_b_sites(n_sites), "mpr")


def odd_even_protocol(n_sites: int, align: str = "left") -> Protocol:
    parity = "odd" if (n_sites // 2) % 2 else "even"
    label = parity if align == "left" else f"{parity}-right"
    return _pi_on(n_sites, abba_b_sites(n_sites, align), label)


def torlai_protocol(n_sites: int) -> Protocol:
    if (n_sites // 2) % 2:
        raise UnsupportedParityError(f"needs even n_sites/2, got n_sites={n_sites}")
    b = set(abba_b_sites(n_sites))
    return Protocol(tuple(-1 if i in b else 1 for i in range(n_sites)), label="torlai")


def mpr_cz_protocol(n_sites: int) -> Protocol:
    pairs = tuple((2 * k, 2 * k + 1) for k in range(n_sites // 2))
    return Protocol(mpr_protocol(n_sites).angles_half_pi, pairs, label="mpr-cz")


NAMED = {
    "mpr": mpr_protocol,
    "odd-even": odd_even_protocol,
    "odd-even-right": lambda n: odd_even_protocol(n, align="right"),
    "torlai": torlai_protocol,
    "mpr-cz": mpr_cz_protocol,
    "identity": identity_protocol,
}


def named_protocol(name: str, n_sites: int) -> Protocol:
    if name.startswith("file:"):
        with open(name[5:]) as fh:
            p = Protocol.from_json(fh.read())
        if p.n_sites != n_sites:
            raise InvalidProtocolError(f"protocol file is for {p.n_sites} sites, not {n_sites}")
        return p
    try:
        return NAMED[name](n_sites)
    except KeyError:
        raise ValueError(f"unknown protocol {name!r}; choose from {sorted(NAMED)} or file:<path>") from None


# --------------------------------------------------------------------------
# action on states
# --------------------------------------------------------------------------

def _check(protocol, basis, state=None):
    if protocol.n_sites != basis.n_sites:
        raise ValueError(f"protocol has {protocol.n_sites} sites, basis has {basis.n_sites}")
    if state is not None and np.shape(state)[0] != basis.dim:
        raise ValueError(f"state length {np.shape(state)[0]} does not match basis dimension {basis.dim}")


def cz_parity(pairs, basis: SectorBasis) -> np.ndarray:
    """Number of CZ pairs with both bits set, per basis state."""
    c = np.zeros(basis.dim, np.int64)
    for p, q in pairs:
        c += ((basis.configs >> p) & (basis.configs >> q) & 1).astype(np.int64)
    return c


def protocol_phases(protocol: Protocol, basis: SectorBasis) -> np.ndarray:
    """Diagonal of the protocol unitary on the sector."""
    _check(protocol, basis)
    m = basis.spins() @ np.asarray(protocol.angles_half_pi, dtype=np.int64)
    m = m + 4 * cz_parity(protocol.cz_pairs, basis)
    return _EIGHTH_ROOTS[m % 8]


def apply_protocol(protocol: Protocol, basis: SectorBasis, state) -> np.ndarray:
    _check(protocol, basis, state)
    return protocol_phases(protocol, basis) * np.asarray(state)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass
class SignReport:
    sign_average: float
    negative_fraction: float
    n_negative: int
    n_nonzero: int
    phase_residual: float = 0.0
    negative_weight: float = 0.0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sign_average(state, zero_threshold: float = ZERO_THRESHOLD, phase_tol: float = PHASE_TOL) -> SignReport:
    """Probability-weighted net sign ``sum_s sign(psi_s) |psi_s|^2``.

    Real input is used as given. Complex input is first brought to real form
    (largest amplitude positive); a state that is not real up to a global phase
    raises :class:`NotRealError`. Amplitudes at or below
    ``zero_threshold * max|psi|`` count as zero.
    """
    v = np.asarray(state)
    residual = 0.0
    if np.iscomplexobj(v):
        v, residual = canonicalize_real(v, phase_tol)
    mag = np.abs(v)
    live = mag > zero_threshold * mag.max()
    w = v[live]
    neg = w < 0
    n_nz = int(w.size)
    n_neg = int(np.count_nonzero(neg))
    return SignReport(
        sign_average=float(np.sum(np.sign(w) * w * w)),
        negative_fraction=n_neg / n_nz if n_nz else 0.0,
        n_negative=n_neg,
        n_nonzero=n_nz,
        phase_residual=residual,
        negative_weight=float(np.sum(w[neg] ** 2)),
    )


def positivized_report(state, **kwargs):
    """Sign report with the global sign chosen so that ``<Sign> >= 0``.

    Returns ``(oriented_real_vector, report)``.
    """
    v = np.asarray(state)
    if np.iscomplexobj(v):
        v, _ = canonicalize_real(v, kwargs.get("phase_tol", PHASE_TOL))
    rep = sign_average(v, **kwargs)
    if rep.sign_average < 0:
        v = -v
        rep = sign_average(v, **kwargs)
    return v, rep


def mg_product_state(basis: SectorBasis, offset: int = 0) -> np.ndarray:
    """Product of singlets (|up,down> - |down,up>)/sqrt(2) on pairs
    (2k + offset, 2k + 1 + offset mod N), first site of each pair listed first."""
    if offset not in (0, 1):
        raise ValueError("offset must be 0 or 1")
    n = basis.n_sites
    if n % 2:
        raise ValueError("needs an even number of sites")
    amp = np.full(basis.dim, 2.0 ** (-n / 4))
    for k in range(n // 2):
        i = 2 * k + offset
        j = (i + 1) % n
        bi = (basis.configs >> i) & 1
        bj = (basis.configs >> j) & 1
        amp *= np.where(bi == bj, 0.0, np.where(bi == 1, 1.0, -1.0))
    return amp


def overlap(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"basis mismatch: {a.shape} vs {b.shape}")
    return float(min(1.0, abs(np.vdot(a, b))))


def subspace_overlap(A, B) -> float:
    """Largest |<a|b>| over unit vectors a in span(A), b in span(B) (orthonormal columns)."""
    A = np.atleast_2d(np.asarray(A).T).T
    B = np.atleast_2d(np.asarray(B).T).T
    return float(min(1.0, np.linalg.svd(A.conj().T @ B, compute_uv=False).max()))


# --------------------------------------------------------------------------
# sign maximization inside a degenerate subspace
# --------------------------------------------------------------------------

def _sign_values(W):
    """<Sign> of each column of W (columns need not be normalized to one)."""
    return np.sum(W * np.abs(W), axis=0)


def best_rotation(A, B):
    """Exact maximum over t of ``sum_s g(A_s cos t + B_s sin t)``, ``g(x) = x|x|``.

    Between consecutive zero crossings of the amplitudes the signs are fixed
    and the sum is ``P + Q cos 2t + W sin 2t``, so one sorted sweep over the
    crossings with running coefficients finds the global maximum.
    Returns ``(t, value)`` with ``t`` in ``[0, 2 pi)``.
    """
    A = np.asarray(A, dtype=float).ravel()
    B = np.asarray(B, dtype=float).ravel()
    live = A * A + B * B > 0
    A, B = A[live], B[live]
    if A.size == 0:
        return 0.0, 0.0
    two_pi = 2 * np.pi
    coef = np.stack([(A * A + B * B) / 2, (A * A - B * B) / 2, A * B], axis=1)
    phi = np.arctan2(B, A)
    bp = np.concatenate([phi + np.pi / 2, phi + 1.5 * np.pi]) % two_pi
    sid = np.concatenate([np.arange(A.size)] * 2)
    order = np.argsort(bp, kind="stable")
    b, sid = bp[order], sid[order]
    # start the sweep in the widest gap so the initial signs are unambiguous
    gaps = np.diff(np.append(b, b[0] + two_pi))
    i0 = int(np.argmax(gaps))
    b = np.concatenate([b[i0:], b[:i0] + two_pi])
    sid = np.concatenate([sid[i0:], sid[:i0]])
    t0 = b[0] + gaps[i0] / 2
    sigma0 = np.sign(A * np.cos(t0) + B * np.sin(t0))
    events = sid[1:]
    # sign just before each crossing: flips on the second crossing of a site
    o = np.argsort(events, kind="stable")
    es = events[o]
    first = np.ones(es.size, bool)
    first[1:] = es[1:] != es[:-1]
    rank = np.empty(es.size, np.int64)
    rank[o] = np.arange(es.size) - np.maximum.accumulate(np.where(first, np.arange(es.size), 0))
    before = sigma0[events] * np.where(rank == 0, 1.0, -1.0)
    C = np.vstack([sigma0 @ coef, -2 * before[:, None] * coef[events]]).cumsum(axis=0)
    lo = b
    hi = np.append(b[1:], b[0] + two_pi)
    P, Q, W = C.T
    R = np.hypot(Q, W)
    psi = np.arctan2(W, Q) / 2
    tstar = lo + (psi - lo) % np.pi
    inside = tstar <= hi

    def f(t):
        return P + Q * np.cos(2 * t) + W * np.sin(2 * t)

    cands = np.stack([np.where(inside, P + R, -np.inf), f(lo), f(hi)])
    times = np.stack([tstar, lo, hi])
    j = np.unravel_index(np.argmax(cands), cands.shape)
    t = float(times[j] % two_pi)
    a = A * np.cos(t) + B * np.sin(t)
    return t, float(np.sum(a * np.abs(a)))


def real_subspace(protocol: Protocol, basis: SectorBasis, V, phase_tol: float = PHASE_TOL) -> np.ndarray:
    """Apply ``protocol`` to the columns of V and remove one common global phase."""
    V = np.asarray(V).reshape(basis.dim, -1)
    W = protocol_phases(protocol, basis)[:, None] * V
    flat = W.ravel()
    ref = flat[reference_index(flat)]
    W = W * (abs(ref) / ref)
    residual = float(np.max(np.abs(W.imag)))
    if residual > phase_tol:
        raise NotRealError(residual)
    return W.real.copy()


def _sign_pattern_ascent(W, c, tol, max_steps=100):
    """Fixed-point ascent c <- top eigenvector of W^T diag(sign(W c)) W.

    <Sign>(W c) = c^T M(sigma) c with sigma = sign(W c), and for any fixed
    sigma that is a lower bound, so each step cannot decrease the objective.
    """
    x = W @ c
    s = float(np.sum(x * np.abs(x)))
    for _ in range(max_steps):
        sigma = np.where(x >= 0, 1.0, -1.0)
        _, U = np.linalg.eigh(W.T @ (sigma[:, None] * W))
        c_new = U[:, -1]
        x_new = W @ c_new
        s_new = float(np.sum(x_new * np.abs(x_new)))
        if s_new <= s + tol:
            break
        c, x, s = c_new, x_new, s_new
    return c, s


def max_sign_in_subspace(W, seed: int = 1, restarts: int = 4, tol: float = 1e-12):
    """Unit vector in span(W) (orthonormal real columns) maximizing <Sign>.

    From every basis direction and a few seeded random combinations:
    sign-pattern ascent, then one-angle rotations towards each basis
    direction, repeated until neither improves. Returns ``(vector, value)``.
    """
    W = np.asarray(W, dtype=float)
    k = W.shape[1]
    if k == 1:
        v = W[:, 0]
        s = _sign_values(v[:, None])[0]
        return (v, s) if s >= 0 else (-v, -s)
    rng = np.random.default_rng(seed)
    starts = [np.eye(k)[:, j] for j in range(k)]
    for _ in range(restarts):
        c = rng.standard_normal(k)
        starts.append(c / np.linalg.norm(c))
    best_c, best_s = None, -np.inf
    for c in starts:
        for _round in range(50):
            c, s = _sign_pattern_ascent(W, c, tol)
            gain = 0.0
            for j in range(k):
                u = np.eye(k)[:, j] - c[j] * c
                nu = np.linalg.norm(u)
                if nu < 1e-12:
                    continue
                u /= nu
                t, val = best_rotation(W @ c, W @ u)
                if val > s + tol:
                    c = np.cos(t) * c + np.sin(t) * u
                    c /= np.linalg.norm(c)
                    gain += val - s
                    s = val
            if gain < tol:
                break
        if s > best_s:
            best_c, best_s = c, s
    v = W @ best_c
    return v / np.linalg.norm(v), float(_sign_values(v[:, None])[0] / (v @ v))


def screen_sign_in_subspace(W, seed: int = 1, n_random: int = 32, tol: float = 1e-12) -> float:
    """Cheap lower estimate of :func:`max_sign_in_subspace` (ascent only)."""
    W = np.asarray(W, dtype=float)
    k = W.shape[1]
    if k == 1:
        return abs(float(_sign_values(W)[0]))
    rng = np.random.default_rng(seed)
    C = np.hstack([np.eye(k), rng.standard_normal((k, n_random))])
    C /= np.linalg.norm(C, axis=0)
    return max(_sign_pattern_ascent(W, C[:, j], tol)[1] for j in range(C.shape[1]))


def level_report(protocol: Protocol, basis: SectorBasis, V, seed: int = 1, phase_tol: float = PHASE_TOL):
    """Metrics of a (possibly degenerate) level after ``protocol``.

    For one vector the orientation is chosen so that <Sign> >= 0; for a
    degenerate level the in-subspace vector maximizing <Sign> is used.
    Returns ``(vector, SignReport)``.
    """
    W = real_subspace(protocol, basis, V, phase_tol)
    v, _ = max_sign_in_subspace(W, seed=seed)
    return positivized_report(v)
