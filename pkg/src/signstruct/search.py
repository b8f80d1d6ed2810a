"""Brute-force and restricted searches over positivization protocols.

Candidates are scored by |<Sign>| of the transformed ground state. The hot
path never forms complex vectors: with angles in units of pi/2 every relative
phase is a power of i, so a candidate is an integer exponent per basis state
and the transformed state is real up to a global phase exactly when all
exponents on the support share one parity.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .eigensolver import NotRealError, reference_index
from .lattice import Boundary, SectorBasis
from .protocols import (
    PHASE_TOL,
    ZERO_THRESHOLD,
    Protocol,
    SignReport,
    apply_protocol,
    cz_parity,
    max_sign_in_subspace,
    mpr_protocol,
    odd_even_protocol,
    positivized_report,
    real_subspace,
    screen_sign_in_subspace,
)

ANGLE_SET = (0, 2, -2, 1, -1)  # half-pi units, enumeration order
EXHAUSTIVE_MAX_SITES = 14
SCORE_DECIMALS = 12


class CandidateLimitError(ValueError):
    def __init__(self, count, cap):
        super().__init__(
            f"exhaustive search needs {count} candidates (5^{round(np.log(count) / np.log(5))}), "
            f"above max_candidates={cap}; pass a shard range or use template search"
        )
        self.count = count
        self.cap = cap


@dataclass
class SearchConfig:
    fix_first_site: bool = True
    angle_set: tuple = ANGLE_SET
    max_candidates: int = 5 ** 12
    top_k: int = 10
    phase_tol: float = PHASE_TOL
    cz_max_distance: int | None = 1
    seed: int = 1
    threads: int = 1
    chunk_size: int = 1 << 15
    shard_start: int | None = None
    shard_end: int | None = None

    def __post_init__(self):
        if self.top_k < 1 or self.max_candidates < 1 or self.chunk_size < 1:
            raise ValueError("top_k, max_candidates and chunk_size must be positive")
        if tuple(self.angle_set) != ANGLE_SET:
            raise ValueError("only the five-angle set {0, ±pi, ±pi/2} is supported")


@dataclass
class SearchResult:
    ranked: list  # of (Protocol, SignReport)
    n_evaluated: int
    n_skipped_nonreal: int
    wall_time: float
    meta: dict = field(default_factory=dict)

    @property
    def best(self):
        if not self.ranked:
            raise ValueError("no candidate produced a real transformed state")
        return self.ranked[0]

    def to_records(self):
        return [{"protocol": p.to_dict(), "sign_average": r.sign_average,
                 "negative_fraction": r.negative_fraction} for p, r in self.ranked]


# --------------------------------------------------------------------------
# candidate streams
# --------------------------------------------------------------------------

def candidate_count(n_sites: int, fix_first_site: bool = True) -> int:
    return 5 ** (n_sites - 1 if fix_first_site else n_sites)


def _digits_to_angles(indices, n_sites, fix_first_site):
    n_free = n_sites - 1 if fix_first_site else n_sites
    pow5 = 5 ** np.arange(n_free - 1, -1, -1, dtype=np.int64)
    digits = (np.asarray(indices, dtype=np.int64)[:, None] // pow5[None, :]) % 5
    ang = np.asarray(ANGLE_SET, dtype=np.int64)[digits]
    if fix_first_site:
        ang = np.concatenate([np.zeros((ang.shape[0], 1), np.int64), ang], axis=1)
    return ang


def _shard(count, config):
    start = 0 if config.shard_start is None else int(config.shard_start)
    end = count if config.shard_end is None else min(int(config.shard_end), count)
    if not 0 <= start <= end:
        raise ValueError(f"invalid shard range [{start}, {end})")
    return start, end


def enumerate_single_qubit_protocols(n_sites: int, config: SearchConfig | None = None):
    """Lazily yield every single-qubit protocol in enumeration order.

    With ``fix_first_site`` site 0 stays at angle 0: shifting all angles by a
    constant only multiplies a fixed-magnetization state by a global phase.
    """
    config = config or SearchConfig()
    if n_sites > EXHAUSTIVE_MAX_SITES:
        raise ValueError(f"exhaustive enumeration is limited to {EXHAUSTIVE_MAX_SITES} sites")
    count = candidate_count(n_sites, config.fix_first_site)
    start, end = _shard(count, config)
    if end - start > config.max_candidates:
        raise CandidateLimitError(end - start, config.max_candidates)
    free = n_sites - 1 if config.fix_first_site else n_sites
    head = (0,) if config.fix_first_site else ()
    stream = itertools.product(ANGLE_SET, repeat=free)
    for digits in itertools.islice(stream, start, end):
        yield Protocol(head + digits)


def cz_matchings(n_sites: int, cz_max_distance: int | None = 1, boundary="open"):
    """All perfect matchings of the sites with chain distance <= cz_max_distance."""
    if n_sites % 2:
        raise ValueError("perfect matchings need an even number of sites")
    periodic = Boundary.parse(boundary) is Boundary.PERIODIC

    def dist(i, j):
        d = abs(i - j)
        return min(d, n_sites - d) if periodic else d

    def rec(free):
        if not free:
            yield ()
            return
        a = free[0]
        for b in free[1:]:
            if cz_max_distance is None or dist(a, b) <= cz_max_distance:
                rest = [x for x in free if x not in (a, b)]
                for tail in rec(rest):
                    yield ((a, b),) + tail

    yield from rec(list(range(n_sites)))


# --------------------------------------------------------------------------
# scoring and ranking
# --------------------------------------------------------------------------

# position of each angle (half-pi units, offset by 2) in ANGLE_SET
_DIGIT_OF = np.array([ANGLE_SET.index(a) for a in range(-2, 3)], dtype=np.int64)


def _rank_keys(scores, n_gates, angles):
    """Sort order: score desc, fewer gates, then angles compared
    lexicographically in enumeration order (0, pi, -pi, pi/2, -pi/2)."""
    q = np.round(scores, SCORE_DECIMALS)
    digits = _DIGIT_OF[angles + 2]
    cols = [digits[:, j] for j in range(digits.shape[1] - 1, -1, -1)]
    return np.lexsort(cols + [n_gates, -q])


def _select(scores, angles, extra_gates, top_k):
    extra_gates = np.broadcast_to(np.asarray(extra_gates, dtype=np.int64), scores.shape)
    ok = ~np.isnan(scores)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return idx
    s = np.abs(scores[idx])
    q = np.round(s, SCORE_DECIMALS)
    if idx.size > top_k:
        kth = np.partition(q, idx.size - top_k)[idx.size - top_k]
        keep = q >= kth
        idx, s = idx[keep], s[keep]
    n_gates = np.count_nonzero(angles[idx], axis=1) + extra_gates[idx]
    order = _rank_keys(s, n_gates, angles[idx])
    return idx[order][:top_k]


@dataclass
class _Prepared:
    psi: np.ndarray
    ref: int
    zero_thr: float


def _prepare(state):
    psi = np.asarray(state)
    if np.iscomplexobj(psi):
        from .eigensolver import canonicalize_real

        psi, _ = canonicalize_real(psi)
    psi = np.ascontiguousarray(psi, dtype=float)
    return _Prepared(psi, reference_index(psi), ZERO_THRESHOLD * float(np.abs(psi).max()))


def _finish(basis, candidates, state_or_level, start_time, n_eval, n_skip, top_k, meta):
    ranked = []
    for prot in candidates:
        if state_or_level.ndim == 1:
            _, rep = positivized_report(apply_protocol(prot, basis, state_or_level))
        else:
            from .protocols import level_report

            _, rep = level_report(prot, basis, state_or_level)
        ranked.append((prot, rep))
    return SearchResult(ranked[:top_k], n_eval, n_skip, time.perf_counter() - start_time, meta)


def _merge(pieces, top_k):
    """pieces: list of (scores, angles, cz_pairs list) blocks -> top protocols."""
    scores = np.concatenate([p[0] for p in pieces])
    angles = np.concatenate([p[1] for p in pieces])
    extra = np.concatenate([np.full(p[0].shape[0], len(p[2]), np.int64) for p in pieces])
    pairs = [p[2] for p in pieces for _ in range(p[0].shape[0])]
    sel = _select(scores, angles, extra, top_k)
    return [Protocol(tuple(angles[i]), pairs[i]) for i in sel]


def _degenerate_scores(V, basis, protocols, config):
    """Screen every candidate with the ascent-only estimate, then rescore a
    shortlist of the best with the full subspace maximization."""
    scores = np.full(len(protocols), np.nan)
    subspaces = {}
    for c, prot in enumerate(protocols):
        try:
            W = real_subspace(prot, basis, V, config.phase_tol)
        except NotRealError:
            continue
        subspaces[c] = W
        scores[c] = screen_sign_in_subspace(W, seed=config.seed)
    live = np.array(sorted(subspaces), dtype=np.int64)
    if live.size:
        short = live[np.argsort(-scores[live], kind="stable")[: 4 * config.top_k]]
        for c in short:
            scores[c] = max(scores[c], max_sign_in_subspace(subspaces[c], seed=config.seed)[1])
    return scores


def brute_force_search(state, basis: SectorBasis, config: SearchConfig | None = None, kernels=None) -> SearchResult:
    """Exhaustive single-qubit search (optionally one shard of it).

    ``state`` is a ground vector, or a (dim, g) orthonormal block for a
    degenerate level, in which case each candidate is scored by the largest
    <Sign> reachable inside the transformed subspace.
    """
    config = config or SearchConfig()
    kern = kernels or _kernels.impl
    t0 = time.perf_counter()
    n = basis.n_sites
    if n > EXHAUSTIVE_MAX_SITES:
        raise ValueError(f"exhaustive search is limited to {EXHAUSTIVE_MAX_SITES} sites; use template_search")
    count = candidate_count(n, config.fix_first_site)
    start, end = _shard(count, config)
    if end - start > config.max_candidates:
        raise CandidateLimitError(end - start, config.max_candidates)
    if end <= start:
        raise ValueError("empty candidate stream")
    state = np.asarray(state)
    V = state if state.ndim == 2 and state.shape[1] > 1 else None
    if V is None:
        prep = _prepare(state.reshape(-1))
    base_k = np.zeros(basis.dim, np.int64)

    def run(chunk):
        a, b = chunk
        ang = _digits_to_angles(np.arange(a, b), n, config.fix_first_site)
        if V is None:
            scores = kern.score_range(prep.psi, basis.configs, n, config.fix_first_site, a, b, base_k,
                                      prep.ref, prep.zero_thr, config.phase_tol)[0]
        else:
            scores = _degenerate_scores(V, basis, [Protocol(tuple(r)) for r in ang], config)
        skipped = int(np.count_nonzero(np.isnan(scores)))
        sel = _select(scores, ang, 0, config.top_k)
        return np.abs(scores[sel]), ang[sel], skipped

    chunks = [(a, min(a + config.chunk_size, end)) for a in range(start, end, config.chunk_size)]
    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    n_skip = sum(p[2] for p in parts)
    top = _merge([(p[0], p[1], ()) for p in parts], config.top_k)
    final_state = state.reshape(-1) if V is None else V
    meta = {"mode": "exhaustive", "shard": [start, end], "candidates": count}
    return _finish(basis, top, final_state, t0, end - start, n_skip, config.top_k, meta)


def _score_explicit(state, basis, angle_rows, pairs, config, kern):
    state = np.asarray(state)
    if state.ndim == 2 and state.shape[1] > 1:
        prots = [Protocol(tuple(r), pairs) for r in angle_rows]
        return _degenerate_scores(state, basis, prots, config)
    prep = _prepare(state.reshape(-1))
    base_k = (2 * cz_parity(pairs, basis)) & 3
    return kern.score_explicit(prep.psi, basis.configs, basis.n_sites,
                               np.ascontiguousarray(angle_rows, dtype=np.int64), base_k,
                               prep.ref, prep.zero_thr, config.phase_tol)[0]


def template_patterns(n_sites: int, period: int) -> np.ndarray:
    """Distinct angle vectors obtained by repeating every length-``period``
    pattern along the chain (cyclic shifts of a pattern are patterns too)."""
    if period not in (1, 2, 4, 8):
        raise ValueError("period must be 1, 2, 4 or 8")
    pats = np.array(list(itertools.product(ANGLE_SET, repeat=period)), dtype=np.int64)
    rows = pats[:, np.arange(n_sites) % period]
    _, first = np.unique(rows, axis=0, return_index=True)
    return rows[np.sort(first)]


def template_search(state, basis: SectorBasis, period: int, config: SearchConfig | None = None, kernels=None) -> SearchResult:
    config = config or SearchConfig()
    kern = kernels or _kernels.impl
    t0 = time.perf_counter()
    rows = template_patterns(basis.n_sites, period)
    blocks = [rows[i:i + config.chunk_size] for i in range(0, rows.shape[0], config.chunk_size)]

    def run(block):
        return _score_explicit(state, basis, block, (), config, kern)

    if config.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            scores = list(pool.map(run, blocks))
    else:
        scores = [run(b) for b in blocks]
    scores = np.concatenate(scores)
    top = _merge([(scores, rows, ())], config.top_k)
    state = np.asarray(state)
    final_state = state.reshape(-1) if state.ndim == 1 or state.shape[1] == 1 else state
    meta = {"mode": "template", "period": period, "candidates": int(rows.shape[0])}
    return _finish(basis, top, final_state, t0, int(rows.shape[0]),
                   int(np.count_nonzero(np.isnan(scores))), config.top_k, meta)


def angle_layers(n_sites: int):
    """MPR and both truncations of the ABBA layer, deduplicated."""
    layers = []
    for p in (mpr_protocol(n_sites), odd_even_protocol(n_sites), odd_even_protocol(n_sites, align="right")):
        if all(p.angles_half_pi != q.angles_half_pi for q in layers):
            layers.append(p)
    return layers


def search_mpr_plus_cz(state, basis: SectorBasis, config: SearchConfig | None = None,
                       boundary="open", kernels=None) -> SearchResult:
    """Angle layers {MPR, odd/even} combined with every admissible CZ matching."""
    config = config or SearchConfig()
    kern = kernels or _kernels.impl
    t0 = time.perf_counter()
    layers = np.array([p.angles_half_pi for p in angle_layers(basis.n_sites)], dtype=np.int64)
    pieces = []
    n_eval = 0
    for pairs in cz_matchings(basis.n_sites, config.cz_max_distance, boundary):
        scores = _score_explicit(state, basis, layers, pairs, config, kern)
        pieces.append((scores, layers, pairs))
        n_eval += layers.shape[0]
    if not pieces:
        raise ValueError("no CZ matching satisfies the distance cap")
    n_skip = sum(int(np.count_nonzero(np.isnan(p[0]))) for p in pieces)
    top = _merge(pieces, config.top_k)
    state = np.asarray(state)
    final_state = state.reshape(-1) if state.ndim == 1 or state.shape[1] == 1 else state
    meta = {"mode": "mpr-cz", "cz_max_distance": config.cz_max_distance}
    return _finish(basis, top, final_state, t0, n_eval, n_skip, config.top_k, meta)
