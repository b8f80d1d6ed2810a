"""Hot loops: sector enumeration, matrix-free matvec, protocol scoring.

Every kernel has a numba version and a pure-numpy version with the same
signature. The numba versions are used when numba imports cleanly and the
environment variable ``SIGNSTRUCT_NO_NUMBA`` is unset (or ``0``).
Both implementations stay importable as ``numba_impl`` / ``numpy_impl`` so
tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import os
from math import comb
from types import SimpleNamespace

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SIGNSTRUCT_NO_NUMBA", "0") in ("", "0")

# half-pi angle digits in enumeration order: I, Rz(+pi), Rz(-pi), Rz(+pi/2), Rz(-pi/2)
ANGLE_DIGITS = np.array([0, 2, -2, 1, -1], dtype=np.int64)


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _np_popcount(x):
    x = np.asarray(x, dtype=np.uint64)
    c = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        c += (x & np.uint64(1)).astype(np.int64)
        x = x >> np.uint64(1)
    return c


def _np_sector_configs(n_sites, n_up):
    # recursive split on the top bit keeps ascending order
    table = {}

    def build(n, k):
        if k < 0 or k > n:
            return np.empty(0, dtype=np.int64)
        if k == 0:
            return np.zeros(1, dtype=np.int64)
        if k == n:
            return np.array([(1 << n) - 1], dtype=np.int64)
        key = (n, k)
        if key not in table:
            low = build(n - 1, k)
            high = build(n - 1, k - 1) | np.int64(1 << (n - 1))
            table[key] = np.concatenate([low, high])
        return table[key]

    return build(n_sites, n_up).copy()


def _np_matvec(configs, coef, flip, plus, szm, pzm, x, row_start, row_end, out):
    """out[rows] = sum_terms <t|T|s> x[s] for rows in [row_start, row_end).

    Returns 0 on success and -1 if some term maps a row outside the sector.
    """
    t = configs[row_start:row_end]
    acc = np.zeros(t.shape[0], dtype=out.dtype)
    dim = configs.shape[0]
    for m in range(coef.shape[0]):
        ok = (t & flip[m]) == plus[m]
        if not np.any(ok):
            continue
        rows = np.nonzero(ok)[0]
        tr = t[rows]
        src = tr ^ flip[m]
        pos = np.searchsorted(configs, src)
        posc = np.minimum(pos, dim - 1)
        if np.any(configs[posc] != src):
            return -1
        val = np.full(tr.shape[0], coef[m], dtype=out.dtype)
        if szm[m]:
            n_sz = bin(int(szm[m])).count("1")
            down = _np_popcount(~tr & szm[m])
            val = val * (0.5 ** n_sz) * np.where(down % 2 == 1, -1.0, 1.0)
        if pzm[m]:
            up = _np_popcount(tr & pzm[m])
            val = val * np.where(up % 2 == 1, -1.0, 1.0)
        acc[rows] += val * x[posc]
    out[row_start:row_end] = acc
    return 0


def _np_coo_entries(configs, coef, flip, plus, szm, pzm):
    rows_all, cols_all, vals_all = [], [], []
    dim = configs.shape[0]
    for m in range(coef.shape[0]):
        ok = (configs & flip[m]) == plus[m]
        rows = np.nonzero(ok)[0]
        if rows.size == 0:
            continue
        tr = configs[rows]
        src = tr ^ flip[m]
        pos = np.searchsorted(configs, src)
        posc = np.minimum(pos, dim - 1)
        if np.any(configs[posc] != src):
            return None
        val = np.full(tr.shape[0], coef[m], dtype=np.complex128)
        if szm[m]:
            n_sz = bin(int(szm[m])).count("1")
            down = _np_popcount(~tr & szm[m])
            val = val * (0.5 ** n_sz) * np.where(down % 2 == 1, -1.0, 1.0)
        if pzm[m]:
            up = _np_popcount(tr & pzm[m])
            val = val * np.where(up % 2 == 1, -1.0, 1.0)
        rows_all.append(rows)
        cols_all.append(posc)
        vals_all.append(val)
    if not rows_all:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.complex128))
    return np.concatenate(rows_all), np.concatenate(cols_all), np.concatenate(vals_all)


def _np_score_block(psi, k_blocks, base_k, ref, zero_thr, phase_tol):
    """Score a block of candidates given their phase exponents.

    k_blocks: (dim, B) integer exponents of i contributed by the rotation layer.
    Returns (sign, n_neg, n_nonzero, residual) arrays of length B; sign is NaN
    for candidates whose transformed state is not real up to a global phase.
    """
    k = (k_blocks + base_k[:, None]) & 3
    rel = (k - k[ref][None, :]) & 3
    mag = np.abs(psi)
    live = mag > zero_thr
    odd = (rel & 1) == 1
    resid = np.where(odd, mag[:, None], 0.0).max(axis=0)
    s_ref = 1.0 if psi[ref] >= 0 else -1.0
    w = (psi * s_ref)[:, None] * np.where(rel == 2, -1.0, 1.0)
    use = live[:, None] & ~odd
    sign = np.where(use, np.sign(w) * w * w, 0.0).sum(axis=0)
    n_neg = (use & (w < 0)).sum(axis=0)
    n_nz = use.sum(axis=0)
    bad = resid > phase_tol
    sign = np.where(bad, np.nan, sign)
    return sign, n_neg.astype(np.int64), n_nz.astype(np.int64), resid


def _np_score_range(psi, configs, n_sites, fixed_first, start, end, base_k,
                    ref, zero_thr, phase_tol):
    n_free = n_sites - 1 if fixed_first else n_sites
    count = end - start
    bits = ((configs[:, None] >> np.arange(n_sites)) & 1).astype(np.int64)
    out = [np.empty(count) for _ in range(4)]
    block = max(1, min(4096, 4_000_000 // max(1, configs.shape[0])))
    idx = np.arange(start, end, dtype=np.int64)
    pow5 = 5 ** np.arange(n_free - 1, -1, -1, dtype=np.int64)
    for b0 in range(0, count, block):
        ids = idx[b0:b0 + block]
        digits = (ids[:, None] // pow5[None, :]) % 5
        ang = ANGLE_DIGITS[digits]
        if fixed_first:
            ang = np.concatenate([np.zeros((ang.shape[0], 1), np.int64), ang], axis=1)
        kb = bits @ ang.T
        res = _np_score_block(psi, kb, base_k, ref, zero_thr, phase_tol)
        for o, r in zip(out, res):
            o[b0:b0 + ids.shape[0]] = r
    return out[0], out[1].astype(np.int64), out[2].astype(np.int64), out[3]


def _np_score_explicit(psi, configs, n_sites, angles, base_k, ref, zero_thr, phase_tol):
    bits = ((configs[:, None] >> np.arange(n_sites)) & 1).astype(np.int64)
    count = angles.shape[0]
    out = [np.empty(count) for _ in range(4)]
    block = max(1, min(4096, 4_000_000 // max(1, configs.shape[0])))
    for b0 in range(0, count, block):
        ang = angles[b0:b0 + block].astype(np.int64)
        res = _np_score_block(psi, bits @ ang.T, base_k, ref, zero_thr, phase_tol)
        for o, r in zip(out, res):
            o[b0:b0 + ang.shape[0]] = r
    return out[0], out[1].astype(np.int64), out[2].astype(np.int64), out[3]


numpy_impl = SimpleNamespace(
    sector_configs=_np_sector_configs,
    matvec=_np_matvec,
    coo_entries=_np_coo_entries,
    score_range=_np_score_range,
    score_explicit=_np_score_explicit,
)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _popcount(x):
        c = 0
        while x:
            x &= x - 1
            c += 1
        return c

    @njit(cache=True, nogil=True)
    def _nb_sector_configs(n_sites, n_up):
        dim = 1
        for i in range(n_up):
            dim = dim * (n_sites - i) // (i + 1)
        out = np.empty(dim, dtype=np.int64)
        if n_up == 0:
            out[0] = 0
            return out
        v = (np.int64(1) << n_up) - 1
        for k in range(dim):
            out[k] = v
            # Gosper's hack: next integer with the same popcount
            c = v & -v
            r = v + c
            v = (((r ^ v) >> 2) // c) | r
        return out

    @njit(cache=True, nogil=True)
    def _lin_tables(configs):
        # two-level (Lin) index: idx = start[high] + rank_low[low]
        top = configs[configs.shape[0] - 1]
        nbits = 1
        while (np.int64(1) << nbits) <= top:
            nbits += 1
        lo_bits = (nbits + 1) // 2
        rank_low = np.empty(np.int64(1) << lo_bits, dtype=np.int64)
        seen = np.zeros(lo_bits + 1, dtype=np.int64)
        for low in range(rank_low.shape[0]):
            c = _popcount(low)
            rank_low[low] = seen[c]
            seen[c] += 1
        start = np.full((np.int64(1) << (nbits - lo_bits)) + 1, -1, dtype=np.int64)
        for i in range(configs.shape[0] - 1, -1, -1):
            start[configs[i] >> lo_bits] = i
        return lo_bits, rank_low, start

    @njit(cache=True, nogil=True)
    def _scaled(coef, szm):
        out = coef.copy()
        for m in range(coef.shape[0]):
            out[m] = coef[m] * 0.5 ** _popcount(szm[m])
        return out

    # The lookup and the diagonal sign are written out inline in the two loops
    # below: calling helpers there costs about 3x in runtime.

    @njit(cache=True, nogil=True)
    def _nb_matvec(configs, coef, flip, plus, szm, pzm, x, row_start, row_end, out):
        scale = _scaled(coef, szm)
        lo_bits, rank_low, start = _lin_tables(configs)
        mask = (np.int64(1) << lo_bits) - 1
        n_start = start.shape[0]
        dim = configs.shape[0]
        for r in range(row_start, row_end):
            t = configs[r]
            acc = out[r] * 0
            for m in range(coef.shape[0]):
                f = flip[m]
                if (t & f) != plus[m]:
                    continue
                src = r
                if f:
                    y = t ^ f
                    h = y >> lo_bits
                    src = -1
                    if h < n_start and start[h] >= 0:
                        src = start[h] + rank_low[y & mask]
                        if src >= dim or configs[src] != y:
                            src = -1
                    if src < 0:
                        return -1
                # Sz gives -1/2 per down spin and Pauli Z -1 per up spin; the
                # 1/2 magnitudes already sit in scale
                p = (~t & szm[m]) ^ (t & pzm[m])
                p ^= p >> 32
                p ^= p >> 16
                p ^= p >> 8
                p ^= p >> 4
                p ^= p >> 2
                p ^= p >> 1
                if p & 1:
                    acc -= scale[m] * x[src]
                else:
                    acc += scale[m] * x[src]
            out[r] = acc
        return 0

    @njit(cache=True, nogil=True)
    def _nb_coo_count(configs, flip, plus):
        n = 0
        for r in range(configs.shape[0]):
            t = configs[r]
            for m in range(flip.shape[0]):
                if (t & flip[m]) == plus[m]:
                    n += 1
        return n

    @njit(cache=True, nogil=True)
    def _nb_coo_fill(configs, coef, flip, plus, szm, pzm, rows, cols, vals):
        scale = _scaled(coef, szm)
        lo_bits, rank_low, start = _lin_tables(configs)
        mask = (np.int64(1) << lo_bits) - 1
        n_start = start.shape[0]
        dim = configs.shape[0]
        n = 0
        for r in range(dim):
            t = configs[r]
            for m in range(flip.shape[0]):
                f = flip[m]
                if (t & f) != plus[m]:
                    continue
                src = r
                if f:
                    y = t ^ f
                    h = y >> lo_bits
                    src = -1
                    if h < n_start and start[h] >= 0:
                        src = start[h] + rank_low[y & mask]
                        if src >= dim or configs[src] != y:
                            src = -1
                    if src < 0:
                        return -1
                p = (~t & szm[m]) ^ (t & pzm[m])
                p ^= p >> 32
                p ^= p >> 16
                p ^= p >> 8
                p ^= p >> 4
                p ^= p >> 2
                p ^= p >> 1
                rows[n] = r
                cols[n] = src
                vals[n] = -scale[m] if p & 1 else scale[m]
                n += 1
        return 0

    def _nb_coo_entries(configs, coef, flip, plus, szm, pzm):
        n = _nb_coo_count(configs, flip, plus)
        rows = np.empty(n, np.int64)
        cols = np.empty(n, np.int64)
        vals = np.empty(n, np.complex128)
        if _nb_coo_fill(configs, coef.astype(np.complex128), flip, plus, szm, pzm,
                        rows, cols, vals) < 0:
            return None
        return rows, cols, vals

    @njit(cache=True, nogil=True)
    def _score_one(psi, k, ref, zero_thr, phase_tol):
        kr = k[ref]
        s_ref = 1.0 if psi[ref] >= 0 else -1.0
        resid = 0.0
        total = 0.0
        n_neg = 0
        n_nz = 0
        for i in range(psi.shape[0]):
            rel = (k[i] - kr) & 3
            a = psi[i]
            mag = abs(a)
            if rel & 1:
                if mag > resid:
                    resid = mag
                continue
            if mag <= zero_thr:
                continue
            w = a * s_ref
            if rel == 2:
                w = -w
            n_nz += 1
            if w < 0:
                n_neg += 1
                total -= w * w
            else:
                total += w * w
        if resid > phase_tol:
            total = np.nan
        return total, n_neg, n_nz, resid

    @njit(cache=True, nogil=True)
    def _nb_score_range(psi, configs, n_sites, fixed_first, start, end, base_k,
                        ref, zero_thr, phase_tol):
        dim = configs.shape[0]
        count = end - start
        sign = np.empty(count)
        nneg = np.empty(count, np.int64)
        nnz = np.empty(count, np.int64)
        resid = np.empty(count)
        if count <= 0:
            return sign, nneg, nnz, resid
        first = 1 if fixed_first else 0
        digits = np.zeros(n_sites, np.int64)
        rem = start
        for j in range(n_sites - 1, first - 1, -1):
            digits[j] = rem % 5
            rem //= 5
        angle = np.empty(n_sites, np.int64)
        for j in range(n_sites):
            angle[j] = ANGLE_DIGITS[digits[j]]
        k = np.empty(dim, np.int64)
        for i in range(dim):
            acc = base_k[i]
            t = configs[i]
            for j in range(n_sites):
                if (t >> j) & 1:
                    acc += angle[j]
            k[i] = acc
        for c in range(count):
            if c > 0:
                # odometer increment; update exponents incrementally per changed digit
                j = n_sites - 1
                while True:
                    old = angle[j]
                    digits[j] += 1
                    carry = digits[j] == 5
                    if carry:
                        digits[j] = 0
                    angle[j] = ANGLE_DIGITS[digits[j]]
                    delta = angle[j] - old
                    for i in range(dim):
                        if (configs[i] >> j) & 1:
                            k[i] += delta
                    if not carry or j == first:
                        break
                    j -= 1
            s, a, b, r = _score_one(psi, k, ref, zero_thr, phase_tol)
            sign[c] = s
            nneg[c] = a
            nnz[c] = b
            resid[c] = r
        return sign, nneg, nnz, resid

    @njit(cache=True, nogil=True)
    def _nb_score_explicit(psi, configs, n_sites, angles, base_k, ref, zero_thr, phase_tol):
        dim = configs.shape[0]
        count = angles.shape[0]
        sign = np.empty(count)
        nneg = np.empty(count, np.int64)
        nnz = np.empty(count, np.int64)
        resid = np.empty(count)
        k = np.empty(dim, np.int64)
        for c in range(count):
            for i in range(dim):
                acc = base_k[i]
                t = configs[i]
                for j in range(n_sites):
                    if (t >> j) & 1:
                        acc += angles[c, j]
                k[i] = acc
            s, a, b, r = _score_one(psi, k, ref, zero_thr, phase_tol)
            sign[c] = s
            nneg[c] = a
            nnz[c] = b
            resid[c] = r
        return sign, nneg, nnz, resid

    def _nb_sector_configs_checked(n_sites, n_up):
        if comb(n_sites, n_up) == 0:
            return np.empty(0, np.int64)
        return _nb_sector_configs(n_sites, n_up)

    numba_impl = SimpleNamespace(
        sector_configs=_nb_sector_configs_checked,
        matvec=_nb_matvec,
        coo_entries=_nb_coo_entries,
        score_range=_nb_score_range,
        score_explicit=_nb_score_explicit,
    )

    def set_threads(n):
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))

else:  # pragma: no cover
    numba_impl = None

    def set_threads(n):
        pass


impl = numba_impl if USE_NUMBA else numpy_impl
BACKEND = "numba" if USE_NUMBA else "numpy"
