from math import comb

import numpy as np
import pytest

from signstruct import _kernels
from signstruct.hamiltonian import heisenberg_terms, mpr_cz_transformed
from signstruct.lattice import build_chain, enumerate_sector
from signstruct.protocols import Protocol, apply_protocol, sign_average


def brute_configs(n, k):
    return np.array([c for c in range(1 << n) if bin(c).count("1") == k], dtype=np.int64)


@pytest.mark.parametrize("n,k", [(1, 0), (1, 1), (4, 2), (6, 0), (6, 3), (7, 3), (10, 4)])
def test_sector_configs_match_brute_force(kernels, n, k):
    got = np.asarray(kernels.sector_configs(n, k))
    assert np.array_equal(got, brute_configs(n, k))
    assert got.size == comb(n, k)


@pytest.mark.parametrize("boundary", ["obc", "pbc"])
def test_matvec_agrees_between_backends(boundary, rng):
    if _kernels.numba_impl is None:
        pytest.skip("numba not installed")
    model = build_chain(10, boundary, 1.0, 0.7)
    basis = enumerate_sector(10, 5)
    for H in (heisenberg_terms(model), mpr_cz_transformed(model)):
        c = H.compiled
        x = rng.standard_normal(basis.dim)
        outs = []
        for impl in (_kernels.numpy_impl, _kernels.numba_impl):
            out = np.zeros(basis.dim)
            assert impl.matvec(basis.configs, c.coef, c.flip, c.plus, c.szm, c.pzm, x, 0, basis.dim, out) == 0
            outs.append(out)
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-13)


def test_matvec_row_ranges_compose(kernels, rng):
    model = build_chain(8, "pbc", 1.0, 0.4)
    basis = enumerate_sector(8, 4)
    c = heisenberg_terms(model).compiled
    x = rng.standard_normal(basis.dim)
    whole = np.zeros(basis.dim)
    kernels.matvec(basis.configs, c.coef, c.flip, c.plus, c.szm, c.pzm, x, 0, basis.dim, whole)
    parts = np.zeros(basis.dim)
    for a, b in [(0, 17), (17, 40), (40, basis.dim)]:
        kernels.matvec(basis.configs, c.coef, c.flip, c.plus, c.szm, c.pzm, x, a, b, parts)
    np.testing.assert_array_equal(whole, parts)


def test_matvec_reports_out_of_sector_target(kernels):
    # a lone S+ leaves the sector
    basis = enumerate_sector(4, 2)
    coef = np.array([1.0])
    flip = plus = np.array([1], np.int64)
    zero = np.array([0], np.int64)
    out = np.zeros(basis.dim)
    code = kernels.matvec(basis.configs, coef, flip, plus, zero, zero, np.ones(basis.dim), 0, basis.dim, out)
    assert code == -1


def _reference_scores(psi, basis, angle_rows, pairs=()):
    out = []
    for row in angle_rows:
        phi = apply_protocol(Protocol(tuple(int(a) for a in row), tuple(pairs)), basis, psi)
        r = int(np.argmax(np.abs(phi) >= np.abs(phi).max() * (1 - 1e-9)))
        phi = phi * abs(phi[r]) / phi[r]
        if np.max(np.abs(phi.imag)) > 1e-8:
            out.append(np.nan)
        else:
            out.append(sign_average(phi.real).sign_average)
    return np.array(out)


def _prepared(psi):
    ref = int(np.argmax(np.abs(psi) >= np.abs(psi).max() * (1 - 1e-9)))
    return ref, 1e-12 * np.abs(psi).max()


def test_score_range_matches_direct_phases(kernels, rng):
    n = 6
    basis = enumerate_sector(n, 3)
    psi = rng.standard_normal(basis.dim)
    psi /= np.linalg.norm(psi)
    ref, thr = _prepared(psi)
    base = np.zeros(basis.dim, np.int64)
    start, end = 100, 700
    sign = kernels.score_range(psi, basis.configs, n, True, start, end, base, ref, thr, 1e-8)[0]
    ids = np.arange(start, end)
    pow5 = 5 ** np.arange(n - 2, -1, -1)
    digits = (ids[:, None] // pow5) % 5
    rows = np.concatenate([np.zeros((ids.size, 1), int), _kernels.ANGLE_DIGITS[digits]], axis=1)
    expect = _reference_scores(psi, basis, rows)
    np.testing.assert_array_equal(np.isnan(sign), np.isnan(expect))
    ok = ~np.isnan(expect)
    np.testing.assert_allclose(sign[ok], expect[ok], atol=1e-12)


def test_score_explicit_with_cz_parity(kernels, rng):
    n = 6
    basis = enumerate_sector(n, 3)
    psi = rng.standard_normal(basis.dim)
    psi /= np.linalg.norm(psi)
    ref, thr = _prepared(psi)
    pairs = ((0, 1), (2, 3), (4, 5))
    bits = basis.bits
    parity = sum(bits[:, a].astype(np.int64) * bits[:, b] for a, b in pairs)
    base = (2 * parity) & 3
    rows = rng.choice(_kernels.ANGLE_DIGITS, size=(50, n))
    sign = kernels.score_explicit(psi, basis.configs, n, rows, base, ref, thr, 1e-8)[0]
    expect = _reference_scores(psi, basis, rows, pairs)
    np.testing.assert_array_equal(np.isnan(sign), np.isnan(expect))
    ok = ~np.isnan(expect)
    np.testing.assert_allclose(sign[ok], expect[ok], atol=1e-12)


def test_backend_flag_reflected():
    assert _kernels.BACKEND in ("numba", "numpy")
    assert (_kernels.impl is _kernels.numba_impl) == (_kernels.BACKEND == "numba")


def test_numpy_fallback_selected_by_env(tmp_path):
    import subprocess
    import sys

    code = "from signstruct import _kernels; print(_kernels.BACKEND)"
    env = {"SIGNSTRUCT_NO_NUMBA": "1", "PATH": "/usr/bin:/bin"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
