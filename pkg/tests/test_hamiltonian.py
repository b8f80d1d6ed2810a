from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import heisenberg_full, protocol_unitary, sector_indices
from signstruct.eigensolver import ground_level
from signstruct.hamiltonian import (
    Factor,
    HamiltonianIR,
    Kind,
    NonHermitianError,
    SectorError,
    Term,
    TooLargeError,
    UnsupportedBoundaryError,
    apply_terms,
    check_hermitian,
    conjugate_by_cz,
    conjugate_by_diagonal,
    conjugate_by_protocol,
    dense_matrix,
    even_odd_transformed,
    exchange_terms,
    from_listing,
    heisenberg_terms,
    ir_difference,
    mpr_cz_transformed,
    normalize,
    sparse_matrix,
    to_listing,
)
from signstruct.lattice import build_chain, enumerate_sector
from signstruct.protocols import (
    InvalidProtocolError,
    Protocol,
    apply_protocol,
    level_report,
    mpr_cz_protocol,
    mpr_protocol,
    odd_even_protocol,
)

GOLDEN = Path(__file__).parent / "golden"


def full_spectrum(H, n):
    return np.sort(np.concatenate([np.linalg.eigvalsh(dense_matrix(H, enumerate_sector(n, k)))
                                   for k in range(n + 1)]))


def full_dense(H, n):
    """Assemble the 2^n matrix from the sector blocks."""
    M = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for k in range(n + 1):
        idx = sector_indices(n, k)
        M[np.ix_(idx, idx)] = dense_matrix(H, enumerate_sector(n, k))
    return M


def coefficient(H, *factors):
    key = Term(1.0, tuple(Factor(s, Kind(k)) for s, k in factors)).key
    return H.as_dict().get(key, 0.0)


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------

def test_two_site_singlet_triplet():
    H = heisenberg_terms(build_chain(2, "obc", 1.0, 0.0))
    assert len(H) == 3
    np.testing.assert_allclose(full_spectrum(H, 2), [-0.75, 0.25, 0.25, 0.25], atol=1e-14)


def test_term_counts():
    assert len(heisenberg_terms(build_chain(6, "open", 1, 0))) == 15
    assert len(heisenberg_terms(build_chain(6, "periodic", 1, 1))) == 36


@pytest.mark.parametrize("n,boundary,j2", [(6, "obc", 0.3), (6, "pbc", 1.2), (8, "pbc", 0.5)])
def test_heisenberg_matches_kronecker_oracle(n, boundary, j2):
    H = heisenberg_terms(build_chain(n, boundary, 1.0, j2))
    np.testing.assert_allclose(full_dense(H, n), heisenberg_full(n, 1.0, j2, boundary == "pbc"), atol=1e-14)


def test_term_requires_distinct_sites():
    with pytest.raises(ValueError):
        Term(1.0, (Factor(0, Kind.SZ), Factor(0, Kind.SPLUS)))


# --------------------------------------------------------------------------
# apply_terms
# --------------------------------------------------------------------------

def test_apply_diagonal():
    basis = enumerate_sector(2, 1)  # configs 01, 10
    H = HamiltonianIR(2, (Term(1.0, (Factor(0, Kind.SZ), Factor(1, Kind.SZ))),))
    state = np.array([1.0, 0.0])
    np.testing.assert_allclose(apply_terms(H, basis, state), [-0.25, 0.0])


def test_apply_flip():
    basis = enumerate_sector(2, 1)
    H = HamiltonianIR(2, tuple(exchange_terms(0, 1, 1.0)[1:]))
    np.testing.assert_allclose(apply_terms(H, basis, np.array([1.0, 0.0])), [0.0, 0.5])


def test_ground_expectation_matches_dense():
    H = heisenberg_terms(build_chain(6, "obc", 1.0, 0.0))
    basis = enumerate_sector(6, 3)
    w, V = np.linalg.eigh(dense_matrix(H, basis))
    psi = V[:, 0]
    assert abs(psi @ apply_terms(H, basis, psi) - w[0]) < 1e-10


def test_dense_matches_matvec(rng, kernels):
    H = mpr_cz_transformed(build_chain(8, "pbc", 1.0, 0.9))
    basis = enumerate_sector(8, 4)
    M = dense_matrix(H, basis, kernels=kernels)
    v = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    np.testing.assert_allclose(M @ v, apply_terms(H, basis, v, kernels=kernels), atol=1e-12)
    np.testing.assert_allclose(sparse_matrix(H, basis).toarray(), M, atol=1e-14)


def test_threaded_apply_identical(rng):
    H = heisenberg_terms(build_chain(14, "pbc", 1.0, 0.6))
    basis = enumerate_sector(14, 7)
    v = rng.standard_normal(basis.dim)
    np.testing.assert_array_equal(apply_terms(H, basis, v), apply_terms(H, basis, v, threads=3))


def test_dense_too_large():
    H = heisenberg_terms(build_chain(16, "pbc", 1.0, 0.0))
    with pytest.raises(TooLargeError):
        dense_matrix(H, enumerate_sector(16, 8))


def test_sector_violation_detected():
    H = HamiltonianIR(4, (Term(1.0, (Factor(0, Kind.SPLUS),)),))
    with pytest.raises(SectorError):
        apply_terms(H, enumerate_sector(4, 2), np.ones(6))


def test_state_shape_checked():
    H = heisenberg_terms(build_chain(6, "obc"))
    with pytest.raises(ValueError):
        apply_terms(H, enumerate_sector(6, 3), np.ones(7))


# --------------------------------------------------------------------------
# conjugation
# --------------------------------------------------------------------------

def test_pi_rotation_flips_exchange_sign():
    H = HamiltonianIR(2, tuple(exchange_terms(0, 1, 1.0)))
    Ht = conjugate_by_diagonal(H, (0.0, np.pi))
    assert coefficient(Ht, (0, "S+"), (1, "S-")) == pytest.approx(-0.5)
    assert coefficient(Ht, (0, "Sz"), (1, "Sz")) == pytest.approx(1.0)


def test_equal_angles_leave_exchange_unchanged():
    H = HamiltonianIR(2, tuple(exchange_terms(0, 1, 1.0)))
    for a in (np.pi / 2, np.pi, -np.pi / 2):
        assert not ir_difference(conjugate_by_diagonal(H, (a, a)), H)


def test_half_pi_rotation_gives_imaginary_coefficients():
    H = HamiltonianIR(2, tuple(exchange_terms(0, 1, 1.0)))
    Ht = conjugate_by_diagonal(H, (np.pi / 2, 0.0))
    assert coefficient(Ht, (0, "S+"), (1, "S-")) == pytest.approx(0.5j)
    assert coefficient(Ht, (0, "S-"), (1, "S+")) == pytest.approx(-0.5j)
    check_hermitian(Ht)


def test_mpr_conjugation_preserves_spectrum():
    model = build_chain(6, "obc", 1.0, 0.4)
    H = heisenberg_terms(model)
    Ht = conjugate_by_protocol(H, mpr_protocol(6))
    np.testing.assert_allclose(full_spectrum(Ht, 6), full_spectrum(H, 6), atol=1e-9)


def test_cz_on_exchange_matches_dense_conjugation():
    H = HamiltonianIR(2, tuple(exchange_terms(0, 1, 1.0)[1:]))
    Ht = conjugate_by_cz(H, [(0, 1)])
    U = np.diag(protocol_unitary(2, (0, 0), [(0, 1)]))
    np.testing.assert_allclose(full_dense(Ht, 2), U @ full_dense(H, 2) @ U.conj().T, atol=1e-12)


def test_cz_term_picks_up_z_factors():
    H = HamiltonianIR(4, tuple(exchange_terms(1, 2, 1.0)))
    Ht = conjugate_by_cz(H, [(0, 1), (2, 3)])
    # S+_1 S-_2 -> S+_1 Z_0 S-_2 Z_3 = 4 Sz_0 Sz_3 S+_1 S-_2
    assert coefficient(Ht, (0, "Sz"), (1, "S+"), (2, "S-"), (3, "Sz")) == pytest.approx(2.0)


def test_disjoint_cz_leaves_terms():
    H = HamiltonianIR(4, tuple(exchange_terms(0, 1, 1.0)))
    assert not ir_difference(conjugate_by_cz(H, [(2, 3)]), H)


def test_overlapping_cz_pairs_rejected():
    H = HamiltonianIR(4, tuple(exchange_terms(0, 1, 1.0)))
    with pytest.raises(InvalidProtocolError):
        conjugate_by_cz(H, [(0, 1), (1, 2)])


def test_mpr_cz_conjugation_has_four_site_terms():
    H = heisenberg_terms(build_chain(6, "pbc", 1.0, 1.0))
    Ht = conjugate_by_protocol(H, mpr_cz_protocol(6))
    four = [t for t in Ht.terms if len(t.factors) == 4]
    assert four
    for t in four:
        kinds = sorted(f.kind.value for f in t.factors)
        assert kinds == ["S+", "S-", "Sz", "Sz"]
    # S_1^mu S_2^z S_3^mu S_4^z (1-based) appears with coefficient +4 J2 / 2
    assert coefficient(Ht, (0, "S+"), (1, "Sz"), (2, "S-"), (3, "Sz")) == pytest.approx(2.0)


def test_non_hermitian_detected():
    H = HamiltonianIR(2, (Term(1.0, (Factor(0, Kind.SPLUS), Factor(1, Kind.SMINUS))),))
    with pytest.raises(NonHermitianError):
        check_hermitian(H)


def test_normalize_merges_and_drops():
    t = (Factor(0, Kind.SZ), Factor(1, Kind.SZ))
    H = HamiltonianIR(2, (Term(0.5, t), Term(0.5, t[::-1]), Term(1e-16, (Factor(0, Kind.SZ),))))
    N = normalize(H)
    assert len(N) == 1 and N.terms[0].coefficient == pytest.approx(1.0)


def test_pauli_z_rewritten_as_sz():
    H = HamiltonianIR(1, (Term(1.0, (Factor(0, Kind.PAULIZ),)),))
    N = normalize(H)
    assert N.terms[0].factors[0].kind is Kind.SZ
    assert N.terms[0].coefficient == pytest.approx(-2.0)


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def test_even_odd_closed_form_signs():
    Ht = even_odd_transformed(build_chain(6, "obc", 1.0, 1.0))
    for i in range(4):
        assert coefficient(Ht, (i, "S+"), (i + 2, "S-")) == pytest.approx(-0.5)
        assert coefficient(Ht, (i, "Sz"), (i + 2, "Sz")) == pytest.approx(1.0)
    for i in range(5):
        expect = -0.5 if i % 2 == 0 else 0.5
        assert coefficient(Ht, (i, "S+"), (i + 1, "S-")) == pytest.approx(expect)


@pytest.mark.parametrize("n", [4, 6, 8, 10, 12])
@pytest.mark.parametrize("align", ["left", "right"])
def test_even_odd_equals_conjugation(n, align):
    model = build_chain(n, "obc", 1.0, 0.7)
    generic = conjugate_by_protocol(heisenberg_terms(model), odd_even_protocol(n, align))
    assert not ir_difference(even_odd_transformed(model), generic, 1e-14)


def test_even_odd_rejects_periodic():
    with pytest.raises(UnsupportedBoundaryError):
        even_odd_transformed(build_chain(6, "pbc", 1.0, 1.0))


def test_even_odd_parity_argument_checked():
    model = build_chain(8, "obc", 1.0, 1.0)
    even_odd_transformed(model, "even")
    with pytest.raises(ValueError):
        even_odd_transformed(model, "odd")


def test_even_odd_spectrum_at_j2_zero():
    model = build_chain(8, "obc", 1.0, 0.0)
    np.testing.assert_allclose(full_spectrum(even_odd_transformed(model), 8),
                               full_spectrum(heisenberg_terms(model), 8), atol=1e-9)


def test_even_odd_ground_state_sign_matches_protocol_path():
    model = build_chain(8, "obc", 1.0, 0.8)
    basis = enumerate_sector(8, 4)
    direct = ground_level(even_odd_transformed(model), basis)
    ed = ground_level(heisenberg_terms(model), basis)
    _, a = level_report(Protocol((0,) * 8), basis, direct.vectors)
    _, b = level_report(odd_even_protocol(8), basis, ed.vectors)
    assert abs(a.sign_average - b.sign_average) < 1e-8


@pytest.mark.parametrize("n", [4, 6, 8, 10])
@pytest.mark.parametrize("boundary", ["obc", "pbc"])
def test_mpr_cz_closed_form_equals_conjugation(n, boundary):
    if boundary == "pbc" and n < 6:
        return
    model = build_chain(n, boundary, 1.0, 1.3)
    generic = conjugate_by_protocol(heisenberg_terms(model), mpr_cz_protocol(n))
    assert not ir_difference(mpr_cz_transformed(model), generic, 1e-14)


@pytest.mark.parametrize("boundary", ["obc", "pbc"])
def test_mpr_cz_spectrum(boundary):
    model = build_chain(6, boundary, 1.0, 1.0)
    np.testing.assert_allclose(full_spectrum(mpr_cz_transformed(model), 6),
                               full_spectrum(heisenberg_terms(model), 6), atol=1e-9)


def test_quarter_four_spin_coefficient_breaks_equivalence():
    model = build_chain(6, "pbc", 1.0, 1.0)
    a = full_spectrum(heisenberg_terms(model), 6)
    b = full_spectrum(mpr_cz_transformed(model, four_spin_coefficient=0.25), 6)
    assert np.max(np.abs(a - b)) > 1e-3


# --------------------------------------------------------------------------
# invariants
# --------------------------------------------------------------------------

@st.composite
def protocols(draw, n):
    angles = tuple(draw(st.lists(st.sampled_from([0, 2, -2, 1, -1]), min_size=n, max_size=n)))
    sites = draw(st.permutations(list(range(n))))
    n_pairs = draw(st.integers(0, n // 2))
    pairs = tuple(tuple(sorted(sites[2 * k:2 * k + 2])) for k in range(n_pairs))
    return Protocol(angles, pairs)


@settings(max_examples=25, deadline=None)
@given(data=st.data(), boundary=st.sampled_from(["obc", "pbc"]), j2=st.floats(0, 2))
def test_unitary_equivalence_and_intertwining(data, boundary, j2):
    n = 6
    prot = data.draw(protocols(n))
    model = build_chain(n, boundary, 1.0, j2)
    H = heisenberg_terms(model)
    Ht = conjugate_by_protocol(H, prot)
    check_hermitian(Ht)
    np.testing.assert_allclose(full_spectrum(Ht, n), full_spectrum(H, n), atol=1e-9)
    U = np.diag(protocol_unitary(n, prot.angles, prot.cz_pairs))
    np.testing.assert_allclose(full_dense(Ht, n), U @ full_dense(H, n) @ U.conj().T, atol=1e-12)
    basis = enumerate_sector(n, 3)
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
    psi = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    lhs = apply_terms(Ht, basis, apply_protocol(prot, basis, psi))
    rhs = apply_protocol(prot, basis, apply_terms(H, basis, psi))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@pytest.mark.parametrize("n", [8, 10])
def test_spectrum_invariance_larger(n):
    model = build_chain(n, "pbc", 1.0, 0.9)
    H = heisenberg_terms(model)
    for prot in (mpr_protocol(n), odd_even_protocol(n), mpr_cz_protocol(n)):
        basis = enumerate_sector(n, n // 2)
        a = np.linalg.eigvalsh(dense_matrix(H, basis))
        b = np.linalg.eigvalsh(dense_matrix(conjugate_by_protocol(H, prot), basis))
        np.testing.assert_allclose(a, b, atol=1e-9)


# --------------------------------------------------------------------------
# listings
# --------------------------------------------------------------------------

def test_listing_round_trip():
    H = conjugate_by_diagonal(heisenberg_terms(build_chain(6, "pbc", 1.0, 0.3)), (0, np.pi / 2, 0, 0, -np.pi / 2, np.pi))
    back = from_listing(to_listing(H))
    assert back.n_sites == 6
    assert not ir_difference(back, H, 0.0)
    assert to_listing(back) == to_listing(H)


@pytest.mark.parametrize("name,build", [
    ("even_n8_obc.txt", lambda: even_odd_transformed(build_chain(8, "obc", 1.0, 1.0))),
    ("mpr_cz_n6_pbc.txt", lambda: mpr_cz_transformed(build_chain(6, "pbc", 1.0, 1.0))),
])
def test_golden_listings(name, build):
    assert to_listing(build()) == (GOLDEN / name).read_text()
