"""Operator algebra and partial traces on truncated Fock spaces."""

import math

import numpy as np
import pytest

from vdpsync.hilbert import (
    FockSpace,
    Operator,
    StateVector,
    annihilation,
    basis_state,
    creation,
    expectation,
    identity,
    number,
    position,
    reduced_density,
    tensor,
)


def test_fock_space_validation():
    s = FockSpace((2, 2))
    assert s.total_dim == 4
    assert s.n_factors == 2
    with pytest.raises(ValueError):
        FockSpace(())
    with pytest.raises(ValueError):
        FockSpace((2, 1))
    with pytest.raises(ValueError):
        FockSpace((2, 2, 1024))  # > MAX_TOTAL_DIM
    with pytest.raises(ValueError):
        s.factor_index(3)
    with pytest.raises(ValueError):
        s.factor_index(0)


def test_annihilation_two_level():
    # dims (2,2): a1 = sigma- (x) 1, nonzero entries <0x|a1|1x> = 1
    s = FockSpace((2, 2))
    a1 = annihilation(s, 1).matrix
    expected = np.zeros((4, 4))
    expected[0, 2] = 1.0  # |10> -> |00>
    expected[1, 3] = 1.0  # |11> -> |01>
    np.testing.assert_array_equal(a1, expected)


def test_annihilation_single_mode_ladder():
    s = FockSpace((3,))
    a = annihilation(s, 1).matrix
    assert a[1, 2] == pytest.approx(math.sqrt(2))
    assert a[0, 1] == pytest.approx(1.0)


def test_annihilation_kron_index_oracle():
    # dims (4,4), which=2: entries <m n|a2|m' n'> = delta_{mm'} delta_{n,n'-1} sqrt(n')
    s = FockSpace((4, 4))
    a2 = annihilation(s, 2).matrix
    for m in range(4):
        for n in range(4):
            for mp in range(4):
                for np_ in range(4):
                    want = 0.0
                    if m == mp and n == np_ - 1:
                        want = math.sqrt(np_)
                    assert a2[m * 4 + n, mp * 4 + np_] == pytest.approx(want)


def test_tensor_states_and_operators():
    s2 = FockSpace((2,))
    v0 = basis_state(s2, (0,))
    v1 = basis_state(s2, (1,))
    psi = tensor(v0, v1)
    np.testing.assert_array_equal(psi.amplitudes, [0, 1, 0, 0])

    eye4 = tensor(identity(s2), identity(s2))
    np.testing.assert_array_equal(eye4.matrix, np.eye(4))

    sm = annihilation(s2, 1)
    both = tensor(sm, sm)
    out = both @ tensor(v1, v1)
    np.testing.assert_allclose(out, tensor(v0, v0).amplitudes)

    with pytest.raises(TypeError):
        tensor(sm, v0)


def test_expectation_values():
    s = FockSpace((2,))
    one = basis_state(s, (1,))
    assert expectation(number(s, 1), one) == pytest.approx(1.0)
    plus = StateVector.normalized([1, 1], s)
    assert expectation(position(s, 1), plus).real == pytest.approx(1 / math.sqrt(2))
    assert expectation(identity(s), plus) == pytest.approx(1.0)
    # hermitian operator -> real expectation
    assert abs(expectation(position(s, 1), plus).imag) < 1e-12


def test_reduced_density_product_and_bell():
    s = FockSpace((2, 2))
    psi = basis_state(s, (0, 1))
    rho = reduced_density(psi, keep=1)
    np.testing.assert_allclose(rho.matrix, [[1, 0], [0, 0]], atol=1e-12)

    bell = StateVector.normalized([0, 1, 1, 0], s)
    rho = reduced_density(bell, keep=1)
    np.testing.assert_allclose(rho.matrix, np.eye(2) / 2, atol=1e-12)


def test_reduced_density_index_sum_oracle():
    rng = np.random.default_rng(7)
    s = FockSpace((3, 3))
    v = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    psi = StateVector.normalized(v, s)
    t = psi.amplitudes.reshape(3, 3)
    # keep=1: rho_ij = sum_k psi_{ik} psi*_{jk}
    oracle = np.einsum("ik,jk->ij", t, t.conj())
    np.testing.assert_allclose(reduced_density(psi, keep=1).matrix, oracle,
                               atol=1e-12)
    # keep=2: trace over the first factor
    oracle2 = np.einsum("ki,kj->ij", t, t.conj())
    np.testing.assert_allclose(reduced_density(psi, keep=2).matrix, oracle2,
                               atol=1e-12)


def test_commutator_truncation_block():
    # [a, a+] = 1 exactly on the top-left (d-1)x(d-1) block
    for d in range(2, 7):
        s = FockSpace((d,))
        a = annihilation(s, 1)
        comm = (a @ a.dag() - a.dag() @ a).matrix
        np.testing.assert_array_equal(comm[:d - 1, :d - 1], np.eye(d - 1))
        assert comm[d - 1, d - 1] == pytest.approx(-(d - 1))


def test_reduced_density_invariants_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        dims = tuple(rng.integers(2, 5, size=2))
        s = FockSpace(dims)
        v = rng.standard_normal(s.total_dim) + 1j * rng.standard_normal(s.total_dim)
        psi = StateVector.normalized(v, s)
        for keep in (1, 2):
            rho = reduced_density(psi, keep)
            m = rho.matrix
            assert np.linalg.norm(m - m.conj().T) < 1e-10
            assert np.trace(m).real == pytest.approx(1.0, abs=1e-10)
            assert rho.eigenvalues().min() > -1e-10


def test_quadratic_form_nonnegative():
    rng = np.random.default_rng(3)
    s = FockSpace((4,))
    for _ in range(20):
        A = Operator(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)), s)
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        psi = StateVector.normalized(v, s)
        assert expectation(A.dag() @ A, psi).real >= -1e-12


def test_basis_state_errors():
    s = FockSpace((2, 3))
    np.testing.assert_array_equal(basis_state(s, (1, 2)).amplitudes[5], 1.0)
    with pytest.raises(ValueError):
        basis_state(s, (2, 0))
    with pytest.raises(ValueError):
        basis_state(s, (0,))


def test_state_and_operator_validation():
    s = FockSpace((2,))
    with pytest.raises(ValueError):
        StateVector(np.array([1.0, 1.0]), s)  # not unit norm
    with pytest.raises(ValueError):
        StateVector.normalized([0, 0], s)
    with pytest.raises(ValueError):
        Operator(np.eye(3), s)
    # dimension mismatch in products
    s3 = FockSpace((3,))
    with pytest.raises(ValueError):
        identity(s) @ identity(s3)
    with pytest.raises(ValueError):
        expectation(identity(s3), basis_state(s, (0,)))


def test_creation_is_adjoint():
    s = FockSpace((4,))
    np.testing.assert_array_equal(creation(s, 1).matrix,
                                  annihilation(s, 1).matrix.conj().T)
