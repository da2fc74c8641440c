import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density, random_hermitian
from transmech.errors import (
    DimensionError,
    HermiticityError,
    LayoutError,
    PositivityError,
    TraceError,
)
from transmech.fock import (
    FockLayout,
    annihilation,
    creation,
    dag,
    density,
    embed,
    expectation,
    hermitian_spectrum,
    identity,
    ket,
    number,
    partial_trace,
    partial_transpose,
    thermal_state,
    trace_norm_hermitian,
    unitary_from_generator,
    validate_density_matrix,
    von_neumann_entropy,
)

pytestmark = pytest.mark.oracle


def test_annihilation_matrix_elements():
    a = annihilation(6)
    for k in range(1, 6):
        assert a[k - 1, k] == pytest.approx(math.sqrt(k))
    assert np.count_nonzero(a) == 5


def test_commutator_truncation_structure():
    # [a, a^dag] on an n-level truncation is I except -(n-1) in the top corner
    n = 7
    a = annihilation(n)
    comm = a @ dag(a) - dag(a) @ a
    expected = np.eye(n, dtype=complex)
    expected[n - 1, n - 1] = -(n - 1)
    np.testing.assert_allclose(comm, expected, atol=1e-14)


def test_number_equals_adag_a():
    n = 5
    np.testing.assert_allclose(number(n), creation(n) @ annihilation(n), atol=1e-14)


def test_annihilation_rejects_tiny_dimension():
    with pytest.raises(DimensionError):
        annihilation(1)


def test_embed_matches_manual_kron(rng):
    layout = FockLayout((2, 3, 4))
    ops = [random_hermitian(d, rng) for d in layout.dims]
    eyes = [np.eye(d, dtype=complex) for d in layout.dims]
    for slot in range(3):
        mats = list(eyes)
        mats[slot] = ops[slot]
        manual = np.kron(np.kron(mats[0], mats[1]), mats[2])
        np.testing.assert_allclose(embed(ops[slot], layout, slot), manual, atol=1e-14)


def test_embed_identity_is_identity():
    layout = FockLayout((2, 3))
    np.testing.assert_allclose(embed(identity(3), layout, 1), np.eye(6), atol=0)


def test_embed_errors():
    layout = FockLayout((2, 3))
    with pytest.raises(LayoutError):
        embed(identity(2), layout, 2)
    with pytest.raises(DimensionError):
        embed(identity(3), layout, 0)


def test_expectation_number_in_fock_state():
    n = 6
    for k in range(n):
        rho = density(ket(n, k))
        assert expectation(number(n), rho) == pytest.approx(k)


def test_expectation_matches_full_trace(rng):
    op = random_hermitian(8, rng)
    rho = random_density(8, rng)
    assert expectation(op, rho) == pytest.approx(np.trace(op @ rho))


def test_expectation_shape_guard():
    with pytest.raises(DimensionError):
        expectation(identity(3), np.eye(4))


def test_partial_trace_product_state(rng):
    layout = FockLayout((2, 3, 4))
    parts = [random_density(d, rng) for d in layout.dims]
    rho = np.kron(np.kron(parts[0], parts[1]), parts[2])
    for slot in range(3):
        np.testing.assert_allclose(partial_trace(rho, layout, slot), parts[slot], atol=1e-13)
    np.testing.assert_allclose(
        partial_trace(rho, layout, (1, 2)), np.kron(parts[1], parts[2]), atol=1e-13
    )
    np.testing.assert_allclose(
        partial_trace(rho, layout, (0, 2)), np.kron(parts[0], parts[2]), atol=1e-13
    )


def test_partial_trace_bell_reduction():
    bell = density((np.kron(ket(2, 0), ket(2, 0)) + np.kron(ket(2, 1), ket(2, 1))))
    reduced = partial_trace(bell, FockLayout((2, 2)), 0)
    np.testing.assert_allclose(reduced, np.eye(2) / 2, atol=1e-14)


def test_partial_trace_keep_all_returns_state(rng):
    layout = FockLayout((2, 3))
    rho = random_density(6, rng)
    np.testing.assert_allclose(partial_trace(rho, layout, (0, 1)), rho, atol=0)


def test_partial_trace_chain_consistency(rng):
    # tracing slots one at a time agrees with tracing them at once
    layout = FockLayout((2, 3, 2))
    rho = random_density(12, rng)
    two_step = partial_trace(partial_trace(rho, layout, (0, 1)), FockLayout((2, 3)), 0)
    one_step = partial_trace(rho, layout, 0)
    np.testing.assert_allclose(two_step, one_step, atol=1e-13)


def test_partial_trace_preserves_trace_and_hermiticity(rng):
    layout = FockLayout((3, 4))
    rho = random_density(12, rng)
    red = partial_trace(rho, layout, 1)
    assert np.trace(red) == pytest.approx(1.0)
    np.testing.assert_allclose(red, red.conj().T, atol=1e-13)


def test_partial_trace_errors(rng):
    layout = FockLayout((2, 3))
    rho = random_density(6, rng)
    with pytest.raises(LayoutError):
        partial_trace(rho, layout, ())
    with pytest.raises(LayoutError):
        partial_trace(rho, layout, (0, 0))
    with pytest.raises(LayoutError):
        partial_trace(rho, layout, 5)
    with pytest.raises(DimensionError):
        partial_trace(random_density(5, rng), layout, 0)


def test_partial_transpose_involution(rng):
    rho = random_density(12, rng)
    for which in (0, 1):
        back = partial_transpose(partial_transpose(rho, (3, 4), which), (3, 4), which)
        np.testing.assert_allclose(back, rho, atol=0)


def test_partial_transpose_product_oracle(rng):
    a = random_density(3, rng)
    b = random_density(4, rng)
    rho = np.kron(a, b)
    np.testing.assert_allclose(partial_transpose(rho, (3, 4), 1), np.kron(a, b.T), atol=1e-14)
    np.testing.assert_allclose(partial_transpose(rho, (3, 4), 0), np.kron(a.T, b), atol=1e-14)


def test_partial_transpose_bell_spectrum():
    # maximally entangled qubit pair: PT spectrum is (-1/2, 1/2, 1/2, 1/2)
    bell = density(np.kron(ket(2, 0), ket(2, 0)) + np.kron(ket(2, 1), ket(2, 1)))
    w = np.linalg.eigvalsh(partial_transpose(bell, (2, 2), 1))
    np.testing.assert_allclose(w, [-0.5, 0.5, 0.5, 0.5], atol=1e-14)


def test_hermitian_spectrum_reconstructs(rng):
    mat = random_hermitian(10, rng, scale=3.0)
    spec = hermitian_spectrum(mat)
    assert np.all(np.diff(spec.eigenvalues) >= 0)
    resid = np.linalg.norm(spec.reconstruct() - mat)
    assert resid <= 1e-10 * np.linalg.norm(mat)


def test_hermitian_spectrum_scale_invariant_guard(rng):
    # large physical magnitudes should not trip the hermiticity guard
    mat = random_hermitian(6, rng, scale=1e10)
    hermitian_spectrum(mat)


def test_hermitian_spectrum_rejects_nonhermitian(rng):
    mat = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    with pytest.raises(HermiticityError):
        hermitian_spectrum(mat)


def test_trace_norm_vs_singular_values(rng):
    mat = random_hermitian(9, rng)
    sv = np.linalg.svd(mat, compute_uv=False)
    assert trace_norm_hermitian(mat) == pytest.approx(sv.sum(), rel=1e-12)


def test_trace_norm_psd_equals_trace(rng):
    rho = random_density(7, rng)
    assert trace_norm_hermitian(rho) == pytest.approx(1.0)


def test_entropy_pure_state_is_zero():
    assert von_neumann_entropy(density(ket(5, 2))) == pytest.approx(0.0, abs=1e-12)


def test_entropy_maximally_mixed():
    d = 6
    assert von_neumann_entropy(np.eye(d) / d) == pytest.approx(math.log(d), rel=1e-12)


def test_entropy_thermal_oracle():
    # explicit truncated-geometric probabilities, summed by hand
    n, nbar = 10, 0.7
    r = nbar / (1 + nbar)
    p = np.array([r**k for k in range(n)])
    p /= p.sum()
    expected = -sum(pk * math.log(pk) for pk in p)
    assert von_neumann_entropy(thermal_state(n, nbar)) == pytest.approx(expected, rel=1e-12)


def test_entropy_negativity_guard():
    with pytest.raises(PositivityError):
        von_neumann_entropy(np.diag([1.1, -0.1]))


def test_entropy_clamps_tiny_negative():
    s = von_neumann_entropy(np.diag([1.0 + 1e-9, -1e-9]))
    assert s == pytest.approx(0.0, abs=1e-7)


def test_unitary_hermitian_rotation_oracle():
    # exp(-i theta sigma_x) = cos(theta) I - i sin(theta) sigma_x
    theta = 0.37
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    expected = math.cos(theta) * np.eye(2) - 1j * math.sin(theta) * sx
    np.testing.assert_allclose(unitary_from_generator(theta * sx), expected, atol=1e-14)


def test_unitary_antihermitian_rotation_oracle():
    # exp(theta (|0><1| - |1><0|)) is the real rotation by theta
    theta = 0.81
    g = np.array([[0, 1], [-1, 0]], dtype=complex)
    expected = math.cos(theta) * np.eye(2) + math.sin(theta) * g
    np.testing.assert_allclose(unitary_from_generator(theta * g), expected, atol=1e-14)


def test_unitary_output_is_unitary(rng):
    u = unitary_from_generator(random_hermitian(8, rng, scale=2.0))
    np.testing.assert_allclose(u @ u.conj().T, np.eye(8), atol=1e-12)


def test_unitary_inverse_from_negated_generator(rng):
    g = random_hermitian(6, rng)
    prod = unitary_from_generator(g) @ unitary_from_generator(-g)
    np.testing.assert_allclose(prod, np.eye(6), atol=1e-12)


def test_unitary_rejects_generic_matrix(rng):
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    with pytest.raises(HermiticityError):
        unitary_from_generator(g)


def test_thermal_state_mean_occupation():
    n, nbar = 30, 0.2
    rho = thermal_state(n, nbar)
    mean = expectation(number(n), rho).real
    # truncation at 30 levels leaves the geometric tail negligible for nbar 0.2
    assert mean == pytest.approx(nbar, rel=1e-12)
    assert np.trace(rho) == pytest.approx(1.0)


def test_validate_density_matrix_paths(rng):
    validate_density_matrix(random_density(6, rng), check_positivity=True)
    with pytest.raises(TraceError):
        validate_density_matrix(np.eye(4, dtype=complex))
    bad = np.eye(3, dtype=complex) / 3
    bad[0, 1] = 0.1
    with pytest.raises(HermiticityError):
        validate_density_matrix(bad)
    neg = np.diag([1.2, -0.2]).astype(complex)
    with pytest.raises(PositivityError):
        validate_density_matrix(neg, check_positivity=True)


def test_layout_basics():
    layout = FockLayout((2, 3, 4))
    assert layout.dim == 24
    assert len(layout) == 3
    with pytest.raises(DimensionError):
        FockLayout((2, 1))
    with pytest.raises(LayoutError):
        FockLayout(())


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_partial_trace_reduced_state_is_physical(seed):
    rng = np.random.default_rng(seed)
    layout = FockLayout((2, 3, 2))
    rho = random_density(12, rng)
    red = partial_trace(rho, layout, (0, 2))
    assert np.trace(red).real == pytest.approx(1.0)
    np.testing.assert_allclose(red, red.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(red).min() >= -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_partial_transpose_preserves_trace_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(6, rng)
    pt = partial_transpose(rho, (2, 3), 1)
    assert np.trace(pt).real == pytest.approx(1.0)
    np.testing.assert_allclose(pt, pt.conj().T, atol=1e-12)
