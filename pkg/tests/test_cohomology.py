import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_form
from eclab.cohomology import (AmbiguousSplitError, CohomologySpectrum, NotClosedError,
                              chronically_expanding_subspace, class_of_closed_form,
                              empirical_holder, fourier_hodge_potential, hodge_potential,
                              holder_bound, induced_action, subspace_distance)
from eclab.grid import FormField, PeriodicGrid, exterior_derivative

small_int_matrix = st.lists(st.integers(-5, 5), min_size=4, max_size=4).map(
    lambda v: np.array(v, dtype=np.int64).reshape(2, 2))


def test_induced_action_small_cases():
    A = np.array([[2, 1], [1, 1]])
    assert np.array_equal(induced_action(A, 0), [[1]])
    assert np.array_equal(induced_action(A, 1), A.T)
    assert np.array_equal(induced_action(A, 2), [[1]])
    assert induced_action(A, 1).dtype == np.int64


@settings(max_examples=60, deadline=None)
@given(small_int_matrix, small_int_matrix, st.integers(0, 2))
def test_induced_action_contravariant_exact(A, B, k):
    # (f o g)^* = g^* f^* on cohomology, as an exact integer identity
    left = induced_action(A @ B, k)
    right = induced_action(B, k) @ induced_action(A, k)
    assert np.array_equal(left, right)


def test_top_degree_action_is_det():
    A = np.array([[3, 1], [4, 2]])
    assert induced_action(A, 2)[0, 0] == 2


def test_expanding_subspace_cat():
    M = induced_action(np.array([[2, 1], [1, 1]]), 1)
    W = chronically_expanding_subspace(M, 1.0)
    assert W.shape == (2, 1)
    lam = (3 + 5 ** 0.5) / 2
    assert np.allclose(M @ W[:, 0], lam * W[:, 0])


def test_expanding_subspace_keeps_complex_pairs():
    M = np.array([[0.0, -2.0], [2.0, 0.0]])
    W = chronically_expanding_subspace(M, 1.0)
    assert W.shape == (2, 2)
    assert chronically_expanding_subspace(M, 3.0).shape == (2, 0)


def test_ambiguous_split_raises():
    with pytest.raises(AmbiguousSplitError):
        chronically_expanding_subspace(np.diag([2.0, 1.0]), 1.0)
    rep = CohomologySpectrum(1, np.diag([2.0, 1.0])).report(1.0)
    assert rep["basis"] is None and "error" in rep


def test_subspace_distance():
    assert subspace_distance(np.eye(2)[:, :1], np.array([[2.0], [0.0]])) < 1e-12
    assert subspace_distance(np.eye(2)[:, :1], np.eye(2)[:, 1:]) == pytest.approx(1.0)


def test_class_of_closed_form(rng):
    g = PeriodicGrid(2, 32)
    u = random_form(rng, 2, 0, 4).to_field(g)
    phi = FormField(g, 1, exterior_derivative(u).data + np.array([0.7, -0.2])[:, None, None])
    assert np.allclose(class_of_closed_form(phi), [0.7, -0.2], atol=1e-12)


def test_not_closed_raises():
    g = PeriodicGrid(2, 16)
    phi = FormField.from_functions(g, 1, [lambda x, y: np.sin(2 * np.pi * y), lambda x, y: 0 * x])
    with pytest.raises(NotClosedError):
        class_of_closed_form(phi)


def test_hodge_potential_recovers_form(rng):
    g = PeriodicGrid(2, 32)
    u = random_form(rng, 2, 0, 4).to_field(g)
    h0 = np.array([0.3, 1.1])
    phi = FormField(g, 1, exterior_derivative(u).data + h0[:, None, None])
    h, beta = hodge_potential(phi)
    assert np.allclose(h.data[:, 0, 0], h0)
    assert np.max(np.abs(h.data + exterior_derivative(beta).data - phi.data)) < 1e-10
    # minimal-norm potential has zero mean
    assert abs(np.mean(beta.data)) < 1e-12


def test_fourier_hodge_potential_exact(rng):
    u = random_form(rng, 2, 0, 3)
    h, beta = fourier_hodge_potential(u.d())
    assert np.allclose(h, 0.0)
    assert np.max(np.abs(beta.d().coefs - u.d().coefs)) < 1e-12


def test_holder_bound_values():
    assert holder_bound(0.5, 2.0) == pytest.approx(0.5)
    assert holder_bound(0.5, 1.0 + 1e-9) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        holder_bound(0.5, 0.9)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_empirical_holder_weierstrass(alpha):
    N = 8192
    g = PeriodicGrid(1, N)
    x = g.coords()[0]
    u = sum(2.0 ** (-alpha * j) * np.cos(2 * np.pi * 2 ** j * x) for j in range(12))
    est = empirical_holder(FormField(g, 0, u[None], smooth=False))
    assert abs(est.alpha_emp - alpha) < 0.1


def test_empirical_holder_constant_undefined():
    g = PeriodicGrid(1, 256)
    est = empirical_holder(FormField.constant(g, 0, [3.0]))
    assert est.undefined
