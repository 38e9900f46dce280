import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_form
from eclab.grid import (DegreeError, FormField, FourierForm, PeriodicGrid, comass_norm, compound,
                        dump_field, exterior_derivative, integrate, load_field, multi_indices,
                        perm_sign, wedge)


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        PeriodicGrid(2, 48)
    with pytest.raises(ValueError):
        PeriodicGrid(3, 16)


def test_points_row_major():
    g = PeriodicGrid(2, 8)
    p = g.points()
    assert p.shape == (64, 2)
    assert np.allclose(p[1], [0.0, 1 / 8])


def test_perm_sign():
    assert perm_sign((0, 1)) == 1
    assert perm_sign((1, 0)) == -1
    assert perm_sign((2, 0, 1)) == 1
    assert perm_sign((1, 1)) == 0


def test_d_of_sine_is_exact():
    g = PeriodicGrid(1, 32)
    u = FormField.from_functions(g, 0, [lambda x: np.sin(2 * np.pi * 3 * x)])
    du = exterior_derivative(u)
    X = g.coords()[0]
    assert np.max(np.abs(du.data[0] - 6 * np.pi * np.cos(6 * np.pi * X))) < 1e-10


def test_dd_is_zero(rng):
    g = PeriodicGrid(2, 32)
    u = random_form(rng, 2, 0, 5).to_field(g)
    assert comass_norm(exterior_derivative(exterior_derivative(u))) < 1e-9


def test_d_top_degree_raises():
    g = PeriodicGrid(1, 16)
    with pytest.raises(DegreeError):
        exterior_derivative(FormField.zeros(g, 1))


def test_wedge_antisymmetry():
    g = PeriodicGrid(2, 8)
    dx = FormField.constant(g, 1, [1.0, 0.0])
    dy = FormField.constant(g, 1, [0.0, 1.0])
    assert np.allclose(wedge(dx, dy).data, 1.0)
    assert np.allclose(wedge(dy, dx).data, -1.0)
    assert np.allclose(wedge(dx, dx).data, 0.0)


def test_integrate_and_stokes(rng):
    g = PeriodicGrid(2, 32)
    b = random_form(rng, 2, 1, 4).to_field(g)
    assert abs(integrate(exterior_derivative(b))) < 1e-12
    assert integrate(FormField.constant(g, 2, [2.5])) == pytest.approx(2.5)


def test_compound_determinant():
    M = np.array([[2.0, 1.0], [1.0, 1.0]])
    assert compound(M, 2)[0, 0] == pytest.approx(1.0)
    assert np.allclose(compound(M, 1), M)
    assert np.allclose(compound(M, 0), 1.0)


def test_fourier_roundtrip(rng):
    u = random_form(rng, 2, 1, 3)
    g = PeriodicGrid(2, 16)
    back = FourierForm.from_field(u.to_field(g), B=u.B)
    assert np.max(np.abs(back.coefs - u.coefs)) < 1e-13


def test_fourier_d_matches_grid_d(rng):
    u = random_form(rng, 2, 0, 3)
    g = PeriodicGrid(2, 16)
    assert np.max(np.abs(u.d().to_field(g).data - exterior_derivative(u.to_field(g)).data)) < 1e-10


def test_evaluate_off_grid():
    u = FourierForm.mode(1, 0, 0, (1,), 0.5) + FourierForm.mode(1, 0, 0, (-1,), 0.5)
    assert u.evaluate([[0.125]])[0, 0] == pytest.approx(np.cos(np.pi / 4))


def test_dump_roundtrip(tmp_path, rng):
    g = PeriodicGrid(2, 16)
    phi = random_form(rng, 2, 1, 3).to_field(g)
    dump_field(phi, tmp_path, "phi")
    back = load_field(tmp_path, "phi")
    assert back.k == 1 and back.grid == g
    assert np.array_equal(back.data, phi.data)
    raw = np.fromfile(tmp_path / "phi.1.f64", dtype="<f8")
    assert np.array_equal(raw, phi.data[1].ravel())


@settings(max_examples=25, deadline=None)
@given(n=st.sampled_from([1, 2]), k=st.integers(0, 2), l=st.integers(0, 2))
def test_wedge_graded_commutativity(n, k, l):
    if k > n or l > n or k + l > n:
        return
    r = np.random.default_rng(k + 3 * l + 7 * n)
    g = PeriodicGrid(n, 8)
    a = FormField(g, k, r.normal(size=(len(multi_indices(n, k)),) + g.shape))
    b = FormField(g, l, r.normal(size=(len(multi_indices(n, l)),) + g.shape))
    assert np.allclose(wedge(a, b).data, (-1) ** (k * l) * wedge(b, a).data)
