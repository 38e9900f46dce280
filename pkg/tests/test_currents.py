import json

import numpy as np
import pytest

from conftest import random_form
from eclab.cohomology import class_of_closed_form, induced_action
from eclab.currents import (AtomCurrent, CurveCurrent, FormCurrent, PullbackSeries, mode_box,
                            dump_current, form_current_sign, pullback_atoms, pullback_curve,
                            pullback_current_dual, pullback_field, pullback_form,
                            pullback_form_current, pushforward_form, weak_distance, weak_norm)
from eclab.grid import (DegreeError, FormField, FourierForm, PeriodicGrid, exterior_derivative,
                        integrate, wedge)
from eclab.torus_map import TorusMap


def test_form_current_sign():
    assert [form_current_sign(k) for k in range(4)] == [1.0, -1.0, -1.0, 1.0]


def test_density_current_pairs_as_integral():
    g = PeriodicGrid(1, 64)
    dens = FormField.from_functions(g, 1, [lambda x: 1 + 0.5 * np.cos(2 * np.pi * x)])
    C = FormCurrent.from_density(dens)
    phi = FormField.from_functions(g, 0, [lambda x: np.cos(2 * np.pi * x)])
    assert C.pair(phi) == pytest.approx(0.25, abs=1e-12)
    assert C.pair(FormField.constant(g, 0, [1.0])) == pytest.approx(1.0)


def test_harmonic_current_class_roundtrip():
    g = PeriodicGrid(2, 16)
    C = FormCurrent(g, 1, harmonic=np.array([0.4, -1.3]))
    assert np.allclose(C.cohomology_class(), [0.4, -1.3])


def test_exact_current_pairs_zero_with_closed(rng):
    g = PeriodicGrid(2, 32)
    f = TorusMap([[2, 1], [1, 1]])
    u = random_form(rng, 2, 0, 3)
    C = FormCurrent(g, 1, potential=PullbackSeries(f, 0, {0: u, 2: u * 0.5}))
    assert np.allclose(C.cohomology_class(), 0.0, atol=1e-12)


def test_atoms_pair_and_pullback(doubling):
    g = PeriodicGrid(1, 64)
    phi = FormField.from_functions(g, 0, [lambda x: np.sin(2 * np.pi * x)])
    a = AtomCurrent([[0.25]], [1.0])
    assert a.pair(phi) == pytest.approx(1.0)
    pa = pullback_atoms(doubling, AtomCurrent([[0.5]], [1.0]))
    assert len(pa.weights) == 2
    assert np.max(np.abs(doubling.evaluate(pa.points) - 0.5)) < 1e-12
    assert pa.pair(phi) == pytest.approx(pullback_current_dual(doubling, AtomCurrent([[0.5]], [1.0]), phi),
                                         abs=1e-10)


def test_atom_degree_errors():
    g = PeriodicGrid(1, 16)
    with pytest.raises(DegreeError):
        AtomCurrent([[0.1]], [1.0]).pair(FormField.zeros(g, 1))
    with pytest.raises(ValueError):
        AtomCurrent([[0.1], [0.2]], [1.0])


def test_curve_pairing_and_class():
    g = PeriodicGrid(2, 32)
    Y = CurveCurrent.line([1, 0])
    assert Y.pair(FormField.constant(g, 1, [1.0, 0.0])) == pytest.approx(1.0)
    assert Y.pair(FormField.constant(g, 1, [0.0, 1.0])) == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(CurveCurrent.line([0, 1]).cohomology_class(), [-1.0, 0.0])
    assert Y.length() == pytest.approx(1.0)


def test_curve_pullback_matches_dual(two_i, rng):
    Y = CurveCurrent.line([0, 1])
    P = pullback_curve(two_i, Y)
    assert len(P.components) == 2
    assert all(np.array_equal(c.winding, [0, 1]) for c in P.components)
    g = PeriodicGrid(2, 32)
    for _ in range(3):
        phi = random_form(rng, 2, 1, 2).to_field(g)
        assert P.pair(phi) == pytest.approx(pullback_current_dual(two_i, Y, phi), abs=1e-6)
    # class transforms by the induced action
    M = induced_action(two_i.A, 1)
    assert np.allclose(P.cohomology_class(), M @ Y.cohomology_class(), atol=1e-8)


def test_pushforward_linear_doubling_closed_form():
    f = TorusMap([[2]])
    g = PeriodicGrid(1, 64)
    beta = FormField.from_functions(g, 1, [lambda x: np.sin(4 * np.pi * x)])
    # branches x = (y + b)/2: (1/2) sum_b sin(2 pi (y + b)) / 2
    want = 0.5 * np.sin(2 * np.pi * g.coords()[0])
    assert np.max(np.abs(pushforward_form(f, beta).data[0] - want)) < 1e-12
    beta1 = FormField.from_functions(g, 1, [lambda x: np.sin(2 * np.pi * x)])
    assert np.max(np.abs(pushforward_form(f, beta1).data)) < 1e-12


def test_pushforward_perturbed_two_branch_formula(doubling):
    g = PeriodicGrid(1, 32)
    beta = FourierForm.mode(1, 1, 0, (1,), 0.5j) + FourierForm.mode(1, 1, 0, (-1,), -0.5j)
    got = pushforward_form(doubling, beta, grid=g).data[0]
    for i, y in enumerate(g.axes()[0]):
        x = doubling.preimages([y]).points()[:, 0]
        fp = 2 + 0.1 * np.pi * np.cos(2 * np.pi * x)
        assert got[i] == pytest.approx(0.5 * np.sum(-np.sin(2 * np.pi * x) / fp), abs=1e-12)


@pytest.mark.parametrize("name", ["doubling", "two_i"])
def test_pushforward_inverts_pullback(name, request, rng):
    f = request.getfixturevalue(name)
    g = PeriodicGrid(f.n, 64 if f.n == 1 else 32)
    assert np.max(np.abs(pushforward_form(f, FormField.constant(g, 0, [1.0])).data - 1)) < 1e-13
    for k in range(f.n + 1):
        b = random_form(rng, f.n, k, 3)
        back = pushforward_form(f, pullback_form(f, b), grid=g)
        assert np.max(np.abs(back.data - b.to_field(g).data)) < 1e-9


@pytest.mark.parametrize("name", ["doubling", "two_i"])
def test_adjointness_with_degree_factor(name, request, rng):
    f = request.getfixturevalue(name)
    G = PeriodicGrid(f.n, 256 if f.n == 1 else 128)
    for k in range(f.n + 1):
        b, a = random_form(rng, f.n, k, 3), random_form(rng, f.n, f.n - k, 3)
        lhs = integrate(wedge(pullback_form(f, b).to_field(G), a.to_field(G)))
        rhs = integrate(wedge(b.to_field(G), pushforward_form(f, a, grid=G)))
        assert lhs == pytest.approx(f.degree() * rhs, abs=1e-10)


def test_linear_pullback_field_exact(cat, rng):
    g = PeriodicGrid(2, 32)
    b = random_form(rng, 2, 1, 3)
    grid_pb = pullback_field(cat, b.to_field(g))
    lazy = pullback_form(cat, b).to_field(g)
    assert np.max(np.abs(grid_pb.data - lazy.data)) < 1e-12


def test_naturality_on_closed_forms(two_i, rng):
    g = PeriodicGrid(2, 64)
    M = induced_action(two_i.A, 1)
    for _ in range(5):
        h = rng.normal(size=2)
        u = random_form(rng, 2, 0, 3)
        phi = FourierForm.zeros(2, 1, 0)
        phi.coefs[:, 0, 0] = h
        phi = phi + u.d()
        pb = pullback_form(two_i, phi).to_field(g)
        assert np.allclose(class_of_closed_form(pb, tol=1e-6), M @ h, atol=1e-8)


def test_form_current_pullback_matches_dual(two_i, rng):
    g = PeriodicGrid(2, 32)
    C = FormCurrent(g, 1, harmonic=np.array([1.0, 0.3]))
    P = pullback_form_current(two_i, C)
    assert np.allclose(P.class_vector(), induced_action(two_i.A, 1) @ [1.0, 0.3])
    for _ in range(3):
        phi = random_form(rng, 2, 1, 2).to_field(g)
        assert P.pair(phi) == pytest.approx(pullback_current_dual(two_i, C, phi), abs=1e-8)


def test_weak_distance_basic():
    g = PeriodicGrid(2, 16)
    A = FormCurrent(g, 1, harmonic=np.array([1.0, 0.0]))
    B = FormCurrent(g, 1, harmonic=np.array([0.5, 0.0]))
    assert weak_distance(A, A) == 0.0
    assert weak_distance(A, B) == pytest.approx(weak_distance(B, A))
    assert weak_distance(A, B) == pytest.approx(weak_norm(A - B))
    with pytest.raises(ValueError):
        weak_distance(A, B, F_test=-1)


def test_dump_current_manifest(tmp_path):
    g = PeriodicGrid(2, 16)
    dump_current(FormCurrent(g, 1, harmonic=np.array([1.0, 2.0])), tmp_path, "c")
    dump_current(CurveCurrent.line([1, 0], vertices=8), tmp_path, "y")
    dump_current(AtomCurrent([[0.1, 0.2]], [2.0]), tmp_path, "a")
    m = json.loads((tmp_path / "y.json").read_text())
    assert m["type"] == "curve" and m["components"][0]["count"] == 8
    raw = np.fromfile(tmp_path / "a.atoms.f64", dtype="<f8")
    assert np.allclose(raw, [0.1, 0.2, 2.0])
    assert json.loads((tmp_path / "c.json").read_text())["harmonic"] == [1.0, 2.0]


@pytest.mark.parametrize("name", ["doubling", "two_i"])
def test_box_coefficients_match_fine_sampling(name, request, rng):
    f = request.getfixturevalue(name)
    g = PeriodicGrid(f.n, 4096 if f.n == 1 else 512)
    mb = mode_box(f.n, 6)
    for q in (0, 1):
        b = random_form(rng, f.n, q, 3)
        S = PullbackSeries(f, q, {0: b, 1: b * 0.5, 2: b * 0.25})
        box = S.box_coefficients(6)
        hat = np.fft.fftn(S.sample(g), axes=tuple(range(1, f.n + 1))) / g.size
        ref = hat[(slice(None),) + tuple(mb[:, a] % g.N for a in range(f.n))]
        got = box.coefs[(slice(None),) + tuple(box.B + mb[:, a] for a in range(f.n))]
        assert np.max(np.abs(ref - got)) < 1e-12


def test_box_coefficients_skip_linear_maps(cat, rng):
    S = PullbackSeries(cat, 0, {0: random_form(rng, 2, 0, 2)})
    assert S.box_coefficients(4) is None
