import numpy as np
import pytest

from conftest import random_form
from eclab.currents import AtomCurrent, FormCurrent
from eclab.grid import FormField, PeriodicGrid, exterior_derivative
from eclab.smear import (SmearError, SmearSpec, dual_pairing, flow, smear_at_points,
                         smear_current, smear_form, time_function)

BOX2 = SmearSpec(box=[(0.1, 0.9), (0.1, 0.9)])
BOX1 = SmearSpec(box=[(0.2, 0.8)])


def test_spec_validation_and_roundtrip():
    with pytest.raises(SmearError):
        SmearSpec(box=[(0.0, 0.5)])
    with pytest.raises(SmearError):
        SmearSpec(box=[(0.2, 0.8)], rho_radius=(-1.0,))
    assert SmearSpec.from_dict(BOX2.to_dict()) == BOX2


def test_rho_rule_normalized():
    t, w = BOX2.t_rule(0)
    assert np.sum(w) == pytest.approx(1.0, abs=1e-12)


def test_flow_group_law(rng):
    x = rng.uniform(0, 1, (20, 2))
    s, t = rng.uniform(-0.3, 0.3, (20, 2)), rng.uniform(-0.3, 0.3, (20, 2))
    assert np.max(np.abs(flow(BOX2, flow(BOX2, x, s), t) - flow(BOX2, x, s + t))) < 1e-8


def test_flow_fixes_points_outside_every_interval():
    x = np.array([[0.05, 0.95], [0.95, 0.02]])
    assert np.array_equal(flow(BOX2, x, [0.3, -0.2]), x)


def test_flow_matches_time_function():
    x = np.array([0.3, 0.5, 0.7])
    y = flow(BOX1, x[:, None], [0.2])[:, 0]
    dT = time_function(BOX1, 0, y) - time_function(BOX1, 0, x)
    assert np.allclose(dT, 0.2, atol=1e-8)


@pytest.mark.parametrize("k", [0, 1])
def test_d_commutes_with_smear(rng, k):
    g = PeriodicGrid(2, 128)
    phi = random_form(rng, 2, k, 4).to_field(g)
    lhs = exterior_derivative(smear_form(BOX2, phi))
    rhs = smear_form(BOX2, exterior_derivative(phi))
    assert np.max(np.abs(lhs.data - rhs.data)) < 1e-7


def test_smear_keeps_constants_and_outside_values(rng):
    g = PeriodicGrid(2, 64)
    c = smear_form(BOX2, FormField.constant(g, 0, [2.0]))
    assert np.max(np.abs(c.data - 2.0)) < 1e-12
    phi = random_form(rng, 2, 0, 3).to_field(g)
    S = smear_form(BOX2, phi)
    x = g.axes()[0]
    out = (x <= 0.1) | (x >= 0.9)
    assert np.max(np.abs((S.data - phi.data)[0][np.ix_(out, out)])) < 1e-12


def test_pointwise_smear_matches_grid(rng):
    g = PeriodicGrid(1, 128)
    phi = random_form(rng, 1, 0, 3).to_field(g)
    S = smear_form(BOX1, phi)
    idx = np.array([20, 50, 64, 90])
    got = smear_at_points(BOX1, phi, g.axes()[0][idx, None])
    assert np.allclose(got, S.data[0][idx], atol=1e-9)


def test_atom_smear_mass_and_duality(rng):
    g = PeriodicGrid(2, 128)
    A = AtomCurrent([[0.45, 0.55]], [1.5])
    S = smear_current(BOX2, A, g)
    assert isinstance(S, FormCurrent)
    assert S.pair(FormField.constant(g, 0, [1.0])) == pytest.approx(1.5, abs=1e-6)
    phi = random_form(rng, 2, 0, 4).to_field(g)
    assert S.pair(phi) == pytest.approx(dual_pairing(BOX2, A, phi), abs=1e-6)


def test_atom_outside_box_fixed_and_strip_rejected():
    g = PeriodicGrid(2, 32)
    A = AtomCurrent([[0.05, 0.95]], [1.0])
    assert smear_current(BOX2, A, g) is A
    with pytest.raises(SmearError):
        smear_current(BOX2, AtomCurrent([[0.5, 0.95]], [1.0]), g)


def test_step_field_becomes_continuous():
    jumps = []
    for N in (256, 1024):
        g = PeriodicGrid(1, N)
        x = g.axes()[0]
        step = FormField(g, 0, (x < 0.5).astype(float)[None], smooth=False)
        S = smear_form(BOX1, step).data[0]
        inside = (x[:-1] > 0.2) & (x[:-1] < 0.8)
        jumps.append(np.max(np.abs(np.diff(S))[inside]))
    # the unit jump is gone and adjacent differences shrink with the spacing
    assert jumps[1] < 0.05
    assert jumps[1] < 0.35 * jumps[0]
