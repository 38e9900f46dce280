import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from eclab import kernels
from eclab.torus_map import TorusMap

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled extension not built")

MAPS = [
    {"A": [[2]], "perturbation": [{"coord": 0, "freq": [1], "sin": 0.05}]},
    {"A": [[-3]], "perturbation": [{"coord": 0, "freq": [2], "cos": 0.02, "sin": 0.01}]},
    {"A": [[2, 0], [0, 2]], "perturbation": [
        {"coord": 0, "freq": [0, 1], "sin": 0.03}, {"coord": 1, "freq": [1, 1], "cos": 0.02}]},
    {"A": [[2, 1], [1, 1]]},
]


@needs_cython
@pytest.mark.parametrize("spec", MAPS)
def test_backends_agree(spec):
    f = TorusMap.from_spec(spec)
    flat = f._flat
    rng = np.random.default_rng(5)
    x = rng.random((257, f.n))
    yp, jp = py.lift_jacobian(x, *flat)
    yc, jc = cy.lift_jacobian(x, *flat)
    assert np.max(np.abs(yp - yc)) < 1e-14 and np.max(np.abs(jp - jc)) < 1e-13

    seeds = yp @ np.linalg.inv(f.A.astype(float)).T
    xp, rp, _ = py.newton_solve(yp, seeds, *flat)
    xc, rc, _ = cy.newton_solve(yp, seeds, *flat)
    assert np.max(np.abs(xp - xc)) < 1e-12
    assert np.max(rp) < 1e-11 and np.max(rc) < 1e-11

    modes = rng.integers(-3, 4, size=(12, f.n)).astype(float)
    coefs = rng.normal(size=(12, f.n)) + 1j * rng.normal(size=(12, f.n))
    offsets = np.array([0, 4, 4, 9, 12], dtype=np.int64)
    for degree in (0, 1):
        c = coefs[:, :1] if degree == 0 else coefs
        op = py.orbit_series(x, *flat, modes, c, offsets, degree)
        oc = cy.orbit_series(x, *flat, modes, c, offsets, degree)
        assert np.max(np.abs(op - oc)) < 1e-11 * max(1.0, np.max(np.abs(op)))


def test_orbit_series_matches_direct_composition():
    f = TorusMap.from_spec(MAPS[0])
    x = np.linspace(0, 1, 33, endpoint=False)[:, None]
    modes = np.array([[1.0], [2.0]])
    coefs = np.array([[1.0 + 0.5j], [0.3j]])
    offsets = np.array([0, 1, 1, 2], dtype=np.int64)
    got = kernels.orbit_series(x, *f._flat, modes, coefs, offsets, 0)[:, 0]
    f2x = f.evaluate(f.evaluate(x))
    want = (coefs[0, 0] * np.exp(2j * np.pi * x[:, 0])).real + (coefs[1, 0] * np.exp(4j * np.pi * f2x[:, 0])).real
    assert np.max(np.abs(got - want)) < 1e-12


def test_env_forces_python_backend():
    env = dict(os.environ, ECLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from eclab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
