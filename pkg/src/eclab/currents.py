"""Concrete currents on T^n: forms, weighted atoms and closed curves.

A ``FormCurrent`` of degree ``k`` is a sum of three optional parts:

* ``field``: a sampled ``FormField`` acting by ``s_k * integral(alpha ^ beta)``,
* ``harmonic``: a constant form given by its coefficient vector,
* ``potential``: ``d`` of a lazily evaluated series ``sum_j (f^j)^* b_j`` of
  band-limited ``(k-1)``-forms, evaluated pointwise along orbits.

The last part is how rescaled pullbacks are stored: pulling back shifts every
series term one step deeper instead of resampling a roughening field.
``s_k = (-1)^binom(k+1, 2)`` is the form-as-current sign.
"""
from __future__ import annotations

import itertools
import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import comb

import numpy as np

from eclab import kernels
from eclab.cohomology import fourier_hodge_potential, induced_action
from eclab.grid import (DegreeError, FormField, FourierForm, PeriodicGrid, compound,
                        integrate, multi_indices, perm_sign, wedge, wedge_table)
from eclab.torus_map import BranchEnumerationError, TorusMap

TWO_PI = 2.0 * np.pi
F_TEST_DEFAULT = 8


def form_current_sign(k):
    return -1.0 if comb(k + 1, 2) % 2 else 1.0


# ----------------------------------------------------------------------
# pullback series

_PSI_CACHE = {}


def harmonic_pullback_potential(f, k, h):
    """Band-limited ``psi`` with ``f^* s(h) = s(M_k h) + d psi`` (``s`` = constant form)."""
    key = (id(f), k)
    if key not in _PSI_CACHE:
        _PSI_CACHE[key] = (f, _psi_basis(f, k))
    basis = _PSI_CACHE[key][1]
    h = np.asarray(h, dtype=float)
    out = None
    for coef, psi in zip(h, basis):
        if coef != 0.0 and psi is not None:
            out = psi * coef if out is None else out + psi * coef
    return out


def _psi_basis(f, k):
    n = f.n
    if k == 0 or f.is_linear:
        return [None] * len(multi_indices(n, k))
    N = max(16, 1 << int(np.ceil(np.log2(4 * k * f.bandwidth + 4))))
    grid = PeriodicGrid(n, N)
    C = compound(f.grid_jacobian(grid), k)  # shape grid + (c, c); [J, I]
    M = induced_action(f.A, k).astype(float)
    out = []
    for l in range(len(multi_indices(n, k))):
        # (f^* dx_{J_l})_I = C[J_l, I]
        data = np.moveaxis(C[..., l, :], -1, 0) - M[:, l].reshape((-1,) + (1,) * n)
        ff = FourierForm.from_field(FormField(grid, k, data), B=min(k * f.bandwidth, N // 2 - 1))
        _, psi = fourier_hodge_potential(ff)
        out.append(psi)
    return out


_ORBIT_CACHE = OrderedDict()
_ORBIT_CACHE_MAPS = 4
_ORBIT_STATES = 3
_ORBIT_LOCK = threading.RLock()


def _orbit_state(f, grid, depth):
    with _ORBIT_LOCK:
        return _orbit_state_locked(f, grid, depth)


def _orbit_state_locked(f, grid, depth):
    """``(f^depth x, D(f^depth)(x))`` for every grid point ``x``.

    A few recent depths are cached per (map, grid), so sampling series whose
    terms sit at consecutive depths costs one map step per new depth.
    """
    key = (id(f), grid.n, grid.N)
    entry = _ORBIT_CACHE.get(key)
    if entry is None or entry["f"] is not f:
        entry = {"f": f, "states": OrderedDict()}
        _ORBIT_CACHE[key] = entry
        while len(_ORBIT_CACHE) > _ORBIT_CACHE_MAPS:
            _ORBIT_CACHE.popitem(last=False)
    _ORBIT_CACHE.move_to_end(key)
    states = entry["states"]
    start = max((d for d in states if d <= depth), default=None)
    if start is None:
        x, D, start = grid.points(), np.broadcast_to(np.eye(f.n), (grid.size, f.n, f.n)), 0
    else:
        x, D = states[start]
    for _ in range(depth - start):
        y, jac = f.lift_and_jacobian(x)
        D = jac @ D
        x = np.mod(y, 1.0)
    states[depth] = (x, D)
    states.move_to_end(depth)
    while len(states) > _ORBIT_STATES:
        states.popitem(last=False)
    return x, D


@dataclass(frozen=True, eq=False)
class PullbackSeries:
    """``sum_j (f^j)^* terms[j]`` for band-limited forms ``terms[j]`` of one degree."""

    f: TorusMap
    degree: int
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.degree > 1:
            raise DegreeError("series potentials of degree > 1 are not supported")

    @property
    def depth(self):
        return max(self.terms) + 1 if self.terms else 0

    def _combine(self, other, sign):
        if other.f is not self.f or other.degree != self.degree:
            raise ValueError("series must share map and degree")
        terms = dict(self.terms)
        for j, b in other.terms.items():
            b = b * sign
            terms[j] = terms[j] + b if j in terms else b
        return PullbackSeries(self.f, self.degree, terms)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, c):
        return PullbackSeries(self.f, self.degree, {j: b * c for j, b in self.terms.items()})

    __rmul__ = __mul__

    def pullback(self):
        return PullbackSeries(self.f, self.degree, {j + 1: b for j, b in self.terms.items()})

    def with_term(self, j, b):
        if b is None:
            return self
        return self + PullbackSeries(self.f, self.degree, {j: b})

    def term_sup(self, j):
        b = self.terms.get(j)
        return float(np.sum(np.abs(b.coefs))) if b is not None else 0.0

    def _flatten(self, tol=0.0):
        depth = self.depth
        modes, coefs, offsets = [], [], [0]
        ncomp = len(multi_indices(self.f.n, self.degree))
        for j in range(depth):
            b = self.terms.get(j)
            if b is not None and not b.is_zero(tol):
                m, c = b.mode_list(tol)
                modes.append(m)
                coefs.append(c)
                offsets.append(offsets[-1] + len(m))
            else:
                offsets.append(offsets[-1])
        n = self.f.n
        modes = np.concatenate(modes) if modes else np.zeros((0, n), dtype=np.int64)
        coefs = np.concatenate(coefs) if coefs else np.zeros((0, ncomp), dtype=complex)
        return modes, coefs, np.array(offsets, dtype=np.int64)

    def evaluate(self, points):
        """Series values at ``points (P, n)``; returns ``(P, ncomp)``."""
        points = np.mod(np.asarray(points, dtype=float).reshape(-1, self.f.n), 1.0)
        modes, coefs, offsets = self._flatten()
        if len(modes) == 0:
            return np.zeros((points.shape[0], coefs.shape[1]))
        last = int(np.searchsorted(offsets, offsets[-1]))  # skip trailing empty depths
        offsets = offsets[:last + 1]
        return kernels.orbit_series(points, *self.f._flat, modes.astype(float), coefs,
                                    offsets, self.degree)

    def sample(self, grid):
        """Series sampled on a grid, shape ``(ncomp,) + grid.shape``.

        Linear maps send grid points to grid points, so their orbits are
        followed in exact integer arithmetic.
        """
        if self.f.is_linear:
            return self._sample_linear(grid)
        ncomp = len(multi_indices(self.f.n, self.degree))
        out = np.zeros((grid.size, ncomp))
        for j in sorted(self.terms):
            b = self.terms[j]
            if b.is_zero():
                continue
            x, D = _orbit_state(self.f, grid, j)
            vals = b.evaluate(x)
            out += vals if self.degree == 0 else np.einsum("pj,pji->pi", vals, D)
        return out.T.reshape((-1,) + grid.shape)

    def _sample_linear(self, grid):
        n, N = grid.n, grid.N
        idx = np.stack([c.ravel() for c in np.meshgrid(*([np.arange(N)] * n), indexing="ij")], axis=1)
        A = self.f.A
        ncomp = len(multi_indices(n, self.degree))
        out = np.zeros((idx.shape[0], ncomp))
        D = np.eye(n)
        for j in range(self.depth):
            b = self.terms.get(j)
            if b is not None and not b.is_zero():
                vals = b.evaluate(idx / N)
                out += vals if self.degree == 0 else vals @ D
            idx = (idx @ A.T) % N
            D = A.astype(float) @ D
        return out.T.reshape((-1,) + grid.shape)

    def box_coefficients(self, B):
        """Fourier coefficients of the series on the box ``|m_i| <= B``.

        Returns ``None`` when the projected-pullback route does not apply
        (see ``projected_pullback_matrix``); callers then sample on a grid.
        """
        if not self.terms or not _projection_applies(self.f, self.degree, B):
            return None
        B = max([B] + [b.B for b in self.terms.values()]) + PROJECTION_MARGIN
        R = projected_pullback_matrix(self.f, self.degree, B)
        v = np.zeros(R.shape[0], dtype=complex)
        for j in range(self.depth - 1, -1, -1):
            v = R @ v
            b = self.terms.get(j)
            if b is not None:
                v += _pad_coefs(b, B).ravel()
        return FourierForm(self.f.n, self.degree, B, v.reshape((-1,) + (2 * B + 1,) * self.f.n))


# ----------------------------------------------------------------------
# projected pullback on a Fourier box
#
# For an expanding nonlinear cover, (f^j)^* b oscillates at frequency ~|A|^j and
# aliases on any fixed grid, while its low Fourier coefficients stay smooth in
# j. Iterating R = P_B f^* (pullback, then truncation to the box) keeps them
# exactly up to the truncation: pullback only raises frequencies, up to a spread
# that decays like Bessel coefficients of the perturbation, so modes dropped
# from the box never feed back into it.

PROJECTION_MARGIN = 4
PROJECTION_MAX_SIZE = 2500
_PROJ_CACHE = {}


def _projection_applies(f, q, B):
    if f.is_linear:
        return False
    n = f.n
    size = len(multi_indices(n, q)) * (2 * (B + PROJECTION_MARGIN) + 1) ** n
    if size > PROJECTION_MAX_SIZE:
        return False
    return float(np.linalg.norm(np.linalg.inv(f.A.astype(float)), 2)) < 1.0


def _pad_coefs(b, B):
    if b.B > B:
        raise ValueError("form does not fit in the box")
    pad = B - b.B
    return np.pad(b.coefs, [(0, 0)] + [(pad, pad)] * b.n)


def projected_pullback_matrix(f, q, B):
    """Matrix of ``P_B f^*`` on degree-``q`` coefficient vectors of the box ``B``.

    Vectors are ``FourierForm.coefs`` for box ``B`` flattened in C order.
    Columns are computed by sampling ``f^*(exp(2 pi i m.x) dx_I)`` on a grid
    fine enough that nothing aliases into the box.
    """
    key = (id(f), q, B)
    hit = _PROJ_CACHE.get(key)
    if hit is not None and hit[0] is f:
        return hit[1]
    n = f.n
    amp = sum(abs(t.cos) + abs(t.sin) for t in f.perturbation)
    spread = f.bandwidth * (int(np.ceil(TWO_PI * np.e * B * amp)) + 12)
    top = int(np.max(np.abs(f.A).sum(axis=0))) * B + B + spread
    G = 1 << int(np.ceil(np.log2(top + 1)))
    grid = PeriodicGrid(n, G)
    y, jac = f.lift_and_jacobian(grid.points())
    C = compound(jac, q)  # [P, J, I]: (f^* dx_J)_I
    mb = mode_box(n, B)
    ncomp = len(multi_indices(n, q))
    M = len(mb)
    sel = np.arange(-B, B + 1) % G
    R = np.zeros((ncomp, M, ncomp, M), dtype=complex)  # rows (I, m'), columns (J, m)
    chunk = max(1, (1 << 21) // grid.size)
    for lo in range(0, M, chunk):
        ms = mb[lo:lo + chunk].astype(float)
        E = np.exp(1j * TWO_PI * (y @ ms.T))  # (P, chunk)
        for J in range(ncomp):
            vals = E[:, :, None] * C[:, J, None, :]  # (P, chunk, I)
            vals = np.moveaxis(vals, 0, -1).reshape((len(ms), ncomp) + grid.shape)
            hat = np.fft.fftn(vals, axes=tuple(range(2, n + 2))) / grid.size
            hat = hat[np.ix_(range(len(ms)), range(ncomp), *([sel] * n))]
            R[:, :, J, lo:lo + len(ms)] = np.moveaxis(hat.reshape(len(ms), ncomp, M), 0, -1)
    R = R.reshape(ncomp * M, ncomp * M)
    _PROJ_CACHE[key] = (f, R)
    return R


# ----------------------------------------------------------------------
# dictionary of Fourier test forms

def mode_box(n, F):
    """Integer modes ``m`` with ``|m_i| <= F`` as ``(M, n)`` in C order."""
    r = np.arange(-F, F + 1)
    return np.stack([c.ravel() for c in np.meshgrid(*([r] * n), indexing="ij")], axis=1)


def dictionary_mask(n, F):
    """Half of the mode box (``m`` lexicographically >= 0) so cos/sin pairs are not repeated."""
    m = mode_box(n, F)
    keep = np.zeros(len(m), dtype=bool)
    for i, v in enumerate(m):
        nz = v[v != 0]
        keep[i] = len(nz) == 0 or nz[0] > 0
    return keep


def _exp_axes(points, F):
    """``exp(2 pi i m x_a)`` for ``m = -F..F`` per axis: list of ``(P, 2F+1)``."""
    r = np.arange(-F, F + 1)
    return [np.exp(1j * TWO_PI * np.outer(points[:, a], r)) for a in range(points.shape[1])]


def _weighted_mode_sums(points, weights, F):
    """``S[c, m] = sum_p weights[p, c] exp(2 pi i m.x_p)`` over the mode box."""
    E = _exp_axes(points, F)
    if points.shape[1] == 1:
        return weights.T @ E[0]
    out = np.einsum("pc,pa,pb->cab", weights, E[0], E[1], optimize=True)
    return out.reshape(weights.shape[1], -1)


class _CurrentBase:
    """Shared pairing helpers; subclasses define ``degree``, ``n`` and ``pair_modes``."""

    def pair(self, phi):
        raise NotImplementedError

    def pair_modes(self, F):
        """``<C, exp(2 pi i m.x) dx_J>`` for every ``J`` of degree ``n - k`` and
        every ``m`` in the box ``|m_i| <= F``; shape ``(ncomp, (2F+1)^n)``."""
        raise NotImplementedError

    def dictionary_pairings(self, F=F_TEST_DEFAULT):
        """Pairings against the real dictionary ``cos/sin(2 pi m.x) dx_J``.

        Every dictionary form has comass one, so these are already normalized.
        """
        P = self.pair_modes(F)
        keep = dictionary_mask(self.n, F)
        m = mode_box(self.n, F)[keep]
        P = P[:, keep]
        nonzero = np.any(m != 0, axis=1)
        return np.concatenate([P.real.ravel(), P.imag[:, nonzero].ravel()])

    def cohomology_class(self):
        """Coefficients ``h`` of the constant form pairing like ``self`` on closed forms."""
        n, k = self.n, self.degree
        P0 = self.pair_modes(0)[:, 0].real  # pairing with dx_J, J of degree n - k
        G = np.zeros((len(multi_indices(n, n - k)), len(multi_indices(n, k))))
        for a, b, c, s in wedge_table(n, k, n - k):
            G[b, a] += form_current_sign(k) * s
        return np.linalg.solve(G, P0)


# ----------------------------------------------------------------------
# form currents

@dataclass(frozen=True, eq=False)
class FormCurrent(_CurrentBase):
    grid: PeriodicGrid
    degree: int
    field: FormField | None = None
    harmonic: np.ndarray | None = None
    potential: PullbackSeries | None = None
    quad_oversample: int = 4

    def __post_init__(self):
        if self.field is not None and (self.field.k != self.degree or self.field.grid != self.grid):
            raise DegreeError("field degree/grid mismatch")
        if self.harmonic is not None:
            h = np.asarray(self.harmonic, dtype=float).reshape(-1)
            if h.size != len(multi_indices(self.grid.n, self.degree)):
                raise DegreeError("harmonic coefficient count mismatch")
            object.__setattr__(self, "harmonic", h)
        if self.potential is not None and self.potential.degree != self.degree - 1:
            raise DegreeError("potential must have degree k - 1")

    @classmethod
    def from_field(cls, field, **kw):
        return cls(field.grid, field.k, field=field, **kw)

    @classmethod
    def from_density(cls, density):
        """Top-degree current pairing with 0-forms as ``integral(density * phi)``."""
        if density.k != density.grid.n:
            raise DegreeError("density must be top degree")
        return cls.from_field(density * form_current_sign(density.k))

    @property
    def n(self):
        return self.grid.n

    @property
    def ncomp(self):
        return len(multi_indices(self.n, self.degree))

    @property
    def quad_grid(self):
        return PeriodicGrid(self.n, self.grid.N * self.quad_oversample)

    # linear structure -------------------------------------------------
    def _parts(self):
        return self.field, self.harmonic, self.potential

    def _check(self, other):
        if not isinstance(other, FormCurrent) or other.degree != self.degree or other.grid != self.grid:
            raise DegreeError("currents must share degree and grid")

    @staticmethod
    def _add(a, b, sign):
        if a is None and b is None:
            return None
        if b is None:
            return a
        if a is None:
            return b * sign
        return a + b * sign

    def _combine(self, other, sign):
        self._check(other)
        return FormCurrent(self.grid, self.degree,
                           self._add(self.field, other.field, sign),
                           self._add(self.harmonic, other.harmonic, sign),
                           self._add(self.potential, other.potential, sign),
                           self.quad_oversample)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, c):
        return FormCurrent(self.grid, self.degree,
                           None if self.field is None else self.field * c,
                           None if self.harmonic is None else self.harmonic * c,
                           None if self.potential is None else self.potential * c,
                           self.quad_oversample)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    # sampling ---------------------------------------------------------
    @cached_property
    def _potential_samples(self):
        return self.potential.sample(self.quad_grid)

    def potential_field(self, grid=None):
        """The series potential sampled on ``grid`` (default: quadrature grid)."""
        if self.potential is None:
            return FormField.zeros(grid or self.quad_grid, self.degree - 1)
        if grid is None:
            return FormField(self.quad_grid, self.degree - 1, self._potential_samples, smooth=False)
        return FormField(grid, self.degree - 1, self.potential.sample(grid), smooth=False)

    def to_field(self, grid=None):
        """Pointwise coefficients ``field + h + d(potential)`` on ``grid``.

        The potential's derivative is evaluated exactly along orbits
        (``d`` commutes with pullback), so no numerical differentiation of a
        rough field takes place.
        """
        grid = grid or self.grid
        data = np.zeros((self.ncomp,) + grid.shape)
        if self.field is not None:
            data += self.field.data if grid == self.grid else self.field.resample(grid.N).data
        if self.harmonic is not None:
            data += self.harmonic.reshape((-1,) + (1,) * self.n)
        if self.potential is not None and self.potential.terms:
            dser = PullbackSeries(self.potential.f, self.degree,
                                  {j: b.d() for j, b in self.potential.terms.items()})
            data += dser.sample(grid)
        return FormField(grid, self.degree, data, smooth=self.potential is None)

    # pairing ----------------------------------------------------------
    def pair(self, phi):
        """``<C, phi>`` for a test form of degree ``n - k`` (FormField or FourierForm)."""
        n, k = self.n, self.degree
        if phi.k != n - k:
            raise DegreeError(f"degree-{k} current pairs with {n - k}-forms, got {phi.k}")
        s = form_current_sign(k)
        total = 0.0
        if self.field is not None:
            test = phi if isinstance(phi, FormField) and phi.grid == self.grid else _as_field(phi, self.grid)
            total += integrate(wedge(self.field, test))
        if self.harmonic is not None:
            ph = _as_fourier(phi)
            means = ph.coefs[(slice(None),) + (ph.B,) * n].real
            for a, b, c, sg in wedge_table(n, k, n - k):
                total += sg * self.harmonic[a] * means[b]
        if self.potential is not None and self.potential.terms:
            dphi = _as_fourier(phi).d()
            box = self._potential_box(dphi.B)
            if box is None:
                beta = self.potential_field()
                total += (-1.0) ** k * integrate(wedge(beta, dphi.to_field(self.quad_grid)))
            else:
                total += (-1.0) ** k * _fourier_wedge_integral(box, dphi)
        return s * total

    def pair_modes(self, F):
        n, k = self.n, self.degree
        s = form_current_sign(k)
        mb = mode_box(n, F)
        out = np.zeros((len(multi_indices(n, n - k)), len(mb)), dtype=complex)
        if self.field is not None:
            out += _field_mode_integrals(self.field.data, k, n, mb, self.grid.N)
        if self.harmonic is not None:
            zero = np.all(mb == 0, axis=1)
            for a, b, c, sg in wedge_table(n, k, n - k):
                out[b, zero] += sg * self.harmonic[a]
        if self.potential is not None and self.potential.terms:
            # <d beta, e dx_J> part: (-1)^k integral beta ^ d(e dx_J)
            bint = self._potential_mode_integrals(mb, F)  # (ncomp_b, M)
            for axis in range(n):
                for b_idx, J in enumerate(multi_indices(n, n - k)):
                    sgn_d = perm_sign((axis,) + J)
                    if not sgn_d:
                        continue
                    K = tuple(sorted((axis,) + J))
                    for a, I in enumerate(multi_indices(n, k - 1)):
                        sg = perm_sign(I + K)
                        if sg:
                            out[b_idx] += ((-1.0) ** k * sg * sgn_d * 1j * TWO_PI * mb[:, axis]
                                           * bint[a])
        return s * out

    def _potential_box(self, B):
        cache = self.__dict__.setdefault("_box_cache", {})
        if B not in cache:
            cache[B] = self.potential.box_coefficients(B)
        return cache[B]

    def _potential_mode_integrals(self, mb, F):
        """``integral beta_c exp(2 pi i m.x) dx`` for the series potential ``beta``."""
        box = self._potential_box(F)
        if box is None:
            return _mode_integrals(self._potential_samples, mb, self.quad_grid.N)
        idx = tuple(box.B - mb[:, a] for a in range(self.n))
        return box.coefs[(slice(None),) + idx]

    def class_vector(self):
        """Cohomology class; exact parts contribute nothing."""
        h = np.zeros(self.ncomp) if self.harmonic is None else self.harmonic.copy()
        if self.field is not None:
            h += np.mean(self.field.data, axis=tuple(range(1, self.n + 1)))
        return h


def _mode_integrals(samples, mb, N):
    """``integral u_c(x) exp(2 pi i m.x) dx`` for grid samples (trapezoid = FFT)."""
    n = mb.shape[1]
    hat = np.fft.fftn(samples, axes=tuple(range(1, n + 1))) / N ** n  # u_hat(m) with exp(-i...)
    idx = tuple((-mb[:, a]) % N for a in range(n))
    return hat[(slice(None),) + idx]


def _field_mode_integrals(data, k, n, mb, N):
    out = np.zeros((len(multi_indices(n, n - k)), len(mb)), dtype=complex)
    ints = _mode_integrals(data, mb, N)
    for a, b, c, sg in wedge_table(n, k, n - k):
        out[b] += sg * ints[a]
    return out


def _fourier_wedge_integral(u, v):
    """``integral(u ^ v)`` for complementary band-limited forms."""
    B = max(u.B, v.B)
    cu, cv = _pad_coefs(u, B), _pad_coefs(v, B)
    flip = (slice(None),) + (slice(None, None, -1),) * u.n  # m -> -m
    cv = cv[flip]
    total = 0.0
    for a, b, c, sg in wedge_table(u.n, u.k, v.k):
        total += sg * np.sum(cu[a] * cv[b])
    return float(total.real)


def _as_fourier(phi):
    if isinstance(phi, FourierForm):
        return phi
    return FourierForm.from_field(phi)


def _as_field(phi, grid):
    if isinstance(phi, FourierForm):
        return phi.to_field(grid)
    if phi.grid == grid:
        return phi
    if phi.smooth:
        return phi.resample(grid.N)
    vals = phi.evaluate(grid.points())
    return FormField(grid, phi.k, vals.T.reshape((-1,) + grid.shape), smooth=False)


# ----------------------------------------------------------------------
# atoms and curves

@dataclass(frozen=True, eq=False)
class AtomCurrent(_CurrentBase):
    """Weighted point masses; pairs with 0-forms as ``sum w_i phi(x_i)``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.mod(np.atleast_2d(np.asarray(self.points, dtype=float)), 1.0)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.size:
            raise ValueError("one weight per atom")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def degree(self):
        return self.n

    def mass(self):
        return float(np.sum(np.abs(self.weights)))

    def total_weight(self):
        return float(np.sum(self.weights))

    def pair(self, phi):
        if phi.k != 0:
            raise DegreeError("atoms pair with 0-forms")
        return float(np.dot(self.weights, phi.evaluate(self.points)[:, 0]))

    def pair_modes(self, F):
        return _weighted_mode_sums(self.points, self.weights[:, None], F)

    def support_cells(self, N):
        return sorted({tuple(c) for c in np.floor(self.points * N).astype(int) % N})


_GAUSS4 = np.polynomial.legendre.leggauss(4)
GAUSS4_NODES = 0.5 * (_GAUSS4[0] + 1.0)
GAUSS4_WEIGHTS = 0.5 * _GAUSS4[1]


@dataclass(frozen=True, eq=False)
class CurveComponent:
    """Closed polyline on T^2: lifted vertices and total lattice displacement.

    Vertex ``i + V`` is vertex ``i`` shifted by ``winding``.
    """

    vertices: np.ndarray
    winding: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        w = np.asarray(self.winding, dtype=np.int64).reshape(2)
        if len(v) < 3:
            raise ValueError("a closed curve needs at least three vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "winding", w)

    def extended(self, before=1, after=2):
        v, w, V = self.vertices, self.winding, len(self.vertices)
        idx = np.arange(-before, V + after)
        return v[idx % V] + np.floor_divide(idx, V)[:, None] * w[None, :]

    def nodes(self, interpolation="cubic", refine=1):
        """Quadrature nodes ``(positions, tangents, weights)`` along the curve."""
        P = self.extended()
        V = len(self.vertices)
        s = (np.arange(refine)[:, None] + GAUSS4_NODES[None, :]).ravel() / refine
        ws = np.tile(GAUSS4_WEIGHTS, refine) / refine
        P0, P1, P2, P3 = P[0:V], P[1:V + 1], P[2:V + 2], P[3:V + 3]
        t = s[None, :, None]
        if interpolation == "linear":
            pos = P1[:, None] + t * (P2 - P1)[:, None]
            tan = np.broadcast_to((P2 - P1)[:, None], pos.shape)
        elif interpolation == "cubic":
            # uniform Catmull-Rom segment between P1 and P2
            c1 = (-P0 + P2)[:, None]
            c2 = (2 * P0 - 5 * P1 + 4 * P2 - P3)[:, None]
            c3 = (-P0 + 3 * P1 - 3 * P2 + P3)[:, None]
            pos = P1[:, None] + 0.5 * (c1 * t + c2 * t ** 2 + c3 * t ** 3)
            tan = 0.5 * (c1 + 2 * c2 * t + 3 * c3 * t ** 2)
        else:
            raise ValueError("interpolation must be 'cubic' or 'linear'")
        W = np.broadcast_to(ws[None, :], (V, len(s))) * self.weight
        return pos.reshape(-1, 2), np.ascontiguousarray(tan).reshape(-1, 2), W.ravel()


@dataclass(frozen=True, eq=False)
class CurveCurrent(_CurrentBase):
    """Finite sum of weighted closed curves on T^2 (a current of degree 1)."""

    components: tuple
    interpolation: str = "cubic"
    refine: int = 1

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def line(cls, direction, offset=0.0, vertices=64, weight=1.0, **kw):
        """Closed geodesic through ``offset`` with primitive integer ``direction``."""
        d = np.asarray(direction, dtype=np.int64)
        s = np.arange(vertices)[:, None] / vertices
        v = np.asarray(offset, dtype=float) + s * d[None, :]
        return cls((CurveComponent(v, d, weight),), **kw)

    n = 2
    degree = 1

    def _all_nodes(self):
        parts = [c.nodes(self.interpolation, self.refine) for c in self.components]
        if not parts:
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
        return tuple(np.concatenate(p) for p in zip(*parts))

    def pair(self, phi):
        if phi.k != 1:
            raise DegreeError("curves pair with 1-forms")
        pos, tan, w = self._all_nodes()
        vals = phi.evaluate(pos)
        return float(np.sum(w * np.sum(vals * tan, axis=1)))

    def pair_modes(self, F):
        pos, tan, w = self._all_nodes()
        return _weighted_mode_sums(pos, w[:, None] * tan, F)

    def length(self):
        pos, tan, w = self._all_nodes()
        return float(np.sum(np.abs(w) * np.linalg.norm(tan, axis=1)))

    mass = length

    def vertex_count(self):
        return sum(len(c.vertices) for c in self.components)

    def support_cells(self, N):
        pos = np.concatenate([c.vertices for c in self.components]) if self.components else np.zeros((0, 2))
        return sorted({tuple(c) for c in np.floor(np.mod(pos, 1.0) * N).astype(int) % N})

    def __mul__(self, c):
        return replace(self, components=tuple(replace(p, weight=p.weight * c) for p in self.components))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)


# ----------------------------------------------------------------------
# pullback and pushforward

def pair(C, phi):
    """``<C, phi>`` for any of the concrete current types."""
    return C.pair(phi)


def pullback_field(f, phi, grid=None):
    """Pointwise pullback ``(f^* phi)_x = phi_{f(x)} o wedge^k D_x f`` on a grid."""
    grid = grid or phi.grid
    n, k = grid.n, phi.k
    pts = grid.points()
    if f.is_linear and grid == phi.grid:
        idx = np.floor(pts * grid.N + 0.5).astype(np.int64)
        img = (idx @ f.A.T) % grid.N
        vals = phi.data[(slice(None),) + tuple(img.T)].T
        C = np.broadcast_to(compound(f.A.astype(float), k), (len(pts),) + (vals.shape[1],) * 2)
    else:
        y, jac = f.lift_and_jacobian(pts)
        vals = phi.evaluate(np.mod(y, 1.0))
        C = compound(jac, k)
    out = np.einsum("pj,pji->pi", vals, C)
    return FormField(grid, k, out.T.reshape((-1,) + grid.shape), phi.smooth and f.is_linear)


@dataclass(frozen=True, eq=False)
class PulledBackForm:
    """Lazy ``f^* phi``, evaluated exactly at arbitrary points.

    Pullbacks by nonlinear maps are not band-limited, so sampling them on a
    grid and interpolating would alias; this keeps them pointwise.
    """

    f: TorusMap
    phi: object

    @property
    def k(self):
        return self.phi.k

    @property
    def n(self):
        return self.f.n

    def evaluate(self, points):
        y, jac = self.f.lift_and_jacobian(np.mod(np.asarray(points, dtype=float).reshape(-1, self.n), 1.0))
        return np.einsum("pj,pji->pi", self.phi.evaluate(np.mod(y, 1.0)), compound(jac, self.k))

    def to_field(self, grid):
        vals = self.evaluate(grid.points())
        return FormField(grid, self.k, vals.T.reshape((-1,) + grid.shape))


def pullback_form(f, phi):
    return PulledBackForm(f, phi)


def pullback_form_current(f, C):
    """Pullback of a form current.

    Sampled fields are pulled back pointwise. The harmonic part maps by the
    induced action plus an exact band-limited correction, and every potential
    term moves one step deeper in the orbit series.
    """
    if not isinstance(C, FormCurrent):
        raise TypeError("pullback_form_current needs a FormCurrent")
    n, k = C.n, C.degree
    fld = None if C.field is None else pullback_field(f, C.field)
    harm, pot = None, C.potential
    if pot is not None:
        if pot.f is not f:
            raise ValueError("series potential belongs to a different map")
        pot = pot.pullback()
    if C.harmonic is not None:
        harm = induced_action(f.A, k).astype(float) @ C.harmonic
        psi = harmonic_pullback_potential(f, k, C.harmonic)
        if psi is not None:
            pot = (pot or PullbackSeries(f, k - 1)).with_term(0, psi)
    return FormCurrent(C.grid, k, fld, harm, pot, C.quad_oversample)


def pushforward_form(f, beta, grid=None):
    """Branch average ``(1/deg f) sum_b sigma_b (g_b^* beta)`` over inverse branches ``g_b``.

    ``beta`` may be a ``FormField``, a ``FourierForm`` or a ``PulledBackForm``;
    the result is sampled on ``grid`` (default: the grid of ``beta``).
    """
    f.require_cover()
    grid = grid or beta.grid
    k = beta.k
    y = grid.points()
    x, sign = f.preimage_points(y)  # (P, d, n)
    P, d, n = x.shape
    flat = x.reshape(-1, n)
    _, jac = f.lift_and_jacobian(flat)
    Cinv = compound(np.linalg.inv(jac), k)  # d(g_b) = Df(x_b)^-1
    vals = beta.evaluate(flat)
    contrib = np.einsum("qj,qji->qi", vals, Cinv).reshape(P, d, -1)
    out = np.einsum("pd,pdi->pi", sign.astype(float), contrib) / f.degree()
    return FormField(grid, k, out.T.reshape((-1,) + grid.shape), getattr(beta, "smooth", True))


def pullback_current_dual(f, C, phi):
    """``<f^* C, phi>`` via the branch average: ``deg f * <C, f_* phi>``.

    With the averaged pushforward (``f_* 1 = 1``) the geometric preimage
    (each point or curve pulled back with multiplicity one) carries the
    extra factor ``deg f``.
    """
    return f.degree() * C.pair(pushforward_form(f, phi))


def pullback_atoms(f, C):
    """Each atom ``(y, w)`` becomes ``{(x_b, w sigma_b)}`` over all preimages."""
    try:
        x, sign = f.preimage_points(C.points)
    except BranchEnumerationError as exc:
        raise BranchEnumerationError(f"atom near a critical value: {exc}", exc.coset) from exc
    w = C.weights[:, None] * sign
    return AtomCurrent(x.reshape(-1, C.n), w.ravel())


def _continue_branches(f, path):
    """Newton continuation of every inverse branch along a lifted path ``(S, 2)``.

    Returns lifted preimage paths of shape ``(S, d, 2)``.
    """
    targets0 = path[0][None, :] + f.cosets
    x, res = f.solve_lift(targets0, targets0 @ f._Ainv.T)
    out = [x]
    for s in range(1, len(path)):
        t = path[s][None, :] + f.cosets
        x, res = f.solve_lift(t, x + (path[s] - path[s - 1]) @ f._Ainv.T)
        if np.any(res > 1e-9):
            raise BranchEnumerationError(f"branch continuation failed at vertex {s}")
        out.append(x)
    return np.array(out)


def _resample_closed(v, w, max_vertices):
    V = len(v)
    if max_vertices is None or V <= max_vertices:
        return v
    step = int(np.ceil(V / max_vertices))
    return v[::step]


def pullback_curve(f, Y, max_vertices=None, subdivide=1):
    """Geometric preimage ``f^{-1}(Y)`` as a curve current.

    Each component is sampled (``subdivide`` points per segment on its
    interpolant), lifted through every inverse branch by continuation, and
    the branch paths are glued according to the monodromy permutation. The
    result pairs like ``f^* Y``, including the orientation sign of ``f``.
    """
    f.require_cover()
    comps = []
    for comp in Y.components:
        V = len(comp.vertices)
        if subdivide > 1:
            s = np.arange(subdivide) / subdivide
            P = comp.extended()
            P0, P1, P2, P3 = P[0:V], P[1:V + 1], P[2:V + 2], P[3:V + 3]
            t = s[None, :, None]
            path = (P1[:, None] + 0.5 * ((-P0 + P2)[:, None] * t
                                         + (2 * P0 - 5 * P1 + 4 * P2 - P3)[:, None] * t ** 2
                                         + (-P0 + 3 * P1 - 3 * P2 + P3)[:, None] * t ** 3)).reshape(-1, 2)
        else:
            path = comp.vertices
        closed = np.vstack([path, path[:1] + comp.winding])
        lifted = _continue_branches(f, closed)  # (S+1, d, 2)
        start, end = lifted[0], lifted[-1]
        d = start.shape[0]
        perm, shift = np.empty(d, dtype=int), np.zeros((d, 2))
        for b in range(d):
            diff = end[b][None, :] - start
            m = np.round(diff)
            hit = np.flatnonzero(np.max(np.abs(diff - m), axis=1) < 1e-8)
            if len(hit) != 1:
                raise BranchEnumerationError("could not match branch endpoints")
            perm[b], shift[b] = hit[0], m[hit[0]]
        sigma = np.sign(np.linalg.det(f.jacobian(np.mod(start, 1.0))))
        seen = np.zeros(d, dtype=bool)
        for b0 in range(d):
            if seen[b0]:
                continue
            pieces, offset, b = [], np.zeros(2), b0
            while not seen[b]:
                seen[b] = True
                pieces.append(lifted[:-1, b] + offset)
                offset = offset + shift[b]
                b = perm[b]
            verts = np.vstack(pieces)
            winding = offset.astype(np.int64)
            verts = _resample_closed(verts - np.floor(verts[0]), winding, max_vertices)
            comps.append(CurveComponent(verts, winding, comp.weight * float(sigma[b0])))
    return replace(Y, components=tuple(comps))


# ----------------------------------------------------------------------
# weak distance and dumps

def weak_distance(C1, C2, F_test=F_TEST_DEFAULT):
    """Max of ``|<C1 - C2, phi>| / comass(phi)`` over the Fourier dictionary.

    The dictionary holds ``cos(2 pi m.x) dx_J`` and ``sin(2 pi m.x) dx_J``
    for ``|m_i| <= F_test``; each has comass one.
    """
    if F_test < 0:
        raise ValueError("empty dictionary")
    if C1.degree != C2.degree or C1.n != C2.n:
        raise DegreeError("currents of different degree")
    if isinstance(C1, FormCurrent) and isinstance(C2, FormCurrent) and C1.grid == C2.grid:
        return float(np.max(np.abs((C1 - C2).dictionary_pairings(F_test))))
    return float(np.max(np.abs(C1.dictionary_pairings(F_test) - C2.dictionary_pairings(F_test))))


def weak_norm(C, F_test=F_TEST_DEFAULT):
    return float(np.max(np.abs(C.dictionary_pairings(F_test))))


def dump_current(C, directory, stem):
    """JSON manifest plus payloads (fields in the grid binary format)."""
    import json
    from pathlib import Path
    from eclab.grid import dump_field

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"name": stem, "degree": C.degree, "n": C.n}
    if isinstance(C, FormCurrent):
        manifest["type"] = "form"
        fld = C.to_field()
        dump_field(fld, directory, f"{stem}.coefficients")
        manifest["coefficients"] = f"{stem}.coefficients"
        manifest["harmonic"] = None if C.harmonic is None else C.harmonic.tolist()
        manifest["potential_depth"] = 0 if C.potential is None else C.potential.depth
        if C.potential is not None and C.potential.terms:
            dump_field(C.potential_field(C.grid), directory, f"{stem}.potential")
            manifest["potential"] = f"{stem}.potential"
    elif isinstance(C, AtomCurrent):
        manifest["type"] = "atoms"
        payload = directory / f"{stem}.atoms.f64"
        np.ascontiguousarray(np.column_stack([C.points, C.weights]), dtype="<f8").tofile(payload)
        manifest.update(atoms=payload.name, count=len(C.weights), columns=["x"] * C.n + ["weight"])
    elif isinstance(C, CurveCurrent):
        manifest["type"] = "curve"
        comps = []
        for i, comp in enumerate(C.components):
            payload = directory / f"{stem}.curve{i}.f64"
            np.ascontiguousarray(comp.vertices, dtype="<f8").tofile(payload)
            comps.append({"vertices": payload.name, "count": len(comp.vertices),
                          "winding": comp.winding.tolist(), "weight": comp.weight})
        manifest.update(components=comps, interpolation=C.interpolation)
    else:
        raise TypeError("unknown current type")
    (directory / f"{stem}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
