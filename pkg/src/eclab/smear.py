"""Box flows and the smear operator ``S phi = integral h_t^* phi rho(t) dt``.

The flow ``h_t`` moves coordinate ``i`` along ``sigma_i(x_i) d/dx_i`` for time
``t_i``, where ``sigma_i`` is a smooth bump positive exactly on the interval
``I_i`` of the box. Because the flow is a product and ``rho`` a product
density, the smear factors into one-dimensional operators, one per axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.integrate

from eclab.currents import AtomCurrent, FormCurrent
from eclab.grid import DegreeError, FormField, PeriodicGrid

GL_ORDER = 8
KERNEL_MIN_CELLS = 8


class SmearError(ValueError):
    pass


def _gauss_panels(lo, hi, panels, order=GL_ORDER):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class SmearSpec:
    """Box ``prod [a_i, b_i]`` inside ``(0, 1)^n``, bump profiles and a product density.

    ``rho`` on axis ``i`` is the normalized bump supported on
    ``[center_i - radius_i, center_i + radius_i]``; the ``t``-integral uses
    composite Gauss-Legendre of order 8 on ``panels`` panels per axis, and
    the flow is integrated by RK4 with ``steps_per_unit`` steps per unit time.
    """

    box: tuple
    rho_center: tuple = None
    rho_radius: tuple = None
    panels: int = 16
    steps_per_unit: int = 256

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        for a, b in box:
            if not 0.0 < a < b < 1.0:
                raise SmearError("box must lie inside one coordinate patch (0, 1)^n")
        object.__setattr__(self, "box", box)
        n = len(box)
        c = (0.0,) * n if self.rho_center is None else tuple(map(float, self.rho_center))
        r = (0.25,) * n if self.rho_radius is None else tuple(map(float, self.rho_radius))
        if len(c) != n or len(r) != n or min(r) <= 0:
            raise SmearError("rho needs one positive radius per axis")
        object.__setattr__(self, "rho_center", c)
        object.__setattr__(self, "rho_radius", r)

    @classmethod
    def from_dict(cls, d):
        return cls(box=tuple(map(tuple, d["box"])), rho_center=d.get("rho_center"),
                   rho_radius=d.get("rho_radius"), panels=d.get("panels", 16),
                   steps_per_unit=d.get("steps_per_unit", 256))

    def to_dict(self):
        return {"box": [list(b) for b in self.box], "rho_center": list(self.rho_center),
                "rho_radius": list(self.rho_radius), "panels": self.panels,
                "steps_per_unit": self.steps_per_unit}

    @property
    def n(self):
        return len(self.box)

    def reversed(self):
        """Spec of ``S_{-h, rho}``: same flow, density reflected ``t -> -t``."""
        return SmearSpec(self.box, tuple(-c for c in self.rho_center), self.rho_radius,
                         self.panels, self.steps_per_unit)

    # profiles ---------------------------------------------------------
    def log_sigma(self, axis, x):
        a, b = self.box[axis]
        x = np.asarray(x, dtype=float)
        inside = (x > a) & (x < b)
        xs = np.where(inside, x, 0.5 * (a + b))
        val = -1.0 / ((xs - a) * (b - xs)) + 4.0 / (b - a) ** 2
        return np.where(inside, val, -np.inf)

    def sigma(self, axis, x):
        return np.exp(self.log_sigma(axis, x))

    def rho_axis(self, axis, t):
        c, r = self.rho_center[axis], self.rho_radius[axis]
        return _bump(np.asarray(t, dtype=float), c - r, c + r) / self._rho_mass[axis]

    @property
    def _rho_mass(self):
        out = []
        for i in range(self.n):
            t, w = self.t_nodes_raw(i)
            c, r = self.rho_center[i], self.rho_radius[i]
            out.append(float(np.sum(w * _bump(t, c - r, c + r))))
        return out

    def t_nodes_raw(self, axis):
        c, r = self.rho_center[axis], self.rho_radius[axis]
        return _gauss_panels(c - r, c + r, self.panels)

    def t_rule(self, axis):
        """Nodes and weights ``w_q rho(t_q)`` (summing to one) on one axis."""
        t, w = self.t_nodes_raw(axis)
        return t, w * self.rho_axis(axis, t)


def _bump(t, lo, hi):
    inside = (t > lo) & (t < hi)
    ts = np.where(inside, t, 0.5 * (lo + hi))
    return np.where(inside, np.exp(-1.0 / ((ts - lo) * (hi - ts)) + 4.0 / (hi - lo) ** 2), 0.0)


# ----------------------------------------------------------------------
# flows

def flow_axis(spec, axis, x, t):
    """Flow of ``sigma_axis(x) d/dx`` for time ``t`` (broadcast), fixed-step RK4."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    x = x.copy()
    tmax = float(np.max(np.abs(t))) if t.size else 0.0
    steps = max(1, int(np.ceil(tmax * spec.steps_per_unit)))
    h = t / steps
    sig = lambda y: spec.sigma(axis, y)
    for _ in range(steps):
        k1 = sig(x)
        k2 = sig(x + 0.5 * h * k1)
        k3 = sig(x + 0.5 * h * k2)
        k4 = sig(x + h * k3)
        x = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return x


def flow(spec, x, t):
    """Box flow ``h_t(x)`` for points ``(P, n)`` and times ``t`` (``(n,)`` or ``(P, n)``)."""
    x = np.asarray(x, dtype=float).reshape(-1, spec.n)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    return np.stack([flow_axis(spec, i, x[:, i], t[:, i]) for i in range(spec.n)], axis=1)


def flow_jacobian_axis(spec, axis, x, y):
    """``d(h_t)_i / dx_i = sigma(y) / sigma(x)`` for an autonomous 1-d flow ``x -> y``."""
    ls_x, ls_y = np.broadcast_arrays(spec.log_sigma(axis, x), spec.log_sigma(axis, y))
    ok = np.isfinite(ls_x) & np.isfinite(ls_y)
    diff = np.where(ok, ls_y, 0.0) - np.where(ok, ls_x, 0.0)
    return np.where(ok, np.exp(diff), 1.0)


def time_function(spec, axis, x):
    """``T(x) = integral_{mid}^{x} ds / sigma(s)`` inside the box (``+-inf`` outside)."""
    a, b = spec.box[axis]
    mid = 0.5 * (a + b)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        if not a < xi < b:
            out[i] = np.inf if xi >= b else -np.inf
            continue
        g = lambda s: np.exp(min(-spec.log_sigma(axis, s), 700.0))
        out[i] = scipy.integrate.quad(g, mid, xi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return out


# ----------------------------------------------------------------------
# smearing forms

def _linear_interp_matrix(N, pts):
    s = np.mod(pts, 1.0) * N
    i0 = np.floor(s).astype(np.int64)
    w = s - i0
    M = np.zeros((len(pts), N))
    np.add.at(M, (np.arange(len(pts)), i0 % N), 1.0 - w)
    np.add.at(M, (np.arange(len(pts)), (i0 + 1) % N), w)
    return M


def smear_matrices(spec, N, smooth=True):
    """Per-axis operators ``(K_plain, K_jac)`` of shape ``(N, N)``.

    ``K_plain u(x) = sum_q w_q rho(t_q) u(h_t x)`` and ``K_jac`` includes the
    factor ``dh_t/dx`` for components containing ``dx_axis``. Values at the
    flowed points come from trigonometric interpolation (``smooth``). For
    rough data the ``t``-rule would leave a staircase, so rows where the flow
    sweeps at least ``KERNEL_MIN_CELLS`` cells use the ``y``-space kernel
    instead, and the remaining rows use linear interpolation.
    """
    x = np.arange(N) / N
    r = np.fft.fftfreq(N, 1.0 / N)
    r = r[r != -(N // 2)]  # without the Nyquist mode the interpolant stays real
    out = []
    for axis in range(spec.n):
        t, wr = spec.t_rule(axis)
        keep = wr != 0.0
        t, wr = t[keep], wr[keep]
        Y = flow_axis(spec, axis, x[None, :], t[:, None])  # (Q, N)
        J = flow_jacobian_axis(spec, axis, x[None, :], Y)
        if smooth:
            Ap = np.zeros((N, len(r)), dtype=complex)
            Aj = np.zeros_like(Ap)
            for q in range(len(t)):
                e = np.exp(2j * np.pi * np.outer(Y[q], r))
                Ap += wr[q] * e
                Aj += (wr[q] * J[q])[:, None] * e
            F = np.exp(-2j * np.pi * np.outer(r, x)) / N
            Kp, Kj = (Ap @ F).real, (Aj @ F).real
        else:
            Kp = np.zeros((N, N))
            Kj = np.zeros((N, N))
            for q in range(len(t)):
                E = _linear_interp_matrix(N, Y[q])
                Kp += wr[q] * E
                Kj += (wr[q] * J[q])[:, None] * E
            # rows whose flowed segment spans several cells use the y-space kernel
            span = flow_axis(spec, axis, x, t.max()) - flow_axis(spec, axis, x, t.min())
            rows = np.flatnonzero(span >= KERNEL_MIN_CELLS / N)
            if rows.size:
                Kp[rows], Kj[rows] = _kernel_rows(spec, axis, N, rows)
        out.append((Kp, Kj))
    return out


def _grid_time_function(spec, axis, N):
    """``T`` at the grid points inside the box, accumulated cell by cell."""
    a, b = spec.box[axis]
    x = np.arange(N) / N
    inside = np.flatnonzero((x > a) & (x < b))
    T = np.full(N, np.nan)
    if inside.size == 0:
        return T
    i0 = inside[np.argmin(np.abs(x[inside] - 0.5 * (a + b)))]
    T[i0] = time_function(spec, axis, [x[i0]])[0]
    g = lambda s: np.exp(min(-spec.log_sigma(axis, s), 700.0))
    for i in range(i0 + 1, inside[-1] + 1):
        T[i] = T[i - 1] + scipy.integrate.quad(g, x[i - 1], x[i], epsabs=1e-14, epsrel=1e-12)[0]
    for i in range(i0 - 1, inside[0] - 1, -1):
        T[i] = T[i + 1] - scipy.integrate.quad(g, x[i], x[i + 1], epsabs=1e-14, epsrel=1e-12)[0]
    return T


def _kernel_rows(spec, axis, N, rows):
    """Smear rows from the substitution ``y = h_t(x)``.

    ``S u(x) = integral u(y) rho(T(y) - T(x)) / sigma(y) dy`` and, for a
    ``dx_axis`` component, ``integral u(y) rho(T(y) - T(x)) dy / sigma(x)``,
    with the ``y``-integral done on the grid. The result is smooth in ``x``
    even for discontinuous ``u``. Rows are normalized so constants are kept.
    """
    x = np.arange(N) / N
    T = _grid_time_function(spec, axis, N)
    cols = np.flatnonzero(np.isfinite(T))
    dt = T[cols][None, :] - T[rows][:, None]
    rho = spec.rho_axis(axis, dt)
    live = rho > 0.0
    log_rho = np.log(np.where(live, rho, 1.0))
    lp = log_rho - spec.log_sigma(axis, x[cols])[None, :]
    Kp = np.zeros((len(rows), N))
    Kj = np.zeros((len(rows), N))
    Kp[:, cols] = np.where(live, np.exp(np.where(live, lp, 0.0)), 0.0)
    mass = Kp.sum(axis=1)
    Kp /= mass[:, None]
    lj = log_rho - spec.log_sigma(axis, x[rows])[:, None] - np.log(mass)[:, None]
    Kj[:, cols] = np.where(live, np.exp(np.where(live, lj, 0.0)), 0.0)
    return Kp, Kj


def _apply_axis(K, u, axis):
    return np.moveaxis(np.tensordot(K, u, axes=([1], [axis])), 0, axis)


def smear_form(spec, phi, interpolation=None):
    """``S_{h, rho} phi`` on the grid of ``phi``.

    Interpolation at flowed points is spectral for smooth fields and linear
    otherwise (``interpolation`` = "spectral" | "linear" overrides).
    """
    if phi.grid.n != spec.n:
        raise SmearError("box dimension differs from the grid")
    smooth = phi.smooth if interpolation is None else interpolation == "spectral"
    mats = smear_matrices(spec, phi.grid.N, smooth)
    data = np.array(phi.data, dtype=float)
    for c, I in enumerate(phi.multi_indices):
        u = data[c]
        for axis in range(spec.n):
            Kp, Kj = mats[axis]
            u = _apply_axis(Kj if axis in I else Kp, u, axis)
        data[c] = u
    return FormField(phi.grid, phi.k, data, phi.smooth)


def smear_at_points(spec, phi, points):
    """``(S phi)(p)`` for a 0-form by direct tensor quadrature in ``t`` (no grid)."""
    if phi.k != 0:
        raise DegreeError("pointwise smear is implemented for 0-forms")
    points = np.asarray(points, dtype=float).reshape(-1, spec.n)
    rules = [spec.t_rule(i) for i in range(spec.n)]
    T = np.stack([g.ravel() for g in np.meshgrid(*[r[0] for r in rules], indexing="ij")], axis=1)
    W = np.prod(np.stack([g.ravel() for g in np.meshgrid(*[r[1] for r in rules], indexing="ij")]), axis=0)
    keep = W != 0.0
    T, W = T[keep], W[keep]
    out = np.empty(len(points))
    for p, y in enumerate(points):
        moved = flow(spec, np.broadcast_to(y, T.shape), T)
        out[p] = float(np.dot(W, phi.evaluate(moved)[:, 0]))
    return out


# ----------------------------------------------------------------------
# smearing currents

@dataclass(frozen=True, eq=False)
class CompositeCurrent:
    """Sum of concrete currents of one degree."""

    parts: tuple

    @property
    def n(self):
        return self.parts[0].n

    @property
    def degree(self):
        return self.parts[0].degree

    def pair(self, phi):
        return sum(p.pair(phi) for p in self.parts)

    def pair_modes(self, F):
        return sum(p.pair_modes(F) for p in self.parts)

    def dictionary_pairings(self, F=8):
        return sum(p.dictionary_pairings(F) for p in self.parts)


def atom_density(spec, y, weight, grid):
    """Density of the smeared atom ``weight * delta_y`` on ``grid``.

    With ``x = h_{-t}(y)`` per axis, ``t_i = T_i(y_i) - T_i(x_i)`` and the
    density is ``prod_i rho_i(t_i) / sigma_i(x_i)``.
    """
    dens = np.ones(grid.shape)
    x = np.arange(grid.N) / grid.N
    for axis in range(spec.n):
        t = time_function(spec, axis, [y[axis]])[0] - time_function(spec, axis, x)
        rho = spec.rho_axis(axis, np.where(np.isfinite(t), t, 1e300))
        live = rho > 0.0
        vals = np.zeros(grid.N)
        vals[live] = rho[live] * np.exp(-spec.log_sigma(axis, x[live]))
        shape = [1] * spec.n
        shape[axis] = grid.N
        dens = dens * vals.reshape(shape)
    return weight * dens


def _in_strips(spec, pts):
    return np.stack([(pts[:, i] > a) & (pts[:, i] < b) for i, (a, b) in enumerate(spec.box)], axis=1)


def smear_current(spec, C, grid=None):
    """``S_{h, rho} C``, defined dually by ``<S C, phi> = <C, S_{-h, rho} phi>``.

    Atoms inside the box become a smooth density (a top-degree form current
    on ``grid``). The flow is a product of interval flows, so points with
    every coordinate outside its interval are fixed and atoms there are
    unchanged; an atom with only some coordinates inside would smear onto a
    lower-dimensional set and is rejected. Form currents with a sampled
    field smear as forms, which is the same current by change of variables.
    """
    if isinstance(C, AtomCurrent):
        strips = _in_strips(spec, C.points)
        inside, fixed = np.all(strips, axis=1), ~np.any(strips, axis=1)
        if np.any(~inside & ~fixed):
            raise SmearError("atom in a flow strip outside the box: its smear is not a density")
        if not np.any(inside):
            return C
        grid = grid or PeriodicGrid(spec.n, 256)
        dens = np.zeros(grid.shape)
        for y, w in zip(C.points[inside], C.weights[inside]):
            dens += atom_density(spec, y, w, grid)
        smeared = FormCurrent.from_density(FormField(grid, grid.n, dens[None]))
        if np.all(inside):
            return smeared
        return CompositeCurrent((smeared, AtomCurrent(C.points[~inside], C.weights[~inside])))
    if isinstance(C, FormCurrent):
        if C.potential is not None:
            raise SmearError("smear a sampled form current (use to_field first)")
        fld = C.to_field()
        return FormCurrent.from_field(smear_form(spec, fld), quad_oversample=C.quad_oversample)
    raise TypeError("smear_current supports atoms and form currents")


def dual_pairing(spec, C, phi):
    """``<C, S_{-h, rho} phi>`` evaluated directly from the current's side."""
    rev = spec.reversed()
    if isinstance(C, AtomCurrent):
        return float(np.dot(C.weights, smear_at_points(rev, phi, C.points)))
    return C.pair(smear_form(rev, phi if isinstance(phi, FormField) else phi.to_field(C.grid)))
