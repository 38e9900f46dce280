"""Rescaled-pullback iteration for eigencurrents and its diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from eclab.cohomology import (HolderEstimate, empirical_holder, holder_bound, induced_action)
from eclab.currents import (AtomCurrent, CurveCurrent, FormCurrent, F_TEST_DEFAULT, form_current_sign,
                            mode_box, pullback_atoms, pullback_curve, pullback_form_current,
                            weak_norm)
from eclab.grid import FormField, FourierForm, PeriodicGrid, multi_indices
from eclab.torus_map import torus_distance, nu, upsilon


class HypothesisError(ValueError):
    """The rescaling does not beat the growth rate of pulled-back potentials."""

    def __init__(self, msg, margin=None, threshold=None):
        super().__init__(msg)
        self.margin = margin
        self.threshold = threshold


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class SolverConfig:
    """Iteration settings.

    ``path`` selects the growth rate in the gap test: ``"form"`` compares
    ``|lambda|`` with ``max(1, Upsilon_{k-1})``, ``"cover"`` with ``nu_{k-1}``.
    """

    tol_weak: float = 1e-8
    k_max: int = 200
    min_iter: int = 0
    F_test: int = F_TEST_DEFAULT
    quad_oversample: int = 4
    path: str = "form"
    growth_J: int = 20
    burn_in: int = 3
    max_vertices: int = 64
    check_gap: bool = True

    def __post_init__(self):
        if self.tol_weak <= 0 or self.k_max < 1:
            raise ValueError("tol_weak must be positive and k_max >= 1")
        if self.path not in ("form", "cover"):
            raise ValueError("path must be 'form' or 'cover'")


@dataclass
class SolverTrace:
    weak_residual: list = field(default_factory=list)
    potential_delta: list = field(default_factory=list)
    predicted_ratio: float = float("nan")
    converged: bool = False
    gap: dict | None = None

    @property
    def iterations(self):
        return len(self.weak_residual)

    def ratio_fit(self, burn_in=3, floor=1e-13):
        """Geometric decay ratio of the potential increments (least squares on logs)."""
        return fit_ratio(self.potential_delta, burn_in, floor)

    def residual_ratio(self, burn_in=3, floor=1e-13):
        return fit_ratio(self.weak_residual, burn_in, floor)

    def rows(self, burn_in=3):
        out = []
        for j in range(self.iterations):
            fitted = fit_ratio(self.potential_delta[: j + 1], burn_in)
            out.append((j, self.weak_residual[j], self.potential_delta[j], fitted))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iterate", "weak_residual", "potential_delta", "ratio_fit"])
            for j, r, d, q in self.rows():
                w.writerow([j, f"{r:.12g}", f"{d:.12g}", f"{q:.12g}"])


def fit_ratio(seq, burn_in=3, floor=1e-13):
    y = np.asarray(seq, dtype=float)[burn_in:]
    y = y[np.isfinite(y) & (y > floor)]
    if len(y) < 2:
        return float("nan")
    slope = np.polyfit(np.arange(len(y)), np.log(y), 1)[0]
    return float(np.exp(slope))


# ----------------------------------------------------------------------
# hypothesis gate

def gap_check(f, k, lam, path="form", J=20):
    """Compare ``|lambda|`` with the growth rate of degree ``k - 1`` potentials.

    Returns a report dict; raises ``HypothesisError`` when the gap is not
    positive. ``lam`` may be a scalar or a square block matrix; for blocks
    the smallest eigenvalue modulus is used.
    """
    mod = float(np.min(np.abs(np.linalg.eigvals(np.atleast_2d(lam))))) if np.ndim(lam) else abs(lam)
    if path == "cover":
        rate = nu(f, k - 1, J).estimate if k >= 1 else 1.0
        name = f"nu_{k - 1}"
        threshold = rate
    else:
        rate = upsilon(f, k - 1, J).estimate if k >= 1 else 1.0
        name = f"Upsilon_{k - 1}"
        threshold = max(1.0, rate)
    report = {"lambda_modulus": mod, "rate_name": name, "rate": float(rate),
              "threshold": float(threshold), "margin": float(mod - threshold), "J": J,
              "predicted_ratio": float(rate / mod) if mod else float("inf")}
    if not mod > threshold:
        raise HypothesisError(
            f"gap hypothesis violated: |lambda| = {mod:.6g} <= {name} threshold {threshold:.6g} "
            f"(margin {mod - threshold:.3g})", margin=report["margin"], threshold=threshold)
    return report


# ----------------------------------------------------------------------
# iteration

def harmonic_section(grid, w, quad_oversample=4, k=None):
    """Constant-coefficient form with class ``w``.

    The degree is inferred from ``len(w)`` when unambiguous among degrees
    ``>= 1`` (a single coefficient means top degree).
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if k is None:
        ks = [j for j in range(1, grid.n + 1) if len(multi_indices(grid.n, j)) == w.size]
        if not ks:
            raise ValueError("class vector length matches no degree")
        k = ks[-1]
    return FormCurrent(grid, k, harmonic=w, quad_oversample=quad_oversample)


def pullback(f, C, cfg=None):
    """Pullback of any concrete current (geometric for atoms and curves)."""
    if isinstance(C, FormCurrent):
        return pullback_form_current(f, C)
    if isinstance(C, AtomCurrent):
        return pullback_atoms(f, C)
    if isinstance(C, CurveCurrent):
        return pullback_curve(f, C, max_vertices=None if cfg is None else cfg.max_vertices)
    raise TypeError("unknown current type")


def _potential_delta(D):
    if isinstance(D, FormCurrent):
        out = 0.0
        if D.potential is not None and D.potential.terms:
            out = float(np.max(np.abs(D._potential_samples)))
        if D.field is not None:
            out = max(out, D.field.sup())
        return out
    return float("nan")


def _difference_norm(Cn, C, F):
    if isinstance(Cn, FormCurrent):
        D = Cn - C
        return weak_norm(D, F), _potential_delta(D)
    diff = Cn.dictionary_pairings(F) - C.dictionary_pairings(F)
    return float(np.max(np.abs(diff))), float("nan")


def _class_in_span(C, w, tol=1e-8):
    h = C.cohomology_class() if not isinstance(C, FormCurrent) else C.class_vector()
    w = np.asarray(w, dtype=float).reshape(-1)
    c = float(np.dot(h, w) / np.dot(w, w))
    if np.max(np.abs(h - c * w)) > tol * max(1.0, np.max(np.abs(h))):
        raise ValueError("initial current's class is not in span(w)")
    return c


def eigencurrent(f, w, lam, C0=None, cfg=None, grid=None, k=None):
    """Iterate ``C_{j+1} = f^* C_j / lambda`` from ``C0`` (default: harmonic section of ``w``).

    Returns ``(C, trace)`` with ``||f^* C / lambda - C||_weak < tol_weak``.
    """
    cfg = cfg or SolverConfig()
    w = np.asarray(w, dtype=float).reshape(-1)
    if C0 is None:
        C0 = harmonic_section(grid or PeriodicGrid(f.n, 64), w, cfg.quad_oversample, k)
    k = C0.degree
    M = induced_action(f.A, k).astype(float)
    if np.max(np.abs(M @ w - lam * w)) > 1e-9 * max(1.0, abs(lam)) * np.max(np.abs(w)):
        raise ValueError("w is not an eigenvector of the induced action with eigenvalue lambda")
    trace = SolverTrace()
    if cfg.check_gap:
        trace.gap = gap_check(f, k, lam, cfg.path, cfg.growth_J)
        trace.predicted_ratio = trace.gap["predicted_ratio"]
    _class_in_span(C0, w)
    C = C0
    for j in range(cfg.k_max):
        Cn = pullback(f, C, cfg) / lam
        res, delta = _difference_norm(Cn, C, cfg.F_test)
        trace.weak_residual.append(res)
        trace.potential_delta.append(delta)
        if res < cfg.tol_weak and j + 1 >= cfg.min_iter:
            trace.converged = True
            return C, trace
        C = Cn
    raise NonConvergenceError(
        f"weak residual {trace.weak_residual[-1]:.3e} above {cfg.tol_weak:g} after {cfg.k_max} iterates",
        trace)


@dataclass
class InvariantPlane:
    basis: np.ndarray
    block: np.ndarray
    currents: list
    trace: SolverTrace
    commutation_residual: float

    def current(self, v):
        """``kappa(W v)``: the eigencurrent of the class with coordinates ``v`` in the basis."""
        v = np.asarray(v, dtype=float).reshape(-1)
        out = None
        for c, C in zip(v, self.currents):
            if c != 0.0:
                out = C * c if out is None else out + C * c
        return out if out is not None else self.currents[0] * 0.0

    def current_of_class(self, h):
        v, *_ = np.linalg.lstsq(self.basis, np.asarray(h, dtype=float), rcond=None)
        return self.current(v)


def invariant_plane(f, W, cfg=None, grid=None, k=None):
    """Eigencurrents for every basis vector of an invariant subspace ``W`` (columns).

    The scalar ``1/lambda`` becomes the inverse ``G`` of the restricted
    block: ``kappa_{j+1}(w_i) = sum_l G_{li} f^* kappa_j(w_l)``.
    """
    cfg = cfg or SolverConfig()
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 1 and W.shape[1] > 1:
        W = W.T
    grid = grid or PeriodicGrid(f.n, 64)
    if k is None:
        k = [j for j in range(f.n + 1) if len(multi_indices(f.n, j)) == W.shape[0]][0]
    M = induced_action(f.A, k).astype(float)
    block, *_ = np.linalg.lstsq(W, M @ W, rcond=None)
    if np.max(np.abs(W @ block - M @ W)) > 1e-9 * max(1.0, np.max(np.abs(M))):
        raise ValueError("W is not invariant under the induced action")
    G = np.linalg.inv(block)
    trace = SolverTrace()
    if cfg.check_gap:
        trace.gap = gap_check(f, k, block, cfg.path, cfg.growth_J)
        trace.predicted_ratio = trace.gap["predicted_ratio"]
    r = W.shape[1]
    Cs = [FormCurrent(grid, k, harmonic=W[:, i], quad_oversample=cfg.quad_oversample) for i in range(r)]
    for j in range(cfg.k_max):
        pulled = [pullback_form_current(f, C) for C in Cs]
        new = []
        for i in range(r):
            acc = None
            for l in range(r):
                if G[l, i] != 0.0:
                    acc = pulled[l] * G[l, i] if acc is None else acc + pulled[l] * G[l, i]
            new.append(acc)
        res, delta = 0.0, 0.0
        for Cn, C in zip(new, Cs):
            a, b = _difference_norm(Cn, C, cfg.F_test)
            res, delta = max(res, a), max(delta, b)
        trace.weak_residual.append(res)
        trace.potential_delta.append(delta)
        if res < cfg.tol_weak and j + 1 >= cfg.min_iter:
            trace.converged = True
            break
        Cs = new
    else:
        raise NonConvergenceError(f"invariant plane did not converge (residual {res:.3e})", trace)
    plane = InvariantPlane(W, block, Cs, trace, 0.0)
    comm = 0.0
    for i in range(r):
        lhs = pullback_form_current(f, Cs[i])
        rhs = plane.current(block[:, i])
        comm = max(comm, weak_norm(lhs - rhs, cfg.F_test))
    plane.commutation_residual = comm
    return plane


def uniqueness_test(f, w, lam, C0, C0p, cfg=None):
    """Weak distance between the limits from two initializers of the same class."""
    cfg = cfg or SolverConfig()
    c0, c1 = _class_in_span(C0, w), _class_in_span(C0p, w)
    if abs(c0 - c1) > 1e-12 * max(1.0, abs(c0)):
        raise ValueError("initializers must have the same class")
    A, _ = eigencurrent(f, w, lam, C0, cfg)
    B, _ = eigencurrent(f, w, lam, C0p, cfg)
    if isinstance(A, FormCurrent) and isinstance(B, FormCurrent) and A.grid == B.grid:
        return weak_norm(A - B, cfg.F_test)
    return float(np.max(np.abs(A.dictionary_pairings(cfg.F_test) - B.dictionary_pairings(cfg.F_test))))


# ----------------------------------------------------------------------
# verification and diagnostics

def transfer_oracle(f, phis, k_max=200, N=1024, tol=1e-9):
    """``lim L^j phi`` for the averaged transfer operator of a circle cover.

    ``(L phi)(x) = (1/deg f) sum_{f(y) = x} phi(y)``. Each ``phi`` (FourierForm,
    FormField or callable on ``(P, 1)`` points) is sampled on an ``N``-point
    grid; every step re-expands the samples in at most ``N/4`` Fourier modes
    and evaluates them at the preimages of the grid. Iteration stops once
    every field is constant to ``tol``. Returns one limit per ``phi``.
    """
    if f.n != 1:
        raise ValueError("transfer_oracle is for circle maps")
    f.require_cover()
    grid = PeriodicGrid(1, N)
    x = grid.points()
    single = not isinstance(phis, (list, tuple))
    phis = [phis] if single else list(phis)
    U = np.array([_sample_scalar(p, x) for p in phis])  # (m, N)
    pre, sign = f.preimage_points(x)  # (N, d, 1)
    B = N // 4
    modes = np.arange(-B, B + 1)
    E = np.exp(2j * np.pi * pre.reshape(-1, 1) * modes[None, :])  # (N d, 2B+1)
    d = pre.shape[1]
    w = sign.astype(float) / f.degree()
    for it in range(k_max):
        spread = np.max(np.max(U, axis=1) - np.min(U, axis=1))
        if spread < tol:
            out = U.mean(axis=1)
            return float(out[0]) if single else out
        hat = np.fft.fft(U, axis=1) / N
        coef = hat[:, modes % N]
        vals = (coef @ E.T).real.reshape(len(phis), N, d)
        U = np.einsum("mpd,pd->mp", vals, w)
    raise NonConvergenceError(f"transfer oracle spread {spread:.3e} after {k_max} steps")


def _sample_scalar(p, x):
    if isinstance(p, (FourierForm, FormField)):
        return p.evaluate(x)[:, 0]
    return np.asarray(p(x), dtype=float).reshape(-1)


def lipschitz_constant(f, N=1024):
    """Largest operator norm of ``Df`` on a grid (per-step derivative sup)."""
    grid = PeriodicGrid(f.n, N if f.n == 1 else 128)
    jac = f.jacobian(grid.points())
    return float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1))))


def holder_verify(f, C, lam, N=8192, cfg=None, j_min=5, j_skip=2):
    """Empirical Hölder exponent of the potential of ``C`` against the bound.

    The bound uses ``m = Upsilon_{k-1} / |lambda|`` and the per-step
    derivative growth ``M = Lip(f) max(1, Upsilon_{k-1}) / |lambda|``; when
    ``M <= 1`` the pulled-back derivatives are summable and the bound is 1.
    The estimate is flagged if ``alpha_emp < 0.8 alpha_bound``.
    """
    cfg = cfg or SolverConfig()
    k = C.degree
    ups = upsilon(f, k - 1, cfg.growth_J).estimate if k >= 1 else 1.0
    m = ups / abs(lam)
    lip = lipschitz_constant(f)
    M = lip * max(1.0, ups) / abs(lam)
    bound = holder_bound(m, M) if M > 1 else 1.0
    pot = getattr(C, "potential", None)
    if pot is None or not pot.terms:
        return HolderEstimate(undefined=True, m=m, M=M, alpha_bound=bound)
    grid = PeriodicGrid(f.n, N)
    vals = pot.sample(grid)
    if vals.shape[0] != 1:
        raise ValueError("Hölder verification needs a scalar potential")
    est = empirical_holder(FormField(grid, 0, vals, smooth=False), j_min=j_min, j_skip=j_skip)
    est.m, est.M, est.alpha_bound = m, M, bound
    est.flagged = bool(est.undefined or est.alpha_emp < 0.8 * bound)
    return est


@dataclass
class PositivityReport:
    positive: bool
    min_density: float
    tol: float
    method: str

    def __bool__(self):
        return self.positive

    def report(self):
        return {"positive": self.positive, "min_density": self.min_density, "tol": self.tol,
                "method": self.method}


def density_samples(C, fejer_F=32):
    """Density samples of a top-degree current and the method used.

    Potential-free form currents give their pointwise density. On T^1 the
    series potential yields exact cell averages by telescoping. Otherwise the
    Fejér mean of the Fourier coefficients is used; it is nonnegative for
    every positive measure.
    """
    n = C.n
    if isinstance(C, FormCurrent):
        s = form_current_sign(C.degree)
        if C.potential is None or not C.potential.terms:
            return s * C.to_field().data[0], "pointwise"
        if n == 1:
            q = C.quad_grid
            tau = C.potential_field().data[0]
            jumps = np.roll(tau, -1) - tau
            avg = jumps * q.N
            if C.harmonic is not None:
                avg = avg + C.harmonic[0]
            if C.field is not None:
                avg = avg + C.field.resample(q.N).data[0]
            return s * avg, "cell-average"
    F = fejer_F
    P = C.pair_modes(F)[0].reshape((2 * F + 1,) * n)
    r = np.arange(-F, F + 1)
    w1 = 1.0 - np.abs(r) / (F + 1)
    w = w1 if n == 1 else np.outer(w1, w1)
    G = 4 * F
    hat = np.zeros((G,) * n, dtype=complex)
    idx = np.ix_(*([r % G] * n))
    hat[idx] = w * P  # density value sum_m w_m P(m) exp(-2 pi i m.x)
    dens = np.fft.fftn(hat).real
    return dens, "fejer"


def positivity_check(C, tol=None, fejer_F=32):
    """Minimum density of a top-degree current against ``-tol``."""
    if C.degree != C.n:
        raise ValueError("positivity_check needs a top-degree current")
    dens, method = density_samples(C, fejer_F)
    if tol is None:
        mass = abs(float(C.pair_modes(0)[0, 0].real))
        tol = 1e-8 * max(1.0, mass)
    mn = float(np.min(dens))
    return PositivityReport(bool(mn >= -tol), mn, float(tol), method)


@dataclass
class ExpansionDiagnostic:
    diameters: np.ndarray
    growth: float

    def report(self):
        return {"diameters": self.diameters.tolist(), "growth": self.growth}


def expansion_diagnostic(f, x, eps, k_max, samples=32, saturation=0.1):
    """Torus diameters of ``f^j(B_eps(x))`` for ``j <= k_max``.

    The ball (sup norm) is sampled by a tensor grid; ``growth`` is the mean
    per-step ratio before the diameter reaches ``saturation``.
    """
    x = np.asarray(x, dtype=float).reshape(f.n)
    s = np.linspace(-eps, eps, samples)
    pts = np.stack([c.ravel() for c in np.meshgrid(*([s] * f.n), indexing="ij")], axis=1) + x
    diams = []
    for j in range(k_max + 1):
        diams.append(_torus_diameter(pts))
        if j < k_max:
            pts = f.lift_evaluate(pts)
    diams = np.array(diams)
    pre = diams[diams < saturation]
    growth = float(np.exp(np.mean(np.diff(np.log(pre))))) if len(pre) > 1 else float("nan")
    return ExpansionDiagnostic(diams, growth)


def _torus_diameter(pts):
    pts = np.mod(pts, 1.0)
    best = 0.0
    for i in range(0, len(pts), 256):
        d = torus_distance(pts[i:i + 256, None, :], pts[None, :, :])
        best = max(best, float(np.max(d)))
    return best


def resolution_check(C, F_test=F_TEST_DEFAULT):
    """Change of dictionary pairings when the quadrature grid is doubled."""
    if not isinstance(C, FormCurrent):
        return 0.0
    fine = FormCurrent(C.grid.refine(), C.degree,
                       None if C.field is None else C.field.resample(2 * C.grid.N),
                       C.harmonic, C.potential, C.quad_oversample)
    return float(np.max(np.abs(fine.dictionary_pairings(F_test) - C.dictionary_pairings(F_test))))
