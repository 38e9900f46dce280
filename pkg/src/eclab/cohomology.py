"""Induced action on de Rham cohomology of T^n and Hodge/Hölder tools.

A class in ``H^k(T^n; R)`` is stored as the coefficient vector of its
constant (harmonic) representative in the basis ``dx_I``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from eclab.grid import (DegreeError, FormField, FourierForm, PeriodicGrid, comass_norm,
                        d_table, exterior_derivative, multi_indices)

SPECTRAL_GAP_TOL = 1e-9
CLOSED_TOL = 1e-8


class AmbiguousSplitError(ValueError):
    """An eigenvalue sits within the gap tolerance of the threshold."""


class NotClosedError(ValueError):
    pass


def _int_det(M):
    # Bareiss fraction-free elimination, exact for Python ints
    M = [list(map(int, row)) for row in M]
    n = len(M)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if M[k][k] == 0:
            for r in range(k + 1, n):
                if M[r][k] != 0:
                    M[k], M[r] = M[r], M[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


def induced_action(A, k):
    """Matrix of pullback on ``H^k``: the k-th compound of ``A^T``.

    For an integer ``A`` the result is an exact integer (object-free int64)
    matrix.
    """
    A = np.asarray(A)
    n = A.shape[0]
    if not 0 <= k <= n:
        raise DegreeError("k outside 0..n")
    At = A.T
    idx = multi_indices(n, k)
    integer = np.issubdtype(A.dtype, np.integer)
    out = np.empty((len(idx), len(idx)), dtype=np.int64 if integer else float)
    for a, I in enumerate(idx):
        for b, J in enumerate(idx):
            sub = At[np.ix_(I, J)]
            out[a, b] = _int_det(sub.tolist()) if integer else (np.linalg.det(sub) if k else 1.0)
    return out


def closedness_residual(phi):
    if phi.k == phi.grid.n:
        return 0.0
    return comass_norm(exterior_derivative(phi))


def class_of_closed_form(phi, tol=CLOSED_TOL):
    """Cohomology class (component means) of a closed form."""
    res = closedness_residual(phi)
    if res > tol * max(1.0, comass_norm(phi)):
        raise NotClosedError(f"closedness residual {res:.2e} exceeds tolerance")
    axes = tuple(range(1, phi.grid.n + 1))
    return np.mean(phi.data, axis=axes)


@dataclass
class CohomologySpectrum:
    """Spectral data of the induced action ``M_k`` on ``H^k``."""

    k: int
    M: np.ndarray
    eigenvalues: np.ndarray = field(init=False)

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.eigenvalues = np.linalg.eigvals(self.M) if self.M.size else np.zeros(0)

    @classmethod
    def of_map(cls, A, k):
        return cls(k, induced_action(A, k))

    def expanding(self, r, gap_tol=SPECTRAL_GAP_TOL):
        return chronically_expanding_subspace(self.M, r, gap_tol)

    def report(self, r=None):
        ev = sorted(self.eigenvalues, key=lambda z: -abs(z))
        out = {"k": self.k, "M": self.M.tolist(),
               "eigenvalues": [[float(z.real), float(z.imag)] for z in ev]}
        if r is not None:
            mods = np.abs(self.eigenvalues)
            out["threshold"] = float(r)
            out["gap"] = float(np.min(np.abs(mods - r))) if mods.size else None
            try:
                out["basis"] = self.expanding(r).tolist()
            except AmbiguousSplitError as exc:
                out["basis"] = None
                out["error"] = str(exc)
        return out


def chronically_expanding_subspace(M, r, gap_tol=SPECTRAL_GAP_TOL):
    """Real orthonormal basis (columns) of the sum of generalized eigenspaces
    of ``M`` with ``|lambda| > r``.

    Complex pairs are kept together as 2-dimensional real blocks by the
    ordered real Schur form.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    ev = np.linalg.eigvals(M)
    close = np.abs(np.abs(ev) - r) < gap_tol * max(1.0, r)
    if np.any(close):
        raise AmbiguousSplitError(f"eigenvalue modulus within {gap_tol:g} of threshold {r}")
    T, Z, sdim = scipy.linalg.schur(M, output="real", sort=lambda re, im: np.hypot(re, im) > r)
    return Z[:, :sdim]


def subspace_distance(U, V):
    """Largest principal-angle sine between the column spaces of ``U`` and ``V``."""
    if U.shape[1] == 0 and V.shape[1] == 0:
        return 0.0
    Qu, _ = np.linalg.qr(U)
    Qv, _ = np.linalg.qr(V)
    if Qu.shape[1] != Qv.shape[1]:
        return 1.0
    s = np.linalg.svd(Qu.T @ Qv, compute_uv=False)
    return float(np.sqrt(max(0.0, 1.0 - np.min(s) ** 2)))


# ----------------------------------------------------------------------
# Hodge potentials on the flat torus

def _fourier_hodge(hat, n, k, freqs):
    """Coexact potential ``beta_hat = d^H phi_hat / (4 pi^2 |m|^2)`` of a closed form."""
    out = np.zeros((len(multi_indices(n, k - 1)),) + hat.shape[1:], dtype=complex)
    lap = 4.0 * np.pi ** 2 * sum(f ** 2 for f in freqs)
    safe = np.where(lap == 0, 1.0, lap)
    # adjoint of d_{k-1}: entry (axis, src, dst, s) of d maps src -> dst with 2 pi i m_axis s
    for axis, src, dst, s in d_table(n, k - 1):
        out[src] += np.conj(s * 2j * np.pi * freqs[axis]) * hat[dst]
    out = np.where(lap == 0, 0.0, out / safe)
    return out


def hodge_potential(phi, tol=CLOSED_TOL):
    """Split a closed form as ``phi = h + d beta`` with ``h`` harmonic (constant).

    Returns ``(h, beta)``; ``beta`` is the minimal-norm (coexact) solution.
    """
    if phi.k < 1:
        raise DegreeError("hodge_potential needs degree >= 1")
    h_coef = class_of_closed_form(phi, tol)
    grid, n = phi.grid, phi.grid.n
    axes = tuple(range(1, n + 1))
    hat = np.fft.fftn(phi.data, axes=axes)
    freqs = [f.astype(float) for f in grid.wavenumbers()]
    if grid.N % 2 == 0:
        nyq = np.zeros(grid.shape, dtype=bool)
        for f in freqs:
            nyq |= np.abs(f) == grid.N // 2
        hat = np.where(nyq, 0.0, hat)
    bhat = _fourier_hodge(hat, n, phi.k, freqs)
    beta = np.fft.ifftn(bhat, axes=axes).real
    h = FormField.constant(grid, phi.k, h_coef)
    return h, FormField(grid, phi.k - 1, beta, phi.smooth)


def fourier_hodge_potential(form):
    """Exact coexact potential of a closed band-limited form (``FourierForm``)."""
    n, k, B = form.n, form.k, form.B
    m = [v.astype(float) for v in np.meshgrid(*([np.arange(-B, B + 1)] * n), indexing="ij")]
    h = form.coefs[(slice(None),) + (B,) * n].real.copy()
    bhat = _fourier_hodge(form.coefs, n, k, m)
    return h, FourierForm(n, k - 1, B, bhat)


# ----------------------------------------------------------------------
# Hölder estimates

def holder_bound(m, M):
    """Exponent bound ``log m / log(m / M)`` for sums of terms decaying like
    ``m^k`` whose derivatives grow like ``M^k``."""
    if not (0 < m < 1 < M):
        raise ValueError("need 0 < m < 1 < M")
    return float(np.log(m) / np.log(m / M))


@dataclass
class HolderEstimate:
    alpha_emp: float = float("nan")
    r2: float = float("nan")
    undefined: bool = False
    m: float | None = None
    M: float | None = None
    alpha_bound: float | None = None
    deltas: np.ndarray | None = None
    omega: np.ndarray | None = None
    flagged: bool = False

    def report(self):
        return {"alpha_emp": self.alpha_emp, "r2": self.r2, "undefined": self.undefined,
                "m": self.m, "M": self.M, "alpha_bound": self.alpha_bound, "flagged": self.flagged}


def modulus_of_continuity(values, n):
    """``omega(2^-j) = max |u(x + 2^-j e_a) - u(x)|`` over grid points and axes."""
    N = values.shape[0]
    levels = int(np.log2(N))
    deltas, omega = [], []
    for j in range(1, levels + 1):
        shift = N >> j
        if shift < 1:
            break
        w = max(float(np.max(np.abs(np.roll(values, -shift, axis=a) - values))) for a in range(n))
        deltas.append(2.0 ** -j)
        omega.append(w)
    return np.array(deltas), np.array(omega)


def empirical_holder(field, j_min=5, j_skip=2, cap=None):
    """Fit ``log omega(delta) ~ alpha log delta`` for a scalar field.

    The fit uses dyadic separations ``2^-j`` for ``j_min <= j <= log2 N - j_skip``
    (the finest ``j_skip`` levels see grid-scale effects, and separations
    above ``1/32`` mostly measure the amplitude of the lowest modes).
    """
    if field.k not in (0, field.grid.n) or field.data.shape[0] != 1:
        raise DegreeError("empirical_holder needs a scalar field")
    u = field.data[0]
    deltas, omega = modulus_of_continuity(u, field.grid.n)
    if np.max(np.abs(u - u.flat[0])) < 1e-14:
        return HolderEstimate(undefined=True, deltas=deltas, omega=omega)
    hi = len(deltas) - j_skip
    sel = slice(j_min - 1, hi)
    x, y = np.log(deltas[sel]), np.log(omega[sel])
    if len(x) < 2 or not np.all(np.isfinite(y)):
        return HolderEstimate(undefined=True, deltas=deltas, omega=omega)
    slope, icpt = np.polyfit(x, y, 1)
    fit = slope * x + icpt
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - fit) ** 2) / ss if ss > 0 else 1.0
    alpha = float(slope) if cap is None else float(min(slope, cap))
    return HolderEstimate(alpha_emp=alpha, r2=float(r2), deltas=deltas, omega=omega)
