"""Smooth torus endomorphisms ``x -> A x + p(x) mod 1``.

``p`` is a finite real Fourier series per coordinate, so ``f`` is well
defined on the torus and its lift commutes with integer translations up to
``A``: ``F(x + m) = F(x) + A m``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from eclab import kernels
from eclab.grid import PeriodicGrid, compound

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


class BranchEnumerationError(RuntimeError):
    """Newton failed or produced duplicate roots for some coset."""

    def __init__(self, msg, coset=None):
        super().__init__(msg)
        self.coset = coset


class NotACoverError(ValueError):
    """Raised by operations that need a local diffeomorphism."""


@dataclass(frozen=True)
class PerturbationTerm:
    coord: int
    freq: tuple
    cos: float = 0.0
    sin: float = 0.0


def hermite_normal_form(A):
    """Lower-triangular column Hermite normal form ``H`` of the lattice ``A Z^n``.

    Works in exact integer arithmetic; ``H`` has positive diagonal and
    ``0 <= H[i, j] < H[i, i]`` for ``j < i``.
    """
    H = [[int(v) for v in row] for row in np.asarray(A)]
    n = len(H)
    cols = [[H[r][c] for r in range(n)] for c in range(n)]
    for i in range(n):
        # Euclid over columns i..n-1 on row i
        while True:
            nz = [c for c in range(i, n) if cols[c][i] != 0]
            if not nz:
                raise ValueError("singular matrix")
            piv = min(nz, key=lambda c: abs(cols[c][i]))
            cols[i], cols[piv] = cols[piv], cols[i]
            done = True
            for c in range(i + 1, n):
                q = cols[c][i] // cols[i][i]
                if q:
                    cols[c] = [a - q * b for a, b in zip(cols[c], cols[i])]
                if cols[c][i] != 0:
                    done = False
            if done:
                break
        if cols[i][i] < 0:
            cols[i] = [-a for a in cols[i]]
        for c in range(i):
            q = cols[c][i] // cols[i][i]
            cols[c] = [a - q * b for a, b in zip(cols[c], cols[i])]
    return np.array([[cols[c][r] for c in range(n)] for r in range(n)], dtype=np.int64)


def coset_representatives(A):
    """Representatives of ``Z^n / A Z^n``; exactly ``|det A|`` vectors."""
    H = hermite_normal_form(A)
    ranges = [range(int(H[i, i])) for i in range(H.shape[0])]
    reps = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(ranges), -1).T
    return reps.astype(np.int64)


@dataclass(frozen=True)
class PreimageBranch:
    x: np.ndarray
    sign: int
    newton_residual: float


@dataclass(frozen=True)
class PreimageSet:
    target: np.ndarray
    branches: tuple

    def points(self):
        return np.array([b.x for b in self.branches])

    def signs(self):
        return np.array([b.sign for b in self.branches])

    def __len__(self):
        return len(self.branches)


@dataclass(frozen=True)
class RegularityReport:
    is_local_diffeo: bool
    min_abs_det: float
    sign_changes: bool


@dataclass
class GrowthRates:
    """Growth of ``||wedge^k D(f^j)||`` (or of its inverse) along sample orbits.

    ``u[j-1]`` is the max over samples for iterate ``j``; ``log_u`` keeps the
    logarithms so large ``J`` does not overflow. ``estimates[j-1] = u_j^(1/j)``.
    """

    k: int
    J: int
    log_u: np.ndarray
    kind: str = "upsilon"

    @property
    def u(self):
        return np.exp(self.log_u)

    @property
    def estimates(self):
        j = np.arange(1, self.J + 1)
        return np.exp(self.log_u / j)

    @property
    def estimate(self):
        return float(self.estimates[-1])


@dataclass(frozen=True, eq=False)
class TorusMap:
    A: np.ndarray
    perturbation: tuple = ()
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=np.int64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.array_equal(A, np.asarray(self.A, dtype=float)):
            raise ValueError("A must be an integer matrix")
        object.__setattr__(self, "A", A)
        if round(np.linalg.det(A)) == 0:
            raise ValueError("det A must be nonzero")
        terms = tuple(t if isinstance(t, PerturbationTerm) else PerturbationTerm(**t)
                      for t in self.perturbation)
        for t in terms:
            if not 0 <= t.coord < A.shape[0] or len(t.freq) != A.shape[0]:
                raise ValueError(f"bad perturbation term {t}")
        object.__setattr__(self, "perturbation", terms)

    # construction -----------------------------------------------------
    @classmethod
    def from_spec(cls, spec):
        """Build from the JSON map description
        ``{"A": [[...]], "perturbation": [{"coord", "freq", "cos", "sin"}, ...]}``."""
        terms = [PerturbationTerm(int(t["coord"]), tuple(int(v) for v in t["freq"]),
                                  float(t.get("cos", 0.0)), float(t.get("sin", 0.0)))
                 for t in spec.get("perturbation", [])]
        return cls(np.array(spec["A"]), tuple(terms), spec.get("name", ""))

    @classmethod
    def from_json(cls, path):
        return cls.from_spec(json.loads(Path(path).read_text()))

    def to_spec(self):
        return {"A": self.A.tolist(),
                "perturbation": [{"coord": t.coord, "freq": list(t.freq), "cos": t.cos, "sin": t.sin}
                                 for t in self.perturbation]}

    # basic data -------------------------------------------------------
    @property
    def n(self):
        return self.A.shape[0]

    @property
    def is_linear(self):
        return all(t.cos == 0.0 and t.sin == 0.0 for t in self.perturbation)

    @cached_property
    def _flat(self):
        T = len(self.perturbation)
        pf = np.array([t.freq for t in self.perturbation], dtype=np.float64).reshape(T, self.n)
        pc = np.array([t.coord for t in self.perturbation], dtype=np.int64)
        pa = np.array([t.cos for t in self.perturbation], dtype=np.float64)
        pb = np.array([t.sin for t in self.perturbation], dtype=np.float64)
        return self.A.astype(np.float64), pf, pc, pa, pb

    @property
    def bandwidth(self):
        """Largest per-axis frequency appearing in ``p``."""
        return max((max(abs(v) for v in t.freq) for t in self.perturbation), default=0)

    # evaluation -------------------------------------------------------
    def lift_evaluate(self, x):
        x = np.asarray(x, dtype=float)
        y, _ = kernels.lift_jacobian(x.reshape(-1, self.n), *self._flat)
        return y.reshape(x.shape)

    def evaluate(self, x):
        return np.mod(self.lift_evaluate(x), 1.0)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        _, jac = kernels.lift_jacobian(x.reshape(-1, self.n), *self._flat)
        return jac.reshape(x.shape[:-1] + (self.n, self.n)) if x.ndim > 1 else jac[0]

    def lift_and_jacobian(self, x):
        return kernels.lift_jacobian(np.asarray(x, dtype=float).reshape(-1, self.n), *self._flat)

    def det_jacobian(self, x):
        return np.linalg.det(self.jacobian(np.asarray(x, dtype=float).reshape(-1, self.n)))

    def grid_jacobian(self, grid):
        """``Df`` at every grid point, shape ``grid.shape + (n, n)``."""
        return self.jacobian(grid.points()).reshape(grid.shape + (self.n, self.n))

    def _check_grid(self, N=None):
        F = self.bandwidth
        return N or max(16, 1 << int(np.ceil(np.log2(4 * self.n * F + 4))))

    @cached_property
    def _degree(self):
        d = int(round(np.linalg.det(self.A)))
        grid = PeriodicGrid(self.n, self._check_grid())
        integral = float(np.mean(self.det_jacobian(grid.points())))
        if abs(integral - d) > 1e-8 * max(1, abs(d)):
            raise ValueError(f"degree check failed: det A = {d}, integral of det Df = {integral}")
        return d

    def degree(self):
        """Topological degree ``det A`` (cross-checked against the integral of ``det Df``)."""
        return self._degree

    def regularity_report(self, eps_det=1e-8, N=256):
        grid = PeriodicGrid(self.n, N)
        det = self.det_jacobian(grid.points())
        mn = float(np.min(np.abs(det)))
        changes = bool(np.any(det > 0) and np.any(det < 0))
        return RegularityReport(bool(mn > eps_det and not changes), mn, changes)

    @cached_property
    def is_cover(self):
        return self.regularity_report().is_local_diffeo

    def require_cover(self):
        if not self.is_cover:
            raise NotACoverError("operation requires a covering map (det Df vanishes or changes sign)")

    # preimages --------------------------------------------------------
    @cached_property
    def cosets(self):
        return coset_representatives(self.A)

    @cached_property
    def _Ainv(self):
        return np.linalg.inv(self.A.astype(float))

    def solve_lift(self, targets, seeds):
        x, res, _ = kernels.newton_solve(targets, seeds, *self._flat, NEWTON_TOL, NEWTON_MAXITER)
        return x, res

    def preimage_points(self, y):
        """All preimages of many targets at once.

        Returns ``(x, sign)`` with ``x`` of shape ``(P, |det A|, n)`` reduced
        mod 1 and ``sign`` the orientation of each branch.
        """
        y = np.mod(np.asarray(y, dtype=float).reshape(-1, self.n), 1.0)
        P, d = y.shape[0], len(self.cosets)
        targets = (y[:, None, :] + self.cosets[None, :, :]).reshape(-1, self.n)
        x, res = self.solve_lift(targets, targets @ self._Ainv.T)
        bad = res >= 10 * NEWTON_TOL * max(1.0, float(np.abs(targets).max()))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise BranchEnumerationError(
                f"Newton did not converge (residual {res[i]:.2e})",
                coset=self.cosets[i % d].tolist())
        x = np.mod(x, 1.0).reshape(P, d, self.n)
        _, jac = self.lift_and_jacobian(x.reshape(-1, self.n))
        sign = np.sign(np.linalg.det(jac)).reshape(P, d).astype(np.int64)
        return x, sign

    def preimages(self, y):
        y = np.asarray(y, dtype=float).reshape(self.n)
        pts, sign = self.preimage_points(y)
        pts, sign = pts[0], sign[0]
        res = torus_distance(self.evaluate(pts), y[None, :])
        for a in range(len(pts)):
            for b in range(a):
                if torus_distance(pts[a], pts[b]) < 1e-9:
                    raise BranchEnumerationError("duplicate preimage roots", coset=self.cosets[a].tolist())
        return PreimageSet(y, tuple(PreimageBranch(pts[i], int(sign[i]), float(res[i]))
                                    for i in range(len(pts))))

    # orbits -----------------------------------------------------------
    def orbit(self, x, steps):
        """Points ``x, f x, ..., f^steps x`` (mod 1), shape ``(steps+1,) + x.shape``."""
        x = np.mod(np.asarray(x, dtype=float).reshape(-1, self.n), 1.0)
        out = [x]
        for _ in range(steps):
            x = self.evaluate(x)
            out.append(x)
        return np.array(out)

    def iterate_jacobians(self, x, steps):
        """Per-step Jacobians ``Df(f^i x)`` along orbits, shape ``(steps, P, n, n)``."""
        orb = self.orbit(x, steps - 1)
        return np.array([self.lift_and_jacobian(o)[1] for o in orb])


def torus_distance(a, b):
    """Sup-norm distance on the torus between broadcastable point arrays."""
    d = np.mod(np.asarray(a) - np.asarray(b) + 0.5, 1.0) - 0.5
    return np.max(np.abs(d), axis=-1)


def _seed_points(n, per_axis):
    g = np.arange(per_axis) / per_axis + 0.5 / per_axis
    return np.stack([c.ravel() for c in np.meshgrid(*([g] * n), indexing="ij")], axis=1)


def _windowed_log_norms(f, k, J, seeds_per_axis, inverse):
    """max over windows of log ||wedge^k of products of J consecutive Df||.

    Samples are the orbit-closed set ``{f^m(s) : s seed, 0 <= m <= J}`` so
    that ``u_{j+l} <= u_j u_l`` holds exactly for the sampled maxima.
    """
    seeds = _seed_points(f.n, seeds_per_axis)
    jacs = f.iterate_jacobians(seeds, 2 * J)  # (2J, S, n, n)
    if inverse:
        jacs = np.linalg.inv(jacs)
    comp = compound(jacs, k)  # (2J, S, c, c)
    S = seeds.shape[0]
    c = comp.shape[-1]
    log_u = np.full(J, -np.inf)
    for m in range(J + 1):
        prod = np.broadcast_to(np.eye(c), (S, c, c)).copy()
        logscale = np.zeros(S)
        for j in range(1, J + 1):
            step = comp[m + j - 1]
            prod = prod @ step if inverse else step @ prod
            s = np.linalg.norm(prod, ord=2, axis=(1, 2))
            s = np.where(s > 0, s, 1.0)
            prod /= s[:, None, None]
            logscale += np.log(s)
            log_u[j - 1] = max(log_u[j - 1], float(np.max(logscale)))
    return log_u


def upsilon(f, k, J, seeds_per_axis=None):
    """Growth of ``||wedge^k D(f^j)||`` over sample orbits; ``Upsilon_0 = 1``."""
    if not 0 <= k <= f.n:
        raise ValueError("k must lie in 0..n")
    if J < 1:
        raise ValueError("J must be positive")
    if k == 0:
        return GrowthRates(0, J, np.zeros(J))
    seeds_per_axis = seeds_per_axis or (64 if f.n == 1 else 16)
    return GrowthRates(k, J, _windowed_log_norms(f, k, J, seeds_per_axis, False))


def nu(f, k, J, seeds_per_axis=None):
    """Growth of ``||(wedge^k D(f^l))^{-1}||`` (covers only); ``nu_0 = 1``."""
    f.require_cover()
    if not 0 <= k <= f.n:
        raise ValueError("k must lie in 0..n")
    if k == 0:
        return GrowthRates(0, J, np.zeros(J), kind="nu")
    seeds_per_axis = seeds_per_axis or (64 if f.n == 1 else 16)
    return GrowthRates(k, J, _windowed_log_norms(f, k, J, seeds_per_axis, True), kind="nu")
