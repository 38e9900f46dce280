"""Periodic grids on T^1 / T^2 and differential forms sampled on them.

Arrays are indexed ``[component, i_1, ..., i_n]`` with the grid point
``(i_1, ..., i_n) / N``. Multi-indices are increasing tuples of 0-based axis
numbers, ordered lexicographically (``(0,), (1,)`` for 1-forms on T^2).
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from eclab import kernels

TWO_PI = 2.0 * np.pi


class DegreeError(ValueError):
    """Raised when form degrees do not fit the requested operation."""


@lru_cache(maxsize=None)
def multi_indices(n, k):
    """Increasing multi-indices of length ``k`` in ``range(n)``."""
    return tuple(itertools.combinations(range(n), k))


def perm_sign(seq):
    """Sign of the permutation sorting ``seq`` (0 if ``seq`` has repeats)."""
    seq = list(seq)
    if len(set(seq)) < len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def wedge_table(n, k, l):
    """Entries ``(a, b, c, sign)`` with ``dx_I[a] ^ dx_J[b] = sign dx_K[c]``."""
    left, right, out = multi_indices(n, k), multi_indices(n, l), multi_indices(n, k + l)
    table = []
    for a, I in enumerate(left):
        for b, J in enumerate(right):
            s = perm_sign(I + J)
            if s:
                table.append((a, b, out.index(tuple(sorted(I + J))), s))
    return tuple(table)


@lru_cache(maxsize=None)
def d_table(n, k):
    """Entries ``(axis, src, dst, sign)`` with ``d(u dx_I) = sum sign du/dx_axis dx_K``."""
    src, dst = multi_indices(n, k), multi_indices(n, k + 1)
    table = []
    for a, I in enumerate(src):
        for axis in range(n):
            s = perm_sign((axis,) + I)
            if s:
                table.append((axis, a, dst.index(tuple(sorted((axis,) + I))), s))
    return tuple(table)


def compound(M, k):
    """k-th compound (exterior power) of the trailing square matrices of ``M``.

    Entry ``[I, J]`` is the minor on rows ``I`` and columns ``J`` in the
    lexicographic multi-index basis. ``k = 0`` yields ones.
    """
    M = np.asarray(M)
    n = M.shape[-1]
    idx = multi_indices(n, k)
    out = np.empty(M.shape[:-2] + (len(idx), len(idx)), dtype=np.result_type(M, float))
    for a, I in enumerate(idx):
        for b, J in enumerate(idx):
            if k == 0:
                out[..., a, b] = 1.0
            else:
                out[..., a, b] = np.linalg.det(M[..., list(I), :][..., :, list(J)])
    return out


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid with ``N`` points per axis on the unit torus ``T^n``."""

    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only T^1 and T^2 are supported")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two, at least 8")

    @property
    def spacing(self):
        return 1.0 / self.N

    @property
    def shape(self):
        return (self.N,) * self.n

    @property
    def size(self):
        return self.N ** self.n

    def axes(self):
        return [np.arange(self.N) / self.N for _ in range(self.n)]

    def coords(self):
        """Coordinate arrays, one per axis, each of shape ``grid.shape``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self):
        """All grid points as a ``(N**n, n)`` array in row-major order."""
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def wavenumbers(self):
        """Integer wavenumber arrays (FFT ordering), one per axis."""
        k = np.fft.fftfreq(self.N, 1.0 / self.N)
        return np.meshgrid(*([k] * self.n), indexing="ij")

    def refine(self, factor=2):
        return PeriodicGrid(self.n, self.N * factor)


def _spectral_diff(u, axis, N):
    k = np.fft.fftfreq(N, 1.0 / N)
    if N % 2 == 0:
        k[N // 2] = 0.0  # odd derivative of the Nyquist mode is not representable
    shape = [1] * u.ndim
    shape[axis] = N
    uh = np.fft.fft(u, axis=axis)
    out = np.fft.ifft(uh * (1j * TWO_PI * k).reshape(shape), axis=axis)
    return out.real if np.isrealobj(u) else out


def _fd_diff(u, axis, N):
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) * (N / 2.0)


@dataclass(frozen=True, eq=False)
class FormField:
    """Degree-``k`` form with one sampled coefficient array per multi-index.

    ``smooth`` selects spectral differentiation and trigonometric
    interpolation; set it to False for low-regularity data to use centered
    differences and multilinear interpolation instead.
    """

    grid: PeriodicGrid
    k: int
    data: np.ndarray
    smooth: bool = True

    def __post_init__(self):
        if not 0 <= self.k <= self.grid.n:
            raise DegreeError(f"degree {self.k} outside 0..{self.grid.n}")
        data = np.asarray(self.data)
        expected = (len(multi_indices(self.grid.n, self.k)),) + self.grid.shape
        if data.shape != expected:
            raise ValueError(f"data shape {data.shape} != {expected}")
        if not np.all(np.isfinite(data)):
            raise ValueError("form coefficients must be finite")
        object.__setattr__(self, "data", data)

    # construction -----------------------------------------------------
    @classmethod
    def zeros(cls, grid, k, smooth=True):
        return cls(grid, k, np.zeros((len(multi_indices(grid.n, k)),) + grid.shape), smooth)

    @classmethod
    def from_functions(cls, grid, k, funcs, smooth=True):
        """Sample ``funcs`` (callables of the coordinate arrays, one per multi-index)."""
        X = grid.coords()
        comps = [np.broadcast_to(np.asarray(fn(*X), dtype=float), grid.shape) for fn in funcs]
        return cls(grid, k, np.stack(comps), smooth)

    @classmethod
    def constant(cls, grid, k, coefficients):
        coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
        data = coefficients.reshape((-1,) + (1,) * grid.n) * np.ones(grid.shape)
        return cls(grid, k, data)

    # algebra ----------------------------------------------------------
    @property
    def multi_indices(self):
        return multi_indices(self.grid.n, self.k)

    def component(self, I):
        return self.data[self.multi_indices.index(tuple(I))]

    def _check(self, other):
        if not isinstance(other, FormField) or other.grid != self.grid or other.k != self.k:
            raise DegreeError("forms must share grid and degree")

    def __add__(self, other):
        self._check(other)
        return FormField(self.grid, self.k, self.data + other.data, self.smooth and other.smooth)

    def __sub__(self, other):
        self._check(other)
        return FormField(self.grid, self.k, self.data - other.data, self.smooth and other.smooth)

    def __mul__(self, c):
        return FormField(self.grid, self.k, self.data * c, self.smooth)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sup(self):
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    # sampling ---------------------------------------------------------
    def evaluate(self, points):
        """Values at arbitrary points ``(P, n)``; returns ``(P, ncomp)``."""
        points = np.mod(np.asarray(points, dtype=float).reshape(-1, self.grid.n), 1.0)
        if self.smooth:
            return FourierForm.from_field(self).evaluate(points)
        return _multilinear(self.data, points, self.grid.N)

    def resample(self, N):
        """Trigonometric interpolation onto a grid with ``N`` points per axis."""
        g = PeriodicGrid(self.grid.n, N)
        return FourierForm.from_field(self).to_field(g)


def _multilinear(data, points, N):
    n = points.shape[1]
    s = points * N
    i0 = np.floor(s).astype(np.int64)
    t = s - i0
    out = np.zeros((points.shape[0], data.shape[0]))
    for corner in itertools.product((0, 1), repeat=n):
        w = np.ones(points.shape[0])
        idx = []
        for a, c in enumerate(corner):
            w *= t[:, a] if c else 1.0 - t[:, a]
            idx.append((i0[:, a] + c) % N)
        out += w[:, None] * data[(slice(None),) + tuple(idx)].T
    return out


@dataclass(frozen=True, eq=False)
class FourierForm:
    """Band-limited form stored by Fourier coefficients on a mode box.

    ``coefs[c, m_1 + B, ..., m_n + B]`` multiplies ``exp(2 pi i m.x) dx_{I_c}``
    for ``|m_i| <= B``. Coefficients of real forms are Hermitian symmetric.
    """

    n: int
    k: int
    B: int
    coefs: np.ndarray

    @classmethod
    def zeros(cls, n, k, B):
        return cls(n, k, B, np.zeros((len(multi_indices(n, k)),) + (2 * B + 1,) * n, dtype=complex))

    @classmethod
    def from_field(cls, field, B=None, tol=1e-15):
        """Exact transform of a grid field; ``B`` defaults to the smallest box
        holding every coefficient above ``tol`` relative to the largest."""
        N, n = field.grid.N, field.grid.n
        axes = tuple(range(1, n + 1))
        hat = np.fft.fftn(field.data, axes=axes) / field.grid.size
        if B is None:
            mag = np.abs(hat)
            scale = mag.max() if mag.size else 0.0
            if scale == 0.0:
                B = 0
            else:
                freqs = np.meshgrid(*([np.fft.fftfreq(N, 1.0 / N)] * n), indexing="ij")
                big = np.any(mag > tol * scale, axis=0)
                B = int(max(np.max(np.abs(f[big])) for f in freqs))
            B = min(B, N // 2 - 1) if N > 2 else 0
        B = min(B, N // 2 - 1)
        sel = np.r_[np.arange(-B, B + 1)] % N
        coefs = hat[np.ix_(range(hat.shape[0]), *([sel] * n))]
        return cls(n, field.k, B, coefs)

    @classmethod
    def mode(cls, n, k, comp, m, coefficient=1.0):
        """Single complex exponential ``coefficient * exp(2 pi i m.x) dx_I``."""
        B = int(max(abs(v) for v in m)) if len(m) else 0
        out = cls.zeros(n, k, B)
        out.coefs[(comp,) + tuple(v + B for v in m)] += coefficient
        return out

    @property
    def ncomp(self):
        return self.coefs.shape[0]

    def padded(self, B):
        if B == self.B:
            return self
        if B < self.B:
            raise ValueError("cannot shrink mode box")
        out = FourierForm.zeros(self.n, self.k, B)
        sl = (slice(None),) + (slice(B - self.B, B + self.B + 1),) * self.n
        out.coefs[sl] = self.coefs
        return out

    def __add__(self, other):
        if other.n != self.n or other.k != self.k:
            raise DegreeError("forms must share dimension and degree")
        B = max(self.B, other.B)
        return FourierForm(self.n, self.k, B, self.padded(B).coefs + other.padded(B).coefs)

    def __mul__(self, c):
        return FourierForm(self.n, self.k, self.B, self.coefs * c)

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + other * -1.0

    def is_zero(self, tol=0.0):
        return not np.any(np.abs(self.coefs) > tol)

    def mode_list(self, tol=0.0):
        """Nonzero modes as ``(modes (M, n) int, coefs (M, ncomp) complex)``."""
        box = np.abs(self.coefs).max(axis=0) > tol
        idx = np.argwhere(box)
        modes = idx - self.B
        coefs = np.stack([self.coefs[(c,) + tuple(idx.T)] for c in range(self.ncomp)], axis=1) \
            if len(idx) else np.zeros((0, self.ncomp), dtype=complex)
        return modes.astype(np.int64), coefs

    def evaluate(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, self.n)
        modes, coefs = self.mode_list()
        return kernels.eval_modes(points, modes, coefs)

    def to_field(self, grid):
        if grid.N <= 2 * self.B:
            raise ValueError("grid too coarse for the mode box")
        hat = np.zeros((self.ncomp,) + grid.shape, dtype=complex)
        sel = np.arange(-self.B, self.B + 1) % grid.N
        hat[np.ix_(range(self.ncomp), *([sel] * self.n))] = self.coefs
        data = np.fft.ifftn(hat * grid.size, axes=tuple(range(1, self.n + 1))).real
        return FormField(grid, self.k, data)

    def d(self):
        """Exterior derivative, exact on the mode box."""
        if self.k >= self.n:
            raise DegreeError("d of a top-degree form")
        out = FourierForm.zeros(self.n, self.k + 1, self.B)
        m = np.meshgrid(*([np.arange(-self.B, self.B + 1)] * self.n), indexing="ij")
        for axis, src, dst, s in d_table(self.n, self.k):
            out.coefs[dst] += s * 1j * TWO_PI * m[axis] * self.coefs[src]
        return out


# ----------------------------------------------------------------------
# operations on sampled fields

def integrate(phi):
    """Integral of a top-degree form over the unit torus (periodic trapezoid rule)."""
    if phi.k != phi.grid.n:
        raise DegreeError(f"integrate needs degree {phi.grid.n}, got {phi.k}")
    return float(np.mean(phi.data[0]))


def wedge(phi, psi):
    """Pointwise exterior product."""
    if phi.grid != psi.grid:
        raise DegreeError("grid mismatch")
    n = phi.grid.n
    if phi.k + psi.k > n:
        raise DegreeError("degree overflow in wedge")
    out = np.zeros((len(multi_indices(n, phi.k + psi.k)),) + phi.grid.shape,
                   dtype=np.result_type(phi.data, psi.data))
    for a, b, c, s in wedge_table(n, phi.k, psi.k):
        out[c] += s * phi.data[a] * psi.data[b]
    return FormField(phi.grid, phi.k + psi.k, out, phi.smooth and psi.smooth)


def exterior_derivative(phi):
    """Exterior derivative; spectral for smooth fields, centered differences otherwise."""
    n, N = phi.grid.n, phi.grid.N
    if phi.k >= n:
        raise DegreeError("d of a top-degree form")
    diff = _spectral_diff if phi.smooth else _fd_diff
    out = np.zeros((len(multi_indices(n, phi.k + 1)),) + phi.grid.shape)
    cache = {}
    for axis, src, dst, s in d_table(n, phi.k):
        key = (axis, src)
        if key not in cache:
            cache[key] = diff(phi.data[src], axis, N)
        out[dst] += s * cache[key]
    return FormField(phi.grid, phi.k + 1, out, phi.smooth)


def comass_norm(phi):
    """Sup over grid points of the Euclidean norm of the coefficient vector."""
    if phi.data.shape[0] == 0:
        return 0.0
    return float(np.max(np.sqrt(np.sum(np.abs(phi.data) ** 2, axis=0))))


# ----------------------------------------------------------------------
# binary dump format

FIELD_FORMAT = {
    "payload": "little-endian IEEE-754 float64, row-major (C) axis order, one file per component",
    "header": "sidecar JSON per component: {n, N, degree, component, endianness, dtype}",
    "component": "1-based increasing multi-index, e.g. [1, 2] for dx1^dx2",
}


def dump_field(field, directory, stem):
    """Write ``stem.<c>.f64`` payloads and ``stem.<c>.json`` headers."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, I in enumerate(field.multi_indices or [()]):
        payload = directory / f"{stem}.{c}.f64"
        np.ascontiguousarray(field.data[c], dtype="<f8").tofile(payload)
        header = {"n": field.grid.n, "N": field.grid.N, "degree": field.k,
                  "component": [i + 1 for i in I], "endianness": "little", "dtype": "float64",
                  "payload": payload.name}
        (directory / f"{stem}.{c}.json").write_text(json.dumps(header, indent=1))
        paths.append(payload)
    return paths


def load_field(directory, stem):
    directory = Path(directory)
    headers = sorted(directory.glob(f"{stem}.*.json"), key=lambda p: int(p.name.split(".")[-2]))
    if not headers:
        raise FileNotFoundError(f"no field named {stem} in {directory}")
    comps = []
    meta = None
    for h in headers:
        meta = json.loads(h.read_text())
        if meta["endianness"] != "little" or meta["dtype"] != "float64":
            raise ValueError("unsupported field encoding")
        shape = (meta["N"],) * meta["n"]
        comps.append(np.fromfile(directory / meta["payload"], dtype="<f8").reshape(shape))
    grid = PeriodicGrid(meta["n"], meta["N"])
    return FormField(grid, meta["degree"], np.stack(comps))
