"""Fourier-side machinery on the periodic unit torus.

Grid points are ``j * h`` with ``h = 1/n`` and multi-index ``j`` in
``[0, n)^d``; fields are stored as flat vectors in row-major (C) order.
All transforms use the unitary ``1/n^(d/2)`` normalization in both
directions, so ``L = F^-1 diag(4 pi^2 |k|^2) F`` is symmetric.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.fft as sfft

from .errors import IndivisibleGrid, ShiftResonant

GAP_FLOOR = 1e-3
# cap on the required gap, as a fraction of the spacing 4 pi^2 of the spectrum
SPACING_FRACTION = 0.1
_IMAG_TOL = 1e-10


def default_leaf_width(n):
    """Largest divisor of ``n`` not exceeding ``sqrt(n)`` (at least 1)."""
    best = 1
    for b in range(1, math.isqrt(n) + 1):
        if n % b == 0:
            best = b
    return best


@dataclass(frozen=True)
class GridSpec:
    """Uniform ``n^d`` grid on the torus with leaf boxes of width ``b``."""

    d: int
    n: int
    b: int = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.n <= 0 or self.n % 2:
            raise ValueError(f"n must be a positive even integer, got {self.n}")
        if self.b is None:
            object.__setattr__(self, "b", default_leaf_width(self.n))
        if self.b < 1:
            raise ValueError(f"leaf width must be positive, got {self.b}")
        if self.n % self.b:
            raise IndivisibleGrid(f"n={self.n} is not a multiple of b={self.b}")

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def N(self):
        return self.n**self.d

    @property
    def shape(self):
        return (self.n,) * self.d

    def coords(self, idx):
        """Multi-indices of flat indices, shape ``(len(idx), d)``."""
        return np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)

    def flat(self, coords):
        """Flat indices of multi-indices, wrapping modulo ``n``."""
        coords = np.mod(np.asarray(coords), self.n)
        return np.ravel_multi_index(tuple(np.moveaxis(coords, -1, 0)), self.shape)

    def points(self):
        """Physical coordinates ``j*h`` of all grid points, shape ``(N, d)``."""
        return self.coords(np.arange(self.N)) * self.h

    def center_index(self):
        return int(self.flat([self.n // 2] * self.d))


@dataclass(frozen=True)
class FourierSymbol:
    """Diagonal Fourier multiplier stored in FFT order (k = 0, 1, ..., -1)."""

    grid: GridSpec
    values: np.ndarray

    def centered(self):
        """Values over K = [-n/2, n/2)^d in increasing order of each k_i."""
        return np.fft.fftshift(self.values)

    def at(self, k):
        return self.values[tuple(np.mod(k, self.grid.n))]


def wavenumbers(grid):
    """Integer frequencies per axis in FFT storage order."""
    return np.fft.fftfreq(grid.n, d=1.0 / grid.n)


def _k_squared(grid):
    k = wavenumbers(grid) ** 2
    ksq = np.zeros(grid.shape)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        ksq = ksq + k.reshape(shape)
    return ksq


def laplacian_symbol(grid):
    return FourierSymbol(grid, 4.0 * np.pi**2 * _k_squared(grid))


def spectral_gap(grid, s):
    """Distance from ``s`` to the nearest eigenvalue of ``L``."""
    return float(np.min(np.abs(laplacian_symbol(grid).values - s)))


def required_gap(s):
    """Gap demanded around ``s``: relative floor, capped by the eigenvalue spacing.

    Eigenvalues of ``L`` are ``4 pi^2`` times integers, so for large ``|s|`` a
    purely relative floor can exceed every gap in the spectrum.
    """
    return min(GAP_FLOOR * max(1.0, abs(s)), SPACING_FRACTION * 4.0 * np.pi**2)


def _gap_ok(grid, s):
    return spectral_gap(grid, s) >= required_gap(s)


def green_symbol(grid, s):
    """Multiplier ``1/(4 pi^2 |k|^2 - s)`` of ``G = (L - s)^-1``."""
    if not _gap_ok(grid, s):
        raise ShiftResonant(
            f"shift {s!r} is within {required_gap(s):.3e} of the Laplacian spectrum "
            f"(gap {spectral_gap(grid, s):.3e}); run adjust_shift"
        )
    return FourierSymbol(grid, 1.0 / (laplacian_symbol(grid).values - s))


def _as_fields(grid, v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != grid.N or v.ndim > 2:
        raise ValueError(f"expected length {grid.N} (optionally x k), got shape {v.shape}")
    return v.reshape(grid.shape + v.shape[1:])


def apply_symbol(symbol, v):
    """Compute ``F^-1 (symbol * F v)`` for a field or a stack of fields ``(N, k)``."""
    grid = symbol.grid
    x = _as_fields(grid, v)
    axes = tuple(range(grid.d))
    mult = symbol.values.reshape(grid.shape + (1,) * (x.ndim - grid.d))
    y = sfft.ifftn(mult * sfft.fftn(x, axes=axes, norm="ortho"), axes=axes, norm="ortho")
    re = np.linalg.norm(y.real)
    im = np.linalg.norm(y.imag)
    if im > _IMAG_TOL * max(re, np.finfo(float).tiny):
        raise ValueError(f"imaginary residue {im:.3e} relative to {re:.3e}; symbol is not even")
    return y.real.reshape(np.shape(v))


def apply_laplacian(grid, v):
    return apply_symbol(laplacian_symbol(grid), v)


def apply_green(grid, s, v):
    return apply_symbol(green_symbol(grid, s), v)


def _symmetrize(grid, g):
    """Force exact evenness ``g(j) == g(-j mod n)``."""
    flipped = g
    for axis in range(grid.d):
        flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
    return 0.5 * (g + flipped)


@dataclass(frozen=True)
class GreensKernel:
    """Translation-invariant kernel of ``G``: ``G(i, j) = g((i - j) mod n)``.

    ``g`` is stored as an array of shape ``grid.shape``. The kernel of ``G^2``
    (the full-torus autocorrelation of ``g``) is available as ``g2``; it gives
    ``sum_k G(a, k) G(b, k)`` without touching the ``N`` columns.
    """

    grid: GridSpec
    s: float
    g: np.ndarray
    symbol: FourierSymbol = field(repr=False)

    @cached_property
    def g2(self):
        sq = FourierSymbol(self.grid, self.symbol.values**2)
        delta = np.zeros(self.grid.N)
        delta[0] = 1.0
        return _symmetrize(self.grid, apply_symbol(sq, delta).reshape(self.grid.shape))

    def _lookup(self, table, rows, cols):
        grid = self.grid
        a = grid.coords(np.asarray(rows, dtype=np.intp).ravel())
        c = grid.coords(np.asarray(cols, dtype=np.intp).ravel())
        diff = np.mod(a[:, None, :] - c[None, :, :], grid.n)
        return table[tuple(np.moveaxis(diff, -1, 0))]

    def block(self, rows, cols):
        """Dense submatrix ``G(rows, cols)``."""
        return self._lookup(self.g, rows, cols)

    def gram_block(self, rows, cols):
        """Dense submatrix of ``G G^T`` (equivalently ``G^2``) over the whole torus."""
        return self._lookup(self.g2, rows, cols)

    def dense(self):
        idx = np.arange(self.grid.N)
        return self.block(idx, idx)


def green_kernel(grid, s):
    """Materialize ``G`` applied to the discrete delta at the origin (one FFT)."""
    symbol = green_symbol(grid, s)
    delta = np.zeros(grid.N)
    delta[0] = 1.0
    g = apply_symbol(symbol, delta).reshape(grid.shape)
    return GreensKernel(grid, float(s), _symmetrize(grid, g), symbol)


def adjust_shift(grid, s, q):
    """Move ``s`` off the Laplacian spectrum, compensating exactly through ``q``.

    ``s`` is scaled by ``1 + eta`` with ``eta`` = 1e-3, 2e-3, 4e-3, ... until
    ``min_k |4 pi^2 |k|^2 - s'| >= required_gap(s')`` holds;
    ``q' = q + (s' - s)`` keeps ``L - s' + q'`` equal to ``L - s + q``. A zero
    shift is moved to a small negative value instead (scaling cannot move it).
    """
    s = float(s)
    q = np.asarray(q, dtype=float)
    if _gap_ok(grid, s):
        return s, q
    eta = GAP_FLOOR
    while True:
        s_new = s * (1.0 + eta) if s != 0.0 else -eta
        if _gap_ok(grid, s_new):
            return s_new, q + (s_new - s)
        eta *= 2.0
