"""Test-problem families: Helmholtz and Schrodinger on the unit torus.

Both are brought to the split form ``(-Delta - s + q(x)) u = f`` with ``s``
the mean of the zeroth-order coefficient, so ``q`` has zero mean before any
shift adjustment.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .errors import InvalidMedia
from .spectral import adjust_shift, apply_laplacian

HELMHOLTZ_KINDS = ("helmholtz_gaussian", "helmholtz_random_gaussians", "helmholtz_constant")
SCHRODINGER_KINDS = ("schrodinger_random", "schrodinger_lattice_vacancy", "schrodinger_constant")
LATTICE_SPACING = 8  # lattice sites every 8 grid cells


@dataclass
class MediaSpec:
    """Parameters of a medium.

    For Helmholtz kinds ``amplitude`` scales the Gaussian bumps added to
    ``c = 1`` and ``sigma`` is measured in domain units. For Schrodinger kinds
    ``amplitude`` is the height of each Gaussian in ``V`` and ``sigma`` is
    measured in grid steps ``h``. ``*_constant`` kinds ignore the bumps; the
    constant Schrodinger potential is ``V = amplitude`` everywhere.
    """

    kind: str = "helmholtz_gaussian"
    omega_over_2pi: float = 16.0
    E: float = 2.5
    amplitude: float = None
    sigma: float = None
    count: int = None
    seed: int = 42

    def __post_init__(self):
        if self.kind not in HELMHOLTZ_KINDS + SCHRODINGER_KINDS:
            raise InvalidMedia(f"unknown media kind {self.kind!r}")
        helm = self.is_helmholtz
        if self.amplitude is None:
            self.amplitude = 0.25 if helm else 1.0
        if self.sigma is None:
            self.sigma = 0.1 if helm else 1.5
        if self.count is None:
            self.count = 3 if self.kind == "helmholtz_random_gaussians" else 1
        if self.amplitude < 0 or (self.amplitude == 0 and not self.kind.endswith("_constant")):
            raise InvalidMedia(f"amplitude must be positive, got {self.amplitude}")
        if self.sigma <= 0:
            raise InvalidMedia(f"sigma must be positive, got {self.sigma}")
        if self.count < 1:
            raise InvalidMedia(f"count must be at least 1, got {self.count}")

    @property
    def is_helmholtz(self):
        return self.kind in HELMHOLTZ_KINDS

    def to_dict(self):
        return asdict(self)


@dataclass
class SplitProblem:
    grid: object
    s: float
    q: np.ndarray
    f: np.ndarray
    label: str = ""
    # physical zeroth-order coefficient k(x) in (-Delta - k(x)) u = f
    coefficient: np.ndarray = field(default=None, repr=False)
    medium: np.ndarray = field(default=None, repr=False)

    def apply(self, u):
        """Pseudospectral operator ``(L - s + q) u``."""
        return apply_laplacian(self.grid, u) - self.s * u + self.q * u

    def residual(self, u):
        return float(np.linalg.norm(self.apply(u) - self.f) / np.linalg.norm(self.f))


def torus_offsets(grid, center):
    """Nearest-image displacement from ``center`` to every grid point, shape (N, d)."""
    diff = grid.points() - np.asarray(center, dtype=float)
    return diff - np.round(diff)


def gaussian_field(grid, centers, amplitude, sigma):
    """Sum of isotropic Gaussians with torus (nearest-image) distance."""
    if sigma <= 0:
        raise InvalidMedia(f"sigma must be positive, got {sigma}")
    out = np.zeros(grid.N)
    for c in np.atleast_2d(np.asarray(centers, dtype=float)):
        r2 = np.sum(torus_offsets(grid, c) ** 2, axis=1)
        out += np.exp(-r2 / (2.0 * sigma**2))
    return amplitude * out


def delta_source(grid):
    f = np.zeros(grid.N)
    f[grid.center_index()] = 1.0
    return f


def _rng(media):
    # PCG64, seeded with the recorded 64-bit seed
    return np.random.Generator(np.random.PCG64(media.seed))


def helmholtz_centers(grid, media):
    d = grid.d
    if media.kind == "helmholtz_gaussian":
        return np.full((media.count, d), 0.5)
    if media.kind == "helmholtz_constant":
        return np.empty((0, d))
    centers = _rng(media).uniform(0.2, 0.8, size=(media.count, d))
    if d == 3:
        centers[:, 2] = 0.5
    return centers


def velocity(grid, media):
    centers = helmholtz_centers(grid, media)
    if len(centers) == 0:
        return np.ones(grid.N)
    return 1.0 + gaussian_field(grid, centers, media.amplitude, media.sigma)


def lattice_sites(grid):
    if grid.n % LATTICE_SPACING:
        raise InvalidMedia(f"lattice media need n divisible by {LATTICE_SPACING}, got {grid.n}")
    m = grid.n // LATTICE_SPACING
    ticks = np.arange(m) / m
    mesh = np.meshgrid(*([ticks] * grid.d), indexing="ij")
    return np.stack([x.ravel() for x in mesh], axis=1)


def schrodinger_centers(grid, media):
    """Gaussian centers in domain units for the Schrodinger families."""
    if media.kind == "schrodinger_constant":
        return np.empty((0, grid.d))
    if media.kind == "schrodinger_random":
        count = math.ceil(grid.N / LATTICE_SPACING**grid.d)
        return _rng(media).uniform(0.0, 1.0, size=(count, grid.d))
    sites = lattice_sites(grid)
    off = sites - 0.5
    dist = np.sum((off - np.round(off)) ** 2, axis=1)
    return np.delete(sites, int(np.argmin(dist)), axis=0)


def potential(grid, media):
    """``V`` sampled at the grid, in unscaled units (one unit = one grid step)."""
    if media.kind == "schrodinger_constant":
        return np.full(grid.N, float(media.amplitude))
    centers = schrodinger_centers(grid, media)
    return gaussian_field(grid, centers, media.amplitude, media.sigma * grid.h)


def _split(grid, coeff, label, media_field, adjust):
    # coeff is k(x) in (-Delta - k) u = f
    s = float(np.mean(coeff))
    q = s - coeff
    if adjust:
        s, q = adjust_shift(grid, s, q)
    return SplitProblem(grid, s, q, delta_source(grid), label, coeff, media_field)


def build_helmholtz(grid, media, adjust=True):
    if not media.is_helmholtz:
        raise InvalidMedia(f"{media.kind!r} is not a Helmholtz medium")
    c = velocity(grid, media)
    if np.any(c <= 0):
        raise InvalidMedia("velocity must be positive everywhere")
    omega = 2.0 * np.pi * media.omega_over_2pi
    coeff = omega**2 / c**2
    label = f"helmholtz:{media.kind}:w/2pi={media.omega_over_2pi:g}:n={grid.n}:d={grid.d}"
    return _split(grid, coeff, label, c, adjust)


def build_schrodinger(grid, media, adjust=True):
    if media.is_helmholtz:
        raise InvalidMedia(f"{media.kind!r} is not a Schrodinger medium")
    ell = grid.n
    V = potential(grid, media)
    coeff = ell**2 * (media.E - V)
    label = f"schrodinger:{media.kind}:E={media.E:g}:n={grid.n}:d={grid.d}"
    return _split(grid, coeff, label, ell**2 * V, adjust)


def build_problem(equation, grid, media, adjust=True):
    if equation == "helmholtz":
        return build_helmholtz(grid, media, adjust)
    if equation == "schrodinger":
        return build_schrodinger(grid, media, adjust)
    raise ValueError(f"unknown equation {equation!r}")
