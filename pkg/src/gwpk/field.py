"""Uniform periodic grids, sampled states and the angular Fourier transform.

States live on the torus ``[-x_max, x_max)^d`` sampled at ``n`` points per
axis.  The Fourier transform uses

    F(f)(xi) = int exp(-i x xi) f(x) dx,

so Parseval reads ``||F f||^2 = (2 pi)^d ||f||^2`` and the inverse carries
the ``(2 pi)^-d`` factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainMismatchError, GridMismatchError, TruncationWarning

POSITION = "position"
FREQUENCY = "frequency"

#: Boundary-mass tolerance applied by pipelines before trusting a result.
BOUNDARY_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with ``n`` points per axis on ``[-x_max, x_max)^d``."""

    n: int
    x_max: float
    d: int = 1

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or d = 2 grids are supported")

    @property
    def dx(self) -> float:
        return 2.0 * self.x_max / self.n

    @property
    def dxi(self) -> float:
        return 2.0 * np.pi / (self.n * self.dx)

    @property
    def xi_max(self) -> float:
        """Nyquist frequency ``pi / dx``."""
        return np.pi / self.dx

    @cached_property
    def x(self) -> np.ndarray:
        x = -self.x_max + self.dx * np.arange(self.n)
        x.flags.writeable = False
        return x

    @cached_property
    def xi(self) -> np.ndarray:
        """Centered frequency axis covering ``[-pi/dx, pi/dx)``."""
        xi = (np.arange(self.n) - self.n // 2) * self.dxi
        xi.flags.writeable = False
        return xi

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    def mesh(self, domain: str = POSITION) -> tuple[np.ndarray, ...]:
        axis = self.x if domain == POSITION else self.xi
        return np.meshgrid(*([axis] * self.d), indexing="ij")

    def spacing(self, domain: str = POSITION) -> float:
        return self.dx if domain == POSITION else self.dxi


@dataclass(frozen=True)
class SampledState:
    """Complex samples of a function on a grid, tagged by domain."""

    grid: GridSpec
    values: np.ndarray
    domain: str = POSITION
    _frozen: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.domain not in (POSITION, FREQUENCY):
            raise ValueError(f"unknown domain tag {self.domain!r}")
        vals = np.array(self.values, dtype=np.complex128)
        if vals.size != self.grid.n ** self.grid.d:
            raise GridMismatchError(
                f"{vals.size} samples do not match grid with {self.grid.n}^{self.grid.d} points"
            )
        vals = vals.reshape(self.grid.shape)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: GridSpec, func, domain: str = POSITION) -> "SampledState":
        return cls(grid, func(*grid.mesh(domain)), domain)

    @classmethod
    def zeros(cls, grid: GridSpec, domain: str = POSITION) -> "SampledState":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128), domain)

    def with_values(self, values) -> "SampledState":
        return SampledState(self.grid, values, self.domain)

    def __add__(self, other):
        _same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def boundary_mass(self) -> float:
        """Fraction of L2 mass in the outer 10% of the domain (per axis)."""
        return boundary_mass(self)


def _same_grid(a: SampledState, b: SampledState):
    if a.grid != b.grid:
        raise GridMismatchError("states live on different grids")
    if a.domain != b.domain:
        raise DomainMismatchError("states carry different domain tags")


def _phase_vectors(grid: GridSpec):
    # x_j = x0 + j dx, xi_k = xi0 + k dxi with x0 = -x_max, xi0 = -pi/dx
    x0 = grid.x[0]
    xi0 = grid.xi[0]
    pre = np.exp(-1j * (grid.x - x0) * xi0)
    post = np.exp(-1j * x0 * grid.xi)
    return pre, post


def _outer(vecs):
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def fourier_forward(f: SampledState) -> SampledState:
    """Riemann-sum approximation of ``int exp(-i x xi) f(x) dx`` on the grid."""
    if f.domain != POSITION:
        raise DomainMismatchError("fourier_forward expects a position-domain state")
    grid = f.grid
    pre, post = _phase_vectors(grid)
    d = grid.d
    vals = f.values * _outer([pre] * d)
    vals = np.fft.fftn(vals) * _outer([post] * d) * grid.dx ** d
    return SampledState(grid, vals, FREQUENCY)


def fourier_inverse(F: SampledState) -> SampledState:
    """Inverse of :func:`fourier_forward` (exact on the grid)."""
    if F.domain != FREQUENCY:
        raise DomainMismatchError("fourier_inverse expects a frequency-domain state")
    grid = F.grid
    pre, post = _phase_vectors(grid)
    d = grid.d
    vals = np.fft.ifftn(F.values / _outer([post] * d)) / _outer([pre] * d) / grid.dx ** d
    return SampledState(grid, vals, POSITION)


def l2_norm(f: SampledState) -> float:
    """Riemann-sum L2 norm ``h^(d/2) ||values||_2`` with ``h`` the domain spacing."""
    h = f.grid.spacing(f.domain)
    return float(np.sqrt(h ** f.grid.d) * np.linalg.norm(f.values.ravel()))


def inner(f: SampledState, g: SampledState) -> complex:
    """``<f, g> = int f conj(g)``, linear in the first slot."""
    _same_grid(f, g)
    h = f.grid.spacing(f.domain) ** f.grid.d
    return complex(np.vdot(g.values.ravel(), f.values.ravel()) * h)


def boundary_mass(f: SampledState) -> float:
    grid = f.grid
    axis = grid.x if f.domain == POSITION else grid.xi
    half = grid.x_max if f.domain == POSITION else grid.xi_max
    outer1 = np.abs(axis) > 0.9 * half
    if grid.d == 1:
        band = outer1
    else:
        band = outer1[:, None] | outer1[None, :]
    w = np.abs(f.values) ** 2
    total = w.sum()
    if total == 0:
        return 0.0
    return float(w[band].sum() / total)


def check_boundary(f: SampledState, tol: float = BOUNDARY_TOL, what: str = "state") -> float:
    """Return the boundary mass, warning when it exceeds ``tol``."""
    bm = boundary_mass(f)
    if bm > tol:
        warnings.warn(
            f"{what}: boundary mass {bm:.3e} exceeds {tol:.0e}; periodization error may be visible",
            TruncationWarning,
            stacklevel=3,
        )
    return bm


def relative_l2(a: SampledState, b: SampledState) -> float:
    """``||a - b|| / ||b||``."""
    _same_grid(a, b)
    nb = np.linalg.norm(b.values)
    return float(np.linalg.norm(a.values - b.values) / nb) if nb else float(np.linalg.norm(a.values))


def gaussian_state(grid: GridSpec, center=(0.0, 0.0), width: float = 1.0) -> SampledState:
    """L2-normalized Gaussian packet ``pi(x0, xi0)`` of ``exp(-x^2 / (2 w^2))`` (d = 1)."""
    x0, xi0 = center
    y = grid.x - x0
    c = (np.pi * width ** 2) ** -0.25
    return SampledState(grid, c * np.exp(-(y ** 2) / (2 * width ** 2)) * np.exp(1j * xi0 * y))


def spectral_derivative(f: SampledState, order: int = 1) -> SampledState:
    """``d^k f / dx^k`` by Fourier multiplication (d = 1), Nyquist mode zeroed for odd k."""
    grid = f.grid
    k = 2 * np.pi * np.fft.fftfreq(grid.n, grid.dx)
    mult = (1j * k) ** order
    if order % 2:
        mult[grid.n // 2] = 0.0
    return f.with_values(np.fft.ifft(np.fft.fft(f.values) * mult))
