"""Windows, lattices, the short-time Fourier transform and decay diagnostics.

Phase-space shifts act as ``pi(x, xi) g(y) = exp(i xi (y - x)) g(y - x)`` and
the STFT is ``V_g f(x, xi) = <f, pi(x, xi) g>``.  With
``||g|| = (2 pi)^(-1/2)`` the continuous inversion formula

    f = int V_g f(z) pi(z) g dz

holds; :func:`istft` discretizes it as a Riemann sum over a lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import hermite as _herm
from scipy.signal import fftconvolve

from . import _parallel
from .errors import BoundaryMassError, FitError, GridMismatchError, LatticeError, NormalizationError
from .field import (
    POSITION,
    GridSpec,
    SampledState,
    boundary_mass,
    fourier_forward,
    l2_norm,
)

SYNTHESIS_NORM = (2.0 * np.pi) ** -0.5
DEFAULT_FLOOR = 1e-13
DEFAULT_CORE = 2.0
MIN_SAMPLES = 20
NO_DECAY_RATE = 0.01
_ROW_CHUNK = 16


# --------------------------------------------------------------------------- windows


@dataclass(frozen=True)
class Window:
    """Analysis/synthesis window.

    ``profile`` is an exact callable ``y -> g(y)`` for the built-in kinds, so
    shifted copies are evaluated analytically; custom windows are shifted by
    Fourier phase multiplication (periodically).
    """

    state: SampledState
    kind: str
    l2_normalization: float
    profile: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.state.domain != POSITION:
            raise ValueError("windows are given in the position domain")
        if not l2_norm(self.state) > 0:
            raise NormalizationError("window has zero norm")

    @property
    def grid(self) -> GridSpec:
        return self.state.grid

    @classmethod
    def gaussian(cls, grid: GridSpec, norm: float = SYNTHESIS_NORM) -> "Window":
        c = norm * np.pi ** -0.25

        def profile(y):
            return c * np.exp(-0.5 * np.asarray(y) ** 2)

        return cls(SampledState(grid, profile(grid.x)), "gaussian", norm, profile)

    @classmethod
    def hermite(cls, grid: GridSpec, order: int = 1, norm: float = SYNTHESIS_NORM) -> "Window":
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        c = norm / np.sqrt(2.0 ** order * factorial(order) * np.sqrt(np.pi))

        def profile(y):
            y = np.asarray(y)
            return c * _herm.hermval(y, coef) * np.exp(-0.5 * y ** 2)

        return cls(SampledState(grid, profile(grid.x)), "hermite", norm, profile)

    @classmethod
    def custom(cls, state: SampledState) -> "Window":
        return cls(state, "custom", l2_norm(state), None)

    def normalized(self, norm: float = SYNTHESIS_NORM) -> "Window":
        """Copy rescaled so that its grid L2 norm equals ``norm``."""
        scale = norm / l2_norm(self.state)
        prof = None
        if self.profile is not None:
            base = self.profile

            def prof(y):
                return scale * base(y)

        return Window(self.state * scale, self.kind, norm, prof)

    def shifted(self, xs) -> np.ndarray:
        """Array ``G[j, :] = g(y - xs[j])`` on the grid."""
        xs = np.asarray(xs, dtype=float)
        y = self.grid.x
        if self.profile is not None:
            return self.profile(y[None, :] - xs[:, None]).astype(np.complex128)
        k = 2 * np.pi * np.fft.fftfreq(self.grid.n, self.grid.dx)
        ghat = np.fft.fft(self.state.values)
        return np.fft.ifft(ghat[None, :] * np.exp(-1j * np.outer(xs, k)), axis=1)


def check_synthesis_norm(g: Window, rtol: float = 1e-8):
    nrm = l2_norm(g.state)
    if abs(nrm - SYNTHESIS_NORM) > rtol * SYNTHESIS_NORM:
        raise NormalizationError(
            f"synthesis needs ||g|| = (2 pi)^(-1/2) = {SYNTHESIS_NORM:.12f}, got {nrm:.12f}; "
            "use Window.normalized()"
        )


# --------------------------------------------------------------------------- lattices


@dataclass(frozen=True)
class Lattice:
    """Separable rectangular lattice ``x_j = xc + (j - (nx-1)/2) dx`` (same for xi)."""

    dx: float
    dxi: float
    nx: int
    nxi: int
    x_center: float = 0.0
    xi_center: float = 0.0
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.dx <= 0 or self.dxi <= 0 or self.nx < 1 or self.nxi < 1:
            raise LatticeError("lattice steps must be positive and counts >= 1")
        if self.strict and self.oversampling < 2.0:
            raise LatticeError(f"oversampling 2 pi/(dx dxi) = {self.oversampling:.3f} < 2")

    @classmethod
    def from_extents(cls, x_extent, xi_extent, nx, nxi=None, **kw) -> "Lattice":
        """Lattice with ``nx`` nodes spanning ``[-x_extent, x_extent]`` (likewise xi)."""
        nxi = nx if nxi is None else nxi
        dx = 2 * x_extent / (nx - 1)
        dxi = 2 * xi_extent / (nxi - 1)
        return cls(dx, dxi, nx, nxi, **kw)

    @classmethod
    def from_steps(cls, x_extent, xi_extent, dx, dxi=None, **kw) -> "Lattice":
        """Lattice with the given steps covering ``[-x_extent, x_extent]`` (likewise xi)."""
        dxi = dx if dxi is None else dxi
        nx = 2 * int(round(x_extent / dx)) + 1
        nxi = 2 * int(round(xi_extent / dxi)) + 1
        return cls(dx, dxi, nx, nxi, **kw)

    @property
    def oversampling(self) -> float:
        return 2 * np.pi / (self.dx * self.dxi)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dxi

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nxi)

    @property
    def size(self) -> int:
        return self.nx * self.nxi

    @property
    def xs(self) -> np.ndarray:
        return self.x_center + (np.arange(self.nx) - (self.nx - 1) / 2) * self.dx

    @property
    def xis(self) -> np.ndarray:
        return self.xi_center + (np.arange(self.nxi) - (self.nxi - 1) / 2) * self.dxi

    @property
    def x_extent(self) -> float:
        return (self.nx - 1) / 2 * self.dx

    @property
    def xi_extent(self) -> float:
        return (self.nxi - 1) / 2 * self.dxi

    def points(self) -> np.ndarray:
        """Nodes as an ``(nx*nxi, 2)`` array in row-major (x-index major) order."""
        X, XI = np.meshgrid(self.xs, self.xis, indexing="ij")
        return np.column_stack([X.ravel(), XI.ravel()])

    def nearest_index(self, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest node indices ``(j, k)`` for each point and an in-range flag."""
        pts = np.atleast_2d(pts)
        j = np.rint((pts[:, 0] - self.xs[0]) / self.dx).astype(np.int64)
        k = np.rint((pts[:, 1] - self.xis[0]) / self.dxi).astype(np.int64)
        inside = (j >= 0) & (j < self.nx) & (k >= 0) & (k < self.nxi)
        return np.clip(j, 0, self.nx - 1), np.clip(k, 0, self.nxi - 1), inside

    def check_grid(self, grid: GridSpec):
        xs, xis = self.xs, self.xis
        if np.max(np.abs(xis)) >= grid.xi_max:
            raise LatticeError(
                f"lattice frequencies reach {np.max(np.abs(xis)):.3f}, beyond grid Nyquist {grid.xi_max:.3f}"
            )
        if np.max(np.abs(xs)) >= grid.x_max:
            raise LatticeError(f"lattice positions reach {np.max(np.abs(xs)):.3f}, beyond grid half-width {grid.x_max}")

    def meta(self) -> dict:
        return {
            "dx": self.dx,
            "dxi": self.dxi,
            "nx": self.nx,
            "nxi": self.nxi,
            "x_center": self.x_center,
            "xi_center": self.xi_center,
            "oversampling": self.oversampling,
        }


@dataclass(frozen=True)
class StftTable:
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128).reshape(self.lattice.shape)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite STFT values")
        object.__setattr__(self, "values", vals)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def __mul__(self, c):
        return StftTable(self.lattice, self.values * c)

    __rmul__ = __mul__


# --------------------------------------------------------------------------- STFT and synthesis


def atoms(g: Window, lat: Lattice) -> np.ndarray:
    """All shifted windows ``pi(z) g`` as rows of an ``(nx*nxi, n)`` array (row-major nodes)."""
    y = g.grid.x
    G = g.shifted(lat.xs)  # (nx, n)
    phase = np.exp(1j * lat.xis[None, :, None] * (y[None, None, :] - lat.xs[:, None, None]))
    return (G[:, None, :] * phase).reshape(lat.size, g.grid.n)


def _stft_rows(fvals, g, lat, sl):
    y = g.grid.x
    xs = lat.xs[sl]
    H = fvals[None, :] * np.conj(g.shifted(xs))
    E = np.exp(-1j * np.outer(y, lat.xis))
    return (H @ E) * np.exp(1j * np.outer(xs, lat.xis)) * g.grid.dx


def stft(f: SampledState, g: Window, lat: Lattice) -> StftTable:
    """``V_g f`` on the lattice by Riemann sum over the grid."""
    if f.grid != g.grid:
        raise GridMismatchError("signal and window live on different grids")
    if f.domain != POSITION:
        raise ValueError("stft expects a position-domain state")
    lat.check_grid(f.grid)
    slices = _parallel.chunked(lat.nx, -(-lat.nx // _ROW_CHUNK))
    rows = _parallel.map_ordered(lambda sl: _stft_rows(f.values, g, lat, sl), slices)
    return StftTable(lat, np.vstack(rows))


def _istft_rows(V, g, lat, sl):
    y = g.grid.x
    xs = lat.xs[sl]
    W = (V[sl] * np.exp(-1j * np.outer(xs, lat.xis))) @ np.exp(1j * np.outer(lat.xis, y))
    return np.sum(W * g.shifted(xs), axis=0)


def istft(tbl: StftTable, g: Window, check_norm: bool = True) -> SampledState:
    """Riemann-sum synthesis ``sum_z V(z) pi(z) g dx dxi``."""
    lat = tbl.lattice
    if check_norm:
        check_synthesis_norm(g)
    if lat.oversampling < 2.0:
        raise LatticeError(f"under-sampled lattice (oversampling {lat.oversampling:.3f} < 2)")
    lat.check_grid(g.grid)
    slices = _parallel.chunked(lat.nx, -(-lat.nx // _ROW_CHUNK))
    parts = _parallel.map_ordered(lambda sl: _istft_rows(tbl.values, g, lat, sl), slices)
    out = np.zeros(g.grid.n, dtype=np.complex128)
    for p in parts:
        out += p
    return SampledState(g.grid, out * lat.cell_area)


# --------------------------------------------------------------------------- decay fits


@dataclass(frozen=True)
class DecayFit:
    """Fit ``log|v| ~ C - eps * dist``; ``flagged`` means no measurable decay."""

    log_amplitude: float
    rate: float
    fit_residual: float
    floor: float
    n_samples: int
    core_radius: float = DEFAULT_CORE
    flagged: bool = False

    def meta(self) -> dict:
        return {
            "C": self.log_amplitude,
            "eps": self.rate,
            "residual": self.fit_residual,
            "floor": self.floor,
            "n_samples": self.n_samples,
            "core_radius": self.core_radius,
            "flagged": self.flagged,
        }


def fit_log_linear(
    amplitude,
    dist,
    floor: float = DEFAULT_FLOOR,
    core_radius: float = DEFAULT_CORE,
    min_samples: int = MIN_SAMPLES,
    far_field: bool = False,
) -> DecayFit:
    """Least-squares fit of ``log amplitude`` against ``-dist``.

    Uses samples with ``amplitude >= floor * peak`` outside the core ball
    ``dist <= core_radius``.  With ``far_field`` only the outer half of the
    admissible distance range is used.
    """
    amp = np.abs(np.asarray(amplitude, dtype=np.complex128)).ravel()
    dist = np.asarray(dist, dtype=float).ravel()
    peak = float(amp.max()) if amp.size else 0.0
    if peak == 0.0:
        raise FitError("all samples are zero")
    above = amp >= floor * peak
    keep = above & (dist > core_radius)
    if np.count_nonzero(above) and not np.any(keep):
        raise FitError("degenerate fit: every sample above the floor lies in the core ball")
    if far_field and np.any(keep):
        lo, hi = dist[keep].min(), dist[keep].max()
        keep &= dist >= 0.5 * (lo + hi)
    n = int(np.count_nonzero(keep))
    if n < min_samples:
        raise FitError(f"only {n} samples above the floor outside the core (need {min_samples})")
    d = dist[keep]
    if np.ptp(d) == 0:
        raise FitError("degenerate fit: every retained sample has the same distance")
    la = np.log(amp[keep])
    A = np.column_stack([np.ones(n), -d])
    (C, eps), *_ = np.linalg.lstsq(A, la, rcond=None)
    resid = float(np.sqrt(np.mean((la - (C - eps * d)) ** 2)))
    return DecayFit(float(C), float(eps), resid, floor, n, core_radius, bool(eps < NO_DECAY_RATE))


def fit_exponential_decay(tbl: StftTable, center=None, floor: float = DEFAULT_FLOOR, core_radius: float = DEFAULT_CORE) -> DecayFit:
    """Exponential decay of ``|tbl|`` away from ``center``.

    ``center`` may be ``None`` (origin), a point ``(x, xi)``, or a callable
    mapping the ``(N, 2)`` node array to reference points.
    """
    pts = tbl.lattice.points()
    if center is None:
        ref = np.zeros(2)
    elif callable(center):
        ref = np.asarray(center(pts), dtype=float)
    else:
        ref = np.asarray(center, dtype=float)
    dist = np.linalg.norm(pts - ref, axis=-1)
    return fit_log_linear(tbl.values, dist, floor, core_radius)


def default_lattice(grid: GridSpec, nodes: int = 64, fill: float = 0.8) -> Lattice:
    """Square lattice covering ``fill`` of the position box and frequency band."""
    ext = fill * min(grid.x_max, grid.xi_max)
    return Lattice.from_extents(ext, ext, nodes, strict=False)


def s11_membership_report(
    f: SampledState,
    g: Window,
    lat: Optional[Lattice] = None,
    threshold: float = NO_DECAY_RATE,
    floor: float = DEFAULT_FLOOR,
    boundary_tol: float = 1e-10,
) -> dict:
    """Far-field exponential rates of ``|f|``, ``|f^|`` and ``|V_g f|``."""
    bm = boundary_mass(f)
    if bm > boundary_tol:
        raise BoundaryMassError(f"boundary mass {bm:.3e} exceeds {boundary_tol:.0e}")
    grid = f.grid
    lat = lat or default_lattice(grid)
    pos = fit_log_linear(f.values, np.abs(grid.x), floor, DEFAULT_CORE, far_field=True)
    fh = fourier_forward(f)
    freq = fit_log_linear(fh.values, np.abs(grid.xi), floor, DEFAULT_CORE, far_field=True)
    tbl = stft(f, g, lat)
    tf_fit = fit_log_linear(tbl.values, np.linalg.norm(lat.points(), axis=1), floor, DEFAULT_CORE, far_field=True)
    rates = {"position_rate": pos.rate, "frequency_rate": freq.rate, "stft_rate": tf_fit.rate}
    return {
        **rates,
        "threshold": threshold,
        "passed": bool(min(rates.values()) > threshold),
        "fits": {"position": pos.meta(), "frequency": freq.meta(), "stft": tf_fit.meta()},
    }


def _difference_lattice(lat: Lattice) -> Lattice:
    return Lattice(lat.dx, lat.dxi, 2 * lat.nx - 1, 2 * lat.nxi - 1, strict=False)


def window_change_domination_check(f: SampledState, g: Window, h: Window, lat: Lattice) -> dict:
    """Compare ``|V_h f(w)|`` with ``||g||^-2 (|V_g f| * |V_h g|)(w)`` on the lattice.

    The convolution is the Riemann sum over the lattice, using ``V_h g`` on
    the difference lattice.  ``violation`` is ``max(LHS - RHS)``.
    """
    if not l2_norm(g.state) > 0:
        raise NormalizationError("g must be nonzero")
    lhs = np.abs(stft(f, h, lat).values)
    vgf = np.abs(stft(f, g, lat).values)
    dl = _difference_lattice(lat)
    dl.check_grid(g.grid)
    vhg = np.abs(stft(g.state, h, dl).values)
    conv = _full_conv_center(vgf, vhg, lat)
    rhs = conv * lat.cell_area / l2_norm(g.state) ** 2
    peak = float(lhs.max())
    viol = float(np.max(lhs - rhs))
    return {"violation": viol, "peak": peak, "relative_violation": viol / peak if peak else 0.0, "lhs": lhs, "rhs": rhs}


def _full_conv_center(a, kern, lat):
    # kern is indexed on offsets -(n-1)..(n-1); the w-th output sums a[z] kern[w - z]
    full = fftconvolve(a, kern, mode="full")
    return np.maximum(full[lat.nx - 1 : 2 * lat.nx - 1, lat.nxi - 1 : 2 * lat.nxi - 1], 0.0)
