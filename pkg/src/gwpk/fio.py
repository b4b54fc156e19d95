"""Type-I Fourier integral operators built from a Hamiltonian flow (d = 1).

Away from caustics the canonical map ``(y, eta) -> (x, xi) = chi_t(y, eta)``
has a generating function ``Phi(x, eta)`` with

    y = d_eta Phi(x, eta),    xi = d_x Phi(x, eta),

and ``S(t, 0) f(x) = (2 pi)^-1 int exp(i Phi(x, eta)) sigma(x, eta) f^(eta) d eta``.
``Phi`` is recovered by integrating ``dPhi = xi dx + y deta`` along the path
``(0, 0) -> (x, 0) -> (x, eta)``; closedness of that 1-form is audited.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from . import kernels
from .errors import CausticError, ClosednessError, RootFindingError, SupportError
from .field import SampledState, boundary_mass, fourier_forward
from .hamiltonian import SymbolModel, integrate_flow_batch

DEFAULT_DELTA = 1e-3
CLOSED_OK = 1e-6
CLOSED_ABORT = 1e-4
ROOT_TOL = 1e-10
SUPPORT_TOL = 1e-10


def caustic_check(jac) -> float:
    """Minimum over nodes of ``|det dx/dy|``: the position block of the flow Jacobian."""
    jac = np.asarray(jac)
    d = jac.shape[-1] // 2
    block = jac[..., :d, :d]
    return float(np.min(np.abs(np.linalg.det(block))))


class FlowMap:
    """Evaluates ``chi_t`` and its Jacobian at arbitrary batches of points."""

    def __init__(self, a: SymbolModel, T: float, steps: int = 512):
        if a.d != 1:
            raise ValueError("FlowMap is implemented for d = 1")
        self.symbol = a
        self.T = T
        self.steps = steps

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        b = integrate_flow_batch(self.symbol, pts, self.T, self.steps, store="final", estimate_error=False)
        if np.any(b.blown_up):
            raise RootFindingError("flow blew up while inverting the position map")
        return b.traj, b.jac


@dataclass(frozen=True)
class PhaseFunction:
    """``Phi`` sampled on ``x_axis x eta_axis`` with its gradient fields.

    ``xi_field`` and ``y_field`` hold ``d_x Phi`` and ``d_eta Phi`` as recorded
    during construction (or from the spline when built from a formula).
    """

    x_axis: np.ndarray
    eta_axis: np.ndarray
    values: np.ndarray
    xi_field: np.ndarray
    y_field: np.ndarray
    mixed: np.ndarray
    delta: float
    closedness: float = 0.0
    spline: RectBivariateSpline = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.spline is None:
            object.__setattr__(self, "spline", RectBivariateSpline(self.x_axis, self.eta_axis, self.values, kx=3, ky=3, s=0))

    @classmethod
    def from_function(cls, func: Callable, x_axis, eta_axis) -> "PhaseFunction":
        """Phase given by a formula ``func(X, ETA)``; gauge shifted to ``Phi(0, 0) = 0``."""
        x_axis = np.asarray(x_axis, float)
        eta_axis = np.asarray(eta_axis, float)
        X, E = np.meshgrid(x_axis, eta_axis, indexing="ij")
        vals = np.asarray(func(X, E), float) - float(func(np.array(0.0), np.array(0.0)))
        sp = RectBivariateSpline(x_axis, eta_axis, vals, kx=3, ky=3, s=0)
        xi = sp(x_axis, eta_axis, dx=1)
        y = sp(x_axis, eta_axis, dy=1)
        mixed = sp(x_axis, eta_axis, dx=1, dy=1)
        return cls(x_axis, eta_axis, vals, xi, y, mixed, float(np.min(np.abs(mixed))), 0.0, sp)

    def __call__(self, x, eta, grid: bool = True):
        return self.spline(x, eta, grid=grid)

    def grad_x(self, x, eta, grid: bool = False):
        return self.spline(x, eta, dx=1, grid=grid)

    def grad_eta(self, x, eta, grid: bool = False):
        return self.spline(x, eta, dy=1, grid=grid)

    def covers(self, x, eta) -> np.ndarray:
        return (
            (x >= self.x_axis[0]) & (x <= self.x_axis[-1]) & (eta >= self.eta_axis[0]) & (eta <= self.eta_axis[-1])
        )

    def meta(self) -> dict:
        return {
            "gauge": "Phi(0,0)=0",
            "delta": self.delta,
            "closedness": self.closedness,
            "x_range": [float(self.x_axis[0]), float(self.x_axis[-1])],
            "eta_range": [float(self.eta_axis[0]), float(self.eta_axis[-1])],
            "shape": list(self.values.shape),
        }


def _invert_position(fm: FlowMap, x_axis, eta_axis, max_iter=50):
    """Solve ``x^t(y, eta) = x`` for ``y`` on the whole ``(x, eta)`` grid by safeguarded Newton."""
    X, E = np.meshgrid(x_axis, eta_axis, indexing="ij")
    # initial guess from the linearization at (0, eta)
    z0, J0 = fm(np.column_stack([np.zeros_like(eta_axis), eta_axis]))
    slope = J0[:, 0, 0]
    if np.any(np.abs(slope) < DEFAULT_DELTA):
        raise CausticError("position map is degenerate on the eta axis")
    Y = (X - z0[None, :, 0]) / slope[None, :]
    for _ in range(max_iter):
        z, J = fm(np.column_stack([Y.ravel(), E.ravel()]))
        res = z[:, 0].reshape(X.shape) - X
        dxdy = J[:, 0, 0].reshape(X.shape)
        step = res / dxdy
        big = np.abs(step) > 5.0
        step = np.where(big, 5.0 * np.sign(step), step)
        Y = Y - step
        if np.max(np.abs(res)) < ROOT_TOL * max(1.0, float(np.max(np.abs(X)))):
            xi = z[:, 1].reshape(X.shape)
            return Y + step, xi, dxdy
    raise RootFindingError(f"position inversion did not converge (residual {np.max(np.abs(res)):.2e})")


def construct_phase(a: SymbolModel, T: float, x_axis, eta_axis, delta: float = DEFAULT_DELTA,
                    steps: int = 512, caustic_probe=None) -> PhaseFunction:
    """Generating function ``Phi`` of ``chi_T`` on ``x_axis x eta_axis``.

    ``caustic_probe`` is an optional array of flow Jacobians (e.g. from the
    analysis lattice) screened with :func:`caustic_check` before inversion.
    """
    x_axis = np.asarray(x_axis, float)
    eta_axis = np.asarray(eta_axis, float)
    fm = FlowMap(a, T, steps)
    if caustic_probe is not None:
        m = caustic_check(caustic_probe)
        if m < delta:
            raise CausticError(f"min |det dx/dy| = {m:.3e} < delta = {delta:g}")
    Y, XI, dxdy = _invert_position(fm, x_axis, eta_axis)
    # the inversion is exact up to ROOT_TOL; recompute the fields at the solved points
    z, J = fm(np.column_stack([Y.ravel(), np.broadcast_to(eta_axis, Y.shape).ravel()]))
    XI = z[:, 1].reshape(Y.shape)
    dxdy = J[:, 0, 0].reshape(Y.shape)
    mind = float(np.min(np.abs(dxdy)))
    if mind < delta:
        raise CausticError(f"min |det dx/dy| = {mind:.3e} < delta = {delta:g}")
    # closedness of xi dx + y deta: d(xi)/d(eta) = d(y)/dx
    sxi = RectBivariateSpline(x_axis, eta_axis, XI, kx=3, ky=3, s=0)
    sy = RectBivariateSpline(x_axis, eta_axis, Y, kx=3, ky=3, s=0)
    dxi_deta = sxi(x_axis, eta_axis, dy=1)
    dy_dx = sy(x_axis, eta_axis, dx=1)
    scale = max(1.0, float(np.max(np.abs(dy_dx))))
    mismatch = float(np.max(np.abs(dxi_deta - dy_dx)[2:-2, 2:-2])) / scale if min(Y.shape) > 4 else 0.0
    if mismatch > CLOSED_ABORT:
        raise ClosednessError(f"mixed-partial mismatch {mismatch:.2e} > {CLOSED_ABORT:g}: input map is not symplectic")
    if mismatch > CLOSED_OK:
        warnings.warn(f"mixed-partial mismatch {mismatch:.2e} above {CLOSED_OK:g}", RuntimeWarning, stacklevel=2)
    # path (0,0) -> (x,0) -> (x,eta)
    xi_on_axis = sxi(x_axis, np.array([0.0]))[:, 0]
    A = CubicSpline(x_axis, xi_on_axis).antiderivative()
    first = A(x_axis) - A(0.0)
    Phi = np.empty_like(Y)
    for i in range(x_axis.size):
        Bi = CubicSpline(eta_axis, Y[i]).antiderivative()
        Phi[i] = first[i] + Bi(eta_axis) - Bi(0.0)
    mixed = 1.0 / dxdy
    return PhaseFunction(x_axis, eta_axis, Phi, XI, Y, mixed, float(np.min(np.abs(mixed))), mismatch)


def fio_apply(phi: PhaseFunction, sigma, f: SampledState, support_tol: float = SUPPORT_TOL,
              boundary_tol: float = 1e-10) -> SampledState:
    """``(2 pi)^-1 sum_eta exp(i Phi(x, eta)) sigma(x, eta) f^(eta) d eta`` on the grid.

    ``sigma`` is a constant or a callable ``sigma(X, ETA)``.  Output points
    outside the phase grid are set to zero.  Raises :class:`SupportError`
    when the relative frequency mass of ``f`` outside the phase grid exceeds
    ``support_tol``.
    """
    grid = f.grid
    bm = boundary_mass(f)
    if bm > boundary_tol:
        warnings.warn(f"input boundary mass {bm:.3e} exceeds {boundary_tol:.0e}", RuntimeWarning, stacklevel=2)
    F = fourier_forward(f)
    eta = grid.xi
    ecov = (eta >= phi.eta_axis[0]) & (eta <= phi.eta_axis[-1])
    w = np.abs(F.values) ** 2
    escaped = float(w[~ecov].sum() / w.sum()) if w.sum() else 0.0
    if escaped > support_tol:
        raise SupportError(f"escaped frequency mass {escaped:.3e} exceeds {support_tol:g}")
    x = grid.x
    xcov = (x >= phi.x_axis[0]) & (x <= phi.x_axis[-1])
    et = eta[ecov]
    ph = phi(x[xcov], et)
    if callable(sigma):
        X, E = np.meshgrid(x[xcov], et, indexing="ij")
        sg = np.asarray(sigma(X, E), dtype=np.complex128)
    else:
        sg = np.full(ph.shape, complex(sigma))
    out = np.zeros(grid.n, dtype=np.complex128)
    out[xcov] = kernels.fio_sum(np.ascontiguousarray(ph), np.ascontiguousarray(sg), F.values[ecov], grid.dxi)
    return SampledState(grid, out)


def phase_flow_comparability(phi: PhaseFunction, a: SymbolModel, T: float, samples: int = 200,
                             radius: float = 5.0, floor: float = 1e-8, seed: int = 0, steps: int = 512) -> dict:
    """Ratios ``LHS / RHS`` of the gradient mismatch and the flow mismatch on random tuples.

    ``LHS = |d_x Phi(x', eta) - eta'| + |d_eta Phi(x', eta) - x|`` and
    ``RHS = |chi_1(x, eta) - x'| + |chi_2(x, eta) - eta'|``; tuples with
    ``RHS <= floor`` are skipped.
    """
    rng = np.random.default_rng(seed)
    lo_x = max(-radius, phi.x_axis[0])
    hi_x = min(radius, phi.x_axis[-1])
    lo_e = max(-radius, phi.eta_axis[0])
    hi_e = min(radius, phi.eta_axis[-1])
    x, xp = rng.uniform(lo_x, hi_x, (2, samples))
    eta, etap = rng.uniform(lo_e, hi_e, (2, samples))
    b = integrate_flow_batch(a, np.column_stack([x, eta]), T, steps, store="final", estimate_error=False)
    lhs = np.abs(phi.grad_x(xp, eta) - etap) + np.abs(phi.grad_eta(xp, eta) - x)
    rhs = np.abs(b.traj[:, 0] - xp) + np.abs(b.traj[:, 1] - etap)
    ok = rhs > floor
    r = lhs[ok] / rhs[ok]
    return {"c1": float(r.min()), "c2": float(r.max()), "n_used": int(ok.sum()), "samples": samples}


def quadratic_fio_constant(a: SymbolModel, T: float) -> complex:
    """Amplitude making the type-I form of a d = 1 metaplectic operator exact: ``A^(-1/2)``.

    Uses the same continuous branch as the metaplectic Gaussian.
    """
    from .propagator import quadratic_flow_matrix

    ss = np.linspace(0.0, T, 257)
    A = np.array([quadratic_flow_matrix(a, s)[0, 0] + 0j for s in ss])
    arg = np.unwrap(np.angle(A))[-1]
    return complex(abs(A[-1]) ** -0.5 * np.exp(-0.5j * arg))
