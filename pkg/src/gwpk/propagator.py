"""Reference Schrodinger solvers, evolved windows and the Gabor-multiplier representation.

The equation is ``D_t u + a^w u = 0`` with ``D_t = -i d/dt``, i.e.
``du/dt = -i a^w u``.  Three solvers are provided:

* ``strang_split`` for symbols with a kinetic + potential split,
* ``weyl_midpoint`` (Crank-Nicolson on the Weyl-quantized matrix) for any symbol,
* ``metaplectic_exact`` for quadratic symbols, via the wave-packet sum with
  the closed-form evolved Gaussian window.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import expm

from . import _parallel, kernels
from .errors import BoundaryMassError, ConvergenceError, LatticeError, SymbolError, TruncationWarning
from .field import GridSpec, SampledState, boundary_mass, l2_norm
from .hamiltonian import DEFAULT_STEPS, SymbolModel, flow_map_on_lattice, integrate_flow, symplectic_matrix
from .tf import DecayFit, Lattice, StftTable, Window, check_synthesis_norm, fit_exponential_decay, stft

STRANG = "strang_split"
WEYL_MIDPOINT = "weyl_midpoint"
METAPLECTIC = "metaplectic_exact"
METHODS = (STRANG, WEYL_MIDPOINT, METAPLECTIC)

INPUT_BOUNDARY_TOL = 1e-10
GROWTH_BOUNDARY_TOL = 1e-6
_NODE_CHUNK = 256
_STATE_CHUNK = 256


@dataclass(frozen=True)
class PropagatorHandle:
    """``S(t_end, t_start)`` for a symbol, a method and a time step."""

    symbol: SymbolModel
    method: str
    t_start: float = 0.0
    t_end: float = 1.0
    dt: Optional[float] = None
    inner: str = "direct"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == METAPLECTIC and not self.symbol.is_quadratic:
            raise SymbolError("metaplectic_exact needs a quadratic_form symbol")
        if self.method == STRANG and not self.symbol.has_separable_split:
            raise SymbolError("strang_split needs a kinetic + potential split")
        if self.method == WEYL_MIDPOINT and self.symbol.d != 1:
            raise SymbolError("weyl_midpoint is implemented for d = 1")
        if self.inner not in ("direct", "fixed_point"):
            raise ValueError("inner must be 'direct' or 'fixed_point'")

    @property
    def T(self) -> float:
        return self.t_end - self.t_start

    @property
    def steps(self) -> int:
        if self.T == 0:
            return 0
        if self.dt is None:
            return DEFAULT_STEPS
        return max(1, int(np.ceil(abs(self.T) / self.dt - 1e-9)))

    @property
    def step(self) -> float:
        return self.T / self.steps if self.steps else 0.0

    def with_times(self, t_start, t_end) -> "PropagatorHandle":
        return PropagatorHandle(self.symbol, self.method, t_start, t_end, self.dt, self.inner)

    def meta(self) -> dict:
        return {
            "symbol": self.symbol.name,
            "method": self.method,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "dt": self.step,
            "steps": self.steps,
        }


# --------------------------------------------------------------------------- Weyl quantization


def weyl_matrix(a: SymbolModel, grid: GridSpec, t: float = 0.0) -> np.ndarray:
    """Matrix of ``a^w`` on the grid by midpoint quadrature.

    ``K[i, j] = (2 pi)^-1 sum_xi exp(i (x_i - x_j) xi) a((x_i + x_j)/2, xi) dxi dx``;
    the inner xi-sum is one inverse FFT per midpoint.
    """
    if a.d != 1:
        raise SymbolError("weyl quantization is implemented for d = 1")
    n = grid.n
    if n > 2048:
        raise ValueError("weyl_matrix is O(n^2); n must be <= 2048")
    mids = grid.x[0] + 0.5 * grid.dx * np.arange(2 * n - 1)
    xi = np.fft.ifftshift(grid.xi)  # FFT order: xi[k] = 2 pi k / (n dx) folded
    M, XI = np.meshgrid(mids, xi, indexing="ij")
    vals = a.evaluate(t, M, XI)
    # xi_k (x_i - x_j) = 2 pi k r / n in FFT order, so the sum is an inverse FFT in k
    table = np.fft.ifft(vals, axis=1)
    return kernels.weyl_gather(np.ascontiguousarray(table), 1.0)


def weyl_apply(a: SymbolModel, f: SampledState, t: float = 0.0) -> SampledState:
    if f.grid.d != 1:
        raise SymbolError("weyl_apply is implemented for d = 1")
    return f.with_values(weyl_matrix(a, f.grid, t) @ f.values)


# --------------------------------------------------------------------------- time stepping


def _kinetic_phase(a, grid, h):
    k = 2 * np.pi * np.fft.fftfreq(grid.n, grid.dx)
    return np.exp(-1j * h * a.kinetic[0](k))


def _strang_run(hdl: PropagatorHandle, U: np.ndarray, grid: GridSpec, trace=None):
    a = hdl.symbol
    h = hdl.step
    kin = _kinetic_phase(a, grid, h)
    x = grid.x
    half = None
    for s in range(hdl.steps):
        tm = hdl.t_start + (s + 0.5) * h
        if half is None or a.time_dependent:
            half = np.exp(-0.5j * h * a.potential[0](tm, x))
        U = half * U
        U = np.fft.ifft(kin * np.fft.fft(U, axis=-1), axis=-1)
        U = half * U
        if trace is not None:
            trace(hdl.t_start + (s + 1) * h, U)
    return U


def _cn_operators(hdl, grid, tm):
    A = weyl_matrix(hdl.symbol, grid, tm)
    h = hdl.step
    I = np.eye(grid.n)
    return A, I + 0.5j * h * A, I - 0.5j * h * A


def _weyl_midpoint_run(hdl: PropagatorHandle, U: np.ndarray, grid: GridSpec, trace=None):
    """Crank-Nicolson ``(I + i h A/2) u+ = (I - i h A/2) u`` with ``A = a^w(t_mid)``."""
    a = hdl.symbol
    h = hdl.step
    lu = None
    A = Rm = None
    for s in range(hdl.steps):
        tm = hdl.t_start + (s + 0.5) * h
        if A is None or a.time_dependent:
            A, Lp, Rm = _cn_operators(hdl, grid, tm)
            if hdl.inner == "direct":
                lu = sla.lu_factor(Lp)
        rhs = U @ Rm.T
        if hdl.inner == "direct":
            U = sla.lu_solve(lu, rhs.T).T
        else:
            U = _fixed_point(A, h, rhs, U)
        if trace is not None:
            trace(hdl.t_start + (s + 1) * h, U)
    return U


def _fixed_point(A, h, rhs, guess, max_iter=10, tol=1e-12):
    # u = rhs - (i h / 2) A u, iterated from the previous state
    u = guess
    for _ in range(max_iter):
        nxt = rhs - 0.5j * h * (u @ A.T)
        err = np.linalg.norm(nxt - u) / max(np.linalg.norm(nxt), 1e-300)
        u = nxt
        if err < tol:
            return u
    raise ConvergenceError(f"midpoint fixed-point iteration did not reach {tol:g} in {max_iter} iterations")


def _march(hdl: PropagatorHandle, U: np.ndarray, grid: GridSpec, trace=None):
    if hdl.steps == 0:
        return U.copy()
    if hdl.method == STRANG:
        return _strang_run(hdl, U, grid, trace)
    if hdl.method == WEYL_MIDPOINT:
        return _weyl_midpoint_run(hdl, U, grid, trace)
    raise ValueError("metaplectic_exact is not a time-stepping method")


@dataclass
class EvolveTrace:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    boundary: list = field(default_factory=list)

    def meta(self) -> dict:
        return {"times": self.times, "norms": self.norms, "boundary_mass": self.boundary}


def evolve(hdl: PropagatorHandle, u0: SampledState, trace: Optional[EvolveTrace] = None,
           check_boundary: bool = True) -> SampledState:
    """``u(t_end)`` from ``u(t_start) = u0``."""
    grid = u0.grid
    if grid.d != 1:
        raise SymbolError("evolution is implemented for d = 1")
    bm0 = boundary_mass(u0)
    if check_boundary and bm0 > INPUT_BOUNDARY_TOL:
        warnings.warn(f"initial boundary mass {bm0:.3e} exceeds {INPUT_BOUNDARY_TOL:.0e}", TruncationWarning, stacklevel=2)
    if hdl.T == 0:
        return u0.with_values(u0.values.copy())
    if hdl.method == METAPLECTIC:
        out = _metaplectic_evolve(hdl, u0)
    else:
        cb = None
        if trace is not None:
            dx = grid.dx

            def cb(t, U):
                st = SampledState(grid, U)
                trace.times.append(float(t))
                trace.norms.append(float(np.sqrt(dx) * np.linalg.norm(U)))
                trace.boundary.append(boundary_mass(st))

        out = SampledState(grid, _march(hdl, u0.values[None, :], grid, cb)[0])
    if check_boundary:
        bm = boundary_mass(out)
        if bm > GROWTH_BOUNDARY_TOL:
            raise BoundaryMassError(f"boundary mass grew to {bm:.3e} (> {GROWTH_BOUNDARY_TOL:.0e}); enlarge the grid")
    return out


def evolve_batch(hdl: PropagatorHandle, U: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Evolve every row of ``U`` (shape ``(m, n)``); rows are independent."""
    U = np.atleast_2d(np.asarray(U, dtype=np.complex128))
    if hdl.method == METAPLECTIC:
        return U @ propagator_matrix(hdl, grid).T
    slices = _parallel.chunked(U.shape[0], -(-U.shape[0] // _STATE_CHUNK))
    parts = _parallel.map_ordered(lambda sl: _march(hdl, U[sl], grid), slices)
    return np.vstack(parts)


def propagator_matrix(hdl: PropagatorHandle, grid: GridSpec) -> np.ndarray:
    """Dense ``n x n`` matrix ``P`` with ``evolve(u) = P u`` on grid vectors.

    For time-stepping methods it is obtained by evolving the identity; for
    ``metaplectic_exact`` by the wave-packet sum on grid deltas.
    """
    n = grid.n
    if hdl.method == METAPLECTIC:
        return _metaplectic_matrix(hdl, grid)
    return evolve_batch(hdl, np.eye(n, dtype=np.complex128), grid).T


# --------------------------------------------------------------------------- phase-space shifts on the grid


def translate(values: np.ndarray, shifts, grid: GridSpec) -> np.ndarray:
    """``h(y - s)`` for each row/shift by Fourier phase multiplication (periodic)."""
    k = 2 * np.pi * np.fft.fftfreq(grid.n, grid.dx)
    V = np.atleast_2d(values)
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    return np.fft.ifft(np.fft.fft(V, axis=-1) * np.exp(-1j * np.outer(shifts, k)), axis=-1)


def shift_state(values, z, grid: GridSpec) -> np.ndarray:
    """``pi(x, xi) h`` for rows ``values`` and points ``z`` (shape ``(m, 2)``)."""
    z = np.atleast_2d(z)
    y = grid.x
    return np.exp(1j * z[:, 1:2] * (y[None, :] - z[:, 0:1])) * translate(values, z[:, 0], grid)


def shift_state_adjoint(values, z, grid: GridSpec) -> np.ndarray:
    """``pi(x, xi)^* h(y) = exp(-i xi y) h(y + x)``."""
    z = np.atleast_2d(z)
    y = grid.x
    return np.exp(-1j * z[:, 1:2] * y[None, :]) * translate(values, -z[:, 0], grid)


# --------------------------------------------------------------------------- metaplectic Gaussian


@dataclass(frozen=True)
class MetaplecticGaussian:
    """``S(t, 0) g`` for the Gaussian window ``c exp(-y^2/2)`` under a quadratic symbol."""

    amplitude: complex
    tau: complex
    flow_matrix: np.ndarray

    def __call__(self, y):
        y = np.asarray(y)
        return self.amplitude * np.exp(0.5j * self.tau * y ** 2)


def quadratic_flow_matrix(a: SymbolModel, t: float) -> np.ndarray:
    """``expm(2 t Omega Q)``: the linear map ``chi_t`` of ``a = z^T Q z``."""
    return expm(2.0 * t * symplectic_matrix(a.d) @ a.Q)


def metaplectic_gaussian(a: SymbolModel, t: float, norm: float, samples: int = 513) -> MetaplecticGaussian:
    """Closed form ``(A + B i)^(-1/2) exp(i tau' y^2 / 2)`` with ``tau' = (C + D i)/(A + B i)``.

    The square-root branch follows ``arg(A(s) + i B(s))`` continuously from
    ``s = 0``, which fixes the scalar phase by continuity from the identity.
    """
    if not a.is_quadratic or a.d != 1:
        raise SymbolError("metaplectic Gaussian needs a d = 1 quadratic symbol")
    gen = 2.0 * symplectic_matrix(1) @ a.Q
    ss = np.linspace(0.0, t, samples)
    step = expm((ss[1] - ss[0]) * gen) if samples > 1 else np.eye(2)
    M = np.eye(2)
    args = [0.0]
    for _ in range(samples - 1):
        M = step @ M
        args.append(np.angle(M[0, 0] + 1j * M[0, 1]))
    arg = np.unwrap(np.array(args))[-1]
    M = quadratic_flow_matrix(a, t)
    A, B, C, D = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
    den = A + 1j * B
    tau = (C + 1j * D) / den
    amp = norm * np.pi ** -0.25 * abs(den) ** -0.5 * np.exp(-0.5j * arg)
    return MetaplecticGaussian(complex(amp), complex(tau), M)


def metaplectic_window(a: SymbolModel, t: float, g: Window) -> tuple[MetaplecticGaussian, SampledState]:
    if g.kind != "gaussian" or g.profile is None:
        raise SymbolError("the closed-form evolved window needs the Gaussian window")
    G = metaplectic_gaussian(a, t, g.l2_normalization)
    return G, SampledState(g.grid, G(g.grid.x))


# --------------------------------------------------------------------------- wave-packet sums


def _packet_sum(coeff, images, grid: GridSpec, shared=None, windows=None):
    """``sum_z coeff_z pi(chi(z)) G_z`` on the grid, in fixed node order.

    ``shared`` is a callable profile used for every node; otherwise
    ``windows[i]`` holds the sampled ``G`` of node ``i``.
    """
    y = grid.x
    out = np.zeros(grid.n, dtype=np.complex128)
    idx = np.flatnonzero(coeff != 0)
    for start in range(0, idx.size, _NODE_CHUNK):
        sel = idx[start:start + _NODE_CHUNK]
        zc = images[sel]
        if shared is not None:
            Y = y[None, :] - zc[:, 0:1]
            vals = np.exp(1j * zc[:, 1:2] * Y) * shared(Y)
        else:
            vals = shift_state(windows[sel], zc, grid)
        out += coeff[sel] @ vals
    return out


def _rap_coefficients(tbl: StftTable, psi):
    return tbl.values.ravel() * np.exp(1j * psi) * tbl.lattice.cell_area


def _metaplectic_sum(a, t, f, g, lat, flow=None):
    check_synthesis_norm(g)
    if lat.oversampling < 2.0:
        raise LatticeError("under-sampled lattice")
    G, _ = metaplectic_window(a, t, g)
    flow = flow or flow_map_on_lattice(a, lat, t, lipschitz=False, estimate_error=False)
    tbl = stft(f, g, lat)
    coeff = _rap_coefficients(tbl, flow.psi)
    return SampledState(f.grid, _packet_sum(coeff, flow.images, f.grid, shared=G))


def metaplectic_apply(a: SymbolModel, t: float, f: SampledState, g: Window, lat: Lattice) -> SampledState:
    """``S(t, 0) f = sum_z exp(i psi(t, z)) pi(chi_t(z)) [S(t, 0) g] V_g f(z) dz`` for quadratic ``a``."""
    if not a.is_quadratic:
        raise SymbolError("metaplectic_apply needs a quadratic_form symbol")
    return _metaplectic_sum(a, t, f, g, lat)


def covering_lattice(u: SampledState, step: float = 0.5, rel: float = 1e-9, pad: float = 8.0) -> Lattice:
    """Square-step lattice covering where ``|u|`` and ``|u^|`` exceed ``rel * peak``, padded."""
    from .field import fourier_forward

    grid = u.grid
    ax = np.abs(u.values)
    fx = np.abs(fourier_forward(u).values)
    xs = grid.x[ax >= rel * ax.max()]
    xis = grid.xi[fx >= rel * fx.max()]
    xe = min(max(abs(xs.min()), abs(xs.max())) + pad, grid.x_max - 4.0)
    fe = min(max(abs(xis.min()), abs(xis.max())) + pad, grid.xi_max - 4.0)
    return Lattice.from_steps(xe, fe, step)


def _metaplectic_evolve(hdl: PropagatorHandle, u0: SampledState) -> SampledState:
    # quadratic symbols are autonomous, so only T = t_end - t_start matters
    g = Window.gaussian(u0.grid)
    return _metaplectic_sum(hdl.symbol, hdl.T, u0, g, covering_lattice(u0))


def _metaplectic_matrix(hdl, grid):
    cols = [_metaplectic_evolve(hdl, SampledState(grid, e)).values for e in np.eye(grid.n)]
    return np.array(cols).T


# --------------------------------------------------------------------------- evolved windows


@dataclass(frozen=True)
class EvolvedWindow:
    seed: tuple
    t: float
    G: SampledState
    decay: Optional[DecayFit]
    norm_defect: float


class WindowCache:
    """Thread-safe cache of evolved windows keyed by (symbol, method, dt, t, z)."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(hdl: PropagatorHandle, z, grid: GridSpec):
        zq = tuple(np.round(np.asarray(z, float), 9).tolist())
        return (hdl.symbol.name, hdl.method, hdl.t_start, hdl.t_end, hdl.step, grid, zq)

    def get(self, key):
        with self._lock:
            return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            self._data.setdefault(key, value)
            return self._data[key]

    def __len__(self):
        return len(self._data)

    def clear(self):
        with self._lock:
            self._data.clear()


WINDOW_CACHE = WindowCache()


def decay_lattice(grid: GridSpec, nodes: int = 41) -> Lattice:
    ext = 0.6 * min(grid.x_max, grid.xi_max)
    return Lattice.from_extents(ext, ext, nodes, strict=False)


def evolved_windows(hdl: PropagatorHandle, zs, g: Window, flow=None) -> np.ndarray:
    """Sampled ``G(t, z, .) = exp(-i psi) pi(chi_t(z))^* S(t, 0) pi(z) g`` for rows ``zs``."""
    zs = np.atleast_2d(np.asarray(zs, float))
    grid = g.grid
    if flow is None:
        from .hamiltonian import integrate_flow_batch

        fb = integrate_flow_batch(hdl.symbol, zs, hdl.T, t0=hdl.t_start, store="final", estimate_error=False)
        images, psi = fb.traj, fb.psi
    else:
        images, psi = flow
    if hdl.method == METAPLECTIC:
        G, _ = metaplectic_window(hdl.symbol, hdl.T, g)
        return np.broadcast_to(G(grid.x), (zs.shape[0], grid.n)).copy()
    if g.profile is not None:
        Y = grid.x[None, :] - zs[:, 0:1]
        atoms = np.exp(1j * zs[:, 1:2] * Y) * g.profile(Y)
    else:
        atoms = shift_state(np.broadcast_to(g.state.values, (zs.shape[0], grid.n)), zs, grid)
    evolved = evolve_batch(hdl, atoms, grid)
    return np.exp(-1j * psi)[:, None] * shift_state_adjoint(evolved, images, grid)


def evolved_window(hdl: PropagatorHandle, z, g: Window, fit: bool = True, cache: WindowCache = WINDOW_CACHE) -> EvolvedWindow:
    key = cache.key(hdl, z, g.grid) + (g.kind, g.l2_normalization)
    hit = cache.get(key)
    if hit is not None:
        return hit
    zs = np.atleast_2d(np.asarray(z, float))
    if hdl.T == 0:
        Gv = g.state.values.copy()
    else:
        Gv = evolved_windows(hdl, zs, g)[0]
    G = SampledState(g.grid, Gv)
    decay = None
    if fit:
        tbl = stft(G, Window.gaussian(g.grid), decay_lattice(g.grid))
        decay = fit_exponential_decay(tbl)
    defect = abs(l2_norm(G) - l2_norm(g.state))
    ew = EvolvedWindow(tuple(zs[0].tolist()), hdl.T, G, decay, defect)
    return cache.put(key, ew)


def gabor_multiplier_apply(hdl: PropagatorHandle, f: SampledState, g: Window, lat: Lattice,
                           window_table="shared", flow=None) -> SampledState:
    """Discretized wave-packet representation of ``S(t_end, t_start) f``.

    ``window_table`` is ``"shared"`` (quadratic symbols: one closed-form
    window for every node), ``"per-node"`` (evolve every lattice node), or an
    ``(N, n)`` array of sampled windows in lattice order.
    """
    check_synthesis_norm(g)
    if lat.oversampling < 2.0:
        raise LatticeError("under-sampled lattice")
    a = hdl.symbol
    if hdl.t_start != 0 and a.is_quadratic and isinstance(window_table, str) and window_table == "shared":
        raise ValueError("shared closed-form windows are built from t_start = 0")
    if isinstance(window_table, str) and window_table == "shared":
        if not a.is_quadratic:
            raise SymbolError("a shared window is only valid for quadratic symbols; use 'per-node'")
        return _metaplectic_sum(a, hdl.T, f, g, lat, flow)
    if flow is None:
        flow = flow_map_on_lattice(a, lat, hdl.T, lipschitz=False, estimate_error=False) if hdl.t_start == 0 else None
        if flow is None:
            raise ValueError("pass the lattice flow for t_start != 0")
    if isinstance(window_table, str):
        if window_table != "per-node":
            raise ValueError(f"unknown window_table {window_table!r}")
        windows = evolved_windows(hdl, lat.points(), g, (flow.images, flow.psi))
    else:
        windows = np.asarray(window_table)
        if windows.shape != (lat.size, g.grid.n):
            raise LatticeError(f"window table has shape {windows.shape}, need {(lat.size, g.grid.n)}")
    tbl = stft(f, g, lat)
    coeff = _rap_coefficients(tbl, flow.psi)
    return SampledState(f.grid, _packet_sum(coeff, flow.images, f.grid, windows=windows))
