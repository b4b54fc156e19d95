"""Symbols ``a(t, x, xi)``, Hamiltonian flows, flow Jacobians and the phase ``psi``.

Phase-space points are arrays ``z = (x, xi)`` with trailing dimension ``2d``.
The flow solves ``x' = a_xi``, ``xi' = -a_x`` and the phase is

    psi(t, z) = int_0^t (xi_s . a_xi - a)(s, x_s, xi_s) ds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from . import _parallel
from .errors import FlowBlowUpError, SymbolError

BLOWUP_RADIUS = 1e6
DEFAULT_STEPS = 512
_SEED_CHUNK = 1024

QUADRATIC = "quadratic_form"
SEPARABLE = "separable"
GENERAL = "general"


def smooth_switch(t):
    """Switch ``s(t) = (1 + tanh(4 (t - 1/2))) / 2`` used by the kicked symbol."""
    return 0.5 * (1.0 + np.tanh(4.0 * (np.asarray(t) - 0.5)))


@dataclass(frozen=True)
class SymbolModel:
    """Real symbol on ``R x R^{2d}`` with first and second derivatives.

    Evaluation goes through ``value(t, z)``, ``grad(t, z)`` and ``hess(t, z)``
    for batches ``z`` of shape ``(B, 2d)``.  ``quadratic_form`` symbols are
    ``z^T Q z``; separable ones are ``k(xi) + V(t, x)`` (d = 1) and may carry
    analytic derivatives.  Anything missing falls back to central differences
    with step ``1e-5 (1 + |z|)``.
    """

    name: str
    kind: str
    d: int = 1
    Q: Optional[np.ndarray] = None
    func: Optional[Callable] = field(default=None, repr=False, compare=False)
    kinetic: Optional[tuple] = field(default=None, repr=False, compare=False)
    potential: Optional[tuple] = field(default=None, repr=False, compare=False)
    time_dependent: bool = False
    description: str = ""

    def __post_init__(self):
        if self.kind not in (QUADRATIC, SEPARABLE, GENERAL):
            raise SymbolError(f"unknown symbol kind {self.kind!r}")
        if self.kind == QUADRATIC:
            Q = np.asarray(self.Q, dtype=float)
            if Q.shape != (2 * self.d, 2 * self.d) or not np.allclose(Q, Q.T, atol=0, rtol=1e-14):
                raise SymbolError("quadratic_form needs a symmetric 2d x 2d matrix Q")
            object.__setattr__(self, "Q", Q)
        elif self.kind == SEPARABLE:
            if self.kinetic is None or self.potential is None:
                raise SymbolError("separable symbols need kinetic and potential parts")
            if self.d != 1:
                raise SymbolError("separable symbols are implemented for d = 1")
        elif self.func is None:
            raise SymbolError("general symbols need a callable a(t, z)")

    # ---- classification

    @property
    def is_quadratic(self) -> bool:
        return self.kind == QUADRATIC

    @property
    def has_separable_split(self) -> bool:
        """True when ``kinetic`` and ``potential`` parts are available."""
        return self.kinetic is not None and self.potential is not None

    # ---- evaluation

    def _raw(self, t, z):
        if self.kind == QUADRATIC:
            return np.einsum("bi,ij,bj->b", z, self.Q, z)
        if self.kind == SEPARABLE:
            return self.kinetic[0](z[:, 1]) + self.potential[0](t, z[:, 0])
        return np.asarray(self.func(t, z), dtype=float)

    def value(self, t, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self._raw(t, z)

    def evaluate(self, t, x, xi):
        """Scalar/array convenience wrapper for d = 1."""
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        z = np.column_stack([x.ravel(), xi.ravel()])
        return self.value(t, z).reshape(x.shape)

    def _fd_step(self, z):
        return 1e-5 * (1.0 + np.linalg.norm(z, axis=1))

    def grad(self, t, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if self.kind == QUADRATIC:
            return 2.0 * z @ self.Q
        if self.kind == SEPARABLE and len(self.kinetic) > 1 and len(self.potential) > 1:
            return np.column_stack([self.potential[1](t, z[:, 0]), self.kinetic[1](z[:, 1])])
        h = self._fd_step(z)
        out = np.empty_like(z)
        for i in range(z.shape[1]):
            e = np.zeros(z.shape[1])
            e[i] = 1.0
            zp = z + h[:, None] * e
            zm = z - h[:, None] * e
            out[:, i] = (self._raw(t, zp) - self._raw(t, zm)) / (2 * h)
        return out

    def hess(self, t, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        B, m = z.shape
        if self.kind == QUADRATIC:
            return np.broadcast_to(2.0 * self.Q, (B, m, m)).copy()
        if self.kind == SEPARABLE and len(self.kinetic) > 2 and len(self.potential) > 2:
            H = np.zeros((B, 2, 2))
            H[:, 0, 0] = self.potential[2](t, z[:, 0])
            H[:, 1, 1] = self.kinetic[2](z[:, 1])
            return H
        # differentiate the gradient; a larger step keeps the noise down
        h = 100 * self._fd_step(z)
        H = np.empty((B, m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = 1.0
            H[:, :, i] = (self.grad(t, z + h[:, None] * e) - self.grad(t, z - h[:, None] * e)) / (2 * h[:, None])
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))

    def vector_field(self, t, z) -> np.ndarray:
        g = self.grad(t, z)
        d = self.d
        return np.concatenate([g[:, d:], -g[:, :d]], axis=1)

    def meta(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "d": self.d, "time_dependent": self.time_dependent}
        if self.Q is not None:
            out["Q"] = self.Q.tolist()
        return out


def symplectic_matrix(d: int = 1) -> np.ndarray:
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def quadratic_symbol(Q, name: str = "quadratic", description: str = "") -> SymbolModel:
    Q = np.asarray(Q, dtype=float)
    return SymbolModel(name, QUADRATIC, d=Q.shape[0] // 2, Q=Q, description=description)


def general_symbol(func, name: str = "general", d: int = 1, time_dependent: bool = False) -> SymbolModel:
    return SymbolModel(name, GENERAL, d=d, func=func, time_dependent=time_dependent)


def _zero_t(t, x):
    return np.zeros_like(x)


def _registry() -> dict:
    sq = (lambda p: p ** 2, lambda p: 2 * p, lambda p: 2 * np.ones_like(p))
    half_sq = (lambda p: 0.5 * p ** 2, lambda p: p, lambda p: np.ones_like(p))
    free = SymbolModel(
        "free", QUADRATIC, Q=np.array([[0.0, 0.0], [0.0, 1.0]]),
        kinetic=sq, potential=(_zero_t, _zero_t, _zero_t),
        description="free particle a = xi^2",
    )
    harmonic = SymbolModel(
        "harmonic", QUADRATIC, Q=0.5 * np.eye(2),
        kinetic=half_sq, potential=(lambda t, x: 0.5 * x ** 2, lambda t, x: x, lambda t, x: np.ones_like(x)),
        description="harmonic oscillator a = (x^2 + xi^2)/2",
    )
    shear = SymbolModel(
        "shear", QUADRATIC, Q=np.array([[0.0, 0.5], [0.5, 0.0]]),
        description="dilation generator a = x xi",
    )
    anharmonic = SymbolModel(
        "anharmonic-bounded", SEPARABLE,
        kinetic=sq,
        potential=(lambda t, x: np.cos(x), lambda t, x: -np.sin(x), lambda t, x: -np.cos(x)),
        description="bounded analytic potential a = xi^2 + cos x",
    )
    kicked = SymbolModel(
        "kicked", SEPARABLE,
        kinetic=sq,
        potential=(
            lambda t, x: np.cos(x) * smooth_switch(t),
            lambda t, x: -np.sin(x) * smooth_switch(t),
            lambda t, x: -np.cos(x) * smooth_switch(t),
        ),
        time_dependent=True,
        description="switched-on potential a = xi^2 + cos(x) s(t), s a smooth tanh switch",
    )
    return {s.name: s for s in (free, harmonic, shear, anharmonic, kicked)}


REGISTRY = _registry()


def get_symbol(name: str) -> SymbolModel:
    try:
        return REGISTRY[name]
    except KeyError:
        raise SymbolError(f"unknown symbol {name!r}; known: {sorted(REGISTRY)}") from None


# --------------------------------------------------------------------------- validation


def _mixed_fd(a: SymbolModel, t, X, XI, i, j, h):
    """Iterated central difference for ``d^i_x d^j_xi a`` (second order in h)."""
    acc = np.zeros_like(X)
    for l in range(i + 1):
        for m in range(j + 1):
            c = (-1) ** (l + m) * comb(i, l) * comb(j, m)
            acc += c * a.evaluate(t, X + (i / 2 - l) * h, XI + (j / 2 - m) * h)
    return acc / h ** (i + j)


def validate_symbol(a: SymbolModel, k: int = 1, box=((-3.0, 3.0), (-3.0, 3.0)), K_max: int = 6,
                    t: float = 0.0, samples: int = 13, h: float = 0.1, ratio_limit: float = 1.5) -> dict:
    """Sampled check of factorial derivative bounds ``|d^alpha a| <= C^{|alpha|+1} alpha!``.

    For each order ``m`` in ``k..K_max`` the scaled size
    ``m_m = max |d^alpha a| / alpha!`` (over ``|alpha| = m`` and the sample
    grid) is formed.  ``C = max m_m^{1/(m+1)}`` and the violation flag is set
    when a consecutive ratio ``m_{m+1} / m_m`` exceeds ``ratio_limit``.  This
    is a sampled heuristic, not a proof.
    """
    if a.d != 1:
        raise SymbolError("validate_symbol is implemented for d = 1")
    if K_max > 6:
        raise ValueError("K_max must be <= 6 (finite-difference stability)")
    if k < 0 or k > K_max:
        raise ValueError("need 0 <= k <= K_max")
    xs = np.linspace(*box[0], samples)
    xis = np.linspace(*box[1], samples)
    X, XI = np.meshgrid(xs, xis, indexing="ij")
    scaled = {}
    with np.errstate(over="raise", invalid="raise"):
        for order in range(k, K_max + 1):
            best = 0.0
            for i in range(order + 1):
                j = order - i
                vals = _mixed_fd(a, t, X, XI, i, j, h)
                if not np.all(np.isfinite(vals)):
                    raise SymbolError(f"non-finite derivative of order ({i}, {j})")
                best = max(best, float(np.max(np.abs(vals))) / (factorial(i) * factorial(j)))
            scaled[order] = best
    noise = 1e-6 * max(1.0, max(scaled.values()))
    alive = {m: v for m, v in scaled.items() if v > noise}
    C = max([v ** (1.0 / (m + 1)) for m, v in alive.items()], default=1.0)
    C = max(C, 1.0)
    ratios = {m: scaled[m] / C ** (m + 1) for m in scaled}
    growth = {}
    for m in range(k, K_max):
        if scaled[m] > noise and scaled[m + 1] > noise:
            growth[m] = scaled[m + 1] / scaled[m]
    violated = any(q > ratio_limit for q in growth.values())
    return {
        "symbol": a.name,
        "C": C,
        "scaled_max": scaled,
        "max_ratios": ratios,
        "growth_ratios": growth,
        "violation": bool(violated),
        "passed": not violated,
        "method": "sampled heuristic: iterated central differences on a grid, not a proof",
    }


# --------------------------------------------------------------------------- flows


@dataclass(frozen=True)
class FlowResult:
    """Trajectory of one seed. ``traj[k]`` is ``chi_{t_k}(seed)``."""

    t_grid: np.ndarray
    traj: np.ndarray
    psi: np.ndarray
    jac: np.ndarray
    error_estimate: float = float("nan")

    @property
    def final(self) -> np.ndarray:
        return self.traj[-1]


@dataclass(frozen=True)
class FlowBatch:
    """Flow of many seeds; arrays carry a leading time axis when ``store == 'all'``."""

    t_grid: np.ndarray
    seeds: np.ndarray
    traj: np.ndarray
    psi: np.ndarray
    jac: np.ndarray
    blown_up: np.ndarray
    blowup_time: np.ndarray
    error_estimate: np.ndarray

    def single(self, i: int) -> FlowResult:
        return FlowResult(self.t_grid, self.traj[:, i], self.psi[:, i], self.jac[:, i], float(self.error_estimate[i]))


def _rk4_run(a: SymbolModel, seeds, t0, T, steps, store_all):
    B, m = seeds.shape
    Om = symplectic_matrix(a.d)
    ts = t0 + T * np.arange(steps + 1) / steps
    h = T / steps

    def rhs(t, z, J):
        dz = a.vector_field(t, z)
        dJ = Om @ a.hess(t, z) @ J
        return dz, dJ

    def integrand(t, z):
        g = a.grad(t, z)
        return np.sum(z[:, a.d:] * g[:, a.d:], axis=1) - a.value(t, z)

    z = seeds.astype(float).copy()
    J = np.broadcast_to(np.eye(m), (B, m, m)).copy()
    alive = np.ones(B, dtype=bool)
    t_dead = np.full(B, np.nan)
    zs = [z.copy()] if store_all else None
    Js = [J.copy()] if store_all else None
    ig = [integrand(ts[0], z)]
    for k in range(steps):
        t = ts[k]
        k1z, k1J = rhs(t, z, J)
        k2z, k2J = rhs(t + h / 2, z + h / 2 * k1z, J + h / 2 * k1J)
        k3z, k3J = rhs(t + h / 2, z + h / 2 * k2z, J + h / 2 * k2J)
        k4z, k4J = rhs(t + h, z + h * k3z, J + h * k3J)
        zn = z + h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
        Jn = J + h / 6 * (k1J + 2 * k2J + 2 * k3J + k4J)
        bad = ~np.all(np.isfinite(zn), axis=1) | (np.linalg.norm(np.where(np.isfinite(zn), zn, np.inf), axis=1) > BLOWUP_RADIUS)
        bad |= ~np.all(np.isfinite(Jn.reshape(B, -1)), axis=1)
        newly = bad & alive
        if np.any(newly):
            t_dead[newly] = t
            alive &= ~bad
        z = np.where(alive[:, None], zn, z)
        J = np.where(alive[:, None, None], Jn, J)
        if store_all:
            zs.append(z.copy())
            Js.append(J.copy())
        ig.append(integrand(ts[k + 1], z))
    ig = np.array(ig)
    psi = cumulative_simpson(ig, dx=h, axis=0, initial=0.0)
    if store_all:
        return ts, np.array(zs), psi, np.array(Js), alive, t_dead
    return ts, z, psi[-1], J, alive, t_dead


def integrate_flow_batch(a: SymbolModel, seeds, T: float, steps: int = DEFAULT_STEPS, t0: float = 0.0,
                         store: str = "all", estimate_error: bool = True) -> FlowBatch:
    """RK4 flow, variational equation and Simpson phase for a batch of seeds.

    ``T`` may be negative (backward flow).  Seeds whose orbit leaves the ball
    ``|z| <= 1e6`` or becomes non-finite are frozen and flagged.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[1] != 2 * a.d:
        raise SymbolError(f"seeds must have {2 * a.d} coordinates")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    store_all = store == "all"
    if T == 0:
        B, m = seeds.shape
        ts = np.array([t0])
        J = np.broadcast_to(np.eye(m), (B, m, m)).copy()
        shape_t = (1,) if store_all else ()
        return FlowBatch(
            ts, seeds,
            seeds[None].copy() if store_all else seeds.copy(),
            np.zeros(shape_t + (B,)),
            J[None] if store_all else J,
            np.zeros(B, bool), np.full(B, np.nan), np.zeros(B),
        )

    def run(chunk):
        res = _rk4_run(a, chunk, t0, T, steps, store_all)
        if estimate_error:
            coarse = _rk4_run(a, chunk, t0, T, max(steps // 2, 1), False)
            zf = res[1][-1] if store_all else res[1]
            err = np.linalg.norm(zf - coarse[1], axis=1) / 15.0
        else:
            err = np.full(chunk.shape[0], np.nan)
        return res, err

    slices = _parallel.chunked(seeds.shape[0], -(-seeds.shape[0] // _SEED_CHUNK))
    parts = _parallel.map_ordered(lambda sl: run(seeds[sl]), slices)
    ax = 1 if store_all else 0
    ts = parts[0][0][0]
    traj = np.concatenate([p[0][1] for p in parts], axis=ax)
    psi = np.concatenate([p[0][2] for p in parts], axis=ax)
    jac = np.concatenate([p[0][3] for p in parts], axis=ax)
    alive = np.concatenate([p[0][4] for p in parts])
    tdead = np.concatenate([p[0][5] for p in parts])
    err = np.concatenate([p[1] for p in parts])
    return FlowBatch(ts, seeds, traj, psi, jac, ~alive, tdead, err)


def integrate_flow(a: SymbolModel, seed, T: float, steps: int = DEFAULT_STEPS, t0: float = 0.0) -> FlowResult:
    """Flow of a single seed; raises :class:`FlowBlowUpError` on blow-up."""
    batch = integrate_flow_batch(a, np.atleast_2d(seed), T, steps, t0)
    if batch.blown_up[0]:
        raise FlowBlowUpError(f"flow left |z| <= {BLOWUP_RADIUS:g} after t = {batch.blowup_time[0]:.6g}",
                              float(batch.blowup_time[0]))
    return batch.single(0)


@dataclass(frozen=True)
class LatticeFlow:
    """``chi_T``, ``psi(T, .)`` and Jacobians at every lattice node (row-major)."""

    points: np.ndarray
    images: np.ndarray
    psi: np.ndarray
    jac: np.ndarray
    blown_up: np.ndarray
    T: float
    lipschitz: float
    inverse_lipschitz: float
    error_estimate: float


def _pairwise_ratio_bounds(P, Q):
    """Max of ``|Q_i - Q_j| / |P_i - P_j|`` and of its reciprocal over pairs."""
    n = P.shape[0]
    hi = 0.0
    lo = 0.0
    for start in range(0, n, 512):
        sl = slice(start, start + 512)
        dp = np.linalg.norm(P[sl, None, :] - P[None, :, :], axis=-1)
        dq = np.linalg.norm(Q[sl, None, :] - Q[None, :, :], axis=-1)
        mask = dp > 0
        if not np.any(mask):
            continue
        r = dq[mask] / dp[mask]
        hi = max(hi, float(r.max()))
        with np.errstate(divide="ignore"):
            lo = max(lo, float(np.max(dp[mask] / dq[mask])))
    return hi, lo


def flow_map_on_lattice(a: SymbolModel, lat, T: float, steps: int = DEFAULT_STEPS,
                        lipschitz: bool = True, estimate_error: bool = True) -> LatticeFlow:
    """Batch flow over all lattice nodes with global bi-Lipschitz estimates.

    Nodes that blow up are flagged in ``blown_up`` and left out of the bounds.
    """
    pts = lat.points()
    batch = integrate_flow_batch(a, pts, T, steps, store="final", estimate_error=estimate_error)
    ok = ~batch.blown_up
    if T == 0:
        L = Linv = 1.0
    elif not lipschitz:
        L = Linv = float("nan")
    else:
        L, Linv = _pairwise_ratio_bounds(pts[ok], batch.traj[ok])
    err = float(np.nanmax(batch.error_estimate)) if estimate_error and np.any(ok) else float("nan")
    return LatticeFlow(pts, batch.traj, batch.psi, batch.jac, batch.blown_up, T, L, Linv, err)


def phase_gradient_check(a: SymbolModel, seed, T: float, h: float = 1e-4, steps: int = DEFAULT_STEPS) -> dict:
    """Finite-difference ``grad psi`` against ``xi^t d x^t - xi dx`` from the Jacobian (d = 1)."""
    if a.d != 1:
        raise SymbolError("phase_gradient_check is implemented for d = 1")
    seed = np.asarray(seed, dtype=float)
    pts = np.array([seed, seed + [h, 0], seed - [h, 0], seed + [0, h], seed - [0, h]])
    batch = integrate_flow_batch(a, pts, T, steps, store="final", estimate_error=False)
    psi = batch.psi
    fd_x = (psi[1] - psi[2]) / (2 * h)
    fd_xi = (psi[3] - psi[4]) / (2 * h)
    xi_t = batch.traj[0, 1]
    J = batch.jac[0]
    ana_x = xi_t * J[0, 0] - seed[1]
    ana_xi = xi_t * J[0, 1]
    err_x = abs(fd_x - ana_x) / max(1.0, abs(ana_x))
    err_xi = abs(fd_xi - ana_xi) / max(1.0, abs(ana_xi))
    return {
        "max_relative_error": float(max(err_x, err_xi)),
        "d_x": {"finite_difference": float(fd_x), "from_flow": float(ana_x)},
        "d_xi": {"finite_difference": float(fd_xi), "from_flow": float(ana_xi)},
    }
