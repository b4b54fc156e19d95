"""Infinite-order energies, exponentially weighted modulation norms and the
delta-neighborhood filter of analytic singularities.

Brackets are ``<z> = sqrt(1 + |z|^2)`` throughout.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import (
    DomainMismatchError,
    HypothesisError,
    LatticeError,
    NumericalNoiseWarning,
    WeightOverflowError,
)
from .field import POSITION, SampledState, fourier_forward, gaussian_state, l2_norm, spectral_derivative
from .hamiltonian import integrate_flow_batch
from .propagator import PropagatorHandle, evolve
from .tf import Lattice, StftTable, Window, stft

MAX_ENERGY_ORDER = 12
NOISE_FLOOR = 1e-9
OVERFLOW_LOG = 700.0
A_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)
MAX_SCAN_NODES = 4096
DEFAULT_REGULAR_RATE = 1.0
DEFAULT_DELTA = 0.25
BOUNDARY_SLACK = 0.02

THRESHOLD = "threshold-derived"
NEIGHBORHOOD = "delta-neighborhood"
FLOW_IMAGE = "flow-image"


def bracket(z) -> np.ndarray:
    """``<z> = sqrt(1 + |z|^2)`` over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    return np.sqrt(1.0 + np.sum(z * z, axis=-1))


# ---------------------------------------------------------------- energies

@dataclass(frozen=True)
class EnergyProfile:
    """``E^eps_N`` for ``N = 0..N_max`` and the running suprema."""

    N_max: int
    eps: float
    values: np.ndarray
    sup_values: np.ndarray
    flagged: tuple = ()

    def meta(self) -> dict:
        return {
            "N_max": self.N_max,
            "eps": self.eps,
            "values": self.values.tolist(),
            "sup_values": self.sup_values.tolist(),
            "flagged": list(self.flagged),
        }


def _check_energy_input(u: SampledState, N: int):
    if u.grid.d != 1:
        raise ValueError("energy functionals are implemented for d = 1")
    if u.domain != POSITION:
        raise DomainMismatchError("energy functionals expect a position-domain state")
    if N < 0 or N > MAX_ENERGY_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_ENERGY_ORDER}], got {N}")


def _unit_terms(u: SampledState, N: int):
    """``||x^alpha d^beta u|| / (alpha! beta!)`` for ``alpha + beta = N`` and a noise flag."""
    x = u.grid.x
    uhat = fourier_forward(u)
    xi = u.grid.xi
    tail = np.abs(xi) > 0.75 * u.grid.xi_max
    base = l2_norm(u)
    dxi = u.grid.dxi
    noisy = False
    total = 0.0
    for beta in range(N + 1):
        alpha = N - beta
        du = spectral_derivative(u, beta) if beta else u
        total += l2_norm(du.with_values(du.values * x ** alpha)) / (math.factorial(alpha) * math.factorial(beta))
        if beta:
            # weight of the unresolved top band after differentiation
            band = math.sqrt(dxi / (2 * np.pi)) * np.linalg.norm(np.abs(xi[tail]) ** beta * uhat.values[tail])
            noisy |= band > NOISE_FLOOR * base
    return total, noisy


def energy_functional(u: SampledState, eps: float, N: int) -> float:
    """``E^eps_N[u] = sum_{alpha+beta=N} eps^N/(alpha! beta!) ||x^alpha d^beta u||``.

    Warns with :class:`NumericalNoiseWarning` when the top quarter of the
    spectrum, amplified by the derivative, exceeds ``1e-9 ||u||``.
    """
    _check_energy_input(u, N)
    total, noisy = _unit_terms(u, N)
    if noisy:
        warnings.warn(f"order {N} derivative is above the spectral noise floor", NumericalNoiseWarning)
    return float(eps ** N * total)


def energy_profile(u: SampledState, eps: float, N_max: int) -> EnergyProfile:
    """Energies ``E^eps_0 .. E^eps_N_max`` with their running suprema."""
    _check_energy_input(u, N_max)
    vals = np.empty(N_max + 1)
    flagged = []
    for N in range(N_max + 1):
        total, noisy = _unit_terms(u, N)
        vals[N] = eps ** N * total
        if noisy:
            flagged.append(N)
    if flagged:
        warnings.warn(f"orders {flagged} are above the spectral noise floor", NumericalNoiseWarning)
    return EnergyProfile(N_max, float(eps), vals, np.maximum.accumulate(vals), tuple(flagged))


@dataclass
class RadiusReport:
    """Ratios ``E^{eps0 e^{-At}}_N[u(t)] / (2 sup_{k<=N} E^{eps0}_k[u0])``.

    ``ratios[A]`` has shape ``(len(times), N_max + 1)``.  ``smallest_A`` is
    the smallest grid value whose ratios are all at most one (None if none).
    """

    times: np.ndarray
    eps0: float
    N_max: int
    base: np.ndarray
    ratios: dict
    smallest_A: Optional[float]
    max_ratio: dict = field(default_factory=dict)

    def meta(self) -> dict:
        return {
            "times": self.times.tolist(),
            "eps0": self.eps0,
            "N_max": self.N_max,
            "smallest_A": self.smallest_A,
            "max_ratio": {repr(k): v for k, v in self.max_ratio.items()},
        }


def radius_track(h: PropagatorHandle, u0: SampledState, eps0: float, N_max: int, times: Sequence[float],
                 A_grid: Sequence[float] = A_GRID) -> RadiusReport:
    """Track the decaying-radius energy bound along ``u(t) = S(t, t_start) u0``.

    Each ``E^eps_N`` is ``eps^N`` times an eps-free base value, so one pass
    over the times serves every ``A``.  ``A = 0`` is always included.
    """
    times = np.asarray(sorted(float(t) for t in times))
    base = np.empty((times.size, N_max + 1))
    u = u0
    t_prev = h.t_start
    for i, t in enumerate(times):
        if t != t_prev:
            u = evolve(h.with_times(t_prev, t), u)
            t_prev = t
        for N in range(N_max + 1):
            base[i, N] = _unit_terms(u, N)[0]
    initial = eps0 ** np.arange(N_max + 1) * _base_at_start(u0, N_max)
    denom = 2.0 * np.maximum.accumulate(initial)
    ratios, max_ratio = {}, {}
    smallest = None
    orders = np.arange(N_max + 1)
    for A in (0.0,) + tuple(sorted(A_grid)):
        eps_t = eps0 * np.exp(-A * (times - h.t_start))
        r = (eps_t[:, None] ** orders[None, :]) * base / denom[None, :]
        ratios[A] = r
        max_ratio[A] = float(np.max(r))
        if A > 0 and smallest is None and max_ratio[A] <= 1.0:
            smallest = A
    return RadiusReport(times, float(eps0), N_max, base, ratios, smallest, max_ratio)


def _base_at_start(u0, N_max):
    return np.array([_unit_terms(u0, N)[0] for N in range(N_max + 1)])


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class WeightFunction:
    """``m(z) = exp(s |z|^b) (1 + |z|)^a log^r(e + |z|)``.

    The family is submultiplicative, so ``v = m`` dominates it, with
    ``1 <= v(z) <= C e^{k|z|}``.  ``k_inf`` is the infimum of admissible
    ``k``: ``s`` when ``b = 1`` and 0 otherwise.  ``k_inf`` itself is
    admissible only when ``m`` is a pure exponential.
    """

    a: float = 0.0
    r: float = 0.0
    s: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if min(self.a, self.r, self.s) < 0:
            raise ValueError("weight parameters a, r, s must be non-negative")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("weight exponent b must lie in [0, 1]")

    def log_value(self, z) -> np.ndarray:
        rho = np.linalg.norm(np.asarray(z, dtype=np.float64), axis=-1)
        out = self.s * rho ** self.b + self.a * np.log1p(rho)
        if self.r:
            out = out + self.r * np.log(np.log(np.e + rho))
        return out

    def __call__(self, z) -> np.ndarray:
        lv = self.log_value(z)
        if np.any(lv > OVERFLOW_LOG):
            raise WeightOverflowError(f"weight exceeds exp({OVERFLOW_LOG:g}) on the given points")
        return np.exp(lv)

    @property
    def k_inf(self) -> float:
        return self.s if self.b == 1.0 else 0.0

    @property
    def k_attained(self) -> bool:
        """Whether ``k = k_inf`` already dominates (no polynomial or sub-exponential part)."""
        sub = self.s > 0 and self.b < 1.0
        return self.a == 0 and self.r == 0 and not sub

    def dominating_constant(self, k: Optional[float] = None, r_max: float = 1e4) -> float:
        """``C = sup_z m(z) e^{-k|z|}`` by a log-spaced radial scan."""
        if k is None:
            k = self.k_inf
        if k < self.k_inf or (k == self.k_inf and not self.k_attained):
            raise HypothesisError(f"k = {k} does not dominate the weight (needs k > {self.k_inf})")
        rho = np.concatenate([[0.0], np.geomspace(1e-3, r_max, 4000)])
        lv = self.log_value(np.stack([rho, np.zeros_like(rho)], -1)) - k * rho
        return float(np.exp(np.max(lv)))

    def integrable(self, eps: float) -> bool:
        """Whether ``v(z) e^{-eps|z|}`` is integrable: some admissible ``k < eps``."""
        return self.k_inf < eps

    def meta(self) -> dict:
        return {"a": self.a, "r": self.r, "s": self.s, "b": self.b, "k_inf": self.k_inf}


WeightLike = Union[WeightFunction, Callable, np.ndarray, None]


def _node_weights(m: WeightLike, lat: Lattice) -> np.ndarray:
    pts = lat.points()
    if m is None:
        return np.ones(lat.size)
    if isinstance(m, WeightFunction):
        rho = np.max(np.linalg.norm(pts, axis=-1))
        if m.s * rho ** m.b > OVERFLOW_LOG:
            raise WeightOverflowError(
                f"s |z_max|^b = {m.s * rho ** m.b:.1f} exceeds {OVERFLOW_LOG:g}; shrink the lattice")
        return m(pts)
    if callable(m):
        return np.asarray(m(pts), dtype=np.float64).reshape(lat.size)
    w = np.asarray(m, dtype=np.float64).reshape(-1)
    if w.size != lat.size:
        raise LatticeError(f"weight table has {w.size} entries for {lat.size} nodes")
    return w


def mod_norm(f: SampledState, g: Window, p, m: WeightLike, lat: Lattice,
             table: Optional[StftTable] = None) -> float:
    """Weighted ``l^p`` Riemann sum of ``|V_g f| m`` over the lattice (max for ``p = inf``).

    ``m`` may be a :class:`WeightFunction`, a callable on ``(N, 2)`` points or
    a table of node values (for composed weights such as ``m o chi_t``).
    """
    if p not in (1, 2, np.inf, float("inf"), "inf"):
        raise ValueError(f"p must be 1, 2 or inf, got {p!r}")
    w = _node_weights(m, lat)
    if table is None:
        table = stft(f, g, lat)
    a = np.abs(table.values).reshape(-1) * w
    if p in (np.inf, "inf"):
        return float(np.max(a))
    return float((np.sum(a ** p) * lat.cell_area) ** (1.0 / p))


def composed_weight(m: WeightFunction, h: PropagatorHandle, lat: Lattice) -> np.ndarray:
    """Node values of ``m o chi_t`` for the flow of ``h``."""
    batch = integrate_flow_batch(h.symbol, lat.points(), h.T, t0=h.t_start, store="final", estimate_error=False)
    if np.any(batch.blown_up):
        raise HypothesisError("flow blows up on part of the lattice")
    return m(batch.traj)


def default_probes(grid) -> list:
    """Five Gaussian probes with different centers and widths."""
    spec = [((0.0, 0.0), 1.0), ((2.0, 0.0), 0.7), ((0.0, 2.0), 1.4), ((-2.0, 1.0), 1.0), ((1.0, -2.0), 0.8)]
    return [gaussian_state(grid, c, w) for c, w in spec]


@dataclass
class BoundednessReport:
    """``mod_norm(S u, m) / mod_norm(u, m o chi_t)`` over the probe set."""

    ratios: np.ndarray
    max_ratio: float
    spread: float
    k_inf: float
    sparsity_eps: Optional[float]

    def meta(self) -> dict:
        return {
            "ratios": self.ratios.tolist(),
            "max_ratio": self.max_ratio,
            "spread": self.spread,
            "k_inf": self.k_inf,
            "sparsity_eps": self.sparsity_eps,
        }


def boundedness_check(h: PropagatorHandle, g: Window, p, m: WeightFunction, lat: Lattice,
                      probes: Optional[Sequence[SampledState]] = None,
                      sparsity_eps: Optional[float] = None) -> BoundednessReport:
    """Empirical ``M^{p,p}_{m o chi_t} -> M^{p,p}_m`` ratios on at least five probes.

    The weight must satisfy ``k < eps`` with ``eps`` the fitted decay rate of
    the Gabor matrix.  A purely sub-exponential weight (``k_inf = 0``) is
    accepted for any positive ``eps``.  An exponential weight needs
    ``sparsity_eps`` from a prior fit.
    """
    if m.k_inf > 0:
        if sparsity_eps is None:
            raise HypothesisError(f"weight grows like exp({m.k_inf:g}|z|); pass the fitted sparsity rate")
        if not m.integrable(sparsity_eps):
            raise HypothesisError(f"weight rate k = {m.k_inf:g} is not below the sparsity rate {sparsity_eps:g}")
    elif sparsity_eps is not None and sparsity_eps <= 0:
        raise HypothesisError("sparsity rate must be positive")
    if probes is None:
        probes = default_probes(g.grid)
    if len(probes) < 5:
        raise ValueError("at least five probe states are required")
    w_out = _node_weights(m, lat)
    w_in = composed_weight(m, h, lat)
    ratios = []
    for u in probes:
        num = mod_norm(evolve(h, u), g, p, w_out, lat)
        den = mod_norm(u, g, p, w_in, lat)
        ratios.append(num / den)
    ratios = np.array(ratios)
    spread = float(np.max(ratios) / np.min(ratios))
    return BoundednessReport(ratios, float(np.max(ratios)), spread, m.k_inf, sparsity_eps)


# ---------------------------------------------------------------- regions

@dataclass(frozen=True)
class RegionMask:
    """Boolean mask over the lattice nodes (shape ``lat.shape``)."""

    lattice: Lattice
    mask: np.ndarray
    provenance: str = THRESHOLD

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.lattice.shape:
            raise LatticeError(f"mask shape {m.shape} does not match lattice {self.lattice.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def flat(self) -> np.ndarray:
        return self.mask.reshape(-1)

    @property
    def fraction(self) -> float:
        return float(np.mean(self.mask))

    def complement(self) -> "RegionMask":
        return RegionMask(self.lattice, ~self.mask, self.provenance)

    def subset_of(self, other: "RegionMask") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def points(self) -> np.ndarray:
        return self.lattice.points()[self.flat]


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def in_neighborhood(query, centers, delta: float) -> np.ndarray:
    """For each query point, whether ``|q - c| < delta <c>`` for some center."""
    query = np.asarray(query, dtype=np.float64).reshape(-1, 2)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    return kernels.neighborhood_hits(query[:, 0], query[:, 1], centers[:, 0], centers[:, 1], float(delta))


def delta_neighborhood(mask: RegionMask, delta: float) -> RegionMask:
    """Nodes within ``delta <z0>`` of some masked node ``z0`` (direct scan)."""
    _check_delta(delta)
    lat = mask.lattice
    if lat.size > MAX_SCAN_NODES:
        raise LatticeError(f"direct scan is limited to {MAX_SCAN_NODES} nodes, got {lat.size}")
    pts = lat.points()
    hits = in_neighborhood(pts, pts[mask.flat], delta) | mask.flat
    return RegionMask(lat, hits.reshape(lat.shape), NEIGHBORHOOD)


@dataclass
class InclusionReport:
    delta: float
    delta_star: float
    halvings: int
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def meta(self) -> dict:
        return {"delta": self.delta, "delta_star": self.delta_star, "halvings": self.halvings,
                "checks": dict(self.checks), "passed": self.passed}


def _halving(delta, test, max_halvings):
    _check_delta(delta)
    ds = delta / 2.0
    for k in range(max_halvings):
        checks = test(ds)
        if all(checks.values()):
            return InclusionReport(delta, ds, k, checks)
        ds /= 2.0
    return InclusionReport(delta, ds * 2.0, max_halvings, checks)


def nested_delta_star(mask: RegionMask, delta: float, max_halvings: int = 30) -> InclusionReport:
    """Halve ``delta*`` until ``(G_d*)_d* <= G_d`` and ``(R \\ G_d)_d* <= R \\ G_d*``."""
    big = delta_neighborhood(mask, delta)
    outside = big.complement()

    def test(ds):
        small = delta_neighborhood(mask, ds)
        return {
            "double_fattening": delta_neighborhood(small, ds).subset_of(big),
            "complement": delta_neighborhood(outside, ds).subset_of(small.complement()),
        }

    return _halving(delta, test, max_halvings)


def flow_delta_star(mask: RegionMask, delta: float, images: np.ndarray, inverse_images: np.ndarray,
                    max_halvings: int = 30) -> InclusionReport:
    """Halve ``delta*`` until ``chi(G_d*) <= chi(G)_d`` and ``chi(G)_d* <= chi(G_d)``.

    ``images`` and ``inverse_images`` are ``chi`` and ``chi^{-1}`` at every
    lattice node (row-major).  The second inclusion is tested on lattice
    nodes: ``w`` near ``chi(G)`` must pull back into ``G_d``.
    """
    lat = mask.lattice
    pts = lat.points()
    src = pts[mask.flat]
    img_g = images[mask.flat]

    def test(ds):
        small = delta_neighborhood(mask, ds)
        fwd = in_neighborhood(images[small.flat], img_g, delta)
        near = in_neighborhood(pts, img_g, ds)
        back = in_neighborhood(inverse_images[near], src, delta)
        return {"image_of_fattening": bool(np.all(fwd)), "fattening_of_image": bool(np.all(back))}

    return _halving(delta, test, max_halvings)


def regular_region(f: SampledState, g: Window, eps_threshold: float, lat: Lattice,
                   table: Optional[StftTable] = None) -> RegionMask:
    """Nodes where ``|V_g f(z)| <= peak * exp(-eps <z>)``.

    A bounded-box proxy for exponential decay: the lattice box stands in for
    a neighborhood of infinity.
    """
    if eps_threshold < 0:
        raise ValueError("eps_threshold must be non-negative")
    if table is None:
        table = stft(f, g, lat)
    amp = np.abs(table.values)
    if eps_threshold == 0:
        return RegionMask(lat, np.ones(lat.shape, dtype=bool), THRESHOLD)
    bound = table.peak * np.exp(-eps_threshold * bracket(lat.points())).reshape(lat.shape)
    return RegionMask(lat, amp <= bound, THRESHOLD)


def chirp_bump(grid, omega: float = 2.0, half_width: float = 3.0, center: float = 0.0) -> SampledState:
    """``exp(i omega x) b(x)`` with the compactly supported smooth bump
    ``b(x) = exp(-1 / (1 - ((x - c)/L)^2))``, L2-normalized.

    Smooth but not analytic at ``x = c +- L``; those two vertical lines carry
    the singular set.
    """
    y = (grid.x - center) / half_width
    b = np.zeros_like(y)
    inside = np.abs(y) < 1
    b[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    u = SampledState(grid, b * np.exp(1j * omega * grid.x))
    return u.with_values(u.values / l2_norm(u))


def _flow_endpoints(h: PropagatorHandle, pts, forward: bool):
    """Images under ``chi_t`` (or its inverse) and the largest Jacobian norm."""
    if forward:
        batch = integrate_flow_batch(h.symbol, pts, h.T, t0=h.t_start, store="final", estimate_error=False)
    else:
        batch = integrate_flow_batch(h.symbol, pts, -h.T, t0=h.t_end, store="final", estimate_error=False)
    alive = ~batch.blown_up
    lip = float(np.max(np.linalg.norm(batch.jac[alive], ord=2, axis=(1, 2)))) if np.any(alive) else np.inf
    return batch.traj, batch.blown_up, max(lip, 1.0)


def _inclusion(lat, regular_src, regular_dst, images, blown, delta):
    """Fraction of lattice nodes whose regular source lands away from ``(dst)_delta``.

    Images outside the lattice box cannot be judged and are skipped.
    """
    _, _, inside = lat.nearest_index(images)
    judged = regular_src & inside & ~blown
    dst_pts = lat.points()[regular_dst]
    ok = in_neighborhood(images[judged], dst_pts, delta)
    violations = int(np.count_nonzero(~ok))
    return {
        "violations": violations,
        "fraction": violations / lat.size,
        "judged": int(np.count_nonzero(judged)),
        "skipped_outside": int(np.count_nonzero(regular_src & ~inside)),
    }


def singularity_propagation_check(h: PropagatorHandle, f: SampledState, g: Window, lat: Lattice,
                                  delta: float = DEFAULT_DELTA,
                                  eps_threshold: float = DEFAULT_REGULAR_RATE) -> dict:
    """Check ``chi_t(R_f) <= (R_Sf)_delta`` and ``chi_t^{-1}(R_Sf) <= (R_f)_delta``.

    ``R`` are regular regions.  A flow with Lipschitz constant ``L`` turns
    decay ``exp(-eps <z>)`` into ``exp(-(eps / L) <chi(z)>)``, so the target
    region of each inclusion is taken at rate ``eps / L``.  The backward
    check runs the flow in reverse time from ``t_end``.  Violations are
    reported as fractions of all lattice nodes.
    """
    _check_delta(delta)
    Sf = evolve(h, f)
    tf_ = stft(f, g, lat)
    tsf = stft(Sf, g, lat)
    pts = lat.points()
    fwd_img, fwd_blown, lip_f = _flow_endpoints(h, pts, True)
    bwd_img, bwd_blown, lip_b = _flow_endpoints(h, pts, False)
    reg_f = regular_region(f, g, eps_threshold, lat, tf_)
    reg_sf = regular_region(Sf, g, eps_threshold, lat, tsf)
    forward = _inclusion(lat, reg_f.flat, regular_region(Sf, g, eps_threshold / lip_f, lat, tsf).flat,
                         fwd_img, fwd_blown, delta)
    backward = _inclusion(lat, reg_sf.flat, regular_region(f, g, eps_threshold / lip_b, lat, tf_).flat,
                          bwd_img, bwd_blown, delta)
    return {
        "forward_inclusion": forward,
        "backward_inclusion": backward,
        "regular_fraction_f": reg_f.fraction,
        "regular_fraction_Sf": reg_sf.fraction,
        "lipschitz_forward": lip_f,
        "lipschitz_backward": lip_b,
        "delta": delta,
        "eps_threshold": eps_threshold,
        "passed": forward["fraction"] <= BOUNDARY_SLACK and backward["fraction"] <= BOUNDARY_SLACK,
        "note": "bounded-box proxy: the lattice box stands in for a neighborhood of infinity",
    }
