"""Gabor matrix of a propagator, its exponential sparsity and a compressed apply.

Entries are ``M[w, z] = <S(t, 0) pi(z) g, pi(w) g>`` over one lattice used
for both rows ``w`` and columns ``z``; indices follow the lattice's row-major
node order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import FitError, GridMismatchError, LatticeError
from .field import SampledState
from .hamiltonian import LatticeFlow, flow_map_on_lattice
from .io import encode_triplets
from .propagator import PropagatorHandle, evolve_batch, propagator_matrix
from .tf import (
    DEFAULT_CORE,
    DEFAULT_FLOOR,
    MIN_SAMPLES,
    NO_DECAY_RATE,
    DecayFit,
    Lattice,
    StftTable,
    Window,
    atoms,
    istft,
    stft,
)

MAX_DENSE_NODES = 64 * 64
CONCENTRATION_RADIUS = 5.0
PERIODIZATION_TOL = 1e-10
TRUNCATION_TOL = 1e-3
_ROW_BLOCK = 512


@dataclass(frozen=True)
class GaborMatrix:
    """Dense and/or thresholded-sparse Gabor matrix with its flow table.

    ``flow_images[i]`` is ``chi_t`` of column node ``i``.  The sparse form
    holds exactly the entries with ``|value| >= threshold``.
    """

    lattice: Lattice
    t: float
    flow_images: np.ndarray
    dense: Optional[np.ndarray] = None
    rows: Optional[np.ndarray] = None
    cols: Optional[np.ndarray] = None
    vals: Optional[np.ndarray] = None
    threshold: Optional[float] = None
    fit: Optional[DecayFit] = None
    column_flags: Optional[np.ndarray] = None
    escaped_mass: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)

    @property
    def is_sparse(self) -> bool:
        return self.vals is not None

    @property
    def n_nodes(self) -> int:
        return self.lattice.size

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        out = np.zeros((self.n_nodes, self.n_nodes), dtype=np.complex128)
        out[self.rows, self.cols] = self.vals
        return out

    def triplets(self) -> np.ndarray:
        if not self.is_sparse:
            raise ValueError("matrix is not sparse")
        return encode_triplets(self.rows, self.cols, self.vals)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.complex128).ravel()
        if self.is_sparse:
            return kernels.coo_matvec(self.rows, self.cols, self.vals, v, self.n_nodes)
        return self.dense @ v

    def meta(self) -> dict:
        out = {
            "t": self.t,
            "lattice": self.lattice.meta(),
            "threshold": self.threshold,
            "sparse": self.is_sparse,
            **self.stats,
        }
        if self.fit is not None:
            out["fit"] = self.fit.meta()
        if self.escaped_mass is not None:
            out["escaped_mass_max"] = float(np.max(self.escaped_mass))
            out["escaped_mass_mean"] = float(np.mean(self.escaped_mass))
        if self.column_flags is not None:
            out["flagged_columns"] = int(np.count_nonzero(self.column_flags))
        return out


def gram_matrix(g: Window, lat: Lattice) -> np.ndarray:
    """``<pi(z) g, pi(w) g>`` by quadrature on the grid."""
    A = atoms(g, lat)
    return (np.conj(A) @ A.T) * g.grid.dx


def assemble(hdl: PropagatorHandle, g: Window, lat: Lattice, flow: Optional[LatticeFlow] = None,
             max_nodes: int = MAX_DENSE_NODES) -> GaborMatrix:
    """Dense Gabor matrix of ``S(t_end, t_start)``.

    Column ``z`` is the STFT of the evolved packet ``S pi(z) g`` on the row
    lattice.  When there are more nodes than grid points, the packets are
    evolved through the grid propagator matrix (the same linear map) instead
    of one by one.
    """
    if lat.size > max_nodes:
        raise LatticeError(f"dense assembly is limited to {max_nodes} nodes, got {lat.size}")
    grid = g.grid
    lat.check_grid(grid)
    A = atoms(g, lat)
    if lat.size > grid.n:
        P = propagator_matrix(hdl, grid)
        E = A @ P.T
    else:
        E = evolve_batch(hdl, A, grid)
    bad = ~np.all(np.isfinite(E), axis=1)
    E[bad] = 0.0
    M = np.empty((lat.size, lat.size), dtype=np.complex128)
    Ac = np.conj(A)
    for start in range(0, lat.size, _ROW_BLOCK):
        sl = slice(start, start + _ROW_BLOCK)
        M[sl] = (Ac[sl] @ E.T) * grid.dx
    if flow is None:
        flow = flow_map_on_lattice(hdl.symbol, lat, hdl.T, lipschitz=False, estimate_error=False)
    images = flow.images
    # Moyal: sum_w |M[w, z]|^2 dA ~ ||E_z||^2 ||g||^2 2 pi; the shortfall escaped the rows
    col_energy = np.sum(np.abs(E) ** 2, axis=1) * grid.dx
    captured = np.sum(np.abs(M) ** 2, axis=0) * lat.cell_area
    gnorm2 = np.sum(np.abs(g.state.values) ** 2) * grid.dx
    expected = 2 * np.pi * gnorm2 * col_energy
    with np.errstate(invalid="ignore", divide="ignore"):
        escaped = np.clip(1.0 - captured / expected, 0.0, 1.0)
    escaped[expected == 0] = 1.0
    # packets that reach the edge of the periodic box wrap around: their
    # entries no longer describe the flow and are flagged
    band = np.abs(grid.x) > 0.9 * grid.x_max
    edge = np.sum(np.abs(E[:, band]) ** 2, axis=1) * grid.dx
    with np.errstate(invalid="ignore", divide="ignore"):
        periodized = edge / col_energy > PERIODIZATION_TOL
    # columns whose mass left the row lattice only show a truncated tail
    _, _, inside = lat.nearest_index(images)
    truncated = ~inside | (escaped > TRUNCATION_TOL)
    flags = bad | periodized | flow.blown_up | truncated
    stats = {
        "symbol": hdl.symbol.name,
        "method": hdl.method,
        "flagged_periodized": int(np.count_nonzero(periodized)),
        "columns_outside_rows": int(np.count_nonzero(~inside)),
        "flagged_truncated": int(np.count_nonzero(truncated)),
        "flagged_total": int(np.count_nonzero(flags)),
    }
    return GaborMatrix(lat, hdl.T, images, dense=M, column_flags=flags, escaped_mass=escaped, stats=stats)


def distance_table(M: GaborMatrix, rows: slice = slice(None)) -> np.ndarray:
    """``|w - chi_t(z)|`` for the requested rows and all columns."""
    W = M.lattice.points()[rows]
    return np.linalg.norm(W[:, None, :] - M.flow_images[None, :, :], axis=-1)


def _usable(M: GaborMatrix, exclude_flagged: bool) -> np.ndarray:
    D = M.to_dense()
    if exclude_flagged and M.column_flags is not None and np.any(M.column_flags):
        D = D.copy()
        D[:, M.column_flags] = 0.0
    return D


def fit_sparsity(M: GaborMatrix, floor: float = DEFAULT_FLOOR, core_radius: float = DEFAULT_CORE,
                 min_samples: int = MIN_SAMPLES, exclude_flagged: bool = True) -> DecayFit:
    """Fit ``log|M[w, z]| ~ C - eps |w - chi_t(z)|`` over entries above ``floor * peak``.

    Flagged columns (periodized or blown-up packets) are left out unless
    ``exclude_flagged`` is false.  The normal equations are accumulated over
    row blocks so the distance table is never held in full.
    """
    if M.flow_images is None:
        raise FitError("flow table missing")
    D = _usable(M, exclude_flagged)
    peak = float(np.max(np.abs(D)))
    if peak == 0:
        raise FitError("matrix is zero")
    s = np.zeros(5)  # n, sum d, sum d^2, sum l, sum l d
    n_above = 0
    blocks = range(0, M.n_nodes, _ROW_BLOCK)
    for start in blocks:
        sl = slice(start, start + _ROW_BLOCK)
        amp = np.abs(D[sl])
        dist = distance_table(M, sl)
        above = (amp >= floor * peak) & (amp > 0)
        n_above += int(np.count_nonzero(above))
        keep = above & (dist > core_radius)
        d = dist[keep]
        la = np.log(amp[keep])
        s += [d.size, d.sum(), (d * d).sum(), la.sum(), (la * d).sum()]
    n = int(s[0])
    if n_above and n == 0:
        raise FitError("degenerate fit: every entry above the floor lies in the core ball")
    if n < min_samples:
        raise FitError(f"only {n} entries above the floor outside the core (need {min_samples})")
    N, Sd, Sdd, Sl, Sld = s
    det = N * Sdd - Sd * Sd
    if det <= 1e-12 * N * Sdd:
        raise FitError("degenerate fit: no spread in phase-space distance")
    # log|M| = C - eps d
    slope = (N * Sld - Sd * Sl) / det
    C = (Sl - slope * Sd) / N
    eps = -slope
    sq = 0.0
    for start in blocks:
        sl = slice(start, start + _ROW_BLOCK)
        amp = np.abs(D[sl])
        dist = distance_table(M, sl)
        keep = (amp >= floor * peak) & (amp > 0) & (dist > core_radius)
        r = np.log(amp[keep]) - (C - eps * dist[keep])
        sq += float(np.dot(r, r))
    resid = float(np.sqrt(sq / n))
    return DecayFit(float(C), float(eps), resid, floor, n, core_radius, bool(eps < NO_DECAY_RATE))


def mass_concentration(M: GaborMatrix, radius: float = CONCENTRATION_RADIUS, exclude_flagged: bool = True) -> float:
    """Fraction of squared Frobenius mass with ``|w - chi_t(z)| <= radius`` (unflagged columns)."""
    D = _usable(M, exclude_flagged)
    inside = 0.0
    for start in range(0, M.n_nodes, _ROW_BLOCK):
        sl = slice(start, start + _ROW_BLOCK)
        w = np.abs(D[sl]) ** 2
        inside += float(w[distance_table(M, sl) <= radius].sum())
    total = float(np.sum(np.abs(D) ** 2))
    return inside / total if total else 0.0


def sparsify(M: GaborMatrix, threshold: float) -> GaborMatrix:
    """Keep entries with ``|value| >= threshold`` (``0`` keeps every nonzero entry).

    ``dropped_mass`` is the relative squared Frobenius mass of the dropped
    entries.
    """
    if not threshold >= 0:
        raise ValueError("threshold must be >= 0")
    if M.dense is None:
        raise ValueError("sparsify needs the dense entries")
    D = M.dense
    amp = np.abs(D)
    keep = (amp >= threshold) & (amp > 0)
    rows, cols = np.nonzero(keep)
    vals = D[rows, cols]
    total = float(np.sum(amp ** 2))
    kept = float(np.sum(np.abs(vals) ** 2))
    stats = dict(M.stats)
    stats.update(
        kept_fraction=rows.size / D.size,
        nnz=int(rows.size),
        dropped_mass=max(total - kept, 0.0) / total if total else 0.0,
    )
    return replace(M, dense=None, rows=rows.astype(np.int64), cols=cols.astype(np.int64), vals=vals,
                   threshold=float(threshold), stats=stats)


def round_trip_error(f: SampledState, g: Window, lat: Lattice) -> float:
    r = istft(stft(f, g, lat), g)
    return float(np.linalg.norm(r.values - f.values) / np.linalg.norm(f.values))


def sparse_apply(M: GaborMatrix, g: Window, f: SampledState, lat: Optional[Lattice] = None,
                 with_budget: bool = False):
    """``istft(M . stft(f))`` on the matrix lattice.

    With ``with_budget`` also returns the error budget: dropped mass,
    lattice truncation (round trip of ``f``) and the escaped mass of the
    columns weighted by ``|V_g f|^2``.
    """
    if lat is not None and lat != M.lattice:
        raise LatticeError("input lattice differs from the matrix lattice")
    if f.grid != g.grid:
        raise GridMismatchError("signal and window live on different grids")
    lat = M.lattice
    V = stft(f, g, lat)
    W = M.matvec(V.values.ravel()) * lat.cell_area
    out = istft(StftTable(lat, W.reshape(lat.shape)), g)
    if not with_budget:
        return out
    dropped = float(M.stats.get("dropped_mass", 0.0))
    trunc = round_trip_error(f, g, lat)
    wts = np.abs(V.values.ravel()) ** 2
    esc = float(np.sum(wts * M.escaped_mass) / np.sum(wts)) if M.escaped_mass is not None and wts.sum() else 0.0
    budget = {
        "dropped_mass": dropped,
        "lattice_truncation": trunc,
        "escaped_mass": esc,
        "total": float(np.sqrt(dropped) + trunc + np.sqrt(esc)),
    }
    return out, budget
