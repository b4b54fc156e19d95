import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import binary_dilation

from gwpk import analytic
from gwpk.analytic import (
    RegionMask,
    WeightFunction,
    boundedness_check,
    bracket,
    chirp_bump,
    delta_neighborhood,
    energy_functional,
    energy_profile,
    flow_delta_star,
    mod_norm,
    nested_delta_star,
    radius_track,
    regular_region,
    singularity_propagation_check,
)
from gwpk.errors import DomainMismatchError, HypothesisError, LatticeError, WeightOverflowError
from gwpk.field import GridSpec, SampledState, fourier_forward, gaussian_state, l2_norm
from gwpk.hamiltonian import get_symbol, integrate_flow_batch
from gwpk.propagator import STRANG, PropagatorHandle, evolve
from gwpk.tf import Lattice, Window, stft

MOD_LAT = Lattice.from_extents(12, 12, 48, strict=False)
SMALL_LAT = Lattice.from_extents(8, 8, 16, strict=False)
SING_GRID = GridSpec(1024, 40.0)
SING_LAT = Lattice.from_extents(12, 12, 64, strict=False)


def packet_sum(grid, seeds):
    rng = np.random.default_rng(seeds)
    vals = sum(gaussian_state(grid, rng.uniform(-3, 3, 2), rng.uniform(0.8, 1.3)).values * complex(*rng.normal(size=2))
               for _ in range(3))
    return SampledState(grid, vals)


# ---------------------------------------------------------------- energies

def test_energy_order_zero_is_norm(grid):
    u = packet_sum(grid, 1)
    assert energy_functional(u, 0.7, 0) == pytest.approx(l2_norm(u), rel=1e-14)


def test_energy_gaussian_order_two(grid):
    u = gaussian_state(grid)
    closed = 0.25 * 2 * np.sqrt(0.75)
    # brute force at four times the resolution with exact derivatives
    x = np.linspace(-grid.x_max, grid.x_max, 4 * grid.n + 1)
    v = np.pi ** -0.25 * np.exp(-x ** 2 / 2)
    nrm = lambda w: np.sqrt(np.trapezoid(w ** 2, x))
    brute = 0.25 * (nrm(x ** 2 * v) / 2 + nrm(x * (-x * v)) + nrm((x ** 2 - 1) * v) / 2)
    assert brute == pytest.approx(closed, rel=1e-10)
    assert energy_functional(u, 0.5, 2) == pytest.approx(brute, abs=1e-6)


@given(seed=st.integers(0, 10 ** 6), c=st.floats(0.1, 3.0), N=st.integers(0, 6), scale=st.floats(0.1, 5.0))
def test_energy_homogeneity(grid, seed, c, N, scale):
    u = packet_sum(grid, seed)
    base = energy_functional(u, 0.3, N)
    assert energy_functional(u, 0.3 * c, N) == pytest.approx(c ** N * base, rel=1e-12)
    assert energy_functional(u * scale, 0.3, N) == pytest.approx(scale * base, rel=1e-12)
    assert base >= 0


def test_energy_profile_sup(grid):
    prof = energy_profile(gaussian_state(grid, (1.0, 0.5)), 0.3, 6)
    assert np.array_equal(prof.sup_values, np.maximum.accumulate(prof.values))
    assert prof.values.shape == (7,)


def test_energy_input_errors(grid):
    u = gaussian_state(grid)
    with pytest.raises(ValueError):
        energy_functional(u, 0.3, 13)
    with pytest.raises(DomainMismatchError):
        energy_functional(fourier_forward(u), 0.3, 2)


def test_radius_free_gaussian(grid):
    h = PropagatorHandle(get_symbol("free"), STRANG, 0, 1.0)
    rep = radius_track(h, gaussian_state(grid), 0.3, 6, np.linspace(0, 1, 11))
    assert rep.smallest_A is not None
    assert np.all(rep.ratios[0.0][0] <= 0.5 + 1e-12)


def test_radius_harmonic_ground_state(grid):
    h = PropagatorHandle(get_symbol("harmonic"), STRANG, 0, 1.0)
    u0 = gaussian_state(grid)
    rep = radius_track(h, u0, 0.3, 6, np.linspace(0, 1, 6))
    assert np.allclose(rep.base, rep.base[0], rtol=1e-8)
    assert rep.max_ratio[0.0] <= 0.5 + 1e-8


# ---------------------------------------------------------------- weights

def test_weight_family():
    m = WeightFunction(a=2.0, r=1.0, s=0.3, b=0.5)
    z = np.array([[3.0, 4.0]])
    assert m(z)[0] == pytest.approx(np.exp(0.3 * 5 ** 0.5) * 36 * np.log(np.e + 5))
    assert m(np.zeros((1, 2)))[0] == pytest.approx(1.0)
    assert m.k_inf == 0.0 and m.integrable(1e-3)
    e = WeightFunction(s=0.2)
    assert e.k_inf == 0.2 and e.k_attained
    assert e.dominating_constant() == pytest.approx(1.0)
    assert not e.integrable(0.2) and e.integrable(0.21)
    with pytest.raises(HypothesisError):
        WeightFunction(a=1.0, s=0.2).dominating_constant(0.2)
    with pytest.raises(ValueError):
        WeightFunction(a=-1.0)
    with pytest.raises(ValueError):
        WeightFunction(b=1.5)


def test_weight_overflow(grid, window):
    with pytest.raises(WeightOverflowError):
        mod_norm(gaussian_state(grid), window, 2, WeightFunction(s=50.0), MOD_LAT)


def test_mod_norm_moyal(grid, window):
    f = packet_sum(grid, 3)
    gnorm = l2_norm(window.state)
    assert mod_norm(f, window, 2, None, MOD_LAT) == pytest.approx(np.sqrt(2 * np.pi) * l2_norm(f) * gnorm, rel=1e-8)


def test_mod_norm_zero_and_sup(grid, window):
    zero = SampledState(grid, np.zeros(grid.n, complex))
    assert mod_norm(zero, window, 1, WeightFunction(a=2), MOD_LAT) == 0.0
    f = gaussian_state(grid)
    assert mod_norm(f, window, "inf", None, MOD_LAT) == pytest.approx(np.abs(stft(f, window, MOD_LAT).values).max())
    with pytest.raises(ValueError):
        mod_norm(f, window, 3, None, MOD_LAT)
    with pytest.raises(LatticeError):
        mod_norm(f, window, 2, np.ones(5), MOD_LAT)


def test_mod_norm_exponential_weights(grid, window):
    f = gaussian_state(grid, (0.5, 0.3))
    n1 = mod_norm(f, window, 2, WeightFunction(s=0.1), MOD_LAT)
    n2 = mod_norm(f, window, 2, WeightFunction(s=0.2), MOD_LAT)
    assert np.isfinite(n1) and n2 > n1


@given(a1=st.floats(0, 3), da=st.floats(0, 2), s1=st.floats(0, 0.3), ds=st.floats(0, 0.2),
       p=st.sampled_from([1, 2, "inf"]))
def test_mod_norm_monotone(grid, window, a1, da, s1, ds, p):
    f = gaussian_state(grid, (0.5, -0.3))
    tbl = stft(f, window, MOD_LAT)
    lo = mod_norm(f, window, p, WeightFunction(a=a1, s=s1), MOD_LAT, tbl)
    hi = mod_norm(f, window, p, WeightFunction(a=a1 + da, s=s1 + ds), MOD_LAT, tbl)
    assert lo <= hi * (1 + 1e-12)


def test_boundedness_identity(grid, window):
    h = PropagatorHandle(get_symbol("free"), STRANG, 0, 0.0)
    rep = boundedness_check(h, window, 2, WeightFunction(a=2.0), MOD_LAT)
    assert np.allclose(rep.ratios, 1.0, rtol=1e-12)


@pytest.mark.parametrize("p", [1, 2, np.inf])
def test_boundedness_free_polynomial(grid, window, p):
    h = PropagatorHandle(get_symbol("free"), STRANG, 0, 1.0)
    rep = boundedness_check(h, window, p, WeightFunction(a=2.0), MOD_LAT)
    assert np.all(np.isfinite(rep.ratios)) and rep.spread < 2


def test_boundedness_exponential_hypothesis(grid, window):
    h = PropagatorHandle(get_symbol("harmonic"), STRANG, 0, 1.0)
    rep = boundedness_check(h, window, 2, WeightFunction(s=0.05), MOD_LAT, sparsity_eps=0.2)
    assert np.all(np.isfinite(rep.ratios)) and rep.spread < 2
    with pytest.raises(HypothesisError):
        boundedness_check(h, window, 2, WeightFunction(s=0.5), MOD_LAT, sparsity_eps=0.2)
    with pytest.raises(HypothesisError):
        boundedness_check(h, window, 2, WeightFunction(s=0.05), MOD_LAT)
    with pytest.raises(ValueError):
        boundedness_check(h, window, 2, WeightFunction(a=1), MOD_LAT, probes=[gaussian_state(grid)])


# ---------------------------------------------------------------- regions

def random_mask(seed, lat=SMALL_LAT, density=0.1):
    return RegionMask(lat, np.random.default_rng(seed).random(lat.shape) < density)


@given(seed=st.integers(0, 10 ** 6), d1=st.floats(0.01, 0.5), d2=st.floats(0.0, 0.45))
def test_neighborhood_monotone(seed, d1, d2):
    small = random_mask(seed)
    larger = RegionMask(SMALL_LAT, small.mask | random_mask(seed + 1).mask)
    n1 = delta_neighborhood(small, d1)
    assert small.subset_of(n1)
    assert n1.subset_of(delta_neighborhood(small, d1 + d2))
    assert n1.subset_of(delta_neighborhood(larger, d1))


def test_neighborhood_matches_definition():
    mask = random_mask(7)
    out = delta_neighborhood(mask, 0.3)
    pts = SMALL_LAT.points()
    src = pts[mask.flat]
    dist = np.linalg.norm(pts[:, None] - src[None], axis=-1)
    expect = np.any(dist < 0.3 * bracket(src)[None], axis=1) | mask.flat
    assert np.array_equal(out.flat, expect)


def test_small_delta_adds_only_neighbors():
    mask = random_mask(11, density=0.03)
    out = delta_neighborhood(mask, 1 / SMALL_LAT.x_extent)
    assert out.subset_of(RegionMask(SMALL_LAT, binary_dilation(mask.mask, np.ones((3, 3), bool))))


def test_delta_range_and_size():
    with pytest.raises(ValueError):
        delta_neighborhood(random_mask(0), 1.0)
    with pytest.raises(ValueError):
        delta_neighborhood(random_mask(0), 0.0)
    big = Lattice.from_extents(8, 8, 65, strict=False)
    with pytest.raises(LatticeError):
        delta_neighborhood(RegionMask(big, np.zeros(big.shape, bool)), 0.2)


def test_region_mask_contract():
    with pytest.raises(LatticeError):
        RegionMask(SMALL_LAT, np.zeros((3, 3), bool))
    m = random_mask(2)
    with pytest.raises(ValueError):
        m.mask[0, 0] = True
    assert m.complement().fraction == pytest.approx(1 - m.fraction)


@pytest.mark.parametrize("seed", range(5))
def test_nested_delta_star(seed):
    rep = nested_delta_star(random_mask(seed, density=0.15), 0.4)
    assert rep.passed and 0 < rep.delta_star < rep.delta


@pytest.mark.parametrize("name,t", [("free", 0.5), ("harmonic", np.pi / 4), ("anharmonic-bounded", 0.5)])
def test_flow_delta_star(name, t):
    a = get_symbol(name)
    pts = SMALL_LAT.points()
    fwd = integrate_flow_batch(a, pts, t, store="final").traj
    bwd = integrate_flow_batch(a, pts, -t, t0=t, store="final").traj
    for seed in range(3):
        rep = flow_delta_star(random_mask(seed, density=0.15), 0.4, fwd, bwd)
        assert rep.passed


def test_regular_region_gaussian(grid, window):
    reg = regular_region(gaussian_state(grid), window, 1.0, MOD_LAT)
    r = np.linalg.norm(MOD_LAT.points(), axis=1)
    assert np.all(reg.flat[r > 4.5])
    assert not reg.flat[np.argmin(r)]


def test_regular_region_chirp_band(window):
    grid = window.grid
    reg = regular_region(chirp_bump(grid, omega=2.0), window, 1.0, MOD_LAT)
    pts = MOD_LAT.points()
    band = (np.abs(pts[:, 0]) < 2) & (np.abs(pts[:, 1] - 2) < 0.5)
    assert band.any() and not np.any(reg.flat[band])
    assert regular_region(chirp_bump(grid), window, 0.0, MOD_LAT).fraction == 1.0
    with pytest.raises(ValueError):
        regular_region(chirp_bump(grid), window, -1.0, MOD_LAT)


@pytest.fixture(scope="module")
def sing_window():
    return Window.gaussian(SING_GRID)


def test_singularity_identity(sing_window):
    h = PropagatorHandle(get_symbol("harmonic"), STRANG, 0, 0.0)
    rep = singularity_propagation_check(h, chirp_bump(SING_GRID), sing_window, SING_LAT)
    assert rep["forward_inclusion"]["violations"] == 0
    assert rep["backward_inclusion"]["violations"] == 0


@pytest.mark.parametrize("name,t,omega", [("free", 1.0, 2.0), ("harmonic", np.pi / 4, 0.0)])
def test_singularity_propagation(sing_window, name, t, omega):
    h = PropagatorHandle(get_symbol(name), STRANG, 0, t)
    rep = singularity_propagation_check(h, chirp_bump(SING_GRID, omega=omega), sing_window, SING_LAT)
    assert rep["forward_inclusion"]["fraction"] <= 0.02
    assert rep["backward_inclusion"]["fraction"] <= 0.02
    assert rep["passed"]
    assert rep["forward_inclusion"]["judged"] > SING_LAT.size // 4


def test_singularity_negative_control(sing_window):
    # pretending the flow is the identity must break the inclusion for a sheared state
    h = PropagatorHandle(get_symbol("free"), STRANG, 0, 1.0)
    f = chirp_bump(SING_GRID, omega=2.0)
    reg_f = regular_region(f, sing_window, 1.0, SING_LAT)
    reg_sf = regular_region(evolve(h, f), sing_window, 1.0, SING_LAT)
    pts = SING_LAT.points()
    rep = analytic._inclusion(SING_LAT, reg_f.flat, reg_sf.flat, pts, np.zeros(len(pts), bool), 0.25)
    assert rep["fraction"] > 0.02
