import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwpk.errors import DomainMismatchError, GridMismatchError
from gwpk.field import (
    FREQUENCY,
    GridSpec,
    SampledState,
    boundary_mass,
    fourier_forward,
    fourier_inverse,
    gaussian_state,
    inner,
    l2_norm,
    relative_l2,
    spectral_derivative,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(100, 10.0)
    with pytest.raises(ValueError):
        GridSpec(8, 10.0)
    with pytest.raises(ValueError):
        GridSpec(64, -1.0)
    g = GridSpec(64, 8.0)
    assert g.dx == pytest.approx(16.0 / 64)
    assert g.xi_max == pytest.approx(np.pi / g.dx)
    assert g.x[0] == -8.0 and g.x.size == 64
    assert g.xi[g.n // 2] == 0.0


def test_state_is_read_only(grid):
    u = gaussian_state(grid)
    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_gaussian_fourier_closed_form(grid):
    u = gaussian_state(grid)
    U = fourier_forward(u)
    exact = np.sqrt(2 * np.pi) * np.pi ** -0.25 * np.exp(-grid.xi ** 2 / 2)
    assert np.max(np.abs(U.values - exact)) < 1e-12
    assert U.domain == FREQUENCY


def test_fourier_of_shifted_packet(grid):
    x0, xi0 = 1.5, -2.0
    U = fourier_forward(gaussian_state(grid, (x0, xi0)))
    exact = np.sqrt(2 * np.pi) * np.pi ** -0.25 * np.exp(-(grid.xi - xi0) ** 2 / 2 - 1j * grid.xi * x0)
    assert np.max(np.abs(U.values - exact)) < 1e-12


@given(st.integers(0, 2 ** 32 - 1))
def test_parseval_and_inverse(seed):
    g = GridSpec(64, 8.0)
    r = np.random.default_rng(seed)
    u = SampledState(g, r.normal(size=64) + 1j * r.normal(size=64))
    U = fourier_forward(u)
    assert l2_norm(U) ** 2 == pytest.approx(2 * np.pi * l2_norm(u) ** 2, rel=1e-12)
    assert relative_l2(fourier_inverse(U), u) < 1e-13


def test_domain_checks(grid):
    u = gaussian_state(grid)
    with pytest.raises(DomainMismatchError):
        fourier_inverse(u)
    with pytest.raises(DomainMismatchError):
        fourier_forward(fourier_forward(u))
    with pytest.raises(GridMismatchError):
        inner(u, gaussian_state(GridSpec(256, 28.0)))


def test_gaussian_normalized_and_inner(grid):
    u = gaussian_state(grid, (1.0, 2.0), 0.7)
    assert l2_norm(u) == pytest.approx(1.0, abs=1e-13)
    assert inner(u, u) == pytest.approx(1.0, abs=1e-13)
    v = gaussian_state(grid, (0.0, 0.0))
    # <g_a, g_b> for unit Gaussians separated by (1, 2) with width 1 vs 0.7 is below 1
    assert abs(inner(u, v)) < 1.0


def test_spectral_derivative_oracle(grid):
    u = gaussian_state(grid)
    x = grid.x
    g0 = np.pi ** -0.25 * np.exp(-x ** 2 / 2)
    assert np.max(np.abs(spectral_derivative(u, 1).values - (-x * g0))) < 1e-12
    assert np.max(np.abs(spectral_derivative(u, 2).values - (x ** 2 - 1) * g0)) < 1e-11


def test_boundary_mass(grid):
    assert boundary_mass(gaussian_state(grid)) < 1e-100
    edge = gaussian_state(grid, (-27.0, 0.0))
    assert boundary_mass(edge) > 0.4
