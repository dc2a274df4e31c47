import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcphase.errors import NotOrthogonal, SingularMatrix
from cmcphase.linear import (StripFunction, SymmetricPeriodicFunction, apply_periodic,
                             coercivity_constant, half_nodes, homogeneous_slopes, project_Z,
                             solve_periodic, solve_strip, strip_grid, v_star_prime)


def _cosine_series(coef, s_tau, M):
    s = half_nodes(s_tau, M)
    half = sum(c * np.cos(2 * np.pi * n * s / s_tau) for n, c in enumerate(coef))
    return SymmetricPeriodicFunction.from_half(half, s_tau)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=8))
def test_periodic_roundtrip(profile06, coef):
    h = _cosine_series(coef, profile06.s_tau, 48)
    back = solve_periodic(profile06, apply_periodic(profile06, h))
    assert np.max(np.abs(back.values - h.values)) < 1e-9 * max(1.0, h.sup())


def test_interpolant_reproduces_cosines(profile06):
    L = profile06.s_tau
    h = _cosine_series([0.0, 0.0, 1.0], L, 16)
    s = np.linspace(0, L, 37)
    assert np.allclose(h.at(s), np.cos(4 * np.pi * s / L), atol=1e-12)
    assert np.allclose(h.at(s, 2), -(4 * np.pi / L) ** 2 * np.cos(4 * np.pi * s / L), atol=1e-10)


def test_periodic_rejects_asymmetric_rhs(profile06):
    v = np.linspace(0, 1, 97)
    with pytest.raises(SingularMatrix):
        solve_periodic(profile06, SymmetricPeriodicFunction(v, profile06.s_tau))


@pytest.mark.parametrize("tau", [0.3, 0.6, 0.9])
def test_plus_field_slope(tau):
    from cmcphase.delaunay import delaunay_profile
    slope0, slope1 = homogeneous_slopes(delaunay_profile(tau))["plus"]
    assert slope0 == pytest.approx(np.sqrt(1 - tau * tau), abs=1e-6)
    assert slope1 == pytest.approx(slope0, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_projection_is_idempotent_and_orthogonal(seed):
    rng = np.random.default_rng(seed)
    t = strip_grid(12.0, 121)
    g = StripFunction.from_half(rng.normal(size=(5, len(t))), 10.0, t)
    p = project_Z(g)
    assert np.max(np.abs(p.inner_v())) < 1e-12 * np.max(np.abs(g.values))
    assert np.allclose(project_Z(p).values, p.values, atol=1e-13)


def test_strip_output_orthogonal(profile06):
    t = strip_grid(12.0, 241)
    S = half_nodes(profile06.s_tau, 24)[:, None]
    g = project_Z(StripFunction.from_half(np.cos(2 * np.pi * S / profile06.s_tau) * np.exp(-t * t),
                                          profile06.s_tau, t))
    phi = solve_strip(profile06, 0.05, 1.0, g)
    assert np.max(np.abs(phi.inner_v())) <= 1e-9 * np.max(np.abs(phi.values))
    assert phi.symmetry_defect() == 0.0


def test_strip_rejects_kernel_component(profile06):
    t = strip_grid(12.0, 241)
    g = StripFunction.from_half(np.tile(v_star_prime(t), (25, 1)), profile06.s_tau, t)
    with pytest.raises(NotOrthogonal):
        solve_strip(profile06, 0.05, 1.0, g)


def test_strip_rejects_gamma_beyond_decay(profile06):
    t = strip_grid(12.0, 121)
    g = StripFunction.from_half(np.zeros((9, len(t))), profile06.s_tau, t)
    with pytest.raises(ValueError):
        solve_strip(profile06, 0.05, 1.5, g)


def test_coercivity_near_continuum_gap(profile06):
    # the continuum gap of -(d_t^2 + f'(v)) on the complement of v' is 3/2
    mu = coercivity_constant(profile06, 0.05, 24, strip_grid(12.0, 481))
    assert mu == pytest.approx(1.5, abs=2e-3)


def test_minus_field_slopes_differ(profile06_td):
    a, b = homogeneous_slopes(profile06_td)["minus"]
    assert abs(a - b) > 1e-3 * max(abs(a), abs(b))
