import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcphase.delaunay import (chart, delaunay_profile, embed, frame_at, mean_curvature_numeric,
                               meridian_residual, neck_size, rotation_matrix, surface_terms,
                               tau_from_neck, write_obj)
from cmcphase.errors import InvalidParameter, StencilOutOfDomain
from cmcphase.jacobi import PerturbationVector

# Periods from first-integral quadratures (scipy.integrate.quad after a sine
# substitution), independent of the ODE solver:
#   isothermal period = 4 * int dsigma / sqrt(2E - tau^2 cosh(2 sigma) / 2) between the turning points
#   meridian period   = 2 * int q / sqrt(rho^2 - q^2) drho, q = (rho^2 + tau^2) / 2
PERIOD_ORACLE = {
    0.3: (21.022186656675408, 4.385910069568707),
    0.6: (15.962422221317568, 5.105399772679411),
    0.9: (13.236933340180343, 5.973160432524438),
}


@pytest.mark.parametrize("tau", sorted(PERIOD_ORACLE))
def test_periods_match_quadrature(tau):
    p = delaunay_profile(tau)
    s_tau, T = PERIOD_ORACLE[tau]
    assert p.s_tau == pytest.approx(s_tau, rel=1e-9)
    assert p.T_tau == pytest.approx(T, rel=1e-9)
    # one isothermal period advances the axis by two meridian periods
    assert float(p.k_at(p.s_tau)) == pytest.approx(2 * T, rel=1e-9)


@pytest.mark.parametrize("tau", [0.3, 0.6, 0.9])
def test_neck_and_bulge_radii(tau):
    p = delaunay_profile(tau)
    a = np.sqrt(1 - tau * tau)
    r = p.radius(p.s)
    assert r.min() == pytest.approx(1 - a, rel=1e-9)
    assert r.max() == pytest.approx(1 + a, rel=1e-6)
    assert neck_size(tau) == pytest.approx(1 - a)


def test_neck_curvatures_closed_form(profile06):
    # neck radius 0.2: parallel curvature 1/0.2, meridian curvature 1 - 1/0.2
    g = surface_terms(profile06, np.array(0.0))
    assert float(g["kappa_t"]) == pytest.approx(5.0, rel=1e-10)
    assert float(g["kappa_s"]) == pytest.approx(-4.0, rel=1e-6)
    assert float(g["A2"]) == pytest.approx(41.0, rel=1e-6)
    assert float(g["A3"]) == pytest.approx(61.0, rel=1e-6)


def test_cylinder_is_exact():
    p = delaunay_profile(1.0)
    assert p.degenerate
    assert p.s_tau == pytest.approx(2 * np.pi)
    s = np.linspace(0, 10, 101)
    g = surface_terms(p, s)
    assert np.all(g["r"] == 1.0)
    assert np.all(g["H"] == 1.0)
    assert meridian_residual(p) == 0.0


@pytest.mark.parametrize("tau", [0.3, 0.6, 0.9])
def test_mean_curvature_by_finite_differences(tau):
    # independent route: fundamental forms of the embedding by 5-point differences
    p = delaunay_profile(tau)
    s = np.linspace(0.3, p.s_tau - 0.3, 40)
    H = mean_curvature_numeric(chart(p), s, 0.7, 2e-3, normal_sign=1.0)
    assert np.max(np.abs(H - 1.0)) < 1e-5


@settings(max_examples=8, deadline=None)
@given(st.floats(0.15, 0.99))
def test_first_integral_conserved(tau):
    # sigma'' = -(tau^2/2) sinh(2 sigma) conserves sigma'^2 + (tau^2/2) cosh(2 sigma)
    p = delaunay_profile(tau, 1e-2)
    E = p.dsigma ** 2 + 0.5 * tau * tau * np.cosh(2 * p.sigma)
    assert np.ptp(E) < 1e-9 * np.max(E)


@given(st.floats(1e-3, 1.0))
def test_neck_size_roundtrip(tau):
    assert tau_from_neck(neck_size(tau)) == pytest.approx(tau, rel=1e-9, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=5, max_size=5))
def test_rigid_motions_preserve_distances(a):
    p = delaunay_profile(0.6, 1e-2)
    pert = PerturbationVector(aT=a[:3], aR=a[3:5])
    s = np.array([0.0, 1.3, 4.0, 7.7])
    th = np.array([0.0, 1.0, 2.5, 5.0])
    X0 = embed(p, s, th)[0]
    X1, N1 = embed(p, s, th, pert)
    d0 = np.linalg.norm(X0[:, None] - X0[None], axis=-1)
    d1 = np.linalg.norm(X1[:, None] - X1[None], axis=-1)
    assert np.allclose(d0, d1, atol=1e-12)
    assert np.allclose(np.linalg.norm(N1, axis=-1), 1.0)
    R = rotation_matrix(a[3:5])
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)


def test_frame_matches_surface_terms(profile06):
    fr = frame_at(profile06, None, 2.0, 0.3)
    assert fr.mean_curvature == pytest.approx(1.0, abs=1e-6)
    assert fr.norm_sff_sq == pytest.approx(float(surface_terms(profile06, 2.0)["A2"]))


def test_cylinder_obj_radii(tmp_path):
    X = write_obj(tmp_path / "c.obj", delaunay_profile(1.0), n_theta=12)
    v = np.array([ln.split()[1:] for ln in open(tmp_path / "c.obj") if ln.startswith("v ")], float)
    assert len(v) == X.reshape(-1, 3).shape[0]
    assert np.max(np.abs(np.hypot(v[:, 0], v[:, 1]) - 1.0)) < 1e-12


@pytest.mark.parametrize("tau", [0.0, -0.2, 1.2])
def test_invalid_tau(tau):
    with pytest.raises(InvalidParameter):
        delaunay_profile(tau)


def test_stencil_leaving_domain(profile06):
    with pytest.raises(StencilOutOfDomain):
        mean_curvature_numeric(chart(profile06), 0.001, 1.0, 1e-2, domain=((0, 5), (0, 7)))


def test_isothermal_parametrization_consistent(profile06):
    s = np.linspace(0, profile06.s_tau, 2001)
    r_iso = 0.6 * np.exp(profile06.sigma_at(s))
    r_mer = profile06.rho_at(profile06.k_at(s))
    assert np.max(np.abs(r_iso - r_mer)) <= 1e-8
