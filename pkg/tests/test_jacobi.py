import numpy as np
import pytest

from cmcphase.delaunay import delaunay_profile, embed
from cmcphase.errors import MissingTauDerivatives, ProjectionNotUnique
from cmcphase.jacobi import (JacobiFieldKind, PerturbationVector, decaying_mode, eval_jacobi,
                             jacobi_residual, linearized_field, normal_graph_decompose)

K = JacobiFieldKind
UNIT = {"aT0": PerturbationVector(aT=(1, 0, 0)), "aT1": PerturbationVector(aT=(0, 1, 0)),
        "aT2": PerturbationVector(aT=(0, 0, 1)), "aR0": PerturbationVector(aR=(1, 0)),
        "aR1": PerturbationVector(aR=(0, 1)), "aD": PerturbationVector(aD=1)}


@pytest.mark.parametrize("name", sorted(UNIT))
def test_linearized_field_matches_embedding_derivative(profile06_td, name):
    # independent route: normal component of the central difference of the embedding in a
    s = np.linspace(0.5, 12.0, 9)[:, None]
    th = np.array([0.2, 1.4, 3.9])[None, :]
    h = 1e-4
    d = UNIT[name]
    Xp = embed(profile06_td, s, th, d.scaled(h))[0]
    Xm = embed(profile06_td, s, th, d.scaled(-h))[0]
    N = embed(profile06_td, s, th)[1]
    fd = np.sum((Xp - Xm) / (2 * h) * N, axis=-1)
    assert np.max(np.abs(fd - linearized_field(profile06_td, d, s, th))) < 1e-5 * max(1, np.max(np.abs(fd)))


@pytest.mark.parametrize("kind", ["T1", "T3", "R1", "D"])
def test_residual_second_order(profile06_td, kind):
    r = [jacobi_residual(profile06_td, kind, h) for h in (0.04, 0.02)]
    assert np.log2(r[0] / r[1]) == pytest.approx(2.0, abs=0.2)


def test_cylinder_translation_is_exact():
    p = delaunay_profile(1.0)
    assert jacobi_residual(p, "T1", 0.01) < 1e-13
    assert np.allclose(eval_jacobi(p, K.T1, np.linspace(0, 5, 11), 0.0), -1.0)


def test_d_field_needs_tau_tables(profile06):
    with pytest.raises(MissingTauDerivatives):
        eval_jacobi(profile06, K.D, 1.0)


def test_zero_perturbation_gives_zero_graph(profile06):
    w, phi, psi, info = normal_graph_decompose(profile06, PerturbationVector(), (0, 2), n_s=10)
    assert info["C"] == 0.0 and not np.any(w)


def test_large_perturbation_rejected(profile06):
    with pytest.raises(ProjectionNotUnique):
        normal_graph_decompose(profile06, PerturbationVector(aT=(0.1, 0, 0)), (0, 2))


def test_translation_graph_remainder_quadratic(profile06):
    sups = []
    for a in (0.02, 0.01):
        info = normal_graph_decompose(profile06, PerturbationVector(aT=(a, 0, 0)), (0.0, 4.0),
                                      n_s=40, n_theta=8)[3]
        sups.append(info["sup_psi"])
    assert np.log2(sups[0] / sups[1]) == pytest.approx(2.0, abs=0.3)


def test_decaying_mode_cylinder_rate():
    # tau = 1: f'' = (m^2 - 1) f, so the rate is sqrt(3) for m = 2
    rate, f = decaying_mode(delaunay_profile(1.0), 2)
    assert rate == pytest.approx(np.sqrt(3.0), rel=1e-8)
    s = np.linspace(0, 5, 11)
    assert np.allclose(f(s), np.exp(-np.sqrt(3.0) * s), rtol=1e-7)


@pytest.mark.parametrize("tau", [0.3, 0.6, 0.9])
def test_decaying_mode_solves_ode_and_beats_weight(tau):
    p = delaunay_profile(tau)
    rate, f = decaying_mode(p, 2)
    assert rate >= np.sqrt(2 + tau * tau) - 1e-9
    h = 1e-3
    s = np.linspace(0.3, 1.8 * p.s_tau, 60)
    f2 = (f(s + h) - 2 * f(s) + f(s - h)) / h ** 2
    res = f2 - (4 - tau * tau * np.cosh(2 * p.sigma_at(s))) * f(s)
    assert np.max(np.abs(res)) < 1e-4 * np.max(np.abs(f(s)))
    assert f(np.array(p.s_tau)) == pytest.approx(np.exp(-rate * p.s_tau), rel=1e-8)
