import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmcphase.assembly import (EndConfiguration, EndProblem, balancing_warnings,
                               build_glued_surface, check_balancing, curvature_report,
                               end_corrections, end_geometry, step_jet)
from cmcphase.delaunay import surface_terms
from cmcphase.errors import (InvalidParameter, NoContraction, ParallelEnds,
                             PerturbationTooLarge)
from cmcphase.jacobi import PerturbationVector
from cmcphase.studies import fit_order, symmetric_ends


@pytest.fixture(scope="module")
def problem():
    return EndProblem(0.6, 0.1)


@given(st.floats(-1.0, 4.0))
def test_step_jet_derivatives(s):
    h = 1e-5
    v, d1, d2 = step_jet(s, 0.5, 2.0)
    vp, vm = step_jet(s + h, 0.5, 2.0)[0], step_jet(s - h, 0.5, 2.0)[0]
    assert 0.0 <= v <= 1.0
    assert d1 == pytest.approx((vp - vm) / (2 * h), abs=1e-6)
    d1p, d1m = step_jet(s + h, 0.5, 2.0)[1], step_jet(s - h, 0.5, 2.0)[1]
    # d2 has a kink at the support ends, where the central difference is only O(h)
    assert d2 == pytest.approx((d1p - d1m) / (2 * h), abs=1e-4)


def test_end_geometry_matches_surface_terms(profile06):
    s = np.linspace(0, profile06.s_tau, 50)
    g, t = end_geometry(profile06, s), surface_terms(profile06, s)
    assert np.allclose(g["A2"], t["A2"], rtol=1e-6)
    assert np.allclose(g["trA3"], t["A3"], rtol=1e-6)
    assert np.allclose(g["r2"], t["r"] ** 2)


@given(st.integers(2, 6), st.floats(0.1, 1.0))
def test_equal_angle_ends_balance(k, tau):
    ends = [EndConfiguration(tau, (np.cos(2 * np.pi * j / k), np.sin(2 * np.pi * j / k), 0.0))
            for j in range(k)]
    assert np.linalg.norm(check_balancing(ends)) < 1e-12
    assert balancing_warnings(ends) == []


def test_unbalanced_ends_warn():
    ends = [EndConfiguration(0.6, (1, 0, 0)), EndConfiguration(0.5, (0, 1, 0))]
    w = balancing_warnings(ends)
    assert w[0]["residual"] == pytest.approx([0.36, 0.25, 0.0])


def test_gluing_errors():
    with pytest.raises(ParallelEnds):
        build_glued_surface([EndConfiguration(0.6, (1, 0, 0)), EndConfiguration(0.6, (2, 0, 0))])
    big = PerturbationVector(aT=(0.1, 0, 0))
    with pytest.raises(PerturbationTooLarge):
        build_glued_surface([EndConfiguration(0.6, (1, 0, 0), pert=big)])
    with pytest.raises(InvalidParameter):
        EndConfiguration(1.2)


def test_bare_end_deviation_is_jacobi_term_plus_quadratic():
    rep = []
    for a in (0.02, 0.01):
        pert = PerturbationVector(aT=(a, 0, 0), aR=(a, 0), aD=a)
        G = build_glued_surface(symmetric_ends(0.6, 3, 2.0, pert))
        rep.append(curvature_report(G, 0, h=2e-3))
    # without an offset the perturbed end is exactly CMC away from the annulus
    assert max(r["off_annulus"] for r in rep) < 1e-7
    assert np.log2(rep[0]["raw"] / rep[1]["raw"]) == pytest.approx(2.0, abs=0.3)
    assert max(r["coupled"] for r in rep) < 1e-7


def test_linearization_matches_error_derivative(problem):
    rng = np.random.default_rng(0)
    S, T = np.meshgrid(problem.s, problem.t, indexing="ij")
    phi = np.cos(2 * np.pi * S / problem.profile.s_tau) * np.exp(-T * T) * (1 + 0.1 * rng.normal())
    h = 1e-6
    zero = np.zeros_like(phi)
    fd = (problem.error(problem.zero_h(), h * phi) - problem.error(problem.zero_h(), -h * phi)) / (2 * h)
    lin = (problem.linearization() @ phi.ravel()).reshape(phi.shape)
    inner = (slice(1, -1), slice(1, -1))
    assert np.max(np.abs(fd - lin)[inner]) < 1e-6 * np.max(np.abs(lin))
    assert np.max(np.abs(problem.error(problem.zero_h(), zero))) > 0


def test_unknown_scheme(problem):
    with pytest.raises(InvalidParameter):
        end_corrections(0.6, 0.1, problem=problem, scheme="newton")


def test_tube_must_fit_in_strip():
    with pytest.raises(InvalidParameter):
        EndProblem(0.6, 0.00625)


def test_plain_fixed_point_does_not_contract():
    with pytest.raises(NoContraction):
        end_corrections(0.6, 0.05, scheme="picard", maxit=12)


def test_sweep_corrections_are_orthogonal(sweep06):
    for row in sweep06["rows"]:
        assert row["orthogonality"] < 1e-9
        assert row["periodic_residual"] < 1e-9


def test_tail_cancels_periodic_error(sweep06):
    # after one period past the cutoff the corrected residual is a rounding-level tail
    row = sweep06["rows"][1]
    assert row["residual_corrected"]["tail_weighted"] < 0.1 * row["residual_uncorrected"]["tail_weighted"]


def test_error_split_is_cubic(sweep06):
    # uncorrected error minus the two structural eps^2 terms, inside the tube, unweighted
    eps = [r["eps"] for r in sweep06["rows"]]
    split = [r["error_split"] for r in sweep06["rows"]]
    assert fit_order(eps, split) == pytest.approx(3.0, abs=0.3)


def test_contraction_after_second_sweep(sweep06):
    row = next(r for r in sweep06["rows"] if r["eps"] == 0.05)
    # drop the sweeps whose increment already sits at the rounding floor
    floor = max(100 * min(row["increments"]), 1e-10)
    active = [f for f, inc in zip(row["factors"], row["increments"][1:]) if inc > floor]
    assert max(active[1:]) < 0.5


def test_shift_is_lipschitz_in_neck_parameter(sweep06):
    # neck-size perturbations only change tau; nodes are matched by index
    eps = 0.05
    h0 = np.asarray(next(r for r in sweep06["rows"] if r["eps"] == eps)["h"])
    consts = []
    for aD in (0.02, 0.01):
        c = end_corrections(0.6, eps, pert=PerturbationVector(aD=aD))
        consts.append(np.max(np.abs(c.h.half() - h0)) / (eps ** 2 * aD))
    assert consts[0] == pytest.approx(consts[1], rel=0.1)


def test_weight_above_decay_rate_blows_up(problem):
    from cmcphase.assembly import corrected_approximation, residual
    corr = end_corrections(0.6, 0.1, problem=problem)
    approx = corrected_approximation(problem, corr)
    abar = np.sqrt(2 + 0.36)
    low = residual(approx, a=0.5 * abar).meta
    high = residual(approx, a=1.5 * abar).meta
    assert low["weighted"] < 10.0
    assert high["weighted"] > 1e3 * low["weighted"]


def test_nodal_set_offset_decays_at_least_quadratically(profile06):
    # psi0 is odd, so the leading eps^2 shift vanishes and the decay is faster
    # than eps^2; only the quadratic bound is asserted
    from scipy.optimize import brentq

    from cmcphase.assembly import build_u0
    from cmcphase.fermi import DelaunayGeometry, FermiChart
    from cmcphase.profiles import solve_profiles
    offsets = []
    for eps in (0.1, 0.05):
        ch = FermiChart(DelaunayGeometry(profile06), eps=eps)
        sol = solve_profiles(eps)
        s = np.linspace(0, profile06.s_tau / 2, 9)
        t = np.linspace(-1, 1, 4001)
        u0 = build_u0(ch, eps, sol, s, t).u0.interior()
        roots = [brentq(lambda x: np.interp(x, t, row), -1, 1) for row in u0]
        offsets.append(np.max(np.abs(roots)))
    assert offsets[0] / offsets[1] >= 4.0 * 0.85
