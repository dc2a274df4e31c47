"""Glued surfaces, the approximate solution u0 = U + eps^2 |A|^2 psi0 and end corrections.

Along an unduloid end everything is written in shifted Fermi coordinates
(s, theta, t) with z = eps (t + eps h(s)).  The nonlinear error of a function
u is

    N(u) = eps Delta u + eps^{-1} f(u) - ell_eps,

with the Fermi Laplacian whose z-dependent geometric terms are multiplied by
the level-4 tube cutoff (they are exact wherever eps|t| <= 4 delta).  The end
corrections (h, phi) solve N(u0 + phi) = 0 on the periodic strip by the
alternating fixed point

    phi <- Psi1( Pi (L phi - N(u0 + phi)) ),
    h   <- Psi2( L0 h + r^2 <N(u0 + phi), v'> / (eps^2 c_star) ),

where L is the strip operator and r = tau e^sigma.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .delaunay import delaunay_profile, embed, mean_curvature_numeric, surface_terms
from .errors import (InvalidParameter, NoContraction, OutsideTube, ParallelEnds,
                     PerturbationTooLarge)
from .fermi import DelaunayGeometry, FermiChart, shifted_laplacian, smoothstep, tube_cutoff
from .grids import WeightedGridFunction
from .jacobi import DEFAULT_ETA, PerturbationVector, linearized_field
from .linear import (ALPHA, StripFunction, SymmetricPeriodicFunction, apply_strip, half_nodes,
                     project_Z, solve_periodic, solve_strip, strip_grid, v_star_prime)
from .fd import trapezoid_weights
from .profiles import C_STAR, df, f, solve_profiles

DEFAULT_GAMMA = 1.0
DEFAULT_M = 48
DEFAULT_NT = 481


# ------------------------------------------------------------------ cutoffs

def step_jet(s, a, b):
    """Quintic smoothstep rising from 0 at s = a to 1 at s = b, with two derivatives."""
    L = b - a
    x = np.clip((np.asarray(s, float) - a) / L, 0.0, 1.0)
    v = smoothstep(x)
    d1 = 30.0 * x * x * (1.0 - x) ** 2 / L
    d2 = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x) / L ** 2
    return v, d1, d2


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class EndConfiguration:
    """One unduloid end: parameter, axis, offset, perturbation and cutoffs.

    ``v_decay`` is an optional callable (s, theta) -> normal offset of the
    base end from the exact unduloid (zero by default).
    """

    tau: float
    axis: tuple = (0.0, 0.0, 1.0)
    offset: tuple = (0.0, 0.0, 0.0)
    pert: PerturbationVector = field(default_factory=PerturbationVector)
    s0: float = 2.0
    v_decay: object = None

    def __post_init__(self):
        c = np.asarray(self.axis, float)
        n = np.linalg.norm(c)
        if not (0.0 < self.tau <= 1.0):
            raise InvalidParameter(f"tau must lie in (0, 1], got {self.tau}")
        if n == 0.0:
            raise InvalidParameter("end axis must be nonzero")
        object.__setattr__(self, "axis", tuple(c / n))
        object.__setattr__(self, "offset", tuple(float(x) for x in self.offset))
        if self.s0 <= 0.0:
            raise InvalidParameter("s0 must be positive")

    @property
    def xi_support(self):
        return (self.s0, self.s0 + 1.0)

    @property
    def zeta_support(self):
        return (self.s0 + 2.0, self.s0 + 3.0)

    def frame(self):
        """Orthonormal (e1, e2, c) with c the end axis."""
        c = np.asarray(self.axis)
        helper = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = helper - (helper @ c) * c
        e1 /= np.linalg.norm(e1)
        return np.stack([e1, np.cross(c, e1), c], axis=1)


def check_balancing(ends):
    """sum_j tau_j^2 c_j."""
    if not ends:
        raise InvalidParameter("need at least one end")
    return np.sum([e.tau ** 2 * np.asarray(e.axis) for e in ends], axis=0)


def balancing_warnings(ends, tol=1e-9):
    r = check_balancing(ends)
    if np.linalg.norm(r) > tol:
        return [{"kind": "balancing", "residual": r.tolist(), "norm": float(np.linalg.norm(r))}]
    return []


def check_axes(ends, tol=1e-9):
    for i, a in enumerate(ends):
        for b in ends[i + 1:]:
            if np.dot(a.axis, b.axis) > 1.0 - tol:
                raise ParallelEnds(f"ends with axes {a.axis} and {b.axis} are parallel")


# ----------------------------------------------------------------- gluing

@dataclass(frozen=True)
class GluedSurface:
    """Ends of Sigma(d) as charts (s, theta) -> R^3; the core is only meshed for k = 2."""

    ends: tuple
    profiles: tuple
    core_mesh: object = None

    def base_chart(self, j):
        return _end_chart(self.ends[j], self.profiles[j], with_pert=False)

    def chart(self, j):
        return _end_chart(self.ends[j], self.profiles[j], with_pert=True)


def _end_chart(end, profile, with_pert):
    """Y_j(d) = (1 - xi) Y_j + xi Z_j(d) with Y_j = X + v N and Z_j(d) = X(d) + v N(d)."""
    R = end.frame()
    b = np.asarray(end.offset)
    pert = end.pert if with_pert else None

    def chart(s, theta):
        s, theta = np.broadcast_arrays(np.asarray(s, float), np.asarray(theta, float))
        X, N = embed(profile, s, theta)
        v = 0.0 if end.v_decay is None else np.asarray(end.v_decay(s, theta))[..., None]
        Y = X + v * N
        if pert is not None and not pert.is_zero():
            Xd, Nd = embed(profile, s, theta, pert)
            xi = step_jet(s, *end.xi_support)[0][..., None]
            Y = (1.0 - xi) * Y + xi * (Xd + v * Nd)
        return Y @ R.T + b

    return chart


def build_glued_surface(ends, eta=DEFAULT_ETA, grid_step=1e-3):
    ends = tuple(ends)
    check_axes(ends)
    for e in ends:
        if e.pert.norm() >= eta:
            raise PerturbationTooLarge(f"|d| = {e.pert.norm():.3g} is not below eta = {eta}")
    profiles = tuple(delaunay_profile(e.tau, grid_step, tau_derivatives=e.pert.aD != 0.0)
                     for e in ends)
    core = None
    if len(ends) == 2 and ends[0].tau == ends[1].tau and np.dot(ends[0].axis, ends[1].axis) < -1 + 1e-12:
        core = {"kind": "delaunay", "tau": ends[0].tau}
    return GluedSurface(ends=ends, profiles=profiles, core_mesh=core)


def _jacobi_term(profile, end, s, theta, h=1e-3):
    """J_tau(xi Phi(d)) = r^{-2}(xi'' Phi + 2 xi' Phi_s), since Phi is a Jacobi field."""
    xi, d1, d2 = step_jet(s, *end.xi_support)
    ph = [linearized_field(profile, end.pert, s + k * h, theta) for k in (-2, -1, 0, 1, 2)]
    phs = (ph[0] - 8 * ph[1] + 8 * ph[3] - ph[4]) / (12 * h)
    r2 = surface_terms(profile, s)["r"] ** 2
    return (d2 * ph[2] + 2.0 * d1 * phs) / r2


def curvature_report(surface, j, n_s=120, n_theta=16, h=1e-2, a_weight=None, s_max=None):
    """Mean-curvature deviation of end j of Sigma(d) on s in [h*3, s0 + 3].

    Returns a dict with
      off_annulus  max |H(Sigma(d)) - H(Sigma)| outside (s0, s0 + 1)
      raw          max over the annulus of |H(Sigma(d)) - H(Sigma) - J(xi Phi(d))|
      coupled      max over the annulus of the part of H(Sigma(d)) - H(Sigma)
                   caused by the decaying offset v, i.e. after subtracting the
                   same difference computed for the exact unduloid end
      *_weighted   the same with the weight e^{a s}
    """
    end, profile = surface.ends[j], surface.profiles[j]
    s_max = end.s0 + 3.0 if s_max is None else s_max
    s = np.linspace(3 * h, s_max, n_s)
    th = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    S, TH = np.meshgrid(s, th, indexing="ij")
    def H(ch):
        # X_s x X_theta is the inward normal, for which H = 1
        return mean_curvature_numeric(ch, S, TH, h, normal_sign=1.0)

    H_d, H_0 = H(surface.chart(j)), H(surface.base_chart(j))
    bare = EndConfiguration(end.tau, end.axis, end.offset, end.pert, end.s0, None)
    Hb_d = H(_end_chart(bare, profile, True))
    Hb_0 = H(_end_chart(bare, profile, False))
    J = _jacobi_term(profile, end, S, TH)
    ann = (S > end.s0) & (S < end.s0 + 1.0)
    a = 0.5 * np.sqrt(2.0 + end.tau ** 2) if a_weight is None else a_weight
    w = np.exp(a * S)
    # an inward normal variation w changes H by J w
    raw = np.abs(H_d - H_0 - J)
    coupled = np.abs((H_d - H_0) - (Hb_d - Hb_0))
    off = np.abs(H_d - H_0)[~ann]
    return {"off_annulus": float(off.max()) if off.size else 0.0,
            "raw": float(raw[ann].max()), "coupled": float(coupled[ann].max()),
            "raw_weighted": float((raw * w)[ann].max()),
            "coupled_weighted": float((coupled * w)[ann].max()),
            "max_abs_H_minus_1": float(np.max(np.abs(H_d - 1.0))), "a": a}


# ------------------------------------------------------- end problem data

def end_geometry(profile, s):
    """|A|^2 with two s-derivatives, tr A^3 and r^2 along an unduloid.

    With E = exp(-2 sigma) the principal curvatures are (1 - E)/2 and (1 + E)/2.
    """
    tau = profile.tau
    sig = profile.sigma_at(s)
    ds = profile.sigma_at(s, 1)
    dds = -0.5 * tau * tau * np.sinh(2.0 * sig)
    E2 = np.exp(-4.0 * sig)
    A2 = 0.5 * (1.0 + E2)
    dA2 = -2.0 * ds * E2
    ddA2 = (-2.0 * dds + 8.0 * ds * ds) * E2
    E = np.exp(-2.0 * sig)
    trA3 = ((1.0 - E) / 2.0) ** 3 + ((1.0 + E) / 2.0) ** 3
    return {"A2": A2, "dA2": dA2, "ddA2": ddA2, "trA3": trA3,
            "r2": tau * tau * np.exp(2.0 * sig)}


@dataclass(frozen=True)
class ApproximateSolution:
    """u0 on a Fermi grid over an unduloid end, with optional corrections."""

    chart: FermiChart
    eps: float
    profile: object
    s: np.ndarray
    t: np.ndarray
    u0: WeightedGridFunction
    shift_h: object = None
    corrections: object = None


def build_u0(chart, eps, profile, s, t, gamma=DEFAULT_GAMMA):
    """u0(s, t) = U(t) + eps^2 |A(s)|^2 psi0(t) on the tensor grid (s, t)."""
    s = np.asarray(s, float)
    t = np.asarray(t, float)
    geo = end_geometry(chart.geometry.profile, s)
    vals = profile.U_at(t)[None, :] + eps ** 2 * np.outer(geo["A2"], profile.psi0_at(t))
    u0 = WeightedGridFunction(values=vals, axes=("s", "t"), coords={"s": s, "t": t},
                              a=0.0, gamma=gamma)
    return ApproximateSolution(chart=chart, eps=eps, profile=profile, s=s, t=t, u0=u0)


def _u0_jet(geo, prof, eps, t):
    U, dU, ddU = prof.U_jet(t)
    p, dp, ddp = prof.psi0_jet(t)
    e2 = eps * eps
    A2, dA2, ddA2 = (geo[k][:, None] for k in ("A2", "dA2", "ddA2"))
    return {"u": U + e2 * A2 * p, "u_t": dU + e2 * A2 * dp, "u_tt": ddU + e2 * A2 * ddp,
            "u_s": e2 * dA2 * p, "u_ss": e2 * ddA2 * p, "u_st": e2 * dA2 * dp}


def _phi_jet(phi, ds, dt, s_reflect=True):
    """Second-order jets; even reflection in s at both ends, zero beyond the t box."""
    if s_reflect:
        P = np.concatenate([phi[1:2], phi, phi[-2:-1]], axis=0)
    else:
        P = phi
    P = np.pad(P, ((0, 0), (1, 1)))
    c = P[1:-1, 1:-1]
    ps = (P[2:, 1:-1] - P[:-2, 1:-1]) / (2 * ds)
    pss = (P[2:, 1:-1] - 2 * c + P[:-2, 1:-1]) / ds ** 2
    pt = (P[1:-1, 2:] - P[1:-1, :-2]) / (2 * dt)
    ptt = (P[1:-1, 2:] - 2 * c + P[1:-1, :-2]) / dt ** 2
    pst = (P[2:, 2:] - P[2:, :-2] - P[:-2, 2:] + P[:-2, :-2]) / (4 * ds * dt)
    return {"u": c, "u_t": pt, "u_tt": ptt, "u_s": ps, "u_ss": pss, "u_st": pst}


def _nonlinear_error(F, eps, ell, hjet, jet, t_grid, cut):
    """eps Delta u + eps^{-1} f(u) - ell with the cut-off Fermi Laplacian."""
    z = np.zeros_like(jet["u"])
    ujet = {"t": t_grid, "u_t": jet["u_t"], "u_tt": jet["u_tt"],
            "u_i": np.stack([jet["u_s"], z], -1), "u_it": np.stack([jet["u_st"], z], -1),
            "u_ij": np.stack([np.stack([jet["u_ss"], z], -1), np.stack([z, z], -1)], -2)}
    lap = shifted_laplacian(F, eps, hjet, ujet, route="exact", cutoff=cut)
    return eps * lap + f(jet["u"]) / eps - ell


def _hjet(h_vals, h1, h2):
    z = np.zeros_like(h_vals)
    return (h_vals, np.stack([h1, z], -1),
            np.stack([np.stack([h2, z], -1), np.stack([z, z], -1)], -2))


@dataclass
class EndProblem:
    """Discretized periodic end problem for one (tau, eps)."""

    tau: float
    eps: float
    M: int = DEFAULT_M
    n_t: int = DEFAULT_NT
    T_strip: float = 12.0
    gamma: float = DEFAULT_GAMMA
    alpha: float = ALPHA
    grid_step: float = 1e-3

    def __post_init__(self):
        self.profile = delaunay_profile(self.tau, self.grid_step)
        self.chart = FermiChart(DelaunayGeometry(self.profile), eps=self.eps)
        self.delta = self.chart.delta
        if 5.0 * self.delta / self.eps >= self.T_strip:
            raise InvalidParameter(f"the tube reaches |t| = {5 * self.delta / self.eps:.3g}, "
                                   f"beyond the strip half-width {self.T_strip}")
        self.sol = solve_profiles(self.eps, 1.0)
        self.s = half_nodes(self.profile.s_tau, self.M)
        self.t = strip_grid(self.T_strip, self.n_t)
        self.ds = self.s[1] - self.s[0]
        self.dt = self.t[1] - self.t[0]
        S, T = np.meshgrid(self.s, self.t, indexing="ij")
        self.T = T
        self.F = self.chart.geometry.forms(S, np.zeros_like(S))
        self.geo = end_geometry(self.profile, self.s)
        self.cut4 = tube_cutoff(T, self.eps, self.delta, 4)
        self.cut3 = tube_cutoff(T, self.eps, self.delta, 3)
        self.u0 = _u0_jet(self.geo, self.sol, self.eps, self.t)
        self.vp = v_star_prime(self.t)
        self.wv = trapezoid_weights(len(self.t), self.dt) * self.vp

    def strip(self, values):
        return StripFunction.from_half(values, self.profile.s_tau, self.t, gamma=self.gamma,
                                       eps=self.eps)

    def error(self, h, phi_half):
        """N(u0 + phi) on the half-period grid for shift h (SymmetricPeriodicFunction)."""
        hv, h1, h2 = (h.at(self.s, k)[:, None] * np.ones_like(self.T) for k in (0, 1, 2))
        z = self.eps * (self.T + self.eps * hv)
        inside = self.cut4 > 0
        if np.any(np.abs(z[inside]) >= self.chart.half_width):
            raise OutsideTube(f"shifted layer reaches |z| = {np.max(np.abs(z[inside])):.4g}")
        pj = _phi_jet(phi_half, self.ds, self.dt)
        jet = {k: self.u0[k] + pj[k] for k in self.u0}
        return _nonlinear_error(self.F, self.eps, self.sol.ell_eps, _hjet(hv, h1, h2), jet,
                                self.T, self.cut4)

    def zero_h(self):
        return SymmetricPeriodicFunction.from_half(np.zeros(self.M + 1), self.profile.s_tau)

    def linearization(self):
        """Sparse matrix of phi -> dN(u0)[phi] at h = 0, built with the stencils of the error."""
        if getattr(self, "_lin", None) is not None:
            return self._lin
        ns, nt = self.M + 1, len(self.t)
        z = np.zeros_like(self.T)
        hj = _hjet(z, z, z)
        names = ("u_t", "u_tt", "u_s", "u_ss", "u_st")
        coef = {}
        for name in names:
            unit = {k: (np.ones_like(z) if k == name else z) for k in names}
            unit["u"] = z
            coef[name] = _nonlinear_error(self.F, self.eps, 0.0, hj, unit, self.T, self.cut4)
        Ds1 = sp.diags([-np.ones(ns - 1), np.ones(ns - 1)], [-1, 1]).tolil() / (2 * self.ds)
        Ds2 = sp.diags([np.ones(ns - 1), -2.0 * np.ones(ns), np.ones(ns - 1)], [-1, 0, 1]).tolil()
        Ds1[0, 1] = Ds1[-1, -2] = 0.0
        Ds2[0, 1] = Ds2[-1, -2] = 2.0
        Ds2 = Ds2 / self.ds ** 2
        Dt1 = sp.diags([-np.ones(nt - 1), np.ones(nt - 1)], [-1, 1]) / (2 * self.dt)
        Dt2 = sp.diags([np.ones(nt - 1), -2.0 * np.ones(nt), np.ones(nt - 1)], [-1, 0, 1]) / self.dt ** 2
        It, Is = sp.identity(nt), sp.identity(ns)
        blocks = {"u_t": sp.kron(Is, Dt1), "u_tt": sp.kron(Is, Dt2), "u_s": sp.kron(Ds1, It),
                  "u_ss": sp.kron(Ds2, It), "u_st": sp.kron(Ds1, Dt1)}
        L = sp.diags(df(self.u0["u"]).ravel() / self.eps)
        for name in names:
            L = L + sp.diags(coef[name].ravel()) @ blocks[name]
        self._lin = L.tocsr()
        return self._lin

    def chord_system(self):
        """LU of the bordered linearization: Dirichlet rows at t = +-T, one multiplier per line."""
        if getattr(self, "_chord", None) is not None:
            return self._chord
        ns, nt = self.M + 1, len(self.t)
        L = self.linearization().tolil()
        edge = np.zeros(nt, bool)
        edge[[0, -1]] = True
        for r in np.flatnonzero(np.tile(edge, ns)):
            L.rows[r] = [r]
            L.data[r] = [1.0]
        B = sp.kron(sp.identity(ns), sp.csr_matrix((self.vp * ~edge)[:, None]))
        C = sp.kron(sp.identity(ns), sp.csr_matrix(self.wv[None, :]))
        K = sp.bmat([[L.tocsr(), B], [C, None]], format="csc")
        self._chord = spla.splu(K)
        return self._chord

    def solve_chord(self, g_half):
        """psi with dN(u0)[psi] = g + c(s) v', psi(s, +-T) = 0 and <psi, v'> = 0."""
        ns, nt = self.M + 1, len(self.t)
        rhs = g_half.copy()
        rhs[:, [0, -1]] = 0.0
        x = self.chord_system().solve(np.concatenate([rhs.ravel(), np.zeros(ns)]))
        return x[: ns * nt].reshape(ns, nt)


def structural_terms(problem):
    """The two O(eps^2) terms of the uncorrected error on an exact unduloid with h = 0:
    -eps^2 tr A^3 t^2 U' + eps^2 lam |A|^2 U'."""
    e2 = problem.eps ** 2
    dU = problem.sol.U_at(problem.t, 1)
    return e2 * (-np.outer(problem.geo["trA3"], problem.t ** 2 * dU)
                 + problem.sol.lam * np.outer(problem.geo["A2"], dU))


@dataclass(frozen=True)
class EndCorrections:
    h: SymmetricPeriodicFunction
    phi: StripFunction
    diagnostics: dict


def end_corrections(tau, eps, pert=None, tol=1e-10, maxit=60, M=DEFAULT_M, n_t=DEFAULT_NT,
                    gamma=DEFAULT_GAMMA, alpha=ALPHA, noise_sweeps=4, problem=None,
                    scheme="chord"):
    """Alternating fixed point for the periodic corrections (h, phi) along an end.

    The perturbation enters through the Delaunay parameter of the end,
    tau(eps_neck + eps^2 aD); rigid motions do not change the intrinsic problem.
    Stops when ||dh|| + eps^(alpha-3) ||dphi||_gamma < tol, or when the
    increment has stopped decreasing for ``noise_sweeps`` sweeps at a level
    below 1e-6 (rounding floor; reported as such).

    ``scheme="picard"`` updates phi with the flat strip inverse Psi1;
    ``scheme="chord"`` (default) inverts the linearization of N at (u0, h = 0)
    instead, under the same orthogonality constraint.  Both have the same
    fixed points.  Near a thin neck eps|A| is not small and the Picard map
    stops contracting, which the chord map repairs.
    """
    if scheme not in ("chord", "picard"):
        raise InvalidParameter(f"unknown scheme {scheme!r}")
    if pert is not None and pert.aD != 0.0:
        from .delaunay import neck_size, tau_from_neck
        tau = float(tau_from_neck(neck_size(tau) + eps * eps * pert.aD))
    P = problem if problem is not None else EndProblem(tau, eps, M=M, n_t=n_t, gamma=gamma,
                                                       alpha=alpha)
    h = P.zero_h()
    phi = np.zeros((P.M + 1, len(P.t)))
    r2 = P.geo["r2"]
    incs, factors, orth = [], [], []
    N0 = P.error(h, phi)
    trace = {"periodic_residual_initial": float(np.max(np.abs(N0 * P.cut3)))}
    status = "maxit"
    best = np.inf
    stall = 0
    for k in range(maxit):
        N = P.error(h, phi)
        if scheme == "picard":
            Lphi = apply_strip(P.profile, P.strip(phi)).half().copy()
            Lphi[:, [0, -1]] = 0.0
            rhs = project_Z(P.strip(Lphi - N))
            phi_new = solve_strip(P.profile, eps, gamma, rhs, alpha=alpha).half()
        else:
            Lphi = (P.linearization() @ phi.ravel()).reshape(phi.shape)
            Lphi[:, [0, -1]] = 0.0
            phi_new = P.solve_chord(project_Z(P.strip(Lphi - N)).half())
        N1 = P.error(h, phi_new)
        F1 = (apply_periodic_half(P, h) + r2 * (N1 @ P.wv) / (eps ** 2 * C_STAR))
        h_new = solve_periodic(P.profile, SymmetricPeriodicFunction.from_half(F1, P.profile.s_tau))
        dphi = float(np.max(np.abs((phi_new - phi) * np.cosh(P.t) ** gamma)))
        dh = float(np.max(np.abs(h_new.half() - h.half())))
        inc = dh + eps ** (alpha - 3.0) * dphi
        if incs:
            factors.append(inc / incs[-1] if incs[-1] > 0 else 0.0)
        incs.append(inc)
        h, phi = h_new, phi_new
        orth.append(float(np.max(np.abs(phi @ P.wv)) / max(np.max(np.abs(phi)), 1e-300)))
        if inc < tol:
            status = "converged"
            break
        if inc < best * 0.9:
            best, stall = inc, 0
        else:
            stall += 1
        if stall >= noise_sweeps and best < 1e-6:
            status = "rounding_floor"
            break
        if len(factors) >= 3 and min(factors[-3:]) >= 1.0 and best >= 1e-6:
            raise NoContraction(f"increments stopped contracting (factor {factors[-1]:.3g})",
                                factor=factors[-1], last_iterate=(h, phi))
    else:
        if best >= 1e-6:
            raise NoContraction("fixed point did not converge within maxit",
                                factor=factors[-1] if factors else None, last_iterate=(h, phi))
    N = P.error(h, phi)
    phis = P.strip(phi)
    # contraction measured before the rounding floor dominates
    floor = max(min(incs) * 100.0, tol)
    active = [fct for fct, i in zip(factors, incs[1:]) if i > floor]
    diag = dict(trace, status=status, sweeps=len(incs), increments=incs, factors=factors,
                max_factor=float(max(active[1:] if len(active) > 1 else active or [0.0])),
                phi_weighted=phis.weighted_sup(gamma), phi_sup=float(np.max(np.abs(phi))),
                h_sup=h.sup(), orthogonality=orth,
                periodic_residual_final=float(np.max(np.abs(N * P.cut3))),
                periodic_residual_full=float(np.max(np.abs(N))), tau=P.tau, eps=eps,
                delta=P.delta, scheme=scheme)
    return EndCorrections(h=h, phi=phis, diagnostics=diag)


def corrected_approximation(problem, corr, s0=2.0, periods=1, gamma=DEFAULT_GAMMA):
    """u0 + zeta phi with shift zeta h on s in [0, s0 + 3 + periods * s_tau].

    The grid reuses the spacing of the correction grid so that phi is
    sampled at its own nodes; phi is stored with one ghost layer
    (periodic extension in s, zero beyond the t box).
    """
    P = problem
    n2 = 2 * P.M
    K = int(np.ceil((s0 + 3.0 + periods * P.profile.s_tau) / P.ds))
    s = np.arange(K + 1) * P.ds
    idx = np.arange(-1, K + 2) % n2
    full = corr.phi.values
    ghost = np.pad(full[idx], ((0, 0), (1, 1)))
    phi = WeightedGridFunction(values=ghost, axes=("s", "t"), coords={"s": s, "t": P.t},
                               gamma=gamma, ghost=1, periodic=())
    approx = build_u0(P.chart, P.eps, P.sol, s, P.t, gamma)
    from dataclasses import replace
    return replace(approx, shift_h=corr.h,
                   corrections={"phi": phi, "zeta": (s0 + 2.0, s0 + 3.0)})


def _ghost_jet(g):
    v = g.values
    ds, dt = g.step("s"), g.step("t")
    c = v[1:-1, 1:-1]
    return {"u": c,
            "u_s": (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * ds),
            "u_ss": (v[2:, 1:-1] - 2 * c + v[:-2, 1:-1]) / ds ** 2,
            "u_t": (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * dt),
            "u_tt": (v[1:-1, 2:] - 2 * c + v[1:-1, :-2]) / dt ** 2,
            "u_st": (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * ds * dt)}


def residual(approx, a=None, corrected=True):
    """N(u) = eps Delta u + eps^{-1} f(u) - ell_eps on the grid of ``approx``.

    The value is a WeightedGridFunction with weight exp(a s) cosh(t)^gamma,
    a = sqrt(2 + tau^2)/2 by default.  ``meta`` holds the sup norm, the norms
    of the residual times the level-3 tube cutoff (plain, weighted, weighted
    Hoelder) and the weighted norm over the last period alone.
    """
    ch, eps, prof = approx.chart, approx.eps, approx.profile
    s, t = approx.s, approx.t
    tau = ch.geometry.profile.tau
    if a is None:
        a = 0.5 * np.sqrt(2.0 + tau * tau)
    S, T = np.meshgrid(s, t, indexing="ij")
    geo = end_geometry(ch.geometry.profile, s)
    jet = _u0_jet(geo, prof, eps, t)
    zero = np.zeros_like(T)
    hv = h1 = h2 = zero
    use = corrected and approx.corrections is not None
    if use:
        z0, z1, z2 = (c[:, None] for c in step_jet(s, *approx.corrections["zeta"]))
        p = _ghost_jet(approx.corrections["phi"])
        pj = {"u": z0 * p["u"], "u_t": z0 * p["u_t"], "u_tt": z0 * p["u_tt"],
              "u_s": z1 * p["u"] + z0 * p["u_s"],
              "u_ss": z2 * p["u"] + 2 * z1 * p["u_s"] + z0 * p["u_ss"],
              "u_st": z1 * p["u_t"] + z0 * p["u_st"]}
        jet = {k: jet[k] + pj[k] for k in jet}
        h = [approx.shift_h.at(s, k)[:, None] for k in range(3)]
        hv = z0 * h[0] + zero
        h1 = z1 * h[0] + z0 * h[1] + zero
        h2 = z2 * h[0] + 2 * z1 * h[1] + z0 * h[2] + zero
    delta = ch.delta
    cut4 = tube_cutoff(T, eps, delta, 4)
    cut3 = tube_cutoff(T, eps, delta, 3)
    z = eps * (T + eps * hv)
    if np.any(np.abs(z[cut4 > 0]) >= ch.half_width):
        raise OutsideTube(f"shifted layer reaches |z| = {np.max(np.abs(z[cut4 > 0])):.4g}")
    F = ch.geometry.forms(S, zero)
    N = _nonlinear_error(F, eps, prof.ell_eps, _hjet(hv, h1, h2), jet, T, cut4)
    gamma = approx.u0.gamma
    out = WeightedGridFunction(values=N, axes=("s", "t"), coords={"s": s, "t": t}, a=a,
                               gamma=gamma)
    tube = out.with_values(N * cut3)
    last = s >= s[-1] - ch.geometry.profile.s_tau
    tail = WeightedGridFunction(values=(N * cut3)[last], axes=("s", "t"),
                                coords={"s": s[last], "t": t}, a=a, gamma=gamma)
    meta = {"sup": float(np.max(np.abs(N))), "tube_sup": float(np.max(np.abs(tube.values))),
            "weighted": tube.weighted_sup(), "weighted_holder": tube.weighted_holder(ALPHA),
            "tail_weighted": tail.weighted_sup(), "a": float(a), "corrected": use}
    return out.with_values(N, meta=meta)


def apply_periodic_half(P, h):
    from .linear import periodic_operator
    return periodic_operator(P.profile, P.M) @ h.half()
