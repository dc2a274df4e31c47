"""Delaunay unduloids: meridian profile, isothermal coordinates and surface frames.

Conventions
-----------
The unduloid of parameter ``tau`` in (0, 1] is the surface of revolution about
the x3-axis with radius ``rho(x3)``.  In isothermal coordinates ``(s, theta)``
it is parametrized by ``X(s, theta) = (r cos theta, r sin theta, k(s))`` with
``r = tau * exp(sigma(s))``.  The unit normal points toward the axis and the
mean curvature is the sum of the principal curvatures, so ``H = 1``.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import InvalidParameter, MissingTauDerivatives, NonConvergence, StencilOutOfDomain
from .fd import D1_C4, D2_C4

ODE_RTOL = 1e-12
ODE_ATOL = 1e-14
CYLINDER_PERIOD = 2.0 * np.pi


def neck_size(tau):
    """Neck radius 1 - sqrt(1 - tau^2)."""
    return 1.0 - np.sqrt(1.0 - tau * tau)


def tau_from_neck(eps_neck):
    return np.sqrt(1.0 - (1.0 - eps_neck) ** 2)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TauDerivatives:
    """Tables of d(sigma)/d(tau) and d(k)/d(tau) at fixed s, for s >= 0.

    sigma is even in s and k is odd, so negative s is handled by symmetry.
    """

    delta: float
    s: np.ndarray
    dsigma: np.ndarray
    dk: np.ndarray
    _sp_sigma: CubicSpline = field(repr=False, compare=False)
    _sp_k: CubicSpline = field(repr=False, compare=False)

    def _check(self, s):
        if np.any(np.abs(s) > self.s[-1] + 1e-12):
            raise MissingTauDerivatives(
                f"tau-derivative tables cover |s| <= {self.s[-1]:.6g}; rebuild with more periods")

    def dsigma_at(self, s, nu=0):
        s = np.asarray(s, dtype=float)
        self._check(s)
        sign = np.sign(s) if nu % 2 else 1.0
        return sign * self._sp_sigma(np.abs(s), nu)

    def dk_at(self, s, nu=0):
        s = np.asarray(s, dtype=float)
        self._check(s)
        sign = 1.0 if nu % 2 else np.sign(s)
        return sign * self._sp_k(np.abs(s), nu)


@dataclass(frozen=True)
class DelaunayProfile:
    """Tabulated meridian and isothermal data of one unduloid.

    ``x``/``rho``/``drho`` sample one meridian period ``[0, T_tau]``;
    ``s``/``sigma``/``dsigma``/``k`` sample one isothermal period
    ``[0, s_tau]`` with ``k(s_tau) = 2 T_tau``.  Off-node values come from
    periodic cubic splines.
    """

    tau: float
    eps_neck: float
    T_tau: float
    grid_step: float
    x: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    degenerate: bool = False
    s_tau: float | None = None
    s: np.ndarray | None = None
    sigma: np.ndarray | None = None
    dsigma: np.ndarray | None = None
    k: np.ndarray | None = None
    tau_derivs: TauDerivatives | None = None
    _sp_rho: CubicSpline | None = field(default=None, repr=False, compare=False)
    _sp_sigma: CubicSpline | None = field(default=None, repr=False, compare=False)
    _sp_q: CubicSpline | None = field(default=None, repr=False, compare=False)

    @property
    def has_isothermal(self):
        return self.s is not None

    @property
    def k_slope(self):
        """Mean growth rate of k, i.e. k(s + s_tau) - k(s) = k_slope * s_tau."""
        return 2.0 * self.T_tau / self.s_tau

    def rho_at(self, x, nu=0):
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.ones_like(x) if nu == 0 else np.zeros_like(x)
        return self._sp_rho(np.mod(x, self.T_tau), nu)

    def sigma_at(self, s, nu=0):
        s = np.asarray(s, dtype=float)
        self._need_iso()
        if self.degenerate:
            return np.zeros_like(s)
        return self._sp_sigma(np.mod(s, self.s_tau), nu)

    def k_at(self, s, nu=0):
        s = np.asarray(s, dtype=float)
        self._need_iso()
        if self.degenerate:
            if nu == 0:
                return s.copy()
            return np.ones_like(s) if nu == 1 else np.zeros_like(s)
        q = self._sp_q(np.mod(s, self.s_tau), nu)
        if nu == 0:
            return q + self.k_slope * s
        if nu == 1:
            return q + self.k_slope
        return q

    def radius(self, s):
        return self.tau * np.exp(self.sigma_at(s))

    def _need_iso(self):
        if self.s is None:
            raise InvalidParameter("isothermal part not built; call build_isothermal first")


def _meridian_rhs(x, y):
    rho, p = float(y[0]), float(y[1])
    w = 1.0 + p * p
    return [p, w / rho - w ** 1.5]


def solve_meridian(tau, grid_step=1e-3, horizon=50.0, rtol=ODE_RTOL, atol=ODE_ATOL):
    """Integrate the meridian ODE from the neck and detect its period.

    The half period is located as the first maximum of rho (rho' = 0 with
    rho'' < 0); the full period is the subsequent return of rho' to zero from
    below, refined by bracketing root finding to 1e-12.
    """
    tau = float(tau)
    if not (0.0 < tau <= 1.0) or not np.isfinite(tau):
        raise InvalidParameter(f"tau must lie in (0, 1], got {tau!r}")
    if grid_step <= 0:
        raise InvalidParameter("grid_step must be positive")
    eps_neck = float(neck_size(tau))
    if tau == 1.0:
        T = CYLINDER_PERIOD / 2.0
        n = max(int(round(T / grid_step)), 4)
        x = np.linspace(0.0, T, n + 1)
        return DelaunayProfile(tau=1.0, eps_neck=1.0, T_tau=T, grid_step=T / n, x=_readonly(x),
                               rho=_readonly(np.ones_like(x)), drho=_readonly(np.zeros_like(x)),
                               degenerate=True)

    def at_max(x, y):
        return y[1]
    at_max.terminal = True
    at_max.direction = -1

    y0 = [eps_neck, 0.0]
    first = solve_ivp(_meridian_rhs, (0.0, horizon), y0, method="DOP853", rtol=rtol, atol=atol,
                      events=at_max, dense_output=True)
    if first.status != 1 or len(first.t_events[0]) == 0:
        raise NonConvergence(f"no maximum of the meridian found before x3 = {horizon}")
    x_half = first.t_events[0][0]
    y_half = first.y_events[0][0]

    def at_return(x, y):
        return y[1]
    at_return.terminal = True
    at_return.direction = 1

    second = solve_ivp(_meridian_rhs, (x_half, horizon), y_half, method="DOP853", rtol=rtol,
                       atol=atol, events=at_return, dense_output=True)
    if second.status != 1 or len(second.t_events[0]) == 0:
        raise NonConvergence(f"meridian did not return to the neck before x3 = {horizon}")
    te = second.t_events[0][0]
    lo, hi = max(x_half, te - 1e-3), min(horizon, te + 1e-3)
    T = brentq(lambda t: second.sol(t)[1], lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)
    rho_T = second.sol(T)[0]
    if abs(rho_T - eps_neck) > 1e-8:
        raise NonConvergence(f"meridian return mismatch |rho(T) - eps| = {abs(rho_T - eps_neck):.3e}")

    n = max(int(round(T / grid_step)), 8)
    x, y = _sample_ode(_meridian_rhs, y0, T, n, rtol, atol)
    y[:, -1] = y0
    sp = CubicSpline(x, y[0], bc_type="periodic")
    return DelaunayProfile(tau=tau, eps_neck=eps_neck, T_tau=float(T), grid_step=T / n,
                           x=_readonly(x), rho=_readonly(y[0]), drho=_readonly(y[1]), _sp_rho=sp)


def _sample_ode(rhs, y0, t_end, n, rtol, atol):
    """Integrate on [0, t_end] with the step capped at the node spacing t_end/n.

    At these step sizes the 8th-order error estimate is far below tolerance,
    so every accepted step lands on a node.  Nodal values then carry no
    dense-output interpolation noise, which matters because the splines built
    on them are differentiated twice.
    """
    h = t_end / n
    t = np.linspace(0.0, t_end, n + 1)
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853", rtol=rtol, atol=atol, t_eval=t,
                    first_step=h, max_step=h * (1.0 + 1e-12))
    if sol.status != 0:
        raise NonConvergence(f"ODE sampling failed: {sol.message}")
    return t, sol.y


def _iso_rhs(tau):
    t2 = tau * tau

    def rhs(s, y):
        sig = float(y[0])
        return [y[1], -0.5 * t2 * math.sinh(2.0 * sig), 0.5 * t2 * (1.0 + math.exp(2.0 * sig))]
    return rhs


def _iso_initial(tau):
    return [np.log(neck_size(tau) / tau), 0.0, 0.0]


def build_isothermal(profile, grid_step=None, rtol=ODE_RTOL, atol=ODE_ATOL):
    """Add sigma and k to a meridian profile.

    sigma obeys sigma'' = -(tau^2/2) sinh(2 sigma), which follows from
    tau e^sigma = rho(k) and k' = (tau^2/2)(1 + e^{2 sigma}); the period
    s_tau is fixed by k(s_tau) = 2 T_tau.
    """
    tau = profile.tau
    h = profile.grid_step if grid_step is None else grid_step
    if profile.degenerate:
        s_tau = 2.0 * profile.T_tau
        n = max(int(round(s_tau / h)), 4)
        s = np.linspace(0.0, s_tau, n + 1)
        zeros = np.zeros_like(s)
        return _replace(profile, s_tau=s_tau, s=_readonly(s), sigma=_readonly(zeros),
                        dsigma=_readonly(zeros), k=_readonly(s))
    target = 2.0 * profile.T_tau

    def reach(s, y):
        return y[2] - target
    reach.terminal = True
    reach.direction = 1

    sol = solve_ivp(_iso_rhs(tau), (0.0, 20.0 * target + 50.0), _iso_initial(tau), method="DOP853",
                    rtol=rtol, atol=atol, events=reach, dense_output=True)
    if sol.status != 1:
        raise NonConvergence("isothermal integration did not reach k = 2 T_tau")
    te = sol.t_events[0][0]
    # the dense output extrapolates the last step, so the bracket may pass the event
    s_tau = brentq(lambda t: sol.sol(t)[2] - target, te - 1e-3, te + 1e-3,
                   xtol=1e-13, rtol=4 * np.finfo(float).eps)
    n = max(int(round(s_tau / h)), 8)
    s, y = _sample_ode(_iso_rhs(tau), _iso_initial(tau), s_tau, n, rtol, atol)
    y0 = _iso_initial(tau)
    y[0, -1], y[1, -1], y[2, -1] = y0[0], y0[1], target
    q = y[2] - (target / s_tau) * s
    q[-1] = q[0]
    return _replace(profile, s_tau=float(s_tau), s=_readonly(s), sigma=_readonly(y[0]),
                    dsigma=_readonly(y[1]), k=_readonly(y[2]),
                    _sp_sigma=CubicSpline(s, y[0], bc_type="periodic"),
                    _sp_q=CubicSpline(s, q, bc_type="periodic"))


def _replace(profile, **kw):
    from dataclasses import replace
    return replace(profile, **kw)


def _stacked_iso_rhs(taus):
    t2 = np.asarray(taus, dtype=float) ** 2

    def rhs(s, y):
        y = y.reshape(-1, 3)
        e2 = np.exp(2.0 * y[:, 0])
        out = np.empty_like(y)
        out[:, 0] = y[:, 1]
        out[:, 1] = -0.25 * t2 * (e2 - 1.0 / e2)
        out[:, 2] = 0.5 * t2 * (1.0 + e2)
        return out.ravel()
    return rhs


def build_tau_derivatives(profile, delta=1e-4, periods=3):
    """Derivatives of sigma and k in tau at fixed s over s in [0, periods*s_tau].

    Five-point central differences with step delta: the neighbouring
    unduloids at tau +- delta, tau +- 2 delta are integrated as one stacked
    system so all share the same steps and the difference carries no
    step-selection noise.  The second-order stencil leaves an O(delta^2)
    error that grows secularly in s and is visible in Jacobi residuals.
    """
    tau = profile.tau
    if profile.degenerate or tau + 2 * delta >= 1.0 or tau - 2 * delta <= 0.0:
        raise InvalidParameter(f"tau +- 2 delta must stay inside (0, 1); tau={tau}, delta={delta}")
    profile._need_iso()
    offsets = np.array([-2.0, -1.0, 1.0, 2.0])
    weights = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * delta)
    taus = tau + delta * offsets
    y0 = np.concatenate([_iso_initial(t) for t in taus])
    s_max = periods * profile.s_tau
    n = int(round(s_max / (profile.s[1] - profile.s[0])))
    s, y = _sample_ode(_stacked_iso_rhs(taus), y0, s_max, n, ODE_RTOL, ODE_ATOL)
    y = y.reshape(len(taus), 3, -1)
    dsig = np.tensordot(weights, y[:, 0], axes=1)
    dk = np.tensordot(weights, y[:, 2], axes=1)
    # even/odd symmetry fixes the end conditions at s = 0
    tab = TauDerivatives(delta=delta, s=_readonly(s), dsigma=_readonly(dsig), dk=_readonly(dk),
                         _sp_sigma=CubicSpline(s, dsig, bc_type=((1, 0.0), "not-a-knot")),
                         _sp_k=CubicSpline(s, dk, bc_type=((2, 0.0), "not-a-knot")))
    return _replace(profile, tau_derivs=tab)


@lru_cache(maxsize=64)
def delaunay_profile(tau, grid_step=1e-3, tau_derivatives=False, periods=3):
    """Meridian plus isothermal profile; cached because profiles are immutable."""
    p = build_isothermal(solve_meridian(tau, grid_step))
    if tau_derivatives:
        p = build_tau_derivatives(p, periods=periods)
    return p


# ---------------------------------------------------------------- geometry

def surface_terms(profile, s):
    """Closed-form intrinsic and extrinsic quantities along s.

    Returns a dict with r, sigma', sigma'', k', the principal curvatures
    kappa_s, kappa_theta (inward normal) and H, |A|^2, tr A^3.
    """
    s = np.asarray(s, dtype=float)
    sig = profile.sigma_at(s)
    d1 = profile.sigma_at(s, 1)
    d2 = profile.sigma_at(s, 2)
    r = profile.tau * np.exp(sig)
    root = np.sqrt(1.0 - d1 * d1)
    a_ss = -r * d2 / root
    a_tt = r * root
    k1 = a_ss / r ** 2
    k2 = a_tt / r ** 2
    return {"sigma": sig, "dsigma": d1, "d2sigma": d2, "r": r, "root": root,
            "A_ss": a_ss, "A_tt": a_tt, "kappa_s": k1, "kappa_t": k2,
            "H": k1 + k2, "A2": k1 * k1 + k2 * k2, "A3": k1 ** 3 + k2 ** 3}


@dataclass(frozen=True)
class SurfaceFrame:
    point: np.ndarray
    normal: np.ndarray
    metric: np.ndarray
    sff: np.ndarray
    mean_curvature: float
    norm_sff_sq: float
    tr_A3: float


def rotation_matrix(aR):
    """R_{aR1} R_{aR2}: tilt of the x3-axis toward x1, then toward x2."""
    c1, s1 = np.cos(aR[0]), np.sin(aR[0])
    c2, s2 = np.cos(aR[1]), np.sin(aR[1])
    r1 = np.array([[c1, 0.0, s1], [0.0, 1.0, 0.0], [-s1, 0.0, c1]])
    r2 = np.array([[1.0, 0.0, 0.0], [0.0, c2, -s2], [0.0, s2, c2]])
    return r1 @ r2


def perturbed_profile(profile, aD):
    """Profile with neck size shifted by aD (the Delaunay-parameter direction)."""
    if aD == 0.0:
        return profile
    eps_new = profile.eps_neck + aD
    if not (0.0 < eps_new <= 1.0):
        raise InvalidParameter(f"perturbed neck size {eps_new} leaves (0, 1]")
    return delaunay_profile(float(tau_from_neck(eps_new)), profile.grid_step)


def _pert_parts(pert):
    if pert is None:
        return np.zeros(3), np.zeros(2), 0.0
    return np.asarray(pert.aT, float), np.asarray(pert.aR, float), float(pert.aD)


def embed(profile, s, theta, pert=None):
    """Points and inward normals of the (possibly perturbed) unduloid.

    Arrays s and theta broadcast; output has a trailing axis of length 3.
    """
    aT, aR, aD = _pert_parts(pert)
    prof = perturbed_profile(profile, aD)
    s, theta = np.broadcast_arrays(np.asarray(s, float), np.asarray(theta, float))
    g = surface_terms(prof, s)
    c, sn = np.cos(theta), np.sin(theta)
    X = np.stack([g["r"] * c, g["r"] * sn, prof.k_at(s)], axis=-1)
    N = np.stack([-g["root"] * c, -g["root"] * sn, g["dsigma"]], axis=-1)
    if np.any(aR != 0.0):
        R = rotation_matrix(aR)
        X = X @ R.T
        N = N @ R.T
    return X + aT, N


def frame_at(profile, pert, s, theta):
    """Surface frame of D_tau(pert) at one parameter point (s, theta)."""
    aT, aR, aD = _pert_parts(pert)
    prof = perturbed_profile(profile, aD)
    X, N = embed(profile, s, theta, pert)
    g = surface_terms(prof, float(s))
    r2 = float(g["r"]) ** 2
    metric = np.diag([r2, r2])
    sff = np.diag([float(g["A_ss"]), float(g["A_tt"])])
    return SurfaceFrame(point=X, normal=N, metric=metric, sff=sff,
                        mean_curvature=float(np.trace(np.linalg.solve(metric, sff))),
                        norm_sff_sq=float(g["A2"]), tr_A3=float(g["A3"]))


def chart(profile, pert=None):
    """Callable (s, theta) -> points of D_tau(pert), for numerical checks and export."""
    return lambda s, theta: embed(profile, s, theta, pert)[0]


def mean_curvature_numeric(chart_fn, u, v, h, order=4, normal_sign=1.0, domain=None,
                           return_forms=False):
    """Mean curvature of an arbitrary chart from finite-difference fundamental forms.

    The normal is ``normal_sign * X_u x X_v / |X_u x X_v|`` and H is the trace
    of the shape operator with respect to it.  ``order`` selects 3-point (2)
    or 5-point (4) centered stencils.  ``domain`` is ((u0, u1), (v0, v1)).
    """
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    if order == 4:
        offs = np.arange(-2, 3)
        w1, w2 = D1_C4, D2_C4
    elif order == 2:
        offs = np.arange(-1, 2)
        w1, w2 = np.array([-0.5, 0.0, 0.5]), np.array([1.0, -2.0, 1.0])
    else:
        raise ValueError("order must be 2 or 4")
    reach = offs[-1] * h
    if domain is not None:
        (u0, u1), (v0, v1) = domain
        if (np.any(u - reach < u0) or np.any(u + reach > u1) or np.any(v - reach < v0)
                or np.any(v + reach > v1)):
            raise StencilOutOfDomain("finite-difference stencil leaves the chart domain")
    du = offs[:, None] * h
    dv = offs[None, :] * h
    pts = chart_fn(u[..., None, None] + du, v[..., None, None] + dv)
    c = len(offs) // 2
    Xu = np.einsum("i,...ik->...k", w1, pts[..., :, c, :]) / h
    Xv = np.einsum("j,...jk->...k", w1, pts[..., c, :, :]) / h
    Xuu = np.einsum("i,...ik->...k", w2, pts[..., :, c, :]) / h ** 2
    Xvv = np.einsum("j,...jk->...k", w2, pts[..., c, :, :]) / h ** 2
    Xuv = np.einsum("i,j,...ijk->...k", w1, w1, pts) / h ** 2
    n = np.cross(Xu, Xv)
    n = normal_sign * n / np.sqrt(np.sum(n * n, axis=-1))[..., None]
    E = np.sum(Xu * Xu, -1)
    F = np.sum(Xu * Xv, -1)
    G = np.sum(Xv * Xv, -1)
    L = np.sum(Xuu * n, -1)
    M = np.sum(Xuv * n, -1)
    Nn = np.sum(Xvv * n, -1)
    H = (E * Nn - 2.0 * F * M + G * L) / (E * G - F * F)
    if return_forms:
        return H, {"E": E, "F": F, "G": G, "L": L, "M": M, "N": Nn, "normal": n}
    return H


def meridian_residual(profile):
    """Discrete residual of the meridian ODE using spline derivatives at the nodes."""
    if profile.degenerate:
        return 0.0
    x = profile.x[:-1]
    r = profile.rho_at(x)
    p = profile.rho_at(x, 1)
    pp = profile.rho_at(x, 2)
    w = 1.0 + p * p
    return float(np.max(np.abs(pp - w / r + w ** 1.5)))


# ------------------------------------------------------------------ export

def write_obj(path, profile, periods=1, n_s=None, n_theta=48, pert=None):
    """OBJ quad mesh of X over `periods` isothermal periods starting at s = 0."""
    from .io import fmt
    n_s = n_s or max(16, int(round(periods * profile.s_tau / 0.05)))
    s = np.linspace(0.0, periods * profile.s_tau, n_s + 1)
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    X = embed(profile, s[:, None], th[None, :], pert)[0]
    lines = ["# unduloid tau=" + fmt(profile.tau)]
    for p in X.reshape(-1, 3):
        lines.append("v " + " ".join(fmt(c) for c in p))
    for i in range(n_s):
        for j in range(n_theta):
            a = i * n_theta + j + 1
            b = i * n_theta + (j + 1) % n_theta + 1
            lines.append(f"f {a} {b} {b + n_theta} {a + n_theta}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return X


def write_profile_csv(path, profile):
    from .io import write_csv
    s = profile.s
    rows = np.column_stack([s, profile.sigma, profile.k, profile.rho_at(profile.k)])
    write_csv(path, ["s", "sigma", "k", "rho_of_k"], rows)
