"""Jacobi fields of unduloids and the normal-graph form of perturbed unduloids."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .delaunay import perturbed_profile, rotation_matrix, surface_terms
from .errors import MissingTauDerivatives, ProjectionNotUnique

DEFAULT_ETA = 0.05


@dataclass(frozen=True)
class PerturbationVector:
    """a = (aT, aR, aD): translation, tilt angles toward x1 and x2, neck-size shift."""

    aT: tuple = (0.0, 0.0, 0.0)
    aR: tuple = (0.0, 0.0)
    aD: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "aT", tuple(float(v) for v in self.aT))
        object.__setattr__(self, "aR", tuple(float(v) for v in self.aR))
        object.__setattr__(self, "aD", float(self.aD))
        if len(self.aT) != 3 or len(self.aR) != 2:
            raise ValueError("aT needs 3 entries and aR needs 2")

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(aT=tuple(a[:3]), aR=tuple(a[3:5]), aD=float(a[5]))

    def as_array(self):
        return np.array([*self.aT, *self.aR, self.aD])

    def norm(self):
        return float(np.linalg.norm(self.as_array()))

    def scaled(self, c):
        return PerturbationVector.from_array(c * self.as_array())

    def is_zero(self):
        return not np.any(self.as_array())


class JacobiFieldKind(Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    R1 = "R1"
    R2 = "R2"
    D = "D"
    P0plus = "P0plus"
    P0minus = "P0minus"


# angular mode of each field: (mode number, cos/sin/None)
_ANGULAR = {
    JacobiFieldKind.T1: (1, np.cos), JacobiFieldKind.T2: (1, np.sin),
    JacobiFieldKind.T3: (0, None), JacobiFieldKind.R1: (1, np.cos),
    JacobiFieldKind.R2: (1, np.sin), JacobiFieldKind.D: (0, None),
    JacobiFieldKind.P0plus: (0, None), JacobiFieldKind.P0minus: (0, None),
}


def _radial_part(profile, kind, s):
    """s-dependent factor of the field (the angular factor is cos, sin or 1)."""
    tau = profile.tau
    sig = profile.sigma_at(s)
    ds = profile.sigma_at(s, 1)
    if kind in (JacobiFieldKind.T1, JacobiFieldKind.T2):
        return -tau * np.cosh(sig)
    if kind in (JacobiFieldKind.T3, JacobiFieldKind.P0plus):
        return ds
    if kind in (JacobiFieldKind.R1, JacobiFieldKind.R2):
        # normal component of the tilt generator (x3, 0, -x1); see notes on the k factor
        return -tau * (profile.k_at(s) * np.cosh(sig) + ds * np.exp(sig))
    if kind in (JacobiFieldKind.D, JacobiFieldKind.P0minus):
        td = profile.tau_derivs
        if td is None:
            raise MissingTauDerivatives("build_tau_derivatives must run before evaluating D fields")
        return np.sqrt(1.0 - tau * tau) * (ds * td.dk_at(s) / tau
                                           - np.exp(sig) * np.cosh(sig) * (1.0 + tau * td.dsigma_at(s)))
    raise ValueError(f"unknown kind {kind!r}")


def eval_jacobi(profile, kind, s, theta=0.0):
    """Closed-form value of a Jacobi field at (s, theta); arrays broadcast."""
    kind = JacobiFieldKind(kind)
    s, theta = np.broadcast_arrays(np.asarray(s, float), np.asarray(theta, float))
    m, ang = _ANGULAR[kind]
    f = _radial_part(profile, kind, s)
    return f * ang(theta) if ang is not None else f


def jacobi_residual(profile, kind, h, s_start=0.0, s_end=None, return_field=False):
    """max |L_tau Phi| with a centered second difference of step h in s.

    The angular factor is a single Fourier mode, so d^2/dtheta^2 acts exactly
    as multiplication by -m^2.  Nodes are s_start + j*h; choose h as a
    multiple of the profile grid step to sample the splines at their knots.
    """
    kind = JacobiFieldKind(kind)
    if s_end is None:
        s_end = s_start + profile.s_tau
    n = int(round((s_end - s_start) / h))
    s = s_start + h * np.arange(-1, n + 2)
    f = _radial_part(profile, kind, s)
    m, _ = _ANGULAR[kind]
    sc = s[1:-1]
    pot = profile.tau ** 2 * np.cosh(2.0 * profile.sigma_at(sc))
    res = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h ** 2 + (pot - m * m) * f[1:-1]
    if return_field:
        return float(np.max(np.abs(res))), sc, res
    return float(np.max(np.abs(res)))


def linearized_field(profile, pert, s, theta):
    """Phi_tau(a): first-order normal displacement generated by a.

    Uses the rotation matrices of `rotation_matrix`; the tilt generated by
    the second angle turns x3 toward -x2, hence the minus sign on R2.
    """
    aT, aR, aD = np.asarray(pert.aT), np.asarray(pert.aR), pert.aD
    K = JacobiFieldKind
    out = (aT[0] * eval_jacobi(profile, K.T1, s, theta) + aT[1] * eval_jacobi(profile, K.T2, s, theta)
           + aT[2] * eval_jacobi(profile, K.T3, s, theta)
           + aR[0] * eval_jacobi(profile, K.R1, s, theta) - aR[1] * eval_jacobi(profile, K.R2, s, theta))
    if aD != 0.0:
        out = out + aD * eval_jacobi(profile, K.D, s, theta)
    return out


def _param_and_derivs(profile, s, theta):
    g = surface_terms(profile, s)
    c, sn = np.cos(theta), np.sin(theta)
    r, d1 = g["r"], g["dsigma"]
    X = np.stack([r * c, r * sn, profile.k_at(s)], -1)
    Xs = np.stack([r * d1 * c, r * d1 * sn, profile.k_at(s, 1)], -1)
    Xt = np.stack([-r * sn, r * c, np.zeros_like(r)], -1)
    N = np.stack([-g["root"] * c, -g["root"] * sn, d1], -1)
    return X, Xs, Xt, N


def _project(prof_a, R, aT, X0, N0, w, s1, t1, tol=1e-13, maxit=40):
    """Newton for X0 + w N0 = R X_a(s1, t1) + aT, vectorized over points."""
    for _ in range(maxit):
        Y, Ys, Yt, _ = _param_and_derivs(prof_a, s1, t1)
        F = X0 + w[..., None] * N0 - (Y @ R.T + aT)
        if np.max(np.abs(F)) < tol:
            return w, s1, t1, True
        J = np.stack([N0, -(Ys @ R.T), -(Yt @ R.T)], axis=-1)
        step = np.linalg.solve(J, -F[..., None])[..., 0]
        w = w + step[..., 0]
        s1 = s1 + step[..., 1]
        t1 = t1 + step[..., 2]
    return w, s1, t1, False


def normal_graph_decompose(profile, pert, window, n_s=200, n_theta=16, eta=DEFAULT_ETA):
    """Write D_tau(pert) as a normal graph w over D_tau on s in `window`.

    Returns (w, phi_lin, psi_rem, info) sampled on the (s, theta) grid given
    in ``info``; psi_rem = w - phi_lin and info["C"] = |psi_rem|_inf / |a|^2.
    """
    a_norm = pert.norm()
    if a_norm >= eta:
        raise ProjectionNotUnique(f"|a| = {a_norm:.3g} exceeds the admissibility radius {eta}")
    s = np.linspace(window[0], window[1], n_s + 1)
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    S, TH = np.meshgrid(s, th, indexing="ij")
    phi = linearized_field(profile, pert, S, TH)
    if pert.is_zero():
        z = np.zeros_like(S)
        return z, z.copy(), z.copy(), {"s": s, "theta": th, "C": 0.0, "sup_psi": 0.0}
    prof_a = perturbed_profile(profile, pert.aD)
    R = rotation_matrix(pert.aR)
    aT = np.asarray(pert.aT)
    X0, _, _, N0 = _param_and_derivs(profile, S, TH)
    starts = [(np.zeros_like(S), S.copy(), TH.copy()), (phi.copy(), S + 0.05, TH + 0.05)]
    sols = []
    for w0, s0, t0 in starts:
        w, s1, t1, ok = _project(prof_a, R, aT, X0, N0, w0, s0, t0)
        if not ok:
            raise ProjectionNotUnique("Newton projection onto the perturbed unduloid did not converge")
        sols.append(w)
    if np.max(np.abs(sols[0] - sols[1])) > 1e-9:
        raise ProjectionNotUnique("projection depends on the starting point; perturbation too large")
    w = sols[0]
    psi = w - phi
    sup = float(np.max(np.abs(psi)))
    return w, phi, psi, {"s": s, "theta": th, "C": sup / a_norm ** 2, "sup_psi": sup}


def decaying_mode(profile, m=2):
    """Decaying Floquet solution of f'' = (m^2 - tau^2 cosh 2 sigma) f, normalized f(0) = 1.

    This is the s-profile of the Jacobi field f(s) cos(m theta) that decays
    along the end.  Returns (rate, f) where rate = -log(mu)/s_tau for the
    monodromy eigenvalue mu < 1 and f(s, nu=0) evaluates f or f' for s >= 0.
    The mode is integrated backwards over one period, where it grows.
    """
    from scipy.integrate import solve_ivp

    from .delaunay import _iso_initial

    tau, L = profile.tau, profile.s_tau
    t2, m2 = tau * tau, float(m * m)

    def rhs(s, y):
        pot = m2 - t2 * np.cosh(2.0 * y[0])
        out = [y[1], -0.5 * t2 * np.sinh(2.0 * y[0])]
        for k in range(2, len(y), 2):
            out += [y[k + 1], pot * y[k]]
        return out

    sig0 = _iso_initial(tau)[0]
    fwd = solve_ivp(rhs, (0.0, L), [sig0, 0.0, 1.0, 0.0, 0.0, 1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14)
    M = np.array([[fwd.y[2, -1], fwd.y[4, -1]], [fwd.y[3, -1], fwd.y[5, -1]]])
    # det M = 1, so the inverse is exact; its dominant eigenvector is the decaying direction
    inv = np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]])
    vals, vecs = np.linalg.eig(inv)
    k = int(np.argmax(np.abs(vals)))
    big = float(np.real(vals[k]))
    if not big > 1.0:
        raise ValueError(f"no decaying mode for m = {m}: monodromy eigenvalue {1.0 / big:.3g}")
    c = np.real(vecs[:, k])
    # sigma is even about s = L (period end), so start from the same sigma data
    bwd = solve_ivp(rhs, (L, 0.0), [sig0, 0.0, c[0], c[1]], method="DOP853", rtol=1e-12,
                    atol=1e-30, dense_output=True)
    scale = bwd.y[2, -1]
    mu = 1.0 / big

    def f(s, nu=0):
        s = np.asarray(s, float)
        n, r = np.divmod(s, L)
        y = bwd.sol(r.ravel())[2 + nu] / scale
        return y.reshape(s.shape) * mu ** n

    return -np.log(mu) / L, f
