"""Linear inverses of the end problem.

Psi2 inverts L0 = d_s^2 + tau^2 cosh(2 sigma) on functions that are
s_tau-periodic and even about s = 0 (hence also about s_tau/2).  Psi1 inverts
the strip operator

    eps (tau e^sigma)^{-2} d_s^2 + eps^{-1} d_t^2 + eps^{-1} f'(v_star)

on functions with the same symmetry in s, decaying in t and orthogonal to
v_star' on every line s = const.
"""

import threading
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IllConditioned, NotOrthogonal, SingularMatrix
from .fd import trapezoid_weights
from .profiles import df, heteroclinic

DEFAULT_T_STRIP = 12.0
ALPHA = 0.25


def v_star_prime(t):
    return heteroclinic(t)[1]


# ----------------------------------------------------------- function types

@dataclass(frozen=True)
class SymmetricPeriodicFunction:
    """Samples at s_j = j*s_tau/(2M), j = 0..2M, of an even s_tau-periodic function."""

    values: np.ndarray
    s_tau: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 1 or len(v) % 2 == 0 or len(v) < 3:
            raise ValueError("need an odd number (2M+1) of samples over one period")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_half(cls, half, s_tau, **kw):
        half = np.asarray(half, float)
        return cls(np.concatenate([half, half[-2::-1]]), s_tau, **kw)

    @classmethod
    def from_callable(cls, fn, s_tau, M):
        return cls.from_half(fn(half_nodes(s_tau, M)), s_tau)

    @property
    def M(self):
        return (len(self.values) - 1) // 2

    @property
    def nodes(self):
        return np.linspace(0.0, self.s_tau, 2 * self.M + 1)

    def half(self):
        return self.values[: self.M + 1]

    def symmetry_defect(self):
        return float(np.max(np.abs(self.values - self.values[::-1])))

    def cosine_coefficients(self):
        return cosine_coefficients(self.half())

    def at(self, s, nu=0):
        """Trigonometric interpolant (or its nu-th derivative) at arbitrary s."""
        c = self.cosine_coefficients()
        k = 2.0 * np.pi * np.arange(len(c)) / self.s_tau
        arg = np.multiply.outer(np.asarray(s, float), k)
        basis = [np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin][nu % 4](arg)
        return basis @ (c * k ** nu)

    def sup(self):
        return float(np.max(np.abs(self.values)))


def half_nodes(s_tau, M):
    return np.linspace(0.0, 0.5 * s_tau, M + 1)


def cosine_coefficients(half):
    """c_n with half[j] = sum_n c_n cos(pi n j / M) (DCT-I normalisation)."""
    M = len(half) - 1
    y = scipy.fft.dct(np.asarray(half, float), type=1)
    c = y / M
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


@dataclass(frozen=True)
class StripFunction:
    """Samples on [0, s_tau] x [-T, T]; s nodes as in SymmetricPeriodicFunction."""

    values: np.ndarray
    s_tau: float
    t: np.ndarray
    gamma: float = 1.0
    eps: float = 0.1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 2 or v.shape[0] % 2 == 0 or v.shape[1] != len(self.t):
            raise ValueError("values must be (2M+1, len(t))")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_half(cls, half, s_tau, t, **kw):
        half = np.asarray(half, float)
        return cls(np.concatenate([half, half[-2::-1]], axis=0), s_tau, np.asarray(t, float), **kw)

    @property
    def M(self):
        return (self.values.shape[0] - 1) // 2

    @property
    def nodes(self):
        return np.linspace(0.0, self.s_tau, 2 * self.M + 1)

    def half(self):
        return self.values[: self.M + 1]

    def symmetry_defect(self):
        return float(np.max(np.abs(self.values - self.values[::-1])))

    def weighted_sup(self, gamma=None):
        g = self.gamma if gamma is None else gamma
        return float(np.max(np.abs(self.values * np.cosh(self.t) ** g)))

    def inner_v(self):
        """<phi(s,.), v_star'> for every sample s (trapezoid rule in t)."""
        return self.values @ (trapezoid_weights(len(self.t), self.t[1] - self.t[0])
                              * v_star_prime(self.t))

    def with_values(self, values, **kw):
        return replace(self, values=np.asarray(values, float), meta=kw.pop("meta", {}), **kw)


def strip_grid(T=DEFAULT_T_STRIP, n_t=481):
    return np.linspace(-T, T, n_t)


# ------------------------------------------------------------- projection

def _kernel_weights(t):
    return trapezoid_weights(len(t), t[1] - t[0]) * v_star_prime(t)


def project_Z(g):
    """g - (<g, v'>/<v', v'>) v' on every line s = const, with discrete inner products.

    The discrete c_star is used so that the projection is exactly idempotent.
    """
    w = _kernel_weights(g.t)
    vp = v_star_prime(g.t)
    c = float(w @ vp)
    coef = (g.values @ w) / c
    return g.with_values(g.values - np.outer(coef, vp))


# ------------------------------------------------------------------ Psi2

def periodic_operator(profile, M):
    """Collocation matrix of L0 on the half-period nodes (cosine basis)."""
    s = half_nodes(profile.s_tau, M)
    j = np.arange(M + 1)
    C = np.cos(np.pi * np.outer(j, j) / M)
    k2 = (2.0 * np.pi * j / profile.s_tau) ** 2
    D2 = C @ np.diag(-k2) @ np.linalg.inv(C)
    pot = profile.tau ** 2 * np.cosh(2.0 * profile.sigma_at(s))
    return D2 + np.diag(pot)


_LU_CACHE = {}
_LU_LOCK = threading.Lock()


def _cached(key, build):
    with _LU_LOCK:
        if key not in _LU_CACHE:
            if len(_LU_CACHE) > 16:
                _LU_CACHE.pop(next(iter(_LU_CACHE)))
            _LU_CACHE[key] = build()
        return _LU_CACHE[key]


def apply_periodic(profile, h):
    """L0 h on the nodes of h (spectral second derivative)."""
    A = periodic_operator(profile, h.M)
    return SymmetricPeriodicFunction.from_half(A @ h.half(), h.s_tau)


def solve_periodic(profile, g, sym_tol=1e-10):
    """h = Psi2(g): L0 h = g in the even periodic class.

    ``meta`` carries the collocation residual and the ratio |h|/|g|.
    """
    if abs(g.s_tau - profile.s_tau) > 1e-12 * profile.s_tau:
        raise ValueError("g is sampled over a different period")
    if g.symmetry_defect() > sym_tol * max(1.0, g.sup()):
        raise SingularMatrix("right-hand side is not even about s_tau/2")
    M = g.M

    def build():
        A = periodic_operator(profile, M)
        lu = sla.lu_factor(A)
        cond = np.linalg.cond(A)
        return A, lu, cond

    A, lu, cond = _cached(("periodic", profile.tau, profile.s_tau, M), build)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrix(f"periodic operator is singular (condition {cond:.3g})")
    h = sla.lu_solve(lu, g.half())
    res = float(np.max(np.abs(A @ h - g.half())))
    gs = g.sup()
    return SymmetricPeriodicFunction.from_half(
        h, g.s_tau, meta={"residual": res, "condition": float(cond),
                          "ratio": float(np.max(np.abs(h)) / gs) if gs > 0 else 0.0})


def homogeneous_slopes(profile):
    """s-derivatives of the two s-independent kernel fields at s = 0 and s = s_tau.

    Returns dict with keys "plus" and "minus", each a pair (value at 0, value
    at s_tau).  The plus field is sigma', whose derivative sigma'' is taken from
    the ODE; the minus field needs the tau-derivative tables.
    """
    from .jacobi import JacobiFieldKind, _radial_part
    tau = profile.tau

    def d2sigma(s):
        return -0.5 * tau * tau * np.sinh(2.0 * profile.sigma_at(s))

    out = {"plus": (float(d2sigma(0.0)), float(d2sigma(profile.s_tau)))}
    if profile.tau_derivs is not None:
        h = 1e-3
        vals = []
        for s0 in (0.0, profile.s_tau):
            f = _radial_part(profile, JacobiFieldKind.P0minus, s0 + h * np.array([-2, -1, 1, 2]))
            vals.append(float((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)))
        out["minus"] = tuple(vals)
    return out


# ------------------------------------------------------------------ Psi1

@dataclass(frozen=True)
class StripSystem:
    """Assembled saddle-point system of the strip operator on a half-period grid."""

    tau: float
    eps: float
    M: int
    t: np.ndarray
    L: sp.csr_matrix
    K: sp.csc_matrix
    lu: object


def _neumann_d2(ns, ds):
    """Second difference with even reflection at both ends."""
    up = np.ones(ns - 1)
    lo = np.ones(ns - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    return sp.diags([lo, -2.0 * np.ones(ns), up], [-1, 0, 1]) / ds ** 2


def _strip_blocks(profile, eps, M, t):
    ns, nt = M + 1, len(t)
    ds = 0.5 * profile.s_tau / M
    dt = t[1] - t[0]
    s = half_nodes(profile.s_tau, M)
    D2s = _neumann_d2(ns, ds)
    # Dirichlet rows are replaced afterwards
    D2t = sp.diags([np.ones(nt - 1), -2.0 * np.ones(nt), np.ones(nt - 1)], [-1, 0, 1]) / dt ** 2
    r2inv = np.exp(-2.0 * profile.sigma_at(s)) / profile.tau ** 2
    Ls = sp.kron(sp.diags(eps * r2inv) @ D2s, sp.identity(nt))
    Lt = sp.kron(sp.identity(ns), (D2t + sp.diags(df(heteroclinic(t)[0]))) / eps)
    return (Ls + Lt).tocsr()


def strip_operator(profile, eps, M, t):
    """Sparse matrix of the strip operator on the half grid (rows for t = +-T included)."""
    return _strip_blocks(profile, eps, M, np.asarray(t, float))


def _assemble(profile, eps, M, t):
    ns, nt = M + 1, len(t)
    L = _strip_blocks(profile, eps, M, t).tolil()
    edge = np.zeros(nt, bool)
    edge[[0, -1]] = True
    rows_edge = np.flatnonzero(np.tile(edge, ns))
    for r in rows_edge:
        L.rows[r] = [r]
        L.data[r] = [1.0]
    L = L.tocsr()
    vp = v_star_prime(t) * ~edge
    w = _kernel_weights(t)
    B = sp.kron(sp.identity(ns), sp.csr_matrix(vp[:, None]))
    C = sp.kron(sp.identity(ns), sp.csr_matrix(w[None, :]))
    K = sp.bmat([[L, B], [C, None]], format="csc")
    return K


def strip_system(profile, eps, M, t):
    t = np.asarray(t, float)
    key = ("strip", profile.tau, profile.s_tau, float(eps), int(M), float(t[0]), float(t[-1]), len(t))

    def build():
        K = _assemble(profile, eps, M, t)
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise IllConditioned(f"strip system is singular: {exc}", float("inf")) from exc
        return StripSystem(profile.tau, float(eps), int(M), t, strip_operator(profile, eps, M, t),
                           K, lu)

    return _cached(key, build)


def apply_strip(profile, phi):
    """Strip operator applied to phi (half grid, values at t = +-T are not meaningful)."""
    L = strip_operator(profile, phi.eps, phi.M, phi.t)
    out = (L @ phi.half().ravel()).reshape(phi.M + 1, len(phi.t))
    return StripFunction.from_half(out, phi.s_tau, phi.t, gamma=phi.gamma, eps=phi.eps)


def solve_strip(profile, eps, gamma, g, orth_tol=1e-8, alpha=ALPHA):
    """phi = Psi1(g) with Neumann conditions in s, phi(s, +-T) = 0 and <phi, v'> = 0.

    Orthogonality is imposed exactly with one Lagrange multiplier per line
    s = const.  ``meta`` reports the multipliers, the weighted ratio
    |phi cosh^gamma| / |g cosh^gamma| and that ratio divided by eps^(1 - alpha).
    """
    if not 0.0 < gamma < np.sqrt(2.0):
        raise ValueError(f"gamma must lie in (0, sqrt 2), got {gamma}")
    gs = float(np.max(np.abs(g.values))) if g.values.size else 0.0
    inner = g.inner_v()
    if gs > 0 and np.max(np.abs(inner)) > orth_tol * gs:
        raise NotOrthogonal(f"<g, v'> = {np.max(np.abs(inner)):.3e} exceeds {orth_tol:g} |g|")
    M, t = g.M, g.t
    ns, nt = M + 1, len(t)
    sysm = strip_system(profile, eps, M, t)
    rhs = g.half().copy()
    rhs[:, [0, -1]] = 0.0
    x = sysm.lu.solve(np.concatenate([rhs.ravel(), np.zeros(ns)]))
    if not np.all(np.isfinite(x)):
        raise IllConditioned("strip solve produced non-finite values", float("inf"))
    phi = x[: ns * nt].reshape(ns, nt)
    mult = x[ns * nt:]
    out = StripFunction.from_half(phi, g.s_tau, t, gamma=gamma, eps=eps)
    gw = g.weighted_sup(gamma)
    ratio = out.weighted_sup(gamma) / gw if gw > 0 else 0.0
    return replace(out, meta={"multipliers": mult, "ratio": ratio,
                              "constant": ratio / eps ** (1.0 - alpha)})


def coercivity_constant(profile, eps, M, t):
    """eps times the smallest eigenvalue of -(strip operator) on the complement of v'.

    For the r^2-weighted trapezoid inner product, with r = tau e^sigma, the
    discrete operator is r^{-2} eps D2s (x) I + I (x) T / eps, where
    T = D2t + f'(v_star).  The Neumann matrix D2s is negative semidefinite
    with the constants as its kernel, so the bottom of the spectrum is
    attained by constant-in-s modes and equals the smallest eigenvalue of -T
    restricted to the complement of v' (3/2 in the continuum), whatever the s
    resolution.  The s factor is still checked to be semidefinite.
    """
    t = np.asarray(t, float)
    ti = t[1:-1]
    dt = t[1] - t[0]
    T = (np.diag(-2.0 * np.ones(len(ti))) + np.diag(np.ones(len(ti) - 1), 1)
         + np.diag(np.ones(len(ti) - 1), -1)) / dt ** 2 + np.diag(df(heteroclinic(ti)[0]))
    Z1 = sla.null_space(v_star_prime(ti)[None, :])
    mu = np.linalg.eigvalsh(-(Z1.T @ T @ Z1))[0]
    ds = 0.5 * profile.s_tau / M
    # r^2 * (r^{-2} D2s) weighted by the trapezoid rule
    S = -trapezoid_weights(M + 1, ds)[:, None] * _neumann_d2(M + 1, ds).toarray()
    if np.linalg.eigvalsh(0.5 * (S + S.T))[0] < -1e-9 * np.max(np.abs(S)):
        raise IllConditioned("s part of the strip operator is not semidefinite", float("inf"))
    return float(mu)
