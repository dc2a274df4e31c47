"""One-dimensional phase-transition profiles.

Nonlinearity f(u) = u - u^3.  The curved profile U solves
U'' - eps*H*U' + f(U) = eps*ell on the line, truncated to [-T, T] with
Robin conditions that match the linearized decay rates at the two equilibria
and a phase condition U(0) = 0.  The correction psi0 solves
psi0'' - eps*H*psi0' + f'(U)*psi0 = (t + eps*lam)*U'.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import make_interp_spline

from .errors import BoxTooSmall, InvalidParameter, NewtonDiverged, NoRoot, SingularSystem
from .fd import fd_weights, simpson_weights

SQRT2 = np.sqrt(2.0)
C_STAR = 2.0 * SQRT2 / 3.0
FOLD = 2.0 / (3.0 * np.sqrt(3.0))
DEFAULT_T_BOX = 14.0
DEFAULT_NODES = 2801


def f(u):
    return u - u ** 3


def df(u):
    return 1.0 - 3.0 * u * u


def heteroclinic(t):
    """v = tanh(t/sqrt2) and its first two derivatives."""
    v = np.tanh(np.asarray(t, dtype=float) / SQRT2)
    dv = (1.0 - v * v) / SQRT2
    return v, dv, -v * (1.0 - v * v)


def equilibria(eps, ell):
    """Roots of f(+-1 + sigma) = eps*ell nearest sigma = 0, by Newton."""
    c = eps * ell
    if abs(c) >= FOLD:
        raise NoRoot(f"|eps*ell| = {abs(c):.6g} is beyond the fold {FOLD:.6g} of f")
    out = []
    for base in (1.0, -1.0):
        u = base
        for _ in range(60):
            du = (f(u) - c) / df(u)
            u -= du
            if abs(du) < 1e-16:
                break
        if abs(f(u) - c) > 1e-13 or base * u <= 1.0 / np.sqrt(3.0):
            raise NoRoot(f"Newton failed for the equilibrium near {base:+.0f}")
        out.append(u - base)
    return out[0], out[1]


def _decay_rates(eps, H, e_plus, e_minus):
    """Robin slopes: decaying root at +T, growing root at -T."""
    def roots(e):
        disc = (eps * H) ** 2 - 4.0 * df(e)
        return 0.5 * (eps * H - np.sqrt(disc)), 0.5 * (eps * H + np.sqrt(disc))
    return roots(e_plus)[0], roots(e_minus)[1]


@lru_cache(maxsize=8)
def _fd_matrices(n, T):
    """Fourth-order first and second derivative matrices on linspace(-T, T, n)."""
    t = np.linspace(-T, T, n)
    h = t[1] - t[0]
    d1 = sp.lil_matrix((n, n))
    d2 = sp.lil_matrix((n, n))
    c1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    for i in range(n):
        if 2 <= i <= n - 3:
            idx = np.arange(i - 2, i + 3)
            w1, w2 = c1, c2
        else:
            idx = np.arange(0, 6) if i < 2 else np.arange(n - 6, n)
            w = fd_weights(t[i], t[idx], 2)
            w1, w2 = w[1], w[2]
        d1[i, idx] = w1
        d2[i, idx] = w2
    return t, d1.tocsr(), d2.tocsr()


@dataclass(frozen=True)
class ProfileSolution:
    """Solved profiles on the box [-T_box, T_box].

    ``lam`` is the multiplier of the psi0 problem computed by quadrature;
    ``lam_discrete`` is the bordered-system value, kept as a consistency check.
    """

    eps: float
    H: float
    T_box: float
    t: np.ndarray
    U: np.ndarray
    dU: np.ndarray
    ell_eps: float
    sigma_plus: float
    sigma_minus: float
    c_star: float
    residual_U: float
    psi0: np.ndarray | None = None
    dpsi0: np.ndarray | None = None
    lam: float | None = None
    lam_discrete: float | None = None
    residual_psi: float | None = None
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def step(self):
        return float(self.t[1] - self.t[0])

    def _spline(self, name):
        if name not in self._splines:
            self._splines[name] = make_interp_spline(self.t, getattr(self, name), k=5)
        return self._splines[name]

    def U_at(self, t, nu=0):
        return self._spline("U")(t, nu)

    def psi0_at(self, t, nu=0):
        return self._spline("psi0")(t, nu)

    def U_jet(self, t):
        """(U, U', U'') at t; U'' comes from the ODE so it is as accurate as U'."""
        u, du = self.U_at(t), self.U_at(t, 1)
        return u, du, self.eps * self.H * du - f(u) + self.eps * self.ell_eps

    def psi0_jet(self, t):
        p, dp = self.psi0_at(t), self.psi0_at(t, 1)
        u, du = self.U_at(t), self.U_at(t, 1)
        ddp = (self.eps * self.H * dp - df(u) * p
               + (np.asarray(t) + self.eps * self.lam) * du)
        return p, dp, ddp


def _check_box(eps, T_box):
    if not (0.0 < eps <= 0.2):
        raise InvalidParameter(f"eps must lie in (0, 0.2], got {eps}")
    if T_box < 12.0:
        raise BoxTooSmall(f"T_box = {T_box} < 12 leaves the profile tails unresolved")


def solve_U(eps, H=1.0, T_box=DEFAULT_T_BOX, n=DEFAULT_NODES, tol=1e-10, maxit=30):
    """Newton solve for (U, ell_eps) on the truncated line."""
    _check_box(eps, T_box)
    if n % 2 == 0:
        raise InvalidParameter("n must be odd so that t = 0 is a node")
    t, D1, D2 = _fd_matrices(n, float(T_box))
    mid = n // 2
    U = heteroclinic(t)[0]
    ell = -0.5 * H * C_STAR

    def bc_rows(U, ell):
        sp_, sm = equilibria(eps, ell)
        mu_p, mu_m = _decay_rates(eps, H, 1.0 + sp_, -1.0 + sm)
        du = D1 @ U
        return (du[-1] - mu_p * (U[-1] - 1.0 - sp_), du[0] - mu_m * (U[0] + 1.0 - sm)), mu_p, mu_m

    def residual(U, ell):
        r = D2 @ U - eps * H * (D1 @ U) + f(U) - eps * ell
        (bp, bm), _, _ = bc_rows(U, ell)
        r[0], r[-1] = bm, bp
        return np.append(r, U[mid])

    res = residual(U, ell)
    for _ in range(maxit):
        if np.max(np.abs(res)) <= tol:
            break
        _, mu_p, mu_m = bc_rows(U, ell)
        J = (D2 - eps * H * D1 + sp.diags(df(U))).tolil()
        J[0, :] = D1[0, :]
        J[0, 0] -= mu_m
        J[n - 1, :] = D1[n - 1, :]
        J[n - 1, n - 1] -= mu_p
        col = np.full(n, -eps)
        dl = 1e-6
        (bp1, bm1), _, _ = bc_rows(U, ell + dl)
        (bp0, bm0), _, _ = bc_rows(U, ell - dl)
        col[0], col[-1] = (bm1 - bm0) / (2 * dl), (bp1 - bp0) / (2 * dl)
        row = np.zeros(n)
        row[mid] = 1.0
        K = sp.bmat([[J.tocsr(), sp.csr_matrix(col[:, None])], [sp.csr_matrix(row[None, :]), None]],
                    format="csc")
        step = spla.spsolve(K, -res)
        if not np.all(np.isfinite(step)):
            raise NewtonDiverged("singular Newton system for U", float(np.max(np.abs(res))))
        U = U + step[:n]
        ell = ell + step[n]
        res = residual(U, ell)
    last = float(np.max(np.abs(res)))
    if last > tol:
        raise NewtonDiverged(f"U Newton stalled at residual {last:.3e}", last)
    dU = D1 @ U
    if max(abs(dU[0]), abs(dU[-1])) > 1e-6:
        raise BoxTooSmall(f"|U'| at the box edge is {max(abs(dU[0]), abs(dU[-1])):.2e}")
    if np.any(np.diff(U) <= 0):
        raise NewtonDiverged("U is not strictly increasing", last)
    sp_, sm = equilibria(eps, ell)
    return ProfileSolution(eps=float(eps), H=float(H), T_box=float(T_box), t=t, U=U, dU=dU,
                           ell_eps=float(ell), sigma_plus=sp_, sigma_minus=sm, c_star=C_STAR,
                           residual_U=last)


def lambda_quadrature(sol):
    """lam with eps*lam = -int t U'^2 e^{-eps H t} / int U'^2 e^{-eps H t} (Simpson)."""
    w = simpson_weights(len(sol.t), sol.step)
    g = sol.dU ** 2 * np.exp(-sol.eps * sol.H * sol.t)
    return float(-(w @ (sol.t * g)) / (w @ g) / sol.eps)


def solve_psi0(sol):
    """Solve for psi0 with decay conditions and int psi0 U' e^{-eps H t} = 0.

    The discrete multiplier is an extra unknown bordered by the
    normalization row; the reported ``lam`` is the quadrature value.
    """
    eps, H, t = sol.eps, sol.H, sol.t
    n = len(t)
    _, D1, D2 = _fd_matrices(n, sol.T_box)
    mu_p, mu_m = _decay_rates(eps, H, 1.0 + sol.sigma_plus, -1.0 + sol.sigma_minus)
    L = (D2 - eps * H * D1 + sp.diags(df(sol.U))).tolil()
    L[0, :] = D1[0, :]
    L[0, 0] -= mu_m
    L[n - 1, :] = D1[n - 1, :]
    L[n - 1, n - 1] -= mu_p
    rhs = t * sol.dU
    rhs[0] = rhs[-1] = 0.0
    col = -eps * sol.dU
    col[0] = col[-1] = 0.0
    wq = simpson_weights(n, sol.step) * sol.dU * np.exp(-eps * H * t)
    K = sp.bmat([[L.tocsr(), sp.csr_matrix(col[:, None])], [sp.csr_matrix(wq[None, :]), None]],
                format="csc")
    x = spla.spsolve(K, np.append(rhs, 0.0))
    if not np.all(np.isfinite(x)):
        raise SingularSystem("bordered psi0 system is singular")
    psi, lam_d = x[:n], float(x[n])
    lam = lambda_quadrature(sol)
    dpsi = D1 @ psi
    r = (D2 @ psi - eps * H * dpsi + df(sol.U) * psi - (t + eps * lam) * sol.dU)[1:-1]
    from dataclasses import replace
    return replace(sol, psi0=psi, dpsi0=dpsi, lam=lam, lam_discrete=lam_d,
                   residual_psi=float(np.max(np.abs(r))), _splines={})


@lru_cache(maxsize=32)
def solve_profiles(eps, H=1.0, T_box=DEFAULT_T_BOX, n=DEFAULT_NODES):
    """U and psi0 together; cached since solutions are immutable."""
    return solve_psi0(solve_U(eps, H, T_box, n))
