"""Fermi coordinates around a surface and the Laplacian in (shifted) Fermi coordinates.

Coordinates are (y1, y2, z) with y = (s, theta) on the surface and z the
signed distance along the inward normal N.  With A the second fundamental
form with respect to N and S = g^{-1} A the shape operator, the parallel
surface at distance z has metric G = g - 2zA + z^2 A g^{-1} A and mean
curvature H_z = sum_i kappa_i / (1 - z kappa_i).  In these coordinates

    Delta = Delta_{Sigma_z} - H_z d_z + d_z^2.

Shifted coordinates use z = eps*(t + eps*h(y)); then d_z = eps^{-1} d_t and
the tangential derivative at fixed z is D_i = d_i - eps*h_i*d_t.

Three evaluation routes are provided for cross-checking:
  exact      metric G and its Christoffel symbols built directly at z,
             H_z = -(1/2) tr(G^{-1} d_z G);
  expanded   Delta_Sigma + z(a^{lm} d_lm + b^l d_l) with the coefficients a, b
             at z and H_z = H + z|A|^2 + z^2 Q; algebraically identical;
  truncated  the same with a, b frozen at z = 0 and Q replaced by tr A^3, so it
             drops terms that are O(z^2) relative to the leading curvature terms.
"""

from dataclasses import dataclass

import numpy as np

from .delaunay import surface_terms
from .errors import GhostLayerMissing, OutsideTube
from .fd import diff_uniform, fd_weights

# fraction of the focal radius used as the default tube half width
TUBE_FRACTION = 0.9


# ------------------------------------------------------------ surface data

class DelaunayGeometry:
    """Closed-form forms of an unduloid in isothermal coordinates (theta-independent)."""

    def __init__(self, profile):
        self.profile = profile

    def forms(self, s, theta=0.0):
        s, theta = np.broadcast_arrays(np.asarray(s, float), np.asarray(theta, float))
        g = surface_terms(self.profile, s)
        r2 = g["r"] ** 2
        dr2 = r2 * g["dsigma"]
        z = np.zeros_like(r2)
        met = _diag2(r2, r2)
        sff = _diag2(g["A_ss"], g["A_tt"])
        # d_s g = 2 r^2 sigma' I, d_s A_ss = d_s A_tt = r^2 sigma'
        dg = np.stack([_diag2(2 * dr2, 2 * dr2), _diag2(z, z)], axis=-3)
        dA = np.stack([_diag2(dr2, dr2), _diag2(z, z)], axis=-3)
        return {"g": met, "A": sff, "dg": dg, "dA": dA}

    def focal_radius(self):
        s = self.profile.s
        g = surface_terms(self.profile, s)
        kmax = np.max(np.maximum(np.abs(g["kappa_s"]), np.abs(g["kappa_t"])))
        return 1.0 / kmax


class ChartGeometry:
    """Forms of an arbitrary chart (u, v) -> R^3 from 7-point finite differences.

    The normal is ``normal_sign * X_u x X_v / |X_u x X_v|``.
    """

    def __init__(self, chart_fn, h=1e-2, normal_sign=1.0):
        self.chart_fn = chart_fn
        self.h = h
        self.normal_sign = normal_sign
        offs = np.arange(-3, 4)
        self._w = fd_weights(0.0, offs * h, 3)
        self._offs = offs * h

    def _derivs(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        o = self._offs
        pts = self.chart_fn(u[..., None, None] + o[:, None], v[..., None, None] + o[None, :])
        w = self._w
        out = {}
        for a in range(4):
            for b in range(4 - a):
                if a + b == 0:
                    continue
                out[(a, b)] = np.einsum("i,j,...ijk->...k", w[a], w[b], pts)
        return out

    def forms(self, s, theta):
        d = self._derivs(s, theta)
        X = [d[(1, 0)], d[(0, 1)]]
        X2 = [[d[(2, 0)], d[(1, 1)]], [d[(1, 1)], d[(0, 2)]]]
        X3 = {}
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    n_u = (i == 0) + (j == 0) + (k == 0)
                    X3[i, j, k] = d[(n_u, 3 - n_u)]
        n = np.cross(X[0], X[1])
        n = self.normal_sign * n / np.linalg.norm(n, axis=-1)[..., None]
        g = np.stack([np.stack([np.sum(X[i] * X[j], -1) for j in range(2)], -1) for i in range(2)], -2)
        A = np.stack([np.stack([np.sum(X2[i][j] * n, -1) for j in range(2)], -1) for i in range(2)], -2)
        ginv = np.linalg.inv(g)
        # Weingarten: N_k = -A_kl g^{lm} X_m
        W = -np.einsum("...kl,...lm->...km", A, ginv)
        Nk = [W[..., k, 0, None] * X[0] + W[..., k, 1, None] * X[1] for k in range(2)]
        dg = np.empty(g.shape[:-2] + (2, 2, 2))
        dA = np.empty_like(dg)
        for k in range(2):
            for i in range(2):
                for j in range(2):
                    dg[..., k, i, j] = np.sum(X2[k][i] * X[j] + X[i] * X2[k][j], -1)
                    dA[..., k, i, j] = np.sum(X3[i, j, k] * n + X2[i][j] * Nk[k], -1)
        return {"g": g, "A": A, "dg": dg, "dA": dA}


def _diag2(a, b):
    z = np.zeros_like(a)
    return np.stack([np.stack([a, z], -1), np.stack([z, b], -1)], -2)


# ------------------------------------------------------------- the chart

@dataclass(frozen=True)
class FermiChart:
    """Fermi chart over a surface geometry with optional shift h and scale eps.

    ``shift`` is a callable (s, theta) -> dict with keys h, h_s, h_theta,
    h_ss, h_stheta, h_thetatheta, or None for h = 0.  The default half width
    is 0.9 times the focal radius.  The cutoff scale ``delta`` is chosen so that
    the level-4 tube cutoff, supported in eps|t| < 5 delta, covers 80% of the
    half width; the rest is left for the shift eps^2 h.
    """

    geometry: object
    eps: float = 0.1
    half_width: float | None = None
    shift: object = None

    def __post_init__(self):
        fr = getattr(self.geometry, "focal_radius", None)
        if self.half_width is None:
            object.__setattr__(self, "half_width", TUBE_FRACTION * fr() if fr is not None else 0.3)
        if fr is not None and self.half_width >= fr():
            raise OutsideTube(f"half width {self.half_width} exceeds the focal radius {fr():.4g}")

    @property
    def delta(self):
        return 0.8 * self.half_width / 5.0

    def shift_jet(self, s, theta):
        s, theta = np.broadcast_arrays(np.asarray(s, float), np.asarray(theta, float))
        if self.shift is None:
            z = np.zeros(s.shape)
            return z, np.zeros(s.shape + (2,)), np.zeros(s.shape + (2, 2))
        d = self.shift(s, theta)
        h1 = np.stack([d["h_s"], d["h_theta"]], -1)
        h2 = np.stack([np.stack([d["h_ss"], d["h_stheta"]], -1),
                       np.stack([d["h_stheta"], d["h_thetatheta"]], -1)], -2)
        return np.broadcast_to(d["h"], s.shape), np.broadcast_to(h1, s.shape + (2,)), \
            np.broadcast_to(h2, s.shape + (2, 2))

    def check_z(self, z):
        if np.any(np.abs(z) >= self.half_width):
            raise OutsideTube(f"|z| = {np.max(np.abs(z)):.4g} leaves the tube of half width "
                              f"{self.half_width}")


def _mm(a, b):
    return np.einsum("...ij,...jk->...ik", a, b)


def _metric_parts(F, z):
    """G(z), d_k G(z) and d_z G(z) from the surface forms."""
    g, A, dg, dA = F["g"], F["A"], F["dg"], F["dA"]
    z = np.asarray(z)[..., None, None]
    gi = np.linalg.inv(g)
    AgA = _mm(_mm(A, gi), A)
    G = g - 2.0 * z * A + z * z * AgA
    dgi = -np.einsum("...ij,...kjl,...lm->...kim", gi, dg, gi)
    dAgA = (np.einsum("...kij,...jl,...lm->...kim", dA, gi, A)
            + np.einsum("...ij,...kjl,...lm->...kim", A, dgi, A)
            + np.einsum("...ij,...jl,...klm->...kim", A, gi, dA))
    zk = z[..., None, :, :]
    dG = dg - 2.0 * zk * dA + zk * zk * dAgA
    dzG = -2.0 * A + 2.0 * z * AgA
    return G, dG, dzG


def _contracted_christoffel(G, dG):
    """C^k = G^{ij} Gamma^k_ij for a 2D metric with derivatives dG[k, i, j] = d_k G_ij."""
    Gi = np.linalg.inv(G)
    # Gamma_{l,ij} = (d_i G_jl + d_j G_il - d_l G_ij) / 2
    gam_low = 0.5 * (np.einsum("...ijl->...lij", dG) + np.einsum("...jil->...lij", dG)
                     - dG)
    gam = np.einsum("...kl,...lij->...kij", Gi, gam_low)
    return np.einsum("...ij,...kij->...k", Gi, gam), gam


def fermi_metric(chart, s, theta, z):
    """3x3 metric in (y1, y2, z); the z row and column are exactly (0, 0, 1)."""
    chart.check_z(z)
    F = chart.geometry.forms(s, theta)
    G2, _, _ = _metric_parts(F, z)
    out = np.zeros(G2.shape[:-2] + (3, 3))
    out[..., :2, :2] = G2
    out[..., 2, 2] = 1.0
    return out


@dataclass(frozen=True)
class LaplacianCoefficients:
    G: np.ndarray
    a: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    trA3: np.ndarray
    Qtilde: np.ndarray
    H: np.ndarray
    A2: np.ndarray
    H_z: np.ndarray
    christoffel: np.ndarray


def _principal(F):
    S = np.linalg.solve(F["g"], F["A"])
    return np.real(np.linalg.eigvals(S)), S


def _b_coefficient(F, z, C0):
    """b^k = -(C^k(z) - C^k(0)) / z, with a complex-step derivative near z = 0."""
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-6
    G, dG, _ = _metric_parts(F, np.where(small, 0.0, z))
    Cz, _ = _contracted_christoffel(G, dG)
    b = -(Cz - C0) / np.where(small, 1.0, z)[..., None]
    if np.any(small):
        Fc = {k: v.astype(complex) for k, v in F.items()}
        hstep = 1e-20
        Gc, dGc, _ = _metric_parts(Fc, 1j * hstep * np.ones_like(z))
        Cc, _ = _contracted_christoffel(Gc, dGc)
        b = np.where(small[..., None], -np.imag(Cc) / hstep, b)
    return b


def laplacian_coefficients(chart, s, theta, z):
    """All expansion coefficients at (y, z); see the module docstring for the conventions."""
    chart.check_z(z)
    F = chart.geometry.forms(s, theta)
    z = np.broadcast_to(np.asarray(z, float), F["g"].shape[:-2])
    G2, dG, _ = _metric_parts(F, z)
    kap, S = _principal(F)
    zc = z[..., None]
    den = 1.0 - zc * kap
    H = kap.sum(-1)
    A2 = (kap ** 2).sum(-1)
    trA3 = (kap ** 3).sum(-1)
    Q = (kap ** 3 / den).sum(-1)
    Qt = (kap ** 4 / den).sum(-1)
    I = np.eye(2)
    zz = z[..., None, None]
    M = I - zz * S
    Minv = np.linalg.inv(M)
    a = _mm(_mm(2.0 * S - zz * _mm(S, S), _mm(Minv, Minv)), np.linalg.inv(F["g"]))
    C0, _ = _contracted_christoffel(F["g"], F["dg"])
    b = _b_coefficient(F, z, C0)
    _, gam = _contracted_christoffel(G2, dG)
    G3 = np.zeros(G2.shape[:-2] + (3, 3))
    G3[..., :2, :2] = G2
    G3[..., 2, 2] = 1.0
    return LaplacianCoefficients(G=G3, a=a, b=b, Q=Q, trA3=trA3, Qtilde=Qt, H=H, A2=A2,
                                 H_z=H + z * A2 + z * z * Q, christoffel=gam)


# ------------------------------------------------------- applying Delta

def smoothstep(x):
    """Quintic step: 0 for x <= 0, 1 for x >= 1, C^2 in between."""
    x = np.clip(np.asarray(x, float), 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def tube_cutoff(t, eps, delta, level):
    """chi(eps|t|/delta - (level-1)) with chi = 1 below 1 and 0 above 2.

    Level 4 is nonzero only for eps|t| < 5 delta and equals 1 for
    eps|t| <= 4 delta, which contains the support of level 3.
    """
    x = eps * np.abs(np.asarray(t, float)) / delta - (level - 1)
    return 1.0 - smoothstep(x - 1.0)


def shifted_laplacian(F, eps, hjet, ujet, route="exact", cutoff=None):
    """Delta u in shifted Fermi coordinates from pointwise jets.

    F      surface forms at the points (dict from ``geometry.forms``)
    hjet   (h, h_i, h_ij) of the shift
    ujet   dict with t (the normal variable), u_t, u_tt, u_i (...,2),
           u_it (...,2), u_ij (...,2,2)
    cutoff optional weights in [0, 1] multiplying every z-dependent geometric
           term; where it vanishes the operator is Delta_Sigma(D) - H d_z + d_z^2
           and the geometry is never evaluated off the surface.
    """
    if cutoff is not None:
        cutoff = np.asarray(cutoff, float)
        t = np.where(cutoff > 0.0, ujet["t"], -eps * hjet[0])
        full = shifted_laplacian(F, eps, hjet, dict(ujet, t=t), route)
        flat = shifted_laplacian(F, eps, hjet, dict(ujet, t=-eps * hjet[0]), route)
        return flat + cutoff * (full - flat)
    h, h1, h2 = hjet
    t = ujet["t"]
    z = eps * (t + eps * h)
    ut, utt = ujet["u_t"], ujet["u_tt"]
    ui, uit, uij = ujet["u_i"], ujet["u_it"], ujet["u_ij"]
    # D_i D_j u and D_k u at fixed z
    DD = (uij - eps * (h1[..., None, :] * uit[..., :, None] + h1[..., :, None] * uit[..., None, :])
          - eps * h2 * ut[..., None, None] + eps ** 2 * h1[..., :, None] * h1[..., None, :]
          * utt[..., None, None])
    D1 = ui - eps * h1 * ut[..., None]
    if route == "exact":
        G, dG, dzG = _metric_parts(F, z)
        Gi = np.linalg.inv(G)
        C, _ = _contracted_christoffel(G, dG)
        Hz = -0.5 * np.einsum("...ij,...ji->...", Gi, dzG)
        tang = np.einsum("...ij,...ij->...", Gi, DD) - np.einsum("...k,...k->...", C, D1)
    elif route in ("expanded", "truncated"):
        kap, S = _principal(F)
        gi = np.linalg.inv(F["g"])
        C0, _ = _contracted_christoffel(F["g"], F["dg"])
        zc = z[..., None]
        zz = z[..., None, None]
        if route == "expanded":
            M = np.linalg.inv(np.eye(2) - zz * S)
            a = _mm(_mm(2.0 * S - zz * _mm(S, S), _mm(M, M)), gi)
            b = _b_coefficient(F, z, C0)
            Q = (kap ** 3 / (1.0 - zc * kap)).sum(-1)
        else:
            a = 2.0 * _mm(S, gi)
            b = _b_coefficient(F, np.zeros_like(z), C0)
            Q = (kap ** 3).sum(-1)
        Hz = kap.sum(-1) + z * (kap ** 2).sum(-1) + z * z * Q
        lap_sigma = np.einsum("...ij,...ij->...", gi, DD) - np.einsum("...k,...k->...", C0, D1)
        tang = lap_sigma + z * (np.einsum("...ij,...ij->...", a, DD)
                                + np.einsum("...k,...k->...", b, D1))
    else:
        raise ValueError(f"unknown route {route!r}")
    return tang - Hz * ut / eps + utt / eps ** 2


def grid_jet(u, h_s, h_t, h_theta=None, ghost=2):
    """Fourth-order jets of a grid function with two ghost layers in s and t.

    ``u`` has axes (s, t) or (s, theta, t); theta is periodic without ghosts.
    Returns the dict expected by ``shifted_laplacian`` (without "t").
    """
    if ghost < 2:
        raise GhostLayerMissing("fourth-order stencils need two ghost layers in s and t")
    u = np.asarray(u, float)
    three = u.ndim == 3
    ax_s, ax_t = 0, u.ndim - 1

    def d(v, axis, order, step):
        return diff_uniform(v, step, axis, order)

    def trim(v, axis):
        sl = [slice(None)] * v.ndim
        sl[axis] = slice(2, -2)
        return v[tuple(sl)]

    def dth(v, order):
        if not three:
            return np.zeros_like(v)
        k = np.fft.fftfreq(v.shape[1], d=h_theta / (2 * np.pi))
        sym = (1j * k) ** order
        if order % 2 and v.shape[1] % 2 == 0:
            sym[v.shape[1] // 2] = 0.0
        shape = [1] * v.ndim
        shape[1] = -1
        return np.real(np.fft.ifft(np.fft.fft(v, axis=1) * sym.reshape(shape), axis=1))

    us = trim(d(u, ax_s, 1, h_s), ax_t)
    uss = trim(d(u, ax_s, 2, h_s), ax_t)
    ut = trim(d(u, ax_t, 1, h_t), ax_s)
    utt = trim(d(u, ax_t, 2, h_t), ax_s)
    ust = d(d(u, ax_s, 1, h_s), ax_t, 1, h_t)
    core = trim(trim(u, ax_s), ax_t)
    uth = dth(core, 1)
    uthth = dth(core, 2)
    usth = dth(us, 1)
    utth = dth(ut, 1)
    ui = np.stack([us, uth], -1)
    uit = np.stack([ust, utth], -1)
    uij = np.stack([np.stack([uss, usth], -1), np.stack([usth, uthth], -1)], -2)
    return {"u": core, "u_t": ut, "u_tt": utt, "u_i": ui, "u_it": uit, "u_ij": uij}


def apply_laplacian_fermi(chart, u, routes=("exact", "expanded"), delta=None):
    """Delta u for a WeightedGridFunction with axes (s, t) or (s, theta, t).

    With ``delta`` given, the z-dependent geometric terms are multiplied by
    the level-4 tube cutoff, so only points with eps|t| < 5 delta must lie
    inside the tube.  Returns a dict route -> WeightedGridFunction on the
    interior grid.
    """
    from .grids import WeightedGridFunction
    if u.ghost < 2:
        raise GhostLayerMissing("apply_laplacian_fermi needs two ghost layers in s and t")
    s = np.asarray(u.coords["s"])
    t = np.asarray(u.coords["t"])
    three = "theta" in u.axes
    th = np.asarray(u.coords["theta"]) if three else np.zeros(1)
    jet = grid_jet(u.values, u.step("s"), u.step("t"),
                   u.step("theta") if three else None, ghost=u.ghost)
    if three:
        S, TH, T = np.meshgrid(s, th, t, indexing="ij")
    else:
        S, T = np.meshgrid(s, t, indexing="ij")
        TH = np.zeros_like(S)
    hj = chart.shift_jet(S, TH)
    cut = None if delta is None else tube_cutoff(T, chart.eps, delta, 4)
    z = chart.eps * (T + chart.eps * hj[0])
    chart.check_z(z if cut is None else z[cut > 0])
    F = chart.geometry.forms(S, TH)
    jet["t"] = T
    out = {}
    for r in routes:
        vals = shifted_laplacian(F, chart.eps, hj, jet, route=r, cutoff=cut)
        out[r] = WeightedGridFunction(values=vals, axes=u.axes,
                                      coords={k: u.coords[k] for k in u.axes},
                                      a=u.a, gamma=u.gamma, ghost=0)
    return out


def offset_chart(chart_fn, normal_fn, z):
    """Chart of the parallel surface at distance z (for independent curvature checks)."""
    return lambda s, th: chart_fn(s, th) + z * normal_fn(s, th)
