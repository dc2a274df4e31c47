"""Parameter studies shared by the command line and the acceptance tests.

Every study returns a plain dict of numbers so that it can be written as a
deterministic JSON report.  Wall-clock timings are returned separately.
"""

import time

import numpy as np

from .assembly import (EndConfiguration, EndProblem, balancing_warnings, build_glued_surface,
                       check_balancing, corrected_approximation, curvature_report,
                       end_corrections, residual, structural_terms)
from .delaunay import delaunay_profile, meridian_residual, neck_size, surface_terms
from .jacobi import (DEFAULT_ETA, JacobiFieldKind, PerturbationVector, decaying_mode,
                     jacobi_residual, normal_graph_decompose)
from .profiles import SQRT2, solve_profiles

SIX_FIELDS = ("T1", "T2", "T3", "R1", "R2", "D")


def fit_order(x, y):
    """Least-squares slope of log y against log x; None if some y is not positive."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(y <= 0.0) or len(x) < 2:
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


class Stopwatch:
    def __init__(self):
        self.laps = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.laps[name] = time.perf_counter() - t0
        return out


def delaunay_study(tau, steps=(4e-3, 2e-3, 1e-3)):
    """max |H - 1| of the tabulated unduloid at cell midpoints for each grid step."""
    errors, residuals = [], []
    prof = None
    for h in steps:
        prof = delaunay_profile(tau, h)
        n = max(int(round(prof.s_tau / h)), 8)
        s = (np.arange(n) + 0.5) * prof.s_tau / n
        H = surface_terms(prof, s)["H"]
        errors.append(float(np.max(np.abs(H - 1.0))))
        residuals.append(meridian_residual(prof))
    return {"tau": float(tau), "steps": list(steps), "H_error": errors,
            "H_order": fit_order(steps, errors) if min(errors) > 1e-14 else None,
            "meridian_residual": residuals, "s_tau": prof.s_tau, "T_tau": prof.T_tau,
            "neck_size": float(neck_size(tau))}


def jacobi_study(tau, steps=(0.04, 0.02, 0.01), kinds=SIX_FIELDS, grid_step=1e-3):
    prof = delaunay_profile(tau, grid_step, tau_derivatives=tau < 1.0 and "D" in kinds)
    table, orders = [], {}
    for kind in kinds:
        res = [jacobi_residual(prof, JacobiFieldKind(kind), h) for h in steps]
        table += [[kind, float(h), r] for h, r in zip(steps, res)]
        orders[kind] = fit_order(steps, res) if min(res) > 1e-13 else None
    return {"tau": float(tau), "steps": list(steps), "table": table, "orders": orders}


def quadratic_remainder_study(tau, sizes=(0.04, 0.02, 0.01), window=None, direction=None):
    """Remainder of the normal-graph decomposition along a fixed unit direction in R^6."""
    prof = delaunay_profile(tau, 1e-3, tau_derivatives=True)
    d = np.ones(6) / np.sqrt(6.0) if direction is None else np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    window = (0.0, 0.5 * prof.s_tau) if window is None else window
    sups, consts = [], []
    for size in sizes:
        a = size * d
        pert = PerturbationVector(aT=a[:3], aR=a[3:5], aD=a[5])
        info = normal_graph_decompose(prof, pert, window)[3]
        sups.append(info["sup_psi"])
        consts.append(info["C"])
    return {"tau": float(tau), "sizes": list(sizes), "sup_remainder": sups, "C": consts,
            "exponent": fit_order(sizes, sups), "window": list(window)}


def profile_study(eps_list, H=1.0):
    rows = []
    for eps in eps_list:
        sol = solve_profiles(float(eps), H)
        dv = (1.0 - np.tanh(sol.t / SQRT2) ** 2) / SQRT2
        first_moment = float(np.trapezoid(sol.t * dv * dv, sol.t))
        rows.append({"eps": float(eps), "ell": sol.ell_eps, "lam": sol.lam,
                     "lam_discrete": sol.lam_discrete, "sigma_plus": sol.sigma_plus,
                     "sigma_minus": sol.sigma_minus, "residual_U": sol.residual_U,
                     "residual_psi": sol.residual_psi,
                     "ell_defect": abs(sol.ell_eps + 0.5 * H * sol.c_star),
                     "first_moment": first_moment})
    return {"H": float(H), "rows": rows}


def end_sweep(tau, eps_list, s0=2.0, tol=1e-10, M=48, n_t=481):
    """End corrections and corrected residuals along an exact unduloid across eps."""
    rows = []
    for eps in eps_list:
        P = EndProblem(float(tau), float(eps), M=M, n_t=n_t)
        corr = end_corrections(float(tau), float(eps), tol=tol, problem=P)
        approx = corrected_approximation(P, corr, s0=s0)
        res1 = residual(approx)
        res0 = residual(approx, corrected=False)
        N0 = P.error(P.zero_h(), np.zeros((P.M + 1, len(P.t))))
        split = float(np.max(np.abs((N0 - structural_terms(P)) * P.cut3)))
        d = corr.diagnostics
        rows.append({"eps": float(eps), "status": d["status"], "sweeps": d["sweeps"],
                     "max_factor": d["max_factor"], "factors": d["factors"],
                     "increments": d["increments"],
                     "phi_weighted": d["phi_weighted"], "phi_sup": d["phi_sup"],
                     "h_sup": d["h_sup"], "orthogonality": max(d["orthogonality"]),
                     "periodic_residual": d["periodic_residual_final"],
                     "residual_corrected": res1.meta, "residual_uncorrected": res0.meta,
                     "error_split": split, "delta": d["delta"], "h": corr.h.half()})
    eps = [r["eps"] for r in rows]
    fits = {"phi_exponent": fit_order(eps, [r["phi_weighted"] for r in rows]),
            "residual_order": fit_order(eps, [r["residual_corrected"]["weighted"] for r in rows]),
            "uncorrected_sup_order": fit_order(eps, [r["residual_uncorrected"]["tube_sup"]
                                                     for r in rows]),
            "error_split_exponent": fit_order(eps, [r["error_split"] for r in rows])}
    return {"tau": float(tau), "s0": float(s0), "rows": rows, "fits": fits}


def symmetric_ends(tau, k=3, s0=2.0, pert=None, amplitude=0.0, mode=2):
    """k coplanar ends at equal angles; end 0 carries ``pert``; all share a decaying offset."""
    v = None
    if amplitude != 0.0:
        _, f = decaying_mode(delaunay_profile(tau), mode)

        def v(s, th):
            return amplitude * f(s) * np.cos(mode * th)
    ends = []
    for j in range(k):
        ang = 2.0 * np.pi * j / k
        axis = (np.cos(ang), np.sin(ang), 0.0)
        p = pert if (j == 0 and pert is not None) else PerturbationVector()
        ends.append(EndConfiguration(float(tau), axis, pert=p, s0=float(s0), v_decay=v))
    return ends


def gluing_study(tau, s0_list=(2.0, 4.0, 6.0), size=0.02, amplitude=0.01, k=3, h=2e-3):
    """Annulus curvature deviation of end 0 for |d| and |d|/2 at each gluing scale."""
    rows = []
    for s0 in s0_list:
        row = {"s0": float(s0)}
        for tag, scale in (("full", 1.0), ("half", 0.5)):
            a = size * scale
            pert = PerturbationVector(aT=(a, 0.0, 0.0), aR=(a, 0.0), aD=a)
            ends = symmetric_ends(tau, k, s0, pert, amplitude)
            rep = curvature_report(build_glued_surface(ends, eta=max(DEFAULT_ETA, 2 * a * 3)), 0,
                                   h=h)
            row[tag] = rep
        row["ratio"] = row["full"]["coupled"] / row["half"]["coupled"]
        rows.append(row)
    ends = symmetric_ends(tau, k)
    return {"tau": float(tau), "k": k, "size": size, "amplitude": amplitude, "rows": rows,
            "balancing": check_balancing(ends).tolist(),
            "monotone": bool(all(rows[i + 1]["full"]["coupled"] < rows[i]["full"]["coupled"]
                                 for i in range(len(rows) - 1)))}


def glue_report(ends, h=2e-3):
    """Balancing record and per-end curvature reports for a user configuration."""
    G = build_glued_surface(ends)
    return {"balancing": check_balancing(ends).tolist(),
            "warnings": balancing_warnings(ends),
            "ends": [curvature_report(G, j, h=h) for j in range(len(ends))]}, G
