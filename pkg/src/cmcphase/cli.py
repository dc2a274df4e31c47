"""Command-line workbench: ``cmcphase COMMAND --config run.json --out DIR``.

Exit status 0 on success, 2 for configuration errors, 3 for numerical failures.
Every JSON report embeds the SHA-256 digest of the canonical config; wall-clock
timings go to timings.json so that the reports themselves are reproducible.
"""

import argparse
import json
import os
import platform
import sys
import time
import traceback

from .errors import (ConfigInvalid, InvalidParameter, ParallelEnds, PerturbationTooLarge,
                     WorkbenchError)

COMMANDS = ("delaunay", "jacobi", "profile", "glue", "residual", "corrections", "sweep")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS")

# key -> (accepted types, description); validated before any numerics are imported
SCHEMA = {
    "command": ((str,), "one of " + ", ".join(COMMANDS)),
    "tau": ((int, float, list), "Delaunay parameter(s) in (0, 1]"),
    "eps_list": ((list,), "strictly decreasing positive eps values"),
    "grid_step": ((int, float), "isothermal grid step"),
    "steps": ((list,), "refinement steps"),
    "sizes": ((list,), "perturbation sizes for the quadratic remainder"),
    "remainder": ((bool,), "also run the quadratic remainder study"),
    "s0": ((int, float), "gluing scale / correction start"),
    "s0_list": ((list,), "gluing scales"),
    "size": ((int, float), "perturbation size for the gluing study"),
    "amplitude": ((int, float), "amplitude of the decaying offset"),
    "ends": ((list,), "end configurations"),
    "M": ((int,), "half-period s nodes"),
    "n_t": ((int,), "strip t nodes"),
    "tol": ((int, float), "fixed-point tolerance"),
    "periods": ((int,), "number of periods to mesh"),
    "n_theta": ((int,), "angular mesh resolution"),
    "H": ((int, float), "mean curvature of the profile problem"),
    "scheme": ((str,), "chord or picard"),
}
END_KEYS = {"tau", "axis", "offset", "pert", "s0", "decay_amplitude"}
PERT_KEYS = {"aT", "aR", "aD"}


def _fail(key, why):
    raise ConfigInvalid(f"config key '{key}': {why}")


def _numbers(key, seq, positive=False):
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq):
        _fail(key, "expected numbers")
    if positive and not all(v > 0 for v in seq):
        _fail(key, "entries must be positive")


def validate_config(cfg):
    """Schema check; returns a normalized copy with ``tau`` as a list."""
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config must be a JSON object")
    for key, val in cfg.items():
        if key not in SCHEMA:
            _fail(key, "unknown key")
        types, desc = SCHEMA[key]
        if isinstance(val, bool) and bool not in types or not isinstance(val, types):
            _fail(key, f"expected {desc}")
    out = dict(cfg)
    if out.get("command") not in COMMANDS:
        _fail("command", f"expected one of {', '.join(COMMANDS)}")
    if "tau" in out:
        taus = out["tau"] if isinstance(out["tau"], list) else [out["tau"]]
        _numbers("tau", taus)
        if not taus or not all(0.0 < t <= 1.0 for t in taus):
            _fail("tau", "every tau must lie in (0, 1]")
        out["tau"] = taus
    if "eps_list" in out:
        eps = out["eps_list"]
        _numbers("eps_list", eps, positive=True)
        if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
            _fail("eps_list", "must be non-empty and strictly decreasing")
    for key in ("steps", "sizes", "s0_list"):
        if key in out:
            _numbers(key, out[key], positive=True)
    for key in ("grid_step", "tol", "s0", "size", "H"):
        if key in out and not out[key] > 0:
            _fail(key, "must be positive")
    for key in ("M", "n_t", "periods", "n_theta"):
        if key in out and out[key] < 2:
            _fail(key, "must be at least 2")
    if "scheme" in out and out["scheme"] not in ("chord", "picard"):
        _fail("scheme", "expected chord or picard")
    for j, end in enumerate(out.get("ends", [])):
        if not isinstance(end, dict):
            _fail(f"ends[{j}]", "expected an object")
        for key in end:
            if key not in END_KEYS:
                _fail(f"ends[{j}].{key}", "unknown key")
        if "tau" not in end or "axis" not in end:
            _fail(f"ends[{j}]", "needs tau and axis")
        _numbers(f"ends[{j}].tau", [end["tau"]])
        if not 0.0 < end["tau"] <= 1.0:
            _fail(f"ends[{j}].tau", "must lie in (0, 1]")
        for key, n in (("axis", 3), ("offset", 3)):
            if key in end:
                if not isinstance(end[key], list) or len(end[key]) != n:
                    _fail(f"ends[{j}].{key}", f"expected {n} numbers")
                _numbers(f"ends[{j}].{key}", end[key])
        pert = end.get("pert", {})
        if not isinstance(pert, dict) or set(pert) - PERT_KEYS:
            _fail(f"ends[{j}].pert", "expected an object with keys aT, aR, aD")
    needs = {"glue": "ends", "residual": "eps_list", "corrections": "eps_list",
             "sweep": "eps_list", "profile": "eps_list"}
    cmd = out["command"]
    if cmd in needs and needs[cmd] not in out:
        _fail(needs[cmd], f"required by '{cmd}'")
    if cmd in ("delaunay", "jacobi", "residual", "corrections", "sweep") and "tau" not in out:
        _fail("tau", f"required by '{cmd}'")
    return out


def load_config(path, command=None):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigInvalid(f"{path}: cannot read config ({exc.strerror})") from exc
    if command is not None:
        if isinstance(cfg, dict) and cfg.get("command", command) != command:
            _fail("command", f"config says '{cfg['command']}' but '{command}' was requested")
        cfg = dict(cfg, command=command) if isinstance(cfg, dict) else cfg
    return validate_config(cfg)


# ------------------------------------------------------------------ commands

def _tag(x):
    return format(float(x), "g")


def _write_chart_obj(path, chart, s, theta):
    import numpy as np

    from .io import fmt
    X = chart(s[:, None], theta[None, :])
    n_s, n_th = len(s) - 1, len(theta)
    lines = [f"v {fmt(p[0])} {fmt(p[1])} {fmt(p[2])}" for p in X.reshape(-1, 3)]
    for i in range(n_s):
        for j in range(n_th):
            a = i * n_th + j + 1
            b = i * n_th + (j + 1) % n_th + 1
            lines.append(f"f {a} {b} {b + n_th} {a + n_th}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return np.asarray(X)


def cmd_delaunay(cfg, out, clock, tol_scale):
    from .delaunay import delaunay_profile, write_obj, write_profile_csv
    from .studies import delaunay_study
    steps = tuple(cfg.get("steps", (4e-3, 2e-3, 1e-3)))
    runs = []
    for tau in cfg["tau"]:
        runs.append(clock.run(f"study_tau{_tag(tau)}", delaunay_study, tau, steps))
        prof = delaunay_profile(tau, cfg.get("grid_step", 1e-3))
        write_profile_csv(os.path.join(out, f"delaunay_tau{_tag(tau)}.csv"), prof)
        write_obj(os.path.join(out, f"delaunay_tau{_tag(tau)}.obj"), prof,
                  periods=cfg.get("periods", 1), n_theta=cfg.get("n_theta", 48))
    return {"studies": runs}


def cmd_jacobi(cfg, out, clock, tol_scale):
    from .io import write_csv
    from .studies import SIX_FIELDS, jacobi_study, quadratic_remainder_study
    steps = tuple(cfg.get("steps", (0.04, 0.02, 0.01)))
    runs, rows = [], []
    for tau in cfg["tau"]:
        r = clock.run(f"jacobi_tau{_tag(tau)}", jacobi_study, tau, steps)
        if cfg.get("remainder", False) and tau < 1.0:
            r["remainder"] = clock.run(f"remainder_tau{_tag(tau)}", quadratic_remainder_study,
                                       tau, tuple(cfg.get("sizes", (0.04, 0.02, 0.01))))
        runs.append(r)
        # kinds are indexed T1..D = 0..5 so the table stays numeric
        rows += [[tau, SIX_FIELDS.index(kind), h, res] for kind, h, res in r["table"]]
    write_csv(os.path.join(out, "jacobi_residuals.csv"), ["tau", "kind", "h", "residual"], rows)
    return {"studies": runs, "kind_index": list(SIX_FIELDS)}


def cmd_profile(cfg, out, clock, tol_scale):
    import numpy as np

    from .io import write_csv
    from .profiles import solve_profiles
    from .studies import profile_study
    H = cfg.get("H", 1.0)
    rep = clock.run("profile_study", profile_study, cfg["eps_list"], H)
    for eps in cfg["eps_list"]:
        sol = solve_profiles(float(eps), H)
        write_csv(os.path.join(out, f"profile_eps{_tag(eps)}.csv"), ["t", "U", "dU", "psi0"],
                  np.column_stack([sol.t, sol.U, sol.dU, sol.psi0]))
    return rep


def _ends_from_config(cfg):
    import numpy as np

    from .assembly import EndConfiguration
    from .delaunay import delaunay_profile
    from .jacobi import PerturbationVector, decaying_mode
    ends = []
    for e in cfg["ends"]:
        p = e.get("pert", {})
        pert = PerturbationVector(aT=p.get("aT", (0.0, 0.0, 0.0)), aR=p.get("aR", (0.0, 0.0)),
                                  aD=p.get("aD", 0.0))
        v = None
        amp = e.get("decay_amplitude", 0.0)
        if amp:
            fmode = decaying_mode(delaunay_profile(e["tau"]), 2)[1]

            def v(s, th, f=fmode, amp=amp):
                return amp * f(s) * np.cos(2.0 * th)
        ends.append(EndConfiguration(e["tau"], tuple(e["axis"]), tuple(e.get("offset", (0, 0, 0))),
                                     pert, e.get("s0", 2.0), v))
    return ends


def cmd_glue(cfg, out, clock, tol_scale):
    import numpy as np

    from .studies import glue_report
    ends = _ends_from_config(cfg)
    rep, G = clock.run("glue", glue_report, ends)
    th = np.linspace(0.0, 2.0 * np.pi, cfg.get("n_theta", 48), endpoint=False)
    for j, e in enumerate(ends):
        s = np.linspace(0.0, e.s0 + 3.0 + cfg.get("periods", 1) * G.profiles[j].s_tau, 241)
        _write_chart_obj(os.path.join(out, f"glue_end{j}.obj"), G.chart(j), s, th)
    if rep["warnings"]:
        print(f"warning: balancing residual {rep['warnings'][0]['residual']}", file=sys.stderr)
    return rep


def _corrections(cfg, tau, eps, tol_scale):
    from .assembly import EndProblem, end_corrections
    P = EndProblem(float(tau), float(eps), M=cfg.get("M", 48), n_t=cfg.get("n_t", 481))
    corr = end_corrections(float(tau), float(eps), tol=cfg.get("tol", 1e-10) * tol_scale,
                           problem=P, scheme=cfg.get("scheme", "chord"))
    return P, corr


def cmd_corrections(cfg, out, clock, tol_scale):
    import numpy as np

    from .io import write_csv
    runs = []
    for tau in cfg["tau"]:
        for eps in cfg["eps_list"]:
            P, corr = clock.run(f"corrections_tau{_tag(tau)}_eps{_tag(eps)}", _corrections, cfg,
                                tau, eps, tol_scale)
            phi = corr.phi.half()
            write_csv(os.path.join(out, f"corrections_tau{_tag(tau)}_eps{_tag(eps)}.csv"),
                      ["s", "h", "phi_sup", "phi_weighted"],
                      np.column_stack([P.s, corr.h.half(), np.max(np.abs(phi), axis=1),
                                       np.max(np.abs(phi * np.cosh(P.t) ** P.gamma), axis=1)]))
            runs.append(dict(corr.diagnostics, h=corr.h.half()))
    return {"runs": runs}


def cmd_residual(cfg, out, clock, tol_scale):
    import numpy as np

    from .assembly import corrected_approximation, residual
    from .fermi import tube_cutoff
    from .io import write_csv
    runs = []
    s0 = cfg.get("s0", 2.0)
    for tau in cfg["tau"]:
        for eps in cfg["eps_list"]:
            tag = f"tau{_tag(tau)}_eps{_tag(eps)}"
            P, corr = clock.run(f"corrections_{tag}", _corrections, cfg, tau, eps, tol_scale)
            approx = corrected_approximation(P, corr, s0=s0, periods=cfg.get("periods", 1))
            r1 = clock.run(f"residual_{tag}", residual, approx)
            r0 = residual(approx, corrected=False)
            c3 = tube_cutoff(approx.t, eps, approx.chart.delta, 3)
            w = np.cosh(approx.t) ** r1.gamma * c3
            write_csv(os.path.join(out, f"residual_{tag}.csv"),
                      ["s", "corrected_tube_sup", "corrected_weighted", "uncorrected_tube_sup"],
                      np.column_stack([approx.s, np.max(np.abs(r1.values * c3), axis=1),
                                       np.exp(r1.a * approx.s) * np.max(np.abs(r1.values * w), axis=1),
                                       np.max(np.abs(r0.values * c3), axis=1)]))
            runs.append({"tau": float(tau), "eps": float(eps), "s0": float(s0),
                         "corrected": r1.meta, "uncorrected": r0.meta})
    return {"runs": runs}


def cmd_sweep(cfg, out, clock, tol_scale):
    from .io import write_csv
    from .studies import end_sweep
    runs = []
    for tau in cfg["tau"]:
        r = clock.run(f"sweep_tau{_tag(tau)}", end_sweep, tau, cfg["eps_list"],
                      s0=cfg.get("s0", 2.0), tol=cfg.get("tol", 1e-10) * tol_scale,
                      M=cfg.get("M", 48), n_t=cfg.get("n_t", 481))
        write_csv(os.path.join(out, f"sweep_tau{_tag(tau)}.csv"),
                  ["eps", "max_factor", "phi_weighted", "h_sup", "residual_corrected_weighted",
                   "residual_uncorrected_weighted", "error_split"],
                  [[x["eps"], x["max_factor"], x["phi_weighted"], x["h_sup"],
                    x["residual_corrected"]["weighted"], x["residual_uncorrected"]["weighted"],
                    x["error_split"]] for x in r["rows"]])
        runs.append(r)
    return {"runs": runs}


HANDLERS = {"delaunay": cmd_delaunay, "jacobi": cmd_jacobi, "profile": cmd_profile,
            "glue": cmd_glue, "residual": cmd_residual, "corrections": cmd_corrections,
            "sweep": cmd_sweep}


def versions():
    import numpy
    import scipy

    from . import __version__
    return {"cmcphase": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg, out, tol_scale=1.0):
    """Run one validated config, writing ``<command>_report.json`` and timings.json into out."""
    from .io import config_digest, write_json
    from .studies import Stopwatch
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigInvalid(f"--out {out}: not writable ({exc.strerror})") from exc
    if not os.access(out, os.W_OK):
        raise ConfigInvalid(f"--out {out}: not writable")
    clock = Stopwatch()
    t0 = time.perf_counter()
    body = HANDLERS[cfg["command"]](cfg, out, clock, tol_scale)
    report = {"command": cfg["command"], "config": cfg, "config_digest": config_digest(cfg),
              "tol_scale": float(tol_scale), "versions": versions(), "result": body}
    if cfg["command"] == "glue":
        report["warnings"] = body["warnings"]
    write_json(os.path.join(out, f"{cfg['command']}_report.json"), report)
    laps = dict(clock.laps, total=time.perf_counter() - t0)
    write_json(os.path.join(out, "timings.json"), {"config_digest": report["config_digest"],
                                                   "seconds": laps})
    return report


def _chain(exc):
    parts = []
    while exc is not None:
        parts.append(f"{type(exc).__name__}: {exc}")
        exc = exc.__cause__ or exc.__context__
    return "\n  caused by ".join(parts)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="cmcphase", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=COMMANDS,
                    help="study to run (defaults to the config's 'command')")
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    ap.add_argument("--tol-scale", type=float, default=1.0, help="multiplies solver tolerances")
    ap.add_argument("--traceback", action="store_true", help="print the full traceback on error")
    args = ap.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            ap.error("--threads must be at least 1")
        # must happen before numpy loads its BLAS
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        if not args.tol_scale > 0:
            raise ConfigInvalid("--tol-scale must be positive")
        cfg = load_config(args.config, args.command)
        run(cfg, args.out, args.tol_scale)
    except (ConfigInvalid, InvalidParameter, ParallelEnds, PerturbationTooLarge) as exc:
        print(f"cmcphase: configuration error: {_chain(exc)}", file=sys.stderr)
        return 2
    except WorkbenchError as exc:
        print(f"cmcphase: numerical failure: {_chain(exc)}", file=sys.stderr)
        if args.traceback:
            traceback.print_exc()
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
