"""Command-line driver.

    torusforge <analyze|melnikov|branch|simulate|certify|lift> --input FILE
               [--mu F] [--eps F] [--grid N] [--tol F] [--seed N]
               [--out DIR] [--format json|csv]

The input document is one self-contained JSON experiment:

    {
      "system": {"P": "...", "Q": "...", "R": "..."},
      "perturbation": {"U": "...", "V": "...", "W": "..."}  |  {"simple": true},
      "interval": [lo, hi],
      "parameters": {"mu": 0.05, "eps": 0.05},
      "tolerances": {"atol": 1e-12, "rtol": 1e-10},
      "ball": {"center": [0, 0, 0], "radius": 1.0},
      "lift": {"L_values": ["1", "2"], "delta_values": ["1/4", "1/16"]}
    }

Every JSON report embeds the SHA-256 of the input document and the tool
version; floats are serialized with 17 significant digits and keys are
sorted, so identical runs (including --seed) produce byte-identical output.
Exit codes: 0 success, 2 criteria-not-applicable, 1 error.  The environment
variable TORUSFORGE_THREADS caps internal parallelism (all current sweeps
are sequential, so any cap is honored trivially).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import __version__
from .averaging import (
    averaged_equilibrium, branch_continuation, jordan_expansion,
    lyapunov_slices, melnikov_pair, to_standard_form,
)
from .criteria import (
    CriteriaError, PerturbationFamily, criteria_report, validate_hopf_zero,
)
from .fieldexpr import FieldExprError, parse_field
from .flow import IntegratorConfig, RescaledField, ThetaReturnMap, integrate
from .lift import Ball, find_separating_plane, poly_expr, translate_to_origin, \
    tune_lift_parameters
from .torus import certify_torus

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_APPLICABLE = 2


@dataclass
class RunSpec:
    command: str
    input_path: str
    mu: Optional[float]
    eps: Optional[float]
    grid: int
    tol: Optional[float]
    seed: int
    out_dir: str
    fmt: str
    threads: int
    simple: bool = False

    def to_dict(self):
        return {"command": self.command, "input": os.path.basename(self.input_path),
                "mu": self.mu, "eps": self.eps, "grid": self.grid,
                "tol": self.tol, "seed": self.seed, "format": self.fmt,
                "threads": self.threads, "simple": self.simple}


class _Float17(float):
    def __repr__(self):
        return format(float(self), ".17g")


def _wrap_floats(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, float):
        return _Float17(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _wrap_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_wrap_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_wrap_floats(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return _Float17(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_report(path: str, payload: dict):
    # indent forces the pure-python encoder, which honors __repr__ of floats
    text = json.dumps(_wrap_floats(payload), sort_keys=True, indent=1)
    with open(path, "w") as fh:
        fh.write(text + "\n")


def _document(spec: RunSpec) -> dict:
    with open(spec.input_path, "rb") as fh:
        raw = fh.read()
    doc = json.loads(raw.decode("utf-8"))
    doc["_sha256"] = hashlib.sha256(raw).hexdigest()
    if not isinstance(doc.get("system"), dict):
        raise CriteriaError("input document must define system {P, Q, R}")
    for comp in ("P", "Q", "R"):
        if comp not in doc["system"]:
            raise CriteriaError(f"system is missing component {comp}")
    return doc


def _meta(spec: RunSpec, doc: dict) -> dict:
    return {"tool": "torusforge", "version": __version__,
            "input_sha256": doc["_sha256"], "run": spec.to_dict()}


def _load_system(doc):
    return validate_hopf_zero(doc["system"]["P"], doc["system"]["Q"],
                              doc["system"]["R"])


def _load_family(doc, sys, force_simple=False):
    pert = doc.get("perturbation", {"simple": True})
    if force_simple or pert.get("simple"):
        S = sys.quadratic_sum
        if S == 0:
            raise CriteriaError("simple family undefined: R200 + R020 = 0")
        return PerturbationFamily.simple(beta=1 if S < 0 else -1)
    return PerturbationFamily.from_expressions(
        pert.get("U", "0"), pert.get("V", "0"), pert.get("W", "0"))


def _interval(doc):
    iv = doc.get("interval", [-1.0, 1.0])
    return (float(iv[0]), float(iv[1]))


def _integrator(doc, spec) -> IntegratorConfig:
    tols = doc.get("tolerances", {})
    atol = float(tols.get("atol", 1e-12))
    rtol = float(tols.get("rtol", 1e-10))
    if spec.tol is not None:
        atol = rtol = spec.tol
    return IntegratorConfig(atol=atol, rtol=rtol)


def _params(doc, spec):
    pars = doc.get("parameters", {})
    mu = spec.mu if spec.mu is not None else pars.get("mu")
    eps = spec.eps if spec.eps is not None else pars.get("eps")
    return (None if mu is None else float(mu),
            None if eps is None else float(eps))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analyze(spec: RunSpec) -> int:
    doc = _document(spec)
    sys_ = _load_system(doc)
    fam = _load_family(doc, sys_, force_simple=spec.simple)
    rep = criteria_report(sys_, fam, _interval(doc))
    payload = {"meta": _meta(spec, doc), "criteria": rep.to_dict()}
    write_report(os.path.join(spec.out_dir, "analyze.json"), payload)
    return EXIT_OK if rep.applicable else EXIT_NOT_APPLICABLE


def cmd_melnikov(spec: RunSpec) -> int:
    doc = _document(spec)
    sys_ = _load_system(doc)
    fam = _load_family(doc, sys_, force_simple=spec.simple)
    mu, _ = _params(doc, spec)
    mu = 0.0 if mu is None else mu
    mel = melnikov_pair(to_standard_form(sys_, fam))
    eq = averaged_equilibrium(mel, mu)
    n = spec.grid
    rs = np.linspace(0.5 * eq.r, 1.5 * eq.r, n)
    ws = np.linspace(eq.w - 1.0, eq.w + 1.0, n)
    path = os.path.join(spec.out_dir, "melnikov.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "w", "f1_1", "f1_2", "f2_1", "f2_2"])
        for r in rs:
            for w in ws:
                f1 = mel.f1((r, w), mu)
                f2 = mel.f2_quadrature((r, w), mu)
                writer.writerow([repr(float(v))
                                 for v in (r, w, f1[0], f1[1], f2[0], f2[1])])
    return EXIT_OK


def cmd_branch(spec: RunSpec) -> int:
    doc = _document(spec)
    sys_ = _load_system(doc)
    fam = _load_family(doc, sys_, force_simple=spec.simple)
    rep = criteria_report(sys_, fam, _interval(doc))
    if not rep.applicable:
        payload = {"meta": _meta(spec, doc), "criteria": rep.to_dict(),
                   "error": "criteria not applicable; branch skipped"}
        write_report(os.path.join(spec.out_dir, "branch.json"), payload)
        return EXIT_NOT_APPLICABLE
    mel = melnikov_pair(to_standard_form(sys_, fam))
    tmap = ThetaReturnMap(sys_, fam, IntegratorConfig(atol=1e-13, rtol=1e-11))
    mu0 = rep.perturbation.mu0
    branch = branch_continuation(mel, tmap, mu0)
    slices = lyapunov_slices(tmap, mel, mu0)
    jordan = jordan_expansion(tmap, mel, mu0)
    xi1 = branch.xi_slice(mu0)
    payload = {
        "meta": _meta(spec, doc),
        "criteria": rep.to_dict(),
        "branch": branch.to_dict(),
        "xi_slice_at_mu0": [float(v) for v in xi1],
        "lyapunov": {"l11": slices.l11, "l12": slices.l12,
                     "samples": [list(v) for v in slices.values]},
        "jordan": {"omega0": jordan.omega0, "zeta2": jordan.zeta2,
                   "A1": jordan.A1.tolist(), "A2": jordan.A2.tolist(),
                   "m21_1": jordan.m21_1, "m22_1": jordan.m22_1,
                   "rotation_residual": jordan.rotation_residual},
    }
    if branch.xi_slices_closed is not None:
        bc = branch.xi_slices_closed
        payload["closed_forms"] = {
            "mu1": str(bc.mu1), "xi2": str(bc.xi2),
            "xi1_const": str(bc.xi1_const), "xi1_slope": bc.xi1_slope,
            "m21_1": bc.m21_1, "m22_1": bc.m22_1,
        }
    write_report(os.path.join(spec.out_dir, "branch.json"), payload)
    return EXIT_OK


def cmd_simulate(spec: RunSpec) -> int:
    doc = _document(spec)
    sys_ = _load_system(doc)
    fam = _load_family(doc, sys_, force_simple=spec.simple)
    mu, eps = _params(doc, spec)
    if mu is None or eps is None:
        raise CriteriaError("simulate requires both mu and eps")
    cfg = _integrator(doc, spec)
    field = RescaledField(sys_, fam).field3(mu, eps)
    x0 = doc.get("initial_state")
    if x0 is None:
        mel = melnikov_pair(to_standard_form(sys_, fam))
        eq = averaged_equilibrium(mel, mu)
        x0 = [eq.r + 0.05, 0.0, eq.w]
    periods = float(doc.get("periods", 50))
    traj = integrate(field, [float(v) for v in x0],
                     (0.0, periods * 2 * math.pi), cfg)
    traj.write_csv(os.path.join(spec.out_dir, "trajectory.csv"))
    return EXIT_OK


def cmd_certify(spec: RunSpec) -> int:
    doc = _document(spec)
    sys_ = _load_system(doc)
    fam = _load_family(doc, sys_, force_simple=spec.simple)
    mu, eps = _params(doc, spec)
    if mu is None or eps is None:
        raise CriteriaError("certify requires both mu and eps")
    rep = criteria_report(sys_, fam, _interval(doc))
    if not rep.applicable:
        payload = {"meta": _meta(spec, doc), "criteria": rep.to_dict(),
                   "error": "criteria not applicable; certification skipped"}
        write_report(os.path.join(spec.out_dir, "certificate.json"), payload)
        return EXIT_NOT_APPLICABLE
    mel = melnikov_pair(to_standard_form(sys_, fam))
    tmap = ThetaReturnMap(sys_, fam, IntegratorConfig(atol=1e-13, rtol=1e-11))
    branch = branch_continuation(mel, tmap, rep.perturbation.mu0,
                                 eps_ladder=(eps, eps / 2, eps / 4))
    cert = certify_torus(tmap, mu, eps, branch, ell1=rep.base.ell1)
    payload = {"meta": _meta(spec, doc), "criteria": rep.to_dict(),
               "certificate": cert.to_dict()}
    write_report(os.path.join(spec.out_dir, "certificate.json"), payload)
    if cert.curve_points is not None:
        cert.write_curve_csv(os.path.join(spec.out_dir, "curve.csv"))
    return EXIT_OK


def cmd_lift(spec: RunSpec) -> int:
    doc = _document(spec)
    seed_field = tuple(parse_field(doc["system"][c]).poly for c in "PQR")
    ball_doc = doc.get("ball", {"center": [0.0, 0.0, 0.0], "radius": 1.0})
    ball = Ball(tuple(float(v) for v in ball_doc["center"]),
                float(ball_doc["radius"]))
    plane = find_separating_plane(seed_field, ball, seed=spec.seed)
    translated = translate_to_origin(plane.field, plane.point)
    lift_doc = doc.get("lift", {})
    L_values = [Fraction(v) for v in lift_doc["L_values"]] \
        if "L_values" in lift_doc else None
    delta_values = [Fraction(v) for v in lift_doc["delta_values"]] \
        if "delta_values" in lift_doc else None
    tuning = tune_lift_parameters(translated, L_values, delta_values,
                                  seed=spec.seed)
    fam = tuning.family
    payload = {
        "meta": _meta(spec, doc),
        "plane": {
            "point": [str(v) for v in plane.point],
            "coefficients": [str(v) for v in plane.coefficients],
            "distance_to_ball": plane.plane_distance,
            "containment_residual": plane.containment_residual,
            "jitter": plane.jitter_magnitude,
        },
        "lift": {
            "L_star": str(tuning.L_star), "delta_star": str(tuning.delta_star),
            "degree": fam.degree,
            "char_poly_ok": fam.char_poly_ok,
            "linear_residual": fam.linear_residual,
            "A_coeffs": [str(c) for c in tuning.A_coeffs],
            "A_limit": str(tuning.A_limit),
            "A_limit_printed": str(tuning.A_limit_printed),
            "delta_linearity_residual": tuning.delta_linearity_residual,
            "ell1_jitter": tuning.ell1_jitter,
        },
        "criteria": tuning.report.to_dict(),
    }
    write_report(os.path.join(spec.out_dir, "lift.json"), payload)
    sys_y = tuning.tuned_system
    lines = [f"P = {poly_expr(sys_y.P.poly).to_string()}",
             f"Q = {poly_expr(sys_y.Q.poly).to_string()}",
             f"R = {poly_expr(sys_y.R.poly).to_string()}", ""]
    lifted_lines = [f"X{i} = {poly_expr(p).to_string()}"
                    for i, p in enumerate(fam.lifted, start=1)]
    with open(os.path.join(spec.out_dir, "lifted_system.txt"), "w") as fh:
        fh.write("# normalized Hopf-Zero system Y (linear part (-y, x, 0))\n")
        fh.write("\n".join(lines))
        fh.write("# lifted field X_{L*, delta*}\n")
        fh.write("\n".join(lifted_lines) + "\n")
    return EXIT_OK if tuning.report.applicable else EXIT_NOT_APPLICABLE


COMMANDS = {
    "analyze": cmd_analyze,
    "melnikov": cmd_melnikov,
    "branch": cmd_branch,
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "lift": cmd_lift,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torusforge",
        description="Torus bifurcation analysis for perturbed Hopf-Zero "
                    "polynomial vector fields")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--input", required=True, help="experiment JSON document")
    parser.add_argument("--mu", type=float, default=None)
    parser.add_argument("--eps", type=float, default=None)
    parser.add_argument("--grid", type=int, default=21)
    parser.add_argument("--tol", type=float, default=None,
                        help="override integrator tolerances")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--format", dest="fmt", choices=("json", "csv"),
                        default="json")
    parser.add_argument("--simple", action="store_true",
                        help="force the degree-preserving family "
                             "(0, 0, mu*z + beta*eps) regardless of the document")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.tol is not None and args.tol <= 0:
        print(json.dumps({"error": "tolerance overrides must be positive"}))
        return EXIT_ERROR
    threads = int(os.environ.get("TORUSFORGE_THREADS", "1") or 1)
    spec = RunSpec(command=args.command, input_path=args.input, mu=args.mu,
                   eps=args.eps, grid=args.grid, tol=args.tol, seed=args.seed,
                   out_dir=args.out, fmt=args.fmt, threads=threads,
                   simple=args.simple)
    os.makedirs(spec.out_dir, exist_ok=True)
    try:
        return COMMANDS[args.command](spec)
    except (CriteriaError, FieldExprError, ValueError, RuntimeError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        path = os.path.join(spec.out_dir, f"{args.command}_error.json")
        try:
            write_report(path, err)
        except OSError:
            pass
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
