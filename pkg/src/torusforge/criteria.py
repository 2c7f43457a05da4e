"""Hopf-Zero normal position and the explicit torus-bifurcation criteria.

Quantities handled here are exact rationals wherever the inputs are; numeric
conversion happens at the averaging boundary.  The first Lyapunov quantity
ell_1 is delegated to the averaging pipeline (see `averaging`); the closed
formula transcribed from the source text is also evaluated and reported, but
it is inconsistent with the worked example and with the dynamics (see
`ell1_transcribed`), so the pipeline value is authoritative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

from .fieldexpr import (
    FieldExpr, Jet3, ParamJet3, Poly, as_field_expr, jet_extract,
)

ETA_ROOT_TOL = 1e-12
ETA_SCAN_POINTS = 512
TRANSVERSALITY_TOL = 1e-10


class CriteriaError(ValueError):
    pass


class ConstantTermPresent(CriteriaError):
    def __init__(self, component: str, coefficient):
        super().__init__(f"{component} has constant term {coefficient}")
        self.component = component
        self.coefficient = coefficient


class LinearTermPresent(CriteriaError):
    def __init__(self, component: str, variable: str, coefficient):
        super().__init__(f"{component} has linear term {coefficient}*{variable}")
        self.component = component
        self.variable = variable
        self.coefficient = coefficient


class DegenerateSum(CriteriaError):
    pass


class InvalidPerturbation(CriteriaError):
    pass


class NoRootInInterval(CriteriaError):
    pass


class DegenerateTransversality(CriteriaError):
    pass


class GammaNonNegative(CriteriaError):
    pass


# ---------------------------------------------------------------------------
# validated system and perturbation family
# ---------------------------------------------------------------------------

@dataclass
class HopfZeroSystem:
    """Unperturbed field (P, Q, R) on top of the linear part (-y, x, 0)."""
    P: FieldExpr
    Q: FieldExpr
    R: FieldExpr
    jP: Jet3 = field(repr=False, default=None)
    jQ: Jet3 = field(repr=False, default=None)
    jR: Jet3 = field(repr=False, default=None)

    @property
    def polys(self) -> Tuple[Poly, Poly, Poly]:
        return self.P.poly, self.Q.poly, self.R.poly

    @property
    def quadratic_sum(self) -> Fraction:
        """R^(2,0,0) + R^(0,2,0)."""
        return self.jR.get(2, 0, 0) + self.jR.get(0, 2, 0)

    @property
    def divergence_pair(self) -> Fraction:
        """P^(1,0,1) + Q^(0,1,1)."""
        return self.jP.get(1, 0, 1) + self.jQ.get(0, 1, 1)

    @property
    def omega(self) -> Fraction:
        return -self.divergence_pair * self.quadratic_sum


def validate_hopf_zero(P, Q, R) -> HopfZeroSystem:
    """Check that P, Q, R are polynomial in (x, y, z) with no constant or
    linear terms, and attach exact jets."""
    exprs = [as_field_expr(e) for e in (P, Q, R)]
    for name, e in zip("PQR", exprs):
        bad = [v for v in e.poly.free_variables() if v in ("mu", "eps")]
        if bad:
            raise CriteriaError(f"{name} must not depend on parameters (found {bad[0]})")
        for mono, coeff in e.poly.terms.items():
            total = mono[0] + mono[1] + mono[2]
            if total == 0:
                raise ConstantTermPresent(name, coeff)
            if total == 1:
                var = ("x", "y", "z")[mono.index(1)]
                raise LinearTermPresent(name, var, coeff)
    jets = [jet_extract(e) for e in exprs]
    return HopfZeroSystem(*exprs, *jets)


@dataclass
class PerturbationFamily:
    """(U, V, W) in (x, y, z, mu, eps) with extracted eps-order slices.

    slice i (1-based) is the coefficient of eps^(i-1) in the component, so the
    perturbed field eps*U contributes U_i at order eps^i.
    """
    U: FieldExpr
    V: FieldExpr
    W: FieldExpr
    slices: Dict[str, Tuple[Poly, Poly, Poly]] = field(repr=False, default=None)
    jets: Dict[str, Tuple[ParamJet3, ...]] = field(repr=False, default=None)
    simple_case: bool = False

    @classmethod
    def from_expressions(cls, U, V, W, simple_case: bool = False) -> "PerturbationFamily":
        exprs = [as_field_expr(e) for e in (U, V, W)]
        slices = {}
        jets = {}
        for name, e in zip("UVW", exprs):
            # orders beyond eps^2 still enter the exact flow; only the first
            # three slices matter for second-order criteria
            s = tuple(e.poly.coeff_of_eps(i) for i in range(3))
            origin = s[0].substitute({v: Poly() for v in ("x", "y", "z")})
            if origin:
                raise InvalidPerturbation(
                    f"{name}_1(0,0,0; mu) = {origin!r} must vanish identically")
            slices[name] = s
            jets[name] = tuple(_param_jet(p) for p in s)
        return cls(*exprs, slices=slices, jets=jets, simple_case=simple_case)

    @classmethod
    def simple(cls, beta: int) -> "PerturbationFamily":
        """The degree-preserving family (U, V, W) = (0, 0, mu*z + beta*eps)."""
        w = f"mu*z + ({beta})*eps" if beta >= 0 else f"mu*z - {abs(beta)}*eps"
        return cls.from_expressions("0", "0", w, simple_case=True)

    # criteria ingredients, exact polynomials in mu
    def sigma(self) -> Poly:
        """U_1^(1,0,0)(mu) + V_1^(0,1,0)(mu)."""
        return (self.jets["U"][0].entry(1, 0, 0)
                + self.jets["V"][0].entry(0, 1, 0))

    def w1z(self) -> Poly:
        """W_1^(0,0,1)(mu)."""
        return self.jets["W"][0].entry(0, 0, 1)

    def w20(self) -> Poly:
        """W_2(0,0,0; mu)."""
        return self.jets["W"][1].entry(0, 0, 0)


def _param_jet(p: Poly) -> ParamJet3:
    pj = jet_extract(p)
    if isinstance(pj, Jet3):
        entries = {idx: Poly.constant(val) for idx, val in pj.items()}
        return ParamJet3(entries)
    return pj


# ---------------------------------------------------------------------------
# base criteria: Omega, beta, Gamma scale, ell_1
# ---------------------------------------------------------------------------

@dataclass
class BaseCriteria:
    omega: Fraction
    beta: int
    gamma_scale: float
    quadratic_sum: Fraction
    nondegenerate: bool
    ell1: Optional[float]
    ell1_order1: Optional[float]            # eps^1 slice of ell_1^eps (expected 0)
    ell1_transcribed: Fraction
    ell1_discrepancy: Optional[float]
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "omega": float(self.omega),
            "omega_exact": str(self.omega),
            "beta": self.beta,
            "gamma_scale": self.gamma_scale,
            "quadratic_sum": str(self.quadratic_sum),
            "nondegenerate": self.nondegenerate,
            "ell1": self.ell1,
            "ell1_order1": self.ell1_order1,
            "ell1_transcribed": float(self.ell1_transcribed),
            "ell1_discrepancy": self.ell1_discrepancy,
            "notes": list(self.notes),
        }


def evaluate_base_criteria(sys: HopfZeroSystem) -> BaseCriteria:
    S = sys.quadratic_sum
    if S == 0:
        raise DegenerateSum("R^(2,0,0) + R^(0,2,0) = 0; beta undefined")
    omega = sys.omega
    beta = -1 if S > 0 else 1
    gamma_scale = math.sqrt(abs(S))
    transcribed = ell1_transcribed(sys.jP, sys.jQ, sys.jR)

    notes: List[str] = []
    ell1 = l11 = None
    discrepancy = None
    if omega > 0:
        from .averaging import first_lyapunov_quantity
        res = first_lyapunov_quantity(sys)
        ell1, l11 = float(res.ell1), float(res.l11)
        discrepancy = float(abs(ell1 - float(transcribed)))
        if discrepancy > 1e-6 * max(1.0, abs(ell1)):
            notes.append(
                "transcribed closed-form ell1 disagrees with the averaging "
                "pipeline; pipeline value is authoritative")
    else:
        notes.append("NondegeneracyFailed: Omega <= 0, ell1 not evaluated")

    return BaseCriteria(
        omega=omega, beta=beta, gamma_scale=gamma_scale, quadratic_sum=S,
        nondegenerate=omega > 0, ell1=ell1, ell1_order1=l11,
        ell1_transcribed=transcribed, ell1_discrepancy=discrepancy,
        notes=tuple(notes),
    )


def ell1_transcribed(jP: Jet3, jQ: Jet3, jR: Jet3) -> Fraction:
    """The closed-form ell_1 exactly as transcribed, three outer groups.

    On the worked example this evaluates to -16 while the dynamics (and the
    independent averaging pipeline) give -48; the transcription is kept
    verbatim for auditability and the discrepancy is reported upstream.
    """
    P, Q, R = jP.get, jQ.get, jR.get
    S = R(0, 2, 0) + R(2, 0, 0)
    omega = -(P(1, 0, 1) + Q(0, 1, 1)) * S

    group1 = -omega * S * (
        R(0, 0, 2) * (
            (R(0, 2, 0) - R(2, 0, 0)) * (P(0, 1, 1) + Q(1, 0, 1))
            + 2 * (-Q(2, 0, 0) * (P(2, 0, 0) + Q(1, 1, 0) + 2 * R(1, 0, 1))
                   + 2 * P(1, 0, 1) * R(1, 1, 0)
                   + P(1, 2, 0) + P(1, 1, 0) * P(2, 0, 0) + P(3, 0, 0)
                   - Q(0, 2, 0) * (Q(1, 1, 0) + 2 * R(1, 0, 1))
                   + Q(0, 3, 0) + Q(2, 1, 0)
                   + 2 * R(0, 2, 1) + 2 * R(2, 0, 1))
            + 2 * P(0, 2, 0) * (P(1, 1, 0) + Q(0, 2, 0))
            + 4 * (P(0, 2, 0) + P(2, 0, 0)) * R(0, 1, 1)
        )
        - 4 * S * (3 * P(0, 0, 2) * R(0, 1, 1)
                   - 3 * Q(0, 0, 2) * R(1, 0, 1) + R(0, 0, 3))
        - 2 * R(1, 1, 0) * R(0, 0, 2) ** 2
    )

    group2 = R(0, 0, 2) * S ** 2 * (
        4 * S * (P(0, 0, 2) * (2 * R(0, 1, 1) - P(1, 1, 0) - Q(0, 2, 0))
                 + Q(0, 0, 2) * (P(2, 0, 0) + Q(1, 1, 0) - 2 * R(1, 0, 1))
                 - P(1, 0, 2) - Q(0, 1, 2))
        + R(0, 0, 2) * (
            (R(2, 0, 0) - R(0, 2, 0)) * (P(0, 1, 1) + Q(1, 0, 1))
            + 2 * (-Q(2, 0, 0) * (P(2, 0, 0) + Q(1, 1, 0))
                   - 2 * P(1, 0, 1) * R(1, 1, 0)
                   + P(1, 2, 0) + P(1, 1, 0) * P(2, 0, 0) + P(3, 0, 0)
                   + Q(0, 3, 0) - Q(0, 2, 0) * Q(1, 1, 0) + Q(2, 1, 0))
            + 2 * P(0, 2, 0) * (P(1, 1, 0) + Q(0, 2, 0))
        )
    )

    group3 = 2 * omega ** 2 * R(0, 0, 2) * R(1, 1, 0)
    return group1 + group2 + group3


# ---------------------------------------------------------------------------
# perturbation criteria: Gamma(mu), eta(mu), mu_0, alpha_d
# ---------------------------------------------------------------------------

@dataclass
class PerturbationCriteria:
    gamma_criterion: Callable[[float], float]       # operational: -r_mu^2
    gamma_printed: Callable[[float], float]         # verbatim ratio form
    eta: Callable[[float], float]
    w_mu: Callable[[float], float]
    mu0: float
    alpha_d: float
    roots: Tuple[Tuple[float, float], ...]          # (mu0, alpha_d) per root
    gamma_flagged: Tuple[float, ...]                # grid mus with Gamma >= 0
    gamma_discrepancy_max: float
    interval: Tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "mu0": self.mu0,
            "alpha_d": self.alpha_d,
            "roots": [list(r) for r in self.roots],
            "gamma_at_mu0": self.gamma_criterion(self.mu0),
            "gamma_printed_at_mu0": self.gamma_printed(self.mu0),
            "gamma_discrepancy_max": self.gamma_discrepancy_max,
            "gamma_flagged_count": len(self.gamma_flagged),
            "interval": list(self.interval),
        }


def perturbation_functions(sys: HopfZeroSystem, fam: PerturbationFamily):
    """Exact-in-mu callables (Gamma_operational, Gamma_printed, eta, w_mu)."""
    d = sys.divergence_pair
    if d == 0:
        raise CriteriaError("P^(1,0,1) + Q^(0,1,1) = 0; criteria undefined")
    S = sys.quadratic_sum
    if S == 0:
        raise DegenerateSum("R^(2,0,0) + R^(0,2,0) = 0")
    c = sys.jR.get(0, 0, 2)
    sigma, w1z, w20 = fam.sigma(), fam.w1z(), fam.w20()

    def w_mu(mu):
        return -sigma.eval(mu=mu) / d

    def gamma_operational(mu):
        # -r_mu^2 with r_mu^2 the root of f1^2(., w_mu) = 0
        w = w_mu(mu)
        return (2 * c * w * w + 4 * w1z.eval(mu=mu) * w + 4 * w20.eval(mu=mu)) / S

    def gamma_printed(mu):
        s = sigma.eval(mu=mu)
        return ((2 * c * s * s - w1z.eval(mu=mu) * s) / (S * d * d)
                + 4 * w20.eval(mu=mu) / S)

    def eta(mu):
        return math.pi * (d * w1z.eval(mu=mu) - c * sigma.eval(mu=mu)) / d

    return gamma_operational, gamma_printed, eta, w_mu


def evaluate_perturbation_criteria(
        sys: HopfZeroSystem, fam: PerturbationFamily,
        interval: Tuple[float, float]) -> PerturbationCriteria:
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise CriteriaError(f"empty interval {interval!r}")
    gamma_op, gamma_pr, eta, w_mu = perturbation_functions(sys, fam)

    grid = [lo + (hi - lo) * i / (ETA_SCAN_POINTS - 1) for i in range(ETA_SCAN_POINTS)]
    gamma_vals = [gamma_op(m) for m in grid]
    flagged = tuple(m for m, g in zip(grid, gamma_vals) if g >= 0)
    if len(flagged) == len(grid):
        raise GammaNonNegative("Gamma_criterion(mu) >= 0 on the whole interval")
    disc = max(abs(gamma_op(m) - gamma_pr(m)) for m in grid)

    eta_vals = [eta(m) for m in grid]
    roots: List[Tuple[float, float]] = []
    for i in range(len(grid) - 1):
        a, b, fa, fb = grid[i], grid[i + 1], eta_vals[i], eta_vals[i + 1]
        root = None
        if fa == 0.0:
            root = a
        elif fa * fb < 0:
            root = _bisect(eta, a, b, fa, fb)
        if root is not None and not any(abs(root - r) <= 1e-9 * max(1, abs(root))
                                        for r, _ in roots):
            roots.append((root, _central_slope(eta, root)))
    if eta_vals[-1] == 0.0 and not any(abs(grid[-1] - r) <= 1e-9 for r, _ in roots):
        roots.append((grid[-1], _central_slope(eta, grid[-1])))
    if not roots:
        raise NoRootInInterval(f"eta has no root in [{lo}, {hi}]")

    roots.sort(key=lambda t: -abs(t[1]))
    mu0, alpha_d = roots[0]
    if abs(alpha_d) < TRANSVERSALITY_TOL:
        raise DegenerateTransversality(f"|eta'(mu0)| = {abs(alpha_d)} < {TRANSVERSALITY_TOL}")
    if gamma_op(mu0) >= 0:
        raise GammaNonNegative(f"Gamma_criterion(mu0) = {gamma_op(mu0)} >= 0")

    return PerturbationCriteria(
        gamma_criterion=gamma_op, gamma_printed=gamma_pr, eta=eta, w_mu=w_mu,
        mu0=mu0, alpha_d=alpha_d, roots=tuple(roots), gamma_flagged=flagged,
        gamma_discrepancy_max=disc, interval=(lo, hi),
    )


def _bisect(f, a, b, fa, fb, tol=ETA_ROOT_TOL, max_iter=200):
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = f(m)
        if abs(fm) <= tol:
            return m
        if fa * fm < 0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _central_slope(f, x0, scale=1e-6):
    h = scale * max(1.0, abs(x0))
    return (f(x0 + h) - f(x0 - h)) / (2 * h)


# ---------------------------------------------------------------------------
# combined report
# ---------------------------------------------------------------------------

@dataclass
class CriteriaReport:
    base: BaseCriteria
    perturbation: Optional[PerturbationCriteria]
    applicable: bool
    reasons: Tuple[str, ...]

    def to_dict(self) -> dict:
        out = {"applicable": self.applicable, "reasons": list(self.reasons)}
        out.update(self.base.to_dict())
        if self.perturbation is not None:
            out["perturbation"] = self.perturbation.to_dict()
        return out


def criteria_report(sys: HopfZeroSystem, fam: Optional[PerturbationFamily],
                    interval: Tuple[float, float] = (-1.0, 1.0)) -> CriteriaReport:
    """Run the full applicability checklist for Theorem-style torus bifurcation.

    Non-fatal failures are collected as reason codes; structural errors
    (degenerate quadratic sum, missing eta root, ...) raise.
    """
    base = evaluate_base_criteria(sys)
    reasons: List[str] = []
    if not base.nondegenerate:
        reasons.append("NondegeneracyFailed")
    pert = None
    if fam is not None:
        pert = evaluate_perturbation_criteria(sys, fam, interval)
        if base.ell1 is not None and base.ell1 == 0:
            reasons.append("Ell1Zero")
    if base.ell1 is not None and abs(base.ell1) < 1e-12:
        reasons.append("Ell1Zero")
    applicable = bool(base.nondegenerate and pert is not None
                      and base.ell1 is not None and abs(base.ell1) >= 1e-12)
    return CriteriaReport(base=base, perturbation=pert,
                          applicable=applicable,
                          reasons=tuple(dict.fromkeys(reasons)))
