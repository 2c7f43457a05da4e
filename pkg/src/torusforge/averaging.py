"""Second-order averaging machinery for the rescaled Hopf-Zero family.

The rescaled cylindrical system  dr/dtheta = eps F1 + eps^2 F2 + O(eps^3)
is represented exactly: angular dependence in the complex Fourier basis
e^{i m theta} with Gaussian-rational coefficients, radial/axial/parameter
dependence as (Laurent-in-r) monomials r^a w^b mu^c.  Both Melnikov
functions then come out as polynomials in (r, w, mu) whose coefficients are
exact rationals times powers of pi, and the first Lyapunov quantity is
obtained from them by a short complex series computation.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .criteria import DegenerateSum, HopfZeroSystem, PerturbationFamily
from .fieldexpr import Poly

QUADRATURE_TOL = 1e-11
PERIOD = 2.0 * math.pi
EQUILIBRIUM_RESIDUAL = 1e-12
STRONG_RESONANCE_TOL = 1e-8


class AveragingError(ValueError):
    pass


class QuadratureNotConverged(AveragingError):
    pass


class NewtonDiverged(AveragingError):
    pass


class ComplexPairLost(AveragingError):
    """Hypothesis H fails: the averaged Jacobian has a real spectrum."""


class StrongResonance(AveragingError):
    pass


# ---------------------------------------------------------------------------
# exact scalars: Gaussian rationals and polynomials in pi
# ---------------------------------------------------------------------------

class CFrac:
    """Complex number with exact Fraction parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    def __add__(self, other):
        return CFrac(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return CFrac(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        if isinstance(other, CFrac):
            return CFrac(self.re * other.re - self.im * other.im,
                         self.re * other.im + self.im * other.re)
        return CFrac(self.re * other, self.im * other)

    def __truediv__(self, other):
        if isinstance(other, CFrac):
            n = other.re * other.re + other.im * other.im
            return CFrac((self.re * other.re + self.im * other.im) / n,
                         (self.im * other.re - self.re * other.im) / n)
        return CFrac(self.re / other, self.im / other)

    def __neg__(self):
        return CFrac(-self.re, -self.im)

    def __eq__(self, other):
        return isinstance(other, CFrac) and self.re == other.re and self.im == other.im

    def __bool__(self):
        return bool(self.re or self.im)

    def __complex__(self):
        return complex(self.re, self.im)

    def __repr__(self):
        return f"CFrac({self.re}, {self.im})"


# ---------------------------------------------------------------------------
# trig polynomials: sum of coeff * e^{i m theta} * r^a w^b mu^c
# ---------------------------------------------------------------------------

TrigKey = Tuple[int, int, int, int]  # (m, r_pow, w_pow, mu_pow); r_pow may be < 0


class TrigPoly:
    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Dict[TrigKey, CFrac]] = None):
        self.terms: Dict[TrigKey, CFrac] = {}
        if terms:
            for key, c in terms.items():
                if c:
                    self.terms[key] = c

    @classmethod
    def from_xyz_poly(cls, poly: Poly) -> "TrigPoly":
        """Substitute x = r cos(theta), y = r sin(theta), z = w into a Poly
        over (x, y, z, mu); exact in the e^{i m theta} basis."""
        out: Dict[TrigKey, CFrac] = {}
        for mono, coeff in poly.terms.items():
            i, j, k, a, b = mono
            if b != 0:
                raise ValueError("eps must be sliced away before cylindrical substitution")
            base = CFrac(coeff)
            # x^i -> (1/2)^i sum_t C(i,t) e^{i(2t-i)}
            # y^j -> (-i/2)^j sum_u C(j,u) (-1)^(j-u) e^{i(2u-j)}
            scale = base * CFrac(Fraction(1, 2 ** i))
            half_mi = CFrac(0, Fraction(-1, 2))
            for _ in range(j):
                scale = scale * half_mi
            for t in range(i + 1):
                ct = Fraction(math.comb(i, t))
                for u in range(j + 1):
                    cu = Fraction(math.comb(j, u) * ((-1) ** (j - u)))
                    m = (2 * t - i) + (2 * u - j)
                    key = (m, i + j, k, a)
                    add = scale * (ct * cu)
                    prev = out.get(key)
                    out[key] = add if prev is None else prev + add
        return cls(out)

    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        out = dict(self.terms)
        for key, c in other.terms.items():
            prev = out.get(key)
            s = c if prev is None else prev + c
            if s:
                out[key] = s
            else:
                out.pop(key, None)
        res = TrigPoly.__new__(TrigPoly)
        res.terms = out
        return res

    def __sub__(self, other: "TrigPoly") -> "TrigPoly":
        return self + other.scale(CFrac(-1))

    def __mul__(self, other: "TrigPoly") -> "TrigPoly":
        out: Dict[TrigKey, CFrac] = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                key = (k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2], k1[3] + k2[3])
                add = c1 * c2
                prev = out.get(key)
                s = add if prev is None else prev + add
                if s:
                    out[key] = s
                else:
                    out.pop(key, None)
        res = TrigPoly.__new__(TrigPoly)
        res.terms = out
        return res

    def scale(self, c: CFrac) -> "TrigPoly":
        return TrigPoly({k: v * c for k, v in self.terms.items()})

    def div_r(self) -> "TrigPoly":
        return TrigPoly({(m, a - 1, b, c): v for (m, a, b, c), v in self.terms.items()})

    def diff_r(self) -> "TrigPoly":
        return TrigPoly({(m, a - 1, b, c): v * a
                         for (m, a, b, c), v in self.terms.items() if a})

    def diff_w(self) -> "TrigPoly":
        return TrigPoly({(m, a, b - 1, c): v * b
                         for (m, a, b, c), v in self.terms.items() if b})

    def compile(self) -> Callable:
        """Numeric evaluator (theta may be a numpy array)."""
        ms = np.array([k[0] for k in self.terms], dtype=float)
        ra = np.array([k[1] for k in self.terms], dtype=float)
        wb = np.array([k[2] for k in self.terms], dtype=float)
        mc = np.array([k[3] for k in self.terms], dtype=float)
        cs = np.array([complex(v) for v in self.terms.values()])

        def evaluate(theta, r, w, mu=0.0):
            theta = np.asarray(theta, dtype=float)
            phase = np.exp(1j * np.multiply.outer(theta, ms))
            vals = phase * (cs * r ** ra * w ** wb * mu ** mc)
            return np.real(vals.sum(axis=-1))

        if not self.terms:
            return lambda theta, r, w, mu=0.0: np.zeros_like(np.asarray(theta, dtype=float))
        return evaluate

    def __repr__(self):
        return f"TrigPoly({len(self.terms)} terms)"


TRIG_COS = TrigPoly({(1, 0, 0, 0): CFrac(Fraction(1, 2)),
                     (-1, 0, 0, 0): CFrac(Fraction(1, 2))})
TRIG_SIN = TrigPoly({(1, 0, 0, 0): CFrac(0, Fraction(-1, 2)),
                     (-1, 0, 0, 0): CFrac(0, Fraction(1, 2))})


class ThetaLinear:
    """a(theta) + theta * b(theta) with TrigPoly parts (enough for the
    once-integrated first-order term)."""

    __slots__ = ("a", "b")

    def __init__(self, a: TrigPoly, b: TrigPoly):
        self.a = a
        self.b = b


def antiderivative(F: TrigPoly) -> ThetaLinear:
    """Integral from 0 to theta, exact."""
    a: Dict[TrigKey, CFrac] = {}
    b: Dict[TrigKey, CFrac] = {}
    for (m, ra, wb, mc), c in F.terms.items():
        if m == 0:
            key = (0, ra, wb, mc)
            b[key] = b.get(key, CFrac()) + c
        else:
            inv = c / CFrac(0, m)          # c / (i m)
            key = (m, ra, wb, mc)
            a[key] = a.get(key, CFrac()) + inv
            key0 = (0, ra, wb, mc)
            a[key0] = a.get(key0, CFrac()) - inv
    return ThetaLinear(TrigPoly(a), TrigPoly(b))


# polynomials over (r, w, mu) with coefficients sum_k q_k pi^k
RWKey = Tuple[int, int, int]


class PiPoly:
    """Polynomial in (r, w, mu) with exact coefficients in Q[pi]."""

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Dict[RWKey, Dict[int, Fraction]]] = None):
        self.terms: Dict[RWKey, Dict[int, Fraction]] = {}
        if terms:
            for key, pp in terms.items():
                clean = {d: q for d, q in pp.items() if q}
                if clean:
                    self.terms[key] = clean

    def __add__(self, other: "PiPoly") -> "PiPoly":
        out = {k: dict(v) for k, v in self.terms.items()}
        for key, pp in other.terms.items():
            tgt = out.setdefault(key, {})
            for d, q in pp.items():
                s = tgt.get(d, Fraction(0)) + q
                if s:
                    tgt[d] = s
                else:
                    tgt.pop(d, None)
            if not tgt:
                out.pop(key)
        return PiPoly(out)

    def diff(self, which: int) -> "PiPoly":
        out: Dict[RWKey, Dict[int, Fraction]] = {}
        for key, pp in self.terms.items():
            e = key[which]
            if e:
                nkey = tuple(v - (1 if i == which else 0) for i, v in enumerate(key))
                tgt = out.setdefault(nkey, {})
                for d, q in pp.items():
                    tgt[d] = tgt.get(d, Fraction(0)) + q * e
        return PiPoly(out)

    def eval(self, r: float, w: float, mu: float = 0.0) -> float:
        total = 0.0
        for (ra, wb, mc), pp in self.terms.items():
            coeff = sum(float(q) * math.pi ** d for d, q in pp.items())
            total += coeff * r ** ra * w ** wb * mu ** mc
        return total

    def eval_exact(self, r: Fraction, w: Fraction, mu: Fraction = Fraction(0)
                   ) -> Dict[int, Fraction]:
        """Exact value as a Q[pi] element, for rational arguments."""
        out: Dict[int, Fraction] = {}
        for (ra, wb, mc), pp in self.terms.items():
            mono = (Fraction(r) ** ra) * (Fraction(w) ** wb) * (Fraction(mu) ** mc)
            for d, q in pp.items():
                out[d] = out.get(d, Fraction(0)) + q * mono
        return {d: q for d, q in out.items() if q}

    def __eq__(self, other):
        return isinstance(other, PiPoly) and self.terms == other.terms

    def __repr__(self):
        parts = []
        for key in sorted(self.terms):
            for d in sorted(self.terms[key]):
                parts.append(f"{self.terms[key][d]}*pi^{d}*r^{key[0]}*w^{key[1]}*mu^{key[2]}")
        return "PiPoly(" + " + ".join(parts) + ")"


def _integrate_2pi(F: TrigPoly) -> PiPoly:
    out: Dict[RWKey, Dict[int, Fraction]] = {}
    for (m, ra, wb, mc), c in F.terms.items():
        if m != 0:
            continue
        if c.im:
            raise AveragingError("non-real mean in angular integral")
        tgt = out.setdefault((ra, wb, mc), {})
        tgt[1] = tgt.get(1, Fraction(0)) + 2 * c.re
    return PiPoly(out)


def _integrate_2pi_theta(T: ThetaLinear) -> PiPoly:
    result = _integrate_2pi(T.a)
    extra: Dict[RWKey, Dict[int, Fraction]] = {}
    imag: Dict[RWKey, Fraction] = {}
    for (m, ra, wb, mc), c in T.b.terms.items():
        key = (ra, wb, mc)
        tgt = extra.setdefault(key, {})
        if m == 0:
            if c.im:
                raise AveragingError("non-real theta-linear mean")
            tgt[2] = tgt.get(2, Fraction(0)) + 2 * c.re       # int theta = 2 pi^2
        else:
            val = c / CFrac(0, m)                             # 2 pi * c/(i m)
            tgt[1] = tgt.get(1, Fraction(0)) + 2 * val.re
            imag[key] = imag.get(key, Fraction(0)) + val.im   # must cancel pairwise
    if any(imag.values()):
        raise AveragingError("theta-linear integral has nonzero imaginary part")
    return result + PiPoly(extra)


# ---------------------------------------------------------------------------
# standard form
# ---------------------------------------------------------------------------

@dataclass
class StandardFormSystem:
    """theta-periodic standard form dr/dtheta = eps F1 + eps^2 F2 + eps^3 Ftilde."""
    F1: Tuple[TrigPoly, TrigPoly]
    F2: Tuple[TrigPoly, TrigPoly]
    period: float
    r_min: float
    r_max: float
    mu_default: Optional[float]
    system: HopfZeroSystem
    family: PerturbationFamily
    slices: Tuple[Tuple[Poly, Poly, Poly], ...]   # exact eps-graded field slices

    def __post_init__(self):
        self._f1_eval = tuple(t.compile() for t in self.F1)
        self._f2_eval = tuple(t.compile() for t in self.F2)
        self._df1_eval = tuple(tuple(d.compile() for d in (t.diff_r(), t.diff_w()))
                               for t in self.F1)

    @property
    def has_higher_order_remainder(self) -> bool:
        """True when the rescaled field carries exact eps^3+ terms (the
        F-tilde remainder of the standard form is then nonzero)."""
        return len(self.slices) > 3

    def _mu(self, mu):
        if mu is None:
            if self.mu_default is None:
                raise AveragingError("mu unbound")
            return self.mu_default
        return mu

    def eval_F1(self, theta, x, mu=None):
        mu = self._mu(mu)
        r, w = x
        return np.array([self._f1_eval[0](theta, r, w, mu),
                         self._f1_eval[1](theta, r, w, mu)])

    def eval_F2(self, theta, x, mu=None):
        mu = self._mu(mu)
        r, w = x
        return np.array([self._f2_eval[0](theta, r, w, mu),
                         self._f2_eval[1](theta, r, w, mu)])

    def eval_DF1(self, theta, x, mu=None):
        mu = self._mu(mu)
        r, w = x
        return np.array([[self._df1_eval[i][j](theta, r, w, mu)
                          for j in range(2)] for i in range(2)])

    def periodicity_residual(self, samples: Sequence[Tuple[float, float]],
                             mu=None) -> float:
        res = 0.0
        for (r, w) in samples:
            a = self.eval_F1(0.0, (r, w), mu) - self.eval_F1(PERIOD, (r, w), mu)
            b = self.eval_F2(0.0, (r, w), mu) - self.eval_F2(PERIOD, (r, w), mu)
            res = max(res, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
        return res


def eps_graded_slices(sys: HopfZeroSystem, fam: PerturbationFamily
                      ) -> Tuple[Tuple[Poly, Poly, Poly], ...]:
    """Exact eps-power slices of the rescaled field (x,y,z) -> eps (x,y,z).

    Slice 0 is the linear part (-y, x, 0); slice m >= 1 collects the
    homogeneous contributions of total grade m (polynomials in x, y, z, mu).
    """
    x, y = Poly.variable("x"), Poly.variable("y")
    eps = Poly.variable("eps")
    comps = [(-y) + sys.P.poly + eps * fam.U.poly,
             x + sys.Q.poly + eps * fam.V.poly,
             sys.R.poly + eps * fam.W.poly]
    max_grade = 0
    graded: List[Dict[int, Poly]] = []
    for comp in comps:
        grades: Dict[int, Poly] = {}
        for mono, coeff in comp.terms.items():
            i, j, k, a, b = mono
            g = i + j + k + b - 1
            if g < 0:
                raise AveragingError("rescaled field has an eps^(-1) term")
            key = (i, j, k, a, 0)
            grades.setdefault(g, Poly())
            grades[g] = grades[g] + Poly({key: coeff})
            max_grade = max(max_grade, g)
        graded.append(grades)
    lin = (Poly({(0, 1, 0, 0, 0): Fraction(-1)}), Poly({(1, 0, 0, 0, 0): Fraction(1)}), Poly())
    for comp_grades, expected in zip(graded, lin):
        if comp_grades.get(0, Poly()) != expected:
            raise AveragingError("grade-0 part of the rescaled field is not (-y, x, 0)")
    return tuple(
        (graded[0].get(m, Poly()), graded[1].get(m, Poly()), graded[2].get(m, Poly()))
        for m in range(max_grade + 1))


def to_standard_form(sys: HopfZeroSystem, fam: PerturbationFamily,
                     mu: Optional[float] = None,
                     r_min: float = 1e-3, r_max: float = 10.0) -> StandardFormSystem:
    """Cylindrical reduction with theta as time, expanded through eps^2.

    With theta-dot = 1 + eps a1 + eps^2 a2 the series division gives
    F1 = (rdot1, wdot1) and F2 = (rdot2 - rdot1 a1, wdot2 - wdot1 a1).
    """
    if r_min <= 0:
        raise AveragingError(f"r_min must be positive, got {r_min}")
    slices = eps_graded_slices(sys, fam)
    T1 = [TrigPoly.from_xyz_poly(p) for p in slices[1]] if len(slices) > 1 else \
        [TrigPoly() for _ in range(3)]
    T2 = [TrigPoly.from_xyz_poly(p) for p in slices[2]] if len(slices) > 2 else \
        [TrigPoly() for _ in range(3)]

    rdot1 = TRIG_COS * T1[0] + TRIG_SIN * T1[1]
    a1 = (TRIG_COS * T1[1] - TRIG_SIN * T1[0]).div_r()
    wdot1 = T1[2]
    rdot2 = TRIG_COS * T2[0] + TRIG_SIN * T2[1]
    wdot2 = T2[2]

    F1 = (rdot1, wdot1)
    F2 = (rdot2 - rdot1 * a1, wdot2 - wdot1 * a1)
    return StandardFormSystem(F1=F1, F2=F2, period=PERIOD, r_min=r_min, r_max=r_max,
                              mu_default=mu, system=sys, family=fam, slices=slices)


# ---------------------------------------------------------------------------
# Melnikov functions
# ---------------------------------------------------------------------------

@dataclass
class MelnikovPair:
    """f1 (closed form) and f2 (quadrature, with an exact cross-check form)."""
    std: StandardFormSystem
    f1_exact: Tuple[PiPoly, PiPoly]
    f2_exact: Tuple[PiPoly, PiPoly]

    def f1(self, x, mu=None) -> np.ndarray:
        mu = self.std._mu(mu)
        r, w = x
        return np.array([self.f1_exact[0].eval(r, w, mu),
                         self.f1_exact[1].eval(r, w, mu)])

    def f1_jacobian(self, x, mu=None) -> np.ndarray:
        mu = self.std._mu(mu)
        r, w = x
        return np.array([[self.f1_exact[i].diff(j).eval(r, w, mu)
                          for j in range(2)] for i in range(2)])

    def f2_closed(self, x, mu=None) -> np.ndarray:
        mu = self.std._mu(mu)
        r, w = x
        return np.array([self.f2_exact[0].eval(r, w, mu),
                         self.f2_exact[1].eval(r, w, mu)])

    def f1_quadrature(self, x, mu=None, tol=QUADRATURE_TOL) -> np.ndarray:
        mu = self.std._mu(mu)
        return _quadrature_f1(self.std, x, mu, tol)

    def f2_quadrature(self, x, mu=None, tol=QUADRATURE_TOL) -> np.ndarray:
        """f2(z) = int_0^T (F2(t,z) + dF1/dx(t,z) . int_0^t F1(s,z) ds) dt,
        inner antiderivative by cumulative Gauss-Legendre panels."""
        mu = self.std._mu(mu)
        return _quadrature_f2(self.std, x, mu, tol)

    # spec name: the official evaluator route
    def f2(self, x, mu=None, tol=QUADRATURE_TOL) -> np.ndarray:
        return self.f2_quadrature(x, mu, tol)


def melnikov_pair(std: StandardFormSystem) -> MelnikovPair:
    f1 = tuple(_integrate_2pi(F) for F in std.F1)
    J = ((std.F1[0].diff_r(), std.F1[0].diff_w()),
         (std.F1[1].diff_r(), std.F1[1].diff_w()))
    Phi = tuple(antiderivative(F) for F in std.F1)
    f2 = []
    for i in range(2):
        integrand_a = std.F2[i] + J[i][0] * Phi[0].a + J[i][1] * Phi[1].a
        integrand_b = J[i][0] * Phi[0].b + J[i][1] * Phi[1].b
        f2.append(_integrate_2pi_theta(ThetaLinear(integrand_a, integrand_b)))
    return MelnikovPair(std=std, f1_exact=f1, f2_exact=tuple(f2))


def _gl_nodes(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def _quadrature_f1(std, x, mu, tol, max_panels=4096):
    prev = None
    n_panels = 8
    while n_panels <= max_panels:
        nodes, weights = _gl_nodes(12)
        total = np.zeros(2)
        edges = np.linspace(0.0, PERIOD, n_panels + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            ts = mid + half * nodes
            vals = np.stack([std.eval_F1(t, x, mu) for t in ts])
            total += half * (weights[:, None] * vals).sum(axis=0)
        if prev is not None and np.max(np.abs(total - prev)) <= tol:
            return total
        prev = total
        n_panels *= 2
    raise QuadratureNotConverged(f"f1 quadrature not converged at tol={tol}")


def _quadrature_f2(std, x, mu, tol, max_panels=2048):
    prev = None
    n_panels = 8
    while n_panels <= max_panels:
        result = _f2_fixed_panels(std, x, mu, n_panels)
        if prev is not None and np.max(np.abs(result - prev)) <= tol:
            return result
        prev = result
        n_panels *= 2
    raise QuadratureNotConverged(f"f2 quadrature not converged at tol={tol}")


def _f2_fixed_panels(std, x, mu, n_panels, n_gauss=12):
    nodes, weights = _gl_nodes(n_gauss)
    edges = np.linspace(0.0, PERIOD, n_panels + 1)
    total = np.zeros(2)
    cumulative = np.zeros(2)      # int_0^{panel start} F1
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        ts = mid + half * nodes
        order = np.argsort(ts)
        inner = np.zeros((len(ts), 2))
        for t_index in order:
            t = ts[t_index]
            # partial integral over [a, t] with its own Gauss rule
            pm, ph = 0.5 * (a + t), 0.5 * (t - a)
            pvals = np.stack([std.eval_F1(pm + ph * s, x, mu) for s in nodes])
            inner[t_index] = cumulative + ph * (weights[:, None] * pvals).sum(axis=0)
        outer = np.zeros((len(ts), 2))
        for idx, t in enumerate(ts):
            DF1 = std.eval_DF1(t, x, mu)
            outer[idx] = std.eval_F2(t, x, mu) + DF1 @ inner[idx]
        total += half * (weights[:, None] * outer).sum(axis=0)
        # advance the cumulative integral by the full panel
        pvals = np.stack([std.eval_F1(mid + half * s, x, mu) for s in nodes])
        cumulative += half * (weights[:, None] * pvals).sum(axis=0)
    return total


# ---------------------------------------------------------------------------
# averaged equilibrium and hypotheses
# ---------------------------------------------------------------------------

@dataclass
class AveragedEquilibrium:
    mu: float
    r: float
    w: float
    jacobian: np.ndarray
    eigenvalues: Tuple[complex, complex]
    eta: float
    zeta: float
    omega: float            # pi sqrt(Omega) r_mu
    residual: float


def averaged_equilibrium(mel: MelnikovPair, mu: float) -> AveragedEquilibrium:
    sys = mel.std.system
    fam = mel.std.family
    from .criteria import perturbation_functions
    gamma_op, _, eta_fn, w_mu_fn = perturbation_functions(sys, fam)
    gamma = float(gamma_op(mu))
    if gamma >= 0:
        raise AveragingError(f"Gamma_criterion({mu}) = {gamma} >= 0; no equilibrium radius")
    w = float(w_mu_fn(mu))
    r = math.sqrt(-gamma)

    # Newton polish on f1^2(., w)
    f1_2 = mel.f1_exact[1]
    df = f1_2.diff(0)
    for _ in range(60):
        val = f1_2.eval(r, w, mu)
        if abs(val) <= EQUILIBRIUM_RESIDUAL:
            break
        slope = df.eval(r, w, mu)
        if slope == 0 or not math.isfinite(slope):
            raise NewtonDiverged("flat slope in radius Newton")
        r -= val / slope
        if not (0 < r < 1e6):
            raise NewtonDiverged(f"radius iterate escaped: {r}")
    else:
        raise NewtonDiverged("radius Newton did not reach residual tolerance")

    residual = float(np.max(np.abs(mel.f1((r, w), mu))))
    J = mel.f1_jacobian((r, w), mu)
    eta = 0.5 * (J[0, 0] + J[1, 1])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = eta * eta - det
    if disc >= 0:
        raise ComplexPairLost(f"eta^2 - pi^2 Omega r^2 = {disc} >= 0 at mu={mu}")
    zeta = math.sqrt(-disc)
    lam = (complex(eta, zeta), complex(eta, -zeta))
    numeric = sorted(np.linalg.eigvals(J), key=lambda z: -z.imag)
    if max(abs(numeric[0] - lam[0]), abs(numeric[1] - lam[1])) > 1e-9 * max(1.0, abs(lam[0])):
        raise AveragingError("closed-form eigenvalues disagree with direct eigensolve")
    omega = math.pi * math.sqrt(float(sys.omega)) * r
    return AveragedEquilibrium(mu=mu, r=r, w=w, jacobian=J, eigenvalues=lam,
                               eta=eta, zeta=zeta, omega=omega, residual=residual)


@dataclass
class HypothesisReport:
    hopf_ok: bool
    transversality_ok: bool
    nondegeneracy_ok: bool
    details: dict

    @property
    def all_ok(self) -> bool:
        return self.hopf_ok and self.transversality_ok and self.nondegeneracy_ok


def hypothesis_check(mel: MelnikovPair, crit, l11: Optional[float] = None,
                     l12: Optional[float] = None, n_samples: int = 33) -> HypothesisReport:
    """H, T, ND against the averaged path over the criterion interval.

    l11/l12 default to the closed-form pipeline values (eps and eps^2 slices
    of the map Lyapunov coefficient).
    """
    sys = mel.std.system
    details: dict = {}

    lo, hi = crit.interval
    mus = [lo + (hi - lo) * i / (n_samples - 1) for i in range(n_samples)]
    max_res = 0.0
    complex_ok = True
    for m in mus:
        if crit.gamma_criterion(m) >= 0:
            continue
        try:
            eq = averaged_equilibrium(mel, m)
        except ComplexPairLost:
            complex_ok = False
            continue
        max_res = max(max_res, eq.residual)
    eq0 = averaged_equilibrium(mel, crit.mu0)
    details["max_path_residual"] = max_res
    details["eta_at_mu0"] = eq0.eta
    details["omega0"] = eq0.omega
    details["zeta_at_mu0"] = eq0.zeta
    hopf_ok = (complex_ok and max_res <= 1e-10 and abs(eq0.eta) <= 1e-9
               and eq0.zeta > 0 and abs(eq0.zeta - eq0.omega) <= 1e-8 * max(1.0, eq0.omega))

    details["alpha_d"] = crit.alpha_d
    transversality_ok = abs(crit.alpha_d) > 1e-10

    if l11 is None or l12 is None:
        res = first_lyapunov_quantity(sys)
        l11 = res.l11 if l11 is None else l11
        l12 = res.l12 if l12 is None else l12
    details["l11"] = l11
    details["l12"] = l12
    j_star = 1 if abs(l11) > 1e-10 else (2 if abs(l12) > 1e-10 else None)
    details["j_star"] = j_star
    nondegeneracy_ok = j_star is not None

    return HypothesisReport(hopf_ok=hopf_ok, transversality_ok=transversality_ok,
                            nondegeneracy_ok=nondegeneracy_ok, details=details)


# ---------------------------------------------------------------------------
# first Lyapunov quantity via the exact pipeline
# ---------------------------------------------------------------------------

@dataclass
class Ell1Result:
    ell1: float
    l11: float
    l12: float
    mu1: float
    omega0: float
    u1: np.ndarray          # first-order fixed point slice at mu0 = 0
    M0: np.ndarray
    M1: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    zeta2: float


def first_lyapunov_quantity(sys: HopfZeroSystem) -> Ell1Result:
    """ell_1 of the Hopf-Zero system, depending only on (P, Q, R).

    Computed by running the degree-preserving family (0, 0, mu z + beta eps)
    through exact second-order averaging and reading the eps^2 slice of the
    map Lyapunov coefficient at the bifurcation curve:
    ell_1^eps = (pi eps^2 / 16 Omega^2) ell_1 + O(eps^3).
    """
    S = sys.quadratic_sum
    if S == 0:
        raise DegenerateSum("R^(2,0,0) + R^(0,2,0) = 0")
    Omega = float(sys.omega)
    if Omega <= 0:
        raise AveragingError("Omega <= 0: no Hopf pair, ell1 undefined")
    beta = -1 if S > 0 else 1
    fam = PerturbationFamily.simple(beta)
    std = to_standard_form(sys, fam)
    mel = melnikov_pair(std)

    gamma_scale = math.sqrt(abs(float(S)))
    r0 = 2.0 / gamma_scale
    x0 = (r0, 0.0)
    omega0 = math.pi * math.sqrt(Omega) * r0

    f1v = [mel.f1_exact[i] for i in range(2)]
    f2v = [mel.f2_exact[i] for i in range(2)]

    def dval(p: PiPoly, orders: Tuple[int, int, int]) -> float:
        q = p
        for which, n in enumerate(orders):
            for _ in range(n):
                q = q.diff(which)
        return q.eval(r0, 0.0, 0.0)

    # tensors at (x0, mu0=0)
    f2_0 = np.array([dval(p, (0, 0, 0)) for p in f2v])
    Df1 = np.array([[dval(p, _unit2(j)) for j in range(2)] for p in f1v])
    Df2 = np.array([[dval(p, _unit2(j)) for j in range(2)] for p in f2v])
    DmuDf1 = np.array([[dval(p, _add3(_unit2(j), (0, 0, 1))) for j in range(2)]
                       for p in f1v])
    D2f1 = np.array([[[dval(p, _add3(_unit2(j), _unit2(k))) for k in range(2)]
                      for j in range(2)] for p in f1v])
    D2f2 = np.array([[[dval(p, _add3(_unit2(j), _unit2(k))) for k in range(2)]
                      for j in range(2)] for p in f2v])
    D3f2 = np.array([[[[dval(p, _add3(_add3(_unit2(j), _unit2(k)), _unit2(l)))
                        for l in range(2)] for k in range(2)] for j in range(2)]
                     for p in f2v])

    # fixed point slice and eigen data
    u1 = -np.linalg.solve(Df1, f2_0)
    lam1 = 1j * omega0
    v = np.array([Df1[0, 1], lam1 - Df1[0, 0]])
    l = np.array([Df1[1, 0], lam1 - Df1[0, 0]])
    lv = l @ v

    C2_base = np.einsum('ijk,k->ij', D2f1, u1) + Df2
    lam2a = (l @ (DmuDf1 @ v)) / lv
    lam2b = (l @ (C2_base @ v)) / lv
    # |lambda|^2 = 1 at eps^2:  2 Re lam2 + omega0^2 = 0
    mu1 = -(2.0 * lam2b.real + omega0 ** 2) / (2.0 * lam2a.real)
    lam2 = lam2a * mu1 + lam2b
    C2 = mu1 * DmuDf1 + C2_base

    # M(eps) from the eigenvector with first component i
    n1 = -1j * (Df1[0, 0] - lam1)
    n2 = -1j * (C2[0, 0] - lam2)
    d1, d2 = Df1[0, 1], C2[0, 1]
    v2_0 = n1 / d1
    v2_1 = (n2 - v2_0 * d2) / d1
    M0 = np.array([[1.0, 0.0], [v2_0.imag, v2_0.real]])
    M1 = np.array([[0.0, 0.0], [v2_1.imag, v2_1.real]])
    M0inv = np.linalg.inv(M0)
    Minv1 = -M0inv @ M1 @ M0inv

    # Pi tensors at xi(eps): B = eps B1 + eps^2 B2, C = eps^2 C2t.
    # f1 has degree <= 2 in (r, w) and its Hessian is mu-free, so the eps^2
    # slice of the Hessian along the branch is D2f2 alone.
    B1 = D2f1
    B2 = D2f2
    C2t = D3f2

    def bil(T, a, b):
        return np.einsum('ijk,j,k->i', T, a, b)

    def tril(T, a, b, c):
        return np.einsum('ijkl,j,k,l->i', T, a, b, c)

    p = np.array([1.0, -1.0j]) / math.sqrt(2.0)
    pb = p.conjugate()

    def inner(u_, v_):
        return np.vdot(u_, v_)

    def g_series(a, b):
        g1 = inner(p, M0inv @ bil(B1, M0 @ a, M0 @ b))
        g2 = inner(p, Minv1 @ bil(B1, M0 @ a, M0 @ b)
                   + M0inv @ (bil(B1, M1 @ a, M0 @ b) + bil(B1, M0 @ a, M1 @ b))
                   + M0inv @ bil(B2, M0 @ a, M0 @ b))
        return g1, g2

    g20_1, g20_2 = g_series(p, p)
    g11_1, g11_2 = g_series(p, pb)
    g02_1, g02_2 = g_series(pb, pb)
    g21_2 = inner(p, M0inv @ tril(C2t, M0 @ p, M0 @ p, M0 @ pb))

    # Lyapunov formula expanded in eps (lam = 1 + eps lam1 + eps^2 lam2):
    # Fac = (1 - 2 lam) lam^{-2} / (2 (1 - lam)) = Fm1/eps + F0 + O(eps),
    # with N = (1 - 2 lam) lam^{-2} / 2 = N0 + eps N1 and 1 - lam = -eps lam1 - ...
    a0, a1c = -1.0, -2.0 * lam1            # (1 - 2 lam) series
    b0, b1 = 1.0, -2.0 * lam1              # lam^{-2} series
    N0 = 0.5 * a0 * b0
    N1 = 0.5 * (a0 * b1 + a1c * b0)
    Fm1 = -N0 / lam1
    F0 = -(N1 / lam1 - N0 * lam2 / lam1 ** 2)

    q2 = g20_1 * g11_1
    q3 = g20_1 * g11_2 + g20_2 * g11_1

    term1_e2 = 0.5 * g21_2.real
    term2_e1 = -(Fm1 * q2).real
    term2_e2 = -(Fm1 * q3 + F0 * q2).real
    term3_e2 = -0.5 * abs(g11_1) ** 2
    term4_e2 = -0.25 * abs(g02_1) ** 2

    l11 = term2_e1
    l12 = term1_e2 + term2_e2 + term3_e2 + term4_e2
    ell1 = 16.0 * Omega ** 2 * l12 / math.pi

    # Jordan-form expansion data: A1/A2 from lam series (a = Re lam, b = Im lam)
    A1 = np.array([[lam1.real, -lam1.imag], [lam1.imag, lam1.real]])
    A2 = np.array([[lam2.real, -lam2.imag], [lam2.imag, lam2.real]])
    return Ell1Result(ell1=ell1, l11=l11, l12=l12, mu1=mu1, omega0=omega0,
                      u1=u1, M0=M0, M1=M1, A1=A1, A2=A2, zeta2=lam2.imag)


def _unit2(j: int) -> Tuple[int, int, int]:
    return (1, 0, 0) if j == 0 else (0, 1, 0)


def _add3(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


# ---------------------------------------------------------------------------
# printed simple-case branch constants (verified closed forms)
# ---------------------------------------------------------------------------

@dataclass
class BranchConstants:
    mu1: Fraction
    xi2: Fraction
    xi1_const: Fraction
    xi1_slope: float
    m21_1: float
    m22_1: float

    def xi1(self, mu: float) -> float:
        return float(self.xi1_const) + self.xi1_slope * mu


def printed_branch_constants(sys: HopfZeroSystem) -> BranchConstants:
    """Closed forms for xi1(mu), xi2, mu1, m21^1, m22^1 of the simple family.

    mu1 and xi2 involve only even powers of the radius scale and are exact
    rationals; xi1's slope and the M1 entries carry odd powers and are floats.
    """
    P, Q, R = sys.jP.get, sys.jQ.get, sys.jR.get
    S = sys.quadratic_sum
    if S == 0:
        raise DegenerateSum("R^(2,0,0) + R^(0,2,0) = 0")
    Om = sys.omega
    beta = -1 if S > 0 else 1
    G2 = abs(S)                     # Gamma^2, exact
    gamma = math.sqrt(float(G2))

    core = (-R(0, 2, 0) * (P(0, 1, 1) + Q(1, 0, 1))
            + P(0, 2, 0) * (P(1, 1, 0) + Q(0, 2, 0))
            - Q(2, 0, 0) * (P(2, 0, 0) + Q(1, 1, 0))
            - 2 * P(1, 0, 1) * R(1, 1, 0)
            + P(1, 2, 0) + P(1, 1, 0) * P(2, 0, 0) + P(3, 0, 0)
            + Q(0, 3, 0) - Q(0, 2, 0) * Q(1, 1, 0) + Q(2, 1, 0))
    core2 = core + R(0, 2, 0) * (P(0, 1, 1) + Q(1, 0, 1))   # without the -R020 term

    mu1 = -(beta ** 3 * G2 ** 3 * R(0, 0, 2) * (P(0, 1, 1) + Q(1, 0, 1))
            + beta ** 2 * G2 ** 2 * (Om * (P(0, 1, 1) + Q(1, 0, 1))
                                     - 2 * R(0, 0, 2) * core)
            + 2 * beta * G2 * Om * (R(0, 2, 0) * (P(0, 1, 1) + Q(1, 0, 1))
                                    - Q(2, 0, 0) * (P(2, 0, 0) + Q(1, 1, 0) + 2 * R(1, 0, 1))
                                    + P(0, 2, 0) * (P(1, 1, 0) + Q(0, 2, 0))
                                    - R(1, 1, 0) * (R(0, 0, 2) - 2 * P(1, 0, 1))
                                    + 2 * (P(0, 2, 0) + P(2, 0, 0)) * R(0, 1, 1)
                                    + P(1, 2, 0) + P(1, 1, 0) * P(2, 0, 0) + P(3, 0, 0)
                                    - Q(0, 2, 0) * (Q(1, 1, 0) + 2 * R(1, 0, 1))
                                    + Q(0, 3, 0) + Q(2, 1, 0)
                                    + 2 * R(0, 2, 1) + 2 * R(2, 0, 1))
            - 2 * Om ** 2 * R(1, 1, 0)) / (4 * beta * G2 ** 2 * Om)

    xi2 = (G2 * beta * ((P(0, 1, 1) + Q(1, 0, 1)) * (2 * R(0, 2, 0) + beta * G2)
                        - 2 * core2)
           - 6 * Om * R(1, 1, 0)) / (4 * G2 * Om)

    xi1_const = (-2 * beta * (4 * Om * (2 * (P(1, 1, 0) + Q(0, 2, 0)) + Q(2, 0, 0)))
                 ) / (12 * beta * G2 * Om)          # Gamma cancels: Gamma/Gamma^3 = 1/G2
    xi1_slope = float(3 * beta ** 2 * G2 ** 2 * (P(0, 1, 1) + Q(1, 0, 1))
                      - 6 * beta * G2 * core - 6 * Om * R(1, 1, 0)) \
        / (12 * beta * float(G2) * gamma * float(Om))

    m21 = -float(beta ** 2 * G2 ** 2 * P(0, 1, 1) + 2 * beta * G2 * P(0, 2, 0) * P(1, 1, 0)
                 + 2 * beta * G2 * P(1, 2, 0) + 2 * beta * G2 * P(1, 1, 0) * P(2, 0, 0)
                 + 2 * beta * G2 * P(3, 0, 0) + 2 * beta * G2 * P(0, 2, 0) * Q(0, 2, 0)
                 - 2 * beta * G2 * P(2, 0, 0) * Q(2, 0, 0)
                 - 2 * beta * G2 * P(0, 1, 1) * R(0, 2, 0)
                 - 4 * beta * G2 * P(1, 0, 1) * R(1, 1, 0)
                 + beta ** 2 * G2 ** 2 * Q(1, 0, 1) + 2 * beta * G2 * Q(0, 3, 0)
                 - 2 * beta * G2 * Q(0, 2, 0) * Q(1, 1, 0)
                 - 2 * beta * G2 * Q(1, 1, 0) * Q(2, 0, 0)
                 + 2 * beta * G2 * Q(2, 1, 0)
                 - 2 * beta * G2 * Q(1, 0, 1) * R(0, 2, 0)
                 + 6 * Om * R(1, 1, 0)) / (4 * gamma * float(Om))
    m22 = (2 * beta * gamma / (3 * math.sqrt(float(Om)))) * \
        float(-2 * P(1, 1, 0) - 2 * Q(0, 2, 0) - Q(2, 0, 0) + 3 * R(0, 1, 1))

    return BranchConstants(mu1=mu1, xi2=xi2, xi1_const=xi1_const,
                           xi1_slope=xi1_slope, m21_1=m21, m22_1=m22)


# ---------------------------------------------------------------------------
# Neimark-Sacker branch continuation on the numeric return map
# ---------------------------------------------------------------------------

class UnitCircleCrossingNotFound(AveragingError):
    pass


@dataclass
class BranchPoint:
    eps: float
    mu: float                  # on the unit-circle curve
    xi: np.ndarray             # fixed point of the return map
    eigenvalue: complex        # lambda(mu(eps), eps), |lambda| = 1
    theta: float               # arg lambda


@dataclass
class NSBranch:
    points: Tuple[BranchPoint, ...]
    mu0: float
    mu1_numeric: float
    mu1_closed: Optional[Fraction]
    xi_slices_closed: Optional["BranchConstants"]
    map_: object
    mel: MelnikovPair
    ladder: Tuple[float, ...]

    def fixed_point(self, mu: float, eps: float) -> np.ndarray:
        return _newton_fixed_point(self.map_, self.mel, mu, eps)

    def eigenvalue(self, mu: float, eps: float) -> complex:
        xi = self.fixed_point(mu, eps)
        return _complex_eigenvalue(self.map_.jacobian(xi, mu, eps))

    def mu_of_eps(self, eps: float, mu_guess: Optional[float] = None) -> float:
        return _solve_unit_circle(self.map_, self.mel, self.mu0, eps, mu_guess)[0]

    def xi_slice(self, mu: float, eps0: float = 4e-3) -> np.ndarray:
        """First-order slice xi_1(mu), xi_2(mu) of the fixed-point branch by
        a factor-2 Richardson ladder on (xi(mu, eps) - x_mu)/eps."""
        eq = averaged_equilibrium(self.mel, mu)
        x_mu = np.array([eq.r, eq.w])
        vals = []
        for e in (eps0, eps0 / 2, eps0 / 4):
            xi = self.fixed_point(mu, e)
            vals.append((xi - x_mu) / e)
        return _richardson3(vals, (eps0, eps0 / 2, eps0 / 4))[0]

    def to_dict(self) -> dict:
        out = {
            "mu0": self.mu0,
            "mu1_numeric": self.mu1_numeric,
            "ladder": list(self.ladder),
            "points": [{"eps": p.eps, "mu": p.mu,
                        "xi": [float(v) for v in p.xi],
                        "lambda": [p.eigenvalue.real, p.eigenvalue.imag],
                        "theta": p.theta} for p in self.points],
        }
        if self.mu1_closed is not None:
            out["mu1_closed"] = float(self.mu1_closed)
            out["mu1_closed_exact"] = str(self.mu1_closed)
        return out


def _complex_eigenvalue(A: np.ndarray) -> complex:
    m = 0.5 * (A[0, 0] + A[1, 1])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = det - m * m
    if disc <= 0:
        raise ComplexPairLost(f"return-map eigenvalues real (disc={disc})")
    return complex(m, math.sqrt(disc))


def _newton_fixed_point(tmap, mel: MelnikovPair, mu: float, eps: float,
                        seed: Optional[np.ndarray] = None,
                        tol: float = 1e-10, max_iter: int = 25) -> np.ndarray:
    if seed is None:
        eq = averaged_equilibrium(mel, mu)
        x = np.array([eq.r, eq.w])
    else:
        x = np.asarray(seed, dtype=float).copy()
    if eps == 0.0:
        return x
    for _ in range(max_iter):
        jet = tmap.jet3(x, mu, eps)
        res = jet.value - x
        if float(np.max(np.abs(res))) <= tol:
            return x
        step = np.linalg.solve(jet.A - np.eye(2), -res)
        x = x + step
        if not np.all(np.isfinite(x)):
            raise NewtonDiverged("fixed-point Newton produced non-finite iterate")
    if float(np.max(np.abs(res))) <= 10 * tol:
        return x
    raise NewtonDiverged(f"fixed-point Newton stalled, residual {np.max(np.abs(res))}")


def _solve_unit_circle(tmap, mel, mu0: float, eps: float,
                       mu_guess: Optional[float] = None,
                       tol: float = 1e-12, max_iter: int = 40):
    """Solve det(D Pi(xi(mu, eps))) = 1 for mu by the secant method.

    For a complex pair, |lambda|^2 = det, so this is the unit-circle
    condition; the pair property is verified at the solution.
    """
    last_xi = [None]

    def h(mu):
        xi = _newton_fixed_point(tmap, mel, mu, eps, seed=last_xi[0])
        last_xi[0] = xi
        A = tmap.jacobian(xi, mu, eps)
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        return det - 1.0, xi, A

    mu_a = mu0 if mu_guess is None else mu_guess
    mu_b = mu_a + 0.5 * eps if mu_guess is None else mu_a + 0.1 * eps
    ha, _, _ = h(mu_a)
    hb, xi_b, A_b = h(mu_b)
    for _ in range(max_iter):
        if hb == ha:
            break
        mu_new = mu_b - hb * (mu_b - mu_a) / (hb - ha)
        mu_a, ha = mu_b, hb
        mu_b = mu_new
        hb, xi_b, A_b = h(mu_b)
        if abs(hb) <= tol:
            lam = _complex_eigenvalue(A_b)
            return mu_b, xi_b, lam
    raise UnitCircleCrossingNotFound(
        f"secant on |lambda|=1 did not converge at eps={eps} (residual {hb})")


def _richardson3(values: Sequence, ladder: Sequence[float]):
    """Fit v(e) = c0 + c1 e + ... through the ladder points (degree = number
    of rungs - 1); return the coefficient list, componentwise on arrays.
    With a single rung this degenerates to [value, 0, 0]."""
    n = len(values)
    e = np.asarray(ladder, dtype=float)
    vals = np.stack([np.asarray(v, dtype=float) for v in values])
    shape = np.asarray(values[0]).shape
    if n == 1:
        coeffs = [vals.reshape(-1), np.zeros(vals.size), np.zeros(vals.size)]
    else:
        V = np.vander(e, n, increasing=True)
        coeffs = list(np.linalg.solve(V, vals.reshape(n, -1)))
        while len(coeffs) < 3:
            coeffs.append(np.zeros(coeffs[0].size))
    return [c.reshape(shape) if shape else float(c.reshape(-1)[0]) for c in coeffs]


def branch_continuation(mel: MelnikovPair, tmap, mu0: float,
                        eps_ladder: Sequence[float] = (1e-2, 5e-3, 2.5e-3)
                        ) -> NSBranch:
    """Continue the fixed point xi(mu, eps) and the Neimark-Sacker curve
    mu(eps); mu1 is estimated by a factor-2 Richardson ladder on mu(eps)/eps
    and, in the degree-preserving simple case, compared with the printed
    closed form."""
    points = []
    mu_guess = None
    for eps in eps_ladder:
        mu_c, xi, lam = _solve_unit_circle(tmap, mel, mu0, eps, mu_guess)
        points.append(BranchPoint(eps=eps, mu=mu_c, xi=xi, eigenvalue=lam,
                                  theta=math.atan2(lam.imag, lam.real)))
        mu_guess = mu0 + (mu_c - mu0) / 2.0      # predictor for the next rung
    slopes = [(p.mu - mu0) / p.eps for p in points]
    mu1_numeric = _richardson3(slopes, [p.eps for p in points])[0]

    closed = None
    xi_closed = None
    if mel.std.family.simple_case:
        closed_consts = printed_branch_constants(mel.std.system)
        closed = closed_consts.mu1
        xi_closed = closed_consts
    return NSBranch(points=tuple(points), mu0=mu0, mu1_numeric=float(mu1_numeric),
                    mu1_closed=closed, xi_slices_closed=xi_closed,
                    map_=tmap, mel=mel, ladder=tuple(eps_ladder))


# ---------------------------------------------------------------------------
# Jordan normalization of the return map at the bifurcation point
# ---------------------------------------------------------------------------

@dataclass
class NormalizedMap:
    eps: float
    mu: float
    xi: np.ndarray
    theta: float
    eigenvalue: complex
    M: np.ndarray
    M_inv: np.ndarray
    DH: np.ndarray
    B: np.ndarray               # transformed bilinear tensor
    C: np.ndarray               # transformed trilinear tensor
    rotation_residual: float
    det_M: float


def normalized_map(tmap, mel: MelnikovPair, mu0: float, eps: float,
                   mu_guess: Optional[float] = None) -> NormalizedMap:
    """Fixed point at mu(eps), eigenvector-based change of basis M (first
    component of the complex eigenvector scaled to i, reproducing the
    M0 + eps M1 normalization), and the transformed degree-3 tensors."""
    mu_c, xi, lam = _solve_unit_circle(tmap, mel, mu0, eps, mu_guess)
    jet = tmap.jet3(xi, mu_c, eps)
    A = jet.A
    v2 = -1j * (A[0, 0] - lam) / A[0, 1]
    M = np.array([[1.0, 0.0], [v2.imag, v2.real]])
    det_M = float(np.linalg.det(M))
    if abs(det_M) < 1e-12:
        raise AveragingError(f"normalizing matrix singular at eps={eps}")
    M_inv = np.linalg.inv(M)
    DH = M_inv @ A @ M
    rot_res = max(abs(DH[0, 0] - DH[1, 1]), abs(DH[0, 1] + DH[1, 0]))
    B_H = np.einsum('ia,ajk,jb,kc->ibc', M_inv, jet.B, M, M)
    C_H = np.einsum('ia,ajkl,jb,kc,ld->ibcd', M_inv, jet.C, M, M, M)
    theta = math.atan2(lam.imag, lam.real)
    return NormalizedMap(eps=eps, mu=mu_c, xi=xi, theta=theta, eigenvalue=lam,
                         M=M, M_inv=M_inv, DH=DH, B=B_H, C=C_H,
                         rotation_residual=float(rot_res), det_M=det_M)


def lyapunov_coefficient_map(nm: NormalizedMap) -> float:
    """The map Lyapunov coefficient, evaluated verbatim with p = (1,-i)/sqrt2
    and <u, v> = conj(u)^T v; requires e^{ik theta} != 1 for k = 1..4."""
    theta = nm.theta
    for k in range(1, 5):
        if abs(cmath.exp(1j * k * theta) - 1.0) < STRONG_RESONANCE_TOL:
            raise StrongResonance(f"e^(i {k} theta) = 1 within {STRONG_RESONANCE_TOL}")
    p = np.array([1.0, -1.0j]) / math.sqrt(2.0)
    pb = p.conjugate()

    def bil(a, b):
        return np.einsum('ijk,j,k->i', nm.B, a, b)

    def tril(a, b, c):
        return np.einsum('ijkl,j,k,l->i', nm.C, a, b, c)

    g20 = np.vdot(p, bil(p, p))
    g11 = np.vdot(p, bil(p, pb))
    g02 = np.vdot(p, bil(pb, pb))
    g21 = np.vdot(p, tril(p, p, pb))
    e_it = cmath.exp(1j * theta)
    term1 = (cmath.exp(-1j * theta) * g21 / 2.0).real
    term2 = -(((1.0 - 2.0 * e_it) * cmath.exp(-2j * theta)
               / (2.0 * (1.0 - e_it))) * g20 * g11).real
    term3 = -0.5 * abs(g11) ** 2
    term4 = -0.25 * abs(g02) ** 2
    return term1 + term2 + term3 + term4


@dataclass
class LyapunovSlices:
    l11: float
    l12: float
    values: Tuple[Tuple[float, float], ...]     # (eps, ell1_eps)


def lyapunov_slices(tmap, mel: MelnikovPair, mu0: float,
                    eps_ladder: Sequence[float] = (2e-2, 1e-2, 5e-3)
                    ) -> LyapunovSlices:
    """eps- and eps^2-slices of ell_1^eps by fitting
    ell_1^eps = e l11 + e^2 l12 + e^3 l13 through a factor-2 ladder."""
    vals = []
    mu_guess = None
    for eps in eps_ladder:
        nm = normalized_map(tmap, mel, mu0, eps, mu_guess)
        vals.append((eps, lyapunov_coefficient_map(nm)))
        mu_guess = mu0 + (nm.mu - mu0) / 2.0
    e = np.array([v[0] for v in vals])
    y = np.array([v[1] for v in vals])
    V = np.stack([e, e ** 2, e ** 3], axis=1)
    c = np.linalg.solve(V, y)
    return LyapunovSlices(l11=float(c[0]), l12=float(c[1]), values=tuple(vals))


@dataclass
class JordanExpansion:
    omega0: float
    zeta2: float
    A1: np.ndarray
    A2: np.ndarray
    m21_1: float
    m22_1: float
    eta1: float
    eta2: float
    zeta1: float
    rotation_residual: float


def jordan_expansion(tmap, mel: MelnikovPair, mu0: float,
                     eps_ladder: Sequence[float] = (4e-3, 2e-3, 1e-3)
                     ) -> JordanExpansion:
    """eps-expansion Id + eps A1 + eps^2 A2 of the normalized linearization.

    On the solved curve |lambda| = 1, the normalized DH is the rotation by
    theta_eps, so A1/A2 are recovered from the theta_eps ladder:
    theta = omega0 eps + zeta2 eps^2 + O(eps^3), A1 = [[0, -omega0],
    [omega0, 0]], A2 = [[-omega0^2/2, -zeta2], [zeta2, -omega0^2/2]]; the
    eta slices vanish identically on the curve (eta1 = eta2 = 0 up to the
    unit-circle solve tolerance). M1 entries come from the same ladder.
    """
    nms = []
    mu_guess = None
    for eps in eps_ladder:
        nm = normalized_map(tmap, mel, mu0, eps, mu_guess)
        nms.append(nm)
        mu_guess = mu0 + (nm.mu - mu0) / 2.0
    thetas = [nm.theta / nm.eps for nm in nms]
    c0, c1, _ = _richardson3(thetas, eps_ladder)
    omega0, zeta2 = float(c0), float(c1)
    m21 = [ (nm.M[1, 0] - 0.0) / nm.eps for nm in nms ]
    # M0 = [[1,0],[0, m22_0]]: take the limit of M[1,1] for the zeroth order
    m22_0, m22_1, _ = _richardson3([nm.M[1, 1] for nm in nms], eps_ladder)
    m21_1 = float(_richardson3(m21, eps_ladder)[0])
    rot_res = max(nm.rotation_residual for nm in nms)
    # eta slices from |lambda| (zero on the curve by construction)
    etas = [abs(nm.eigenvalue) - 1.0 for nm in nms]
    eta1 = float(_richardson3([v / nm.eps for v, nm in zip(etas, nms)], eps_ladder)[0])
    eta2 = float(_richardson3([v / nm.eps ** 2 for v, nm in zip(etas, nms)],
                              eps_ladder)[0])
    A1 = np.array([[0.0, -omega0], [omega0, 0.0]])
    A2 = np.array([[-0.5 * omega0 ** 2, -zeta2], [zeta2, -0.5 * omega0 ** 2]])
    return JordanExpansion(omega0=omega0, zeta2=zeta2, A1=A1, A2=A2,
                           m21_1=m21_1, m22_1=float(m22_1), eta1=eta1, eta2=eta2,
                           zeta1=omega0, rotation_residual=rot_res)
