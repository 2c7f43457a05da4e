import random
from fractions import Fraction as Q

import pytest

from torusforge.fieldexpr import Poly, parse_field
from torusforge.lift import (
    Ball, LiftError, NoPositiveOmegaFound, ZeroComponentAtP,
    build_lift_family, find_separating_plane, poly_expr, printed_A_limit,
    translate_to_origin, tune_lift_parameters,
)

SPEC_SEED = ("1 + x", "1/10*x + y", "0")


def _polys(exprs):
    return tuple(parse_field(e).poly for e in exprs)


def test_separating_plane_spec_example():
    plane = find_separating_plane(SPEC_SEED, Ball((0.0, 0.0, 0.0), 1.0))
    x_star = float(plane.point[0])
    # first half-step power of two past the arcsin(1/x) < arctan(...) threshold
    assert x_star == pytest.approx(2 ** 3.5, rel=1e-12)
    assert plane.plane_distance > 1.0
    assert plane.containment_residual <= 1e-12
    assert plane.jitter_magnitude == 0.0


def test_separating_plane_skips_singular_candidate():
    # field vanishing identically on the x-axis at the spec-example geometry
    # forces the x-scan to keep going (regular-point requirement)
    plane = find_separating_plane(
        ("(1 + x)*(1 - 1/100000000*x^2)", "1/10*x + y", "0"),
        Ball((0.0, 0.0, 0.0), 1.0))
    # x = 10000 is a root of f: it cannot be the accepted point
    assert float(plane.point[0]) != pytest.approx(1e4)
    assert plane.plane_distance > 1.0


def test_common_factor_triggers_jitter():
    plane = find_separating_plane(("1 + x + y", "2 + 2*x + 2*y", "z"),
                                  Ball((0.0, 0.0, 0.0), 1.0), seed=7)
    assert plane.jitter_magnitude > 0.0
    assert plane.plane_distance > 1.0


def test_build_lift_char_poly_exact():
    rng = random.Random(11)
    polys = _polys(("2 + x + 1/2*z + x^2", "1 - y + 2*z + y^2", "3 + x + z^2"))
    for _ in range(5):
        L = Q(rng.randint(1, 9), rng.randint(1, 4))
        delta = Q(rng.randint(1, 9), rng.randint(1, 9))
        fam = build_lift_family(polys, L, delta)
        assert fam.char_poly_ok            # -lambda^3 - delta lambda, exact
        assert fam.degree == 3             # degree m+1 for the degree-2 seed


def test_delta_zero_factorization():
    polys = _polys(("2 + x + 1/2*z + x^2", "1 - y + 2*z + y^2", "3 + x + z^2"))
    fam = build_lift_family(polys, Q(3), Q(0))
    lin = Poly.variable("x").scale(fam.a0) + Poly.variable("y").scale(fam.b0)
    for i in range(3):
        assert fam.lifted[i] == lin * polys[i]
    # on the degenerate plane a0 x + b0 y = 0 the lift vanishes identically:
    # substitute x = -b0 t, y = a0 t and check the factor annihilates
    t = Poly.variable("mu")    # reuse a spare variable as the line parameter
    sub = {"x": t.scale(-fam.b0), "y": t.scale(fam.a0)}
    assert not (lin.substitute(sub)).terms


def test_normalized_linear_part_exact():
    polys = _polys(("2 + x + 1/2*z + x^2", "1 - y + 2*z + y^2", "3 + x + z^2"))
    fam = build_lift_family(polys, Q(1), Q(1, 4))    # delta a rational square
    assert fam.sqrt_delta == Q(1, 2)
    assert fam.linear_residual == 0.0                # conjugation is exact
    assert fam.system is not None
    assert fam.system.omega > 0


def test_zero_component_raises():
    polys = _polys(("x + x^2", "1 + y", "1 + z"))
    with pytest.raises(ZeroComponentAtP):
        build_lift_family(polys, Q(1), Q(1, 4))


def test_tuning_limit_matches_printed_formula():
    rng = random.Random(2024)
    for _ in range(3):
        def rc(lo=-3, hi=3):
            v = 0
            while v == 0:
                v = Q(rng.randint(lo, hi), rng.randint(1, 3))
            return v
        exprs = (f"{rc(1,3)} + {rc()}*x + {rc()}*z + {rc()}*x^2 + {rc()}*y*z",
                 f"{rc(1,3)} + {rc()}*y + {rc()}*z + {rc()}*y^2",
                 f"{rc(1,3)} + {rc()}*x + {rc()}*z^2")
        polys = _polys([e.replace("+ -", "- ") for e in exprs])
        try:
            tuning = tune_lift_parameters(polys, seed=3)
        except (NoPositiveOmegaFound, LiftError):
            continue
        assert tuning.A_limit == tuning.A_limit_printed      # exact rationals
        assert tuning.delta_linearity_residual <= 1e-9
        assert tuning.family.char_poly_ok
        assert tuning.family.linear_residual == 0.0
        assert abs(tuning.report.base.ell1) > 0


def test_tuning_degenerate_seed_raises():
    # P, Q independent of z: the printed A(L)/L^2 limit vanishes; constants
    # are chosen so A(L) <= 0 on the grid
    polys = _polys(("1 + x + x^2", "1 + y + y^2", "1 + z + z^2"))
    limit = printed_A_limit(polys)
    assert limit == 0
    with pytest.raises((NoPositiveOmegaFound, LiftError)):
        tune_lift_parameters(polys)


def test_lifted_system_grammar_roundtrip():
    polys = _polys(("2 + x + 1/2*z + x^2", "1 - y + 2*z + y^2", "3 + x + z^2"))
    fam = build_lift_family(polys, Q(1), Q(1, 4))
    for p in list(fam.lifted) + list(fam.normalized):
        text = poly_expr(p).to_string()
        assert parse_field(text).poly == p


def test_translate_to_origin():
    polys = _polys(("1 + x", "1/10*x + y", "0"))
    shifted = translate_to_origin(polys, (Q(8), Q(0), Q(0)))
    assert shifted[0].eval(x=Q(0), y=Q(0), z=Q(0), mu=Q(0), eps=Q(0)) == 9
    assert shifted[1].eval(x=Q(0), y=Q(0), z=Q(0), mu=Q(0), eps=Q(0)) == Q(8, 10)
