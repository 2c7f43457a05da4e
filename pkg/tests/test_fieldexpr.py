import random
from fractions import Fraction

import pytest

from torusforge.fieldexpr import (
    FieldSyntaxError, Jet3, Poly, UnknownIdentifierError, UnboundSymbolError,
    evaluate_field, jet_extract, parse_field,
)


def test_parse_basic_degree():
    f = parse_field("x^2*y - 3/2*z^3")
    rep = f.degree_report()
    assert rep["xyz_total"] == 3
    assert rep["x"] == 2 and rep["z"] == 3
    assert rep["param_total"] == 0


def test_parse_example_system_param_degree():
    f = parse_field("-x^2 + x*y + z^2 + eps*mu*z + eps^2")
    rep = f.degree_report()
    assert rep["eps"] == 2
    assert rep["mu"] == 1
    # unary minus binds below '^': the x^2 coefficient must be -1
    assert f.poly.terms[(2, 0, 0, 0, 0)] == -1


def test_syntax_error_offset():
    with pytest.raises(FieldSyntaxError) as exc:
        parse_field("x + @")
    assert exc.value.offset == 4
    assert exc.value.expected


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as exc:
        parse_field("x + foo*y")
    assert exc.value.name == "foo"
    assert exc.value.offset == 4


def test_power_cap():
    parse_field("x^12")
    with pytest.raises(FieldSyntaxError):
        parse_field("x^13")


def test_rational_and_decimal_literals_exact():
    assert parse_field("3/2").poly.terms == {(0, 0, 0, 0, 0): Fraction(3, 2)}
    assert parse_field("0.125").poly.terms == {(0, 0, 0, 0, 0): Fraction(1, 8)}


def test_evaluate_field():
    assert evaluate_field("x*y", (2, 3, 0)) == 6
    # example-system R at (1,1,1), mu=0, eps=0
    assert evaluate_field("-x^2 + x*y + z^2 + eps*mu*z + eps^2", (1, 1, 1)) == 1
    assert evaluate_field("eps^2", (0, 0, 0), (0, 0.05)) == pytest.approx(0.0025)
    with pytest.raises(UnboundSymbolError):
        parse_field("x + y").poly.eval(x=1)


def test_jet_extract_single_monomial():
    jet = jet_extract("y*z")
    assert jet.get(0, 1, 1) == 1
    assert all(val == 0 for idx, val in jet.items() if idx != (0, 1, 1))


def test_jet_extract_second_partials():
    jet = jet_extract("-x^2 + x*y + z^2")
    assert jet.get(2, 0, 0) == -2
    assert jet.get(1, 1, 0) == 1
    assert jet.get(0, 0, 2) == 2
    assert jet.get(0, 2, 0) == 0


def test_jet_truncation_above_order3():
    jet = jet_extract("x^5 + x*z")
    assert jet.get(1, 0, 1) == 1
    assert sum(1 for _ in jet.items()) == 1


def test_param_jet_evaluation_commutes():
    pj = jet_extract("mu*z + mu^2*x*y")
    entry = pj.entry(0, 0, 1)
    assert entry.eval(mu=Fraction(1, 3)) == Fraction(1, 3)
    j = pj.at(Fraction(1, 3))
    assert j.get(0, 0, 1) == Fraction(1, 3)
    assert j.get(1, 1, 0) == Fraction(1, 9)


def _random_expr_text(rng, depth=0):
    choices = ["num", "var"]
    if depth < 4:
        choices += ["add", "sub", "mul", "pow", "neg", "paren"]
    kind = rng.choice(choices)
    if kind == "num":
        if rng.random() < 0.3:
            return f"{rng.randint(1, 9)}/{rng.randint(1, 9)}"
        return str(rng.randint(0, 12))
    if kind == "var":
        return rng.choice(["x", "y", "z", "mu", "eps"])
    if kind == "add":
        return f"{_random_expr_text(rng, depth + 1)} + {_random_expr_text(rng, depth + 1)}"
    if kind == "sub":
        return f"{_random_expr_text(rng, depth + 1)} - {_random_expr_text(rng, depth + 1)}"
    if kind == "mul":
        return f"{_random_expr_text(rng, depth + 1)}*{_random_expr_text(rng, depth + 1)}"
    if kind == "pow":
        return f"({_random_expr_text(rng, depth + 1)})^{rng.randint(0, 3)}"
    if kind == "neg":
        return f"-{_random_expr_text(rng, depth + 1)}"
    return f"({_random_expr_text(rng, depth + 1)})"


def test_print_parse_roundtrip_corpus():
    rng = random.Random(20250811)
    for _ in range(150):
        text = _random_expr_text(rng)
        try:
            ast1 = parse_field(text)
        except FieldSyntaxError:
            continue  # e.g. '--' sequences the generator can produce are fine
        printed = ast1.to_string()
        ast2 = parse_field(printed)
        assert ast1.root == ast2.root, f"{text!r} -> {printed!r}"
        # and printing is a fixed point after one round
        assert parse_field(ast2.to_string()).root == ast2.root


def _random_poly3(rng) -> Poly:
    p = Poly()
    for _ in range(rng.randint(1, 8)):
        j = rng.randint(0, 3)
        k = rng.randint(0, 3 - j)
        l = rng.randint(0, 3 - j - k)
        coeff = Fraction(rng.randint(-6, 6), rng.randint(1, 4))
        p = p + Poly({(j, k, l, 0, 0): coeff})
    return p


def test_jet_product_exactness_random():
    """jet(f*g) equals the degree-3 truncated product of jet(f) and jet(g)."""
    rng = random.Random(42)
    for _ in range(100):
        f, g = _random_poly3(rng), _random_poly3(rng)
        left = jet_extract(f * g)
        right = jet_extract(f).multiply(jet_extract(g))
        assert left == right


def test_jet_agrees_with_finite_differences():
    rng = random.Random(7)
    for _ in range(5):
        p = _random_poly3(rng).to_float()

        def ev(px, py, pz):
            return p.eval(x=px, y=py, z=pz)

        jet = jet_extract(p)
        h = 1e-2
        # central second difference for (1,1,0)
        fd = (ev(h, h, 0) - ev(h, -h, 0) - ev(-h, h, 0) + ev(-h, -h, 0)) / (4 * h * h)
        exact = float(jet.get(1, 1, 0))
        assert fd == pytest.approx(exact, rel=1e-6, abs=1e-6)


def test_jet_index_bounds():
    with pytest.raises(ValueError):
        Jet3({(2, 1, 1): Fraction(1)})
    with pytest.raises(ValueError):
        jet_extract("x*y").get(4, 0, 0)
