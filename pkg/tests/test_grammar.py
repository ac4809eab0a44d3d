import pytest

from smallgain import calculus as cc
from smallgain.calculus import FnClass
from smallgain.grammar import GrammarError, parse_annotated, parse_function


@pytest.mark.parametrize("text, s, expected", [
    ("s", 3.0, 3.0),
    ("id", 2.5, 2.5),
    ("0.5*s", 4.0, 2.0),
    ("s^2", 3.0, 9.0),
    ("2*s^2", 3.0, 18.0),
    ("s/(1+s)", 1.0, 0.5),
    ("2*s/(1+s)", 1.0, 1.0),
    ("s + s^2", 2.0, 6.0),
    ("2*s . s^2", 3.0, 18.0),
    ("s^2 . 2*s", 3.0, 36.0),
    ("inv(s^2)", 4.0, 2.0),
    ("min(s, 2*s)", 3.0, 3.0),
    ("(s + s) . 0.5*s", 4.0, 4.0),
    ("3*(s + s^2)", 1.0, 6.0),
    ("0", 5.0, 0.0),
])
def test_values(text, s, expected):
    assert parse_function(text)(s) == pytest.approx(expected, abs=1e-9)


def test_claims():
    fn, claim = parse_annotated("0.5*s:Kinf")
    assert claim == FnClass.KINF and fn.linear_coefficient() == 0.5
    fn, claim = parse_annotated("2*s/(1+s) : K")
    assert claim == FnClass.K
    assert parse_annotated("s")[1] is None


def test_offset_parses_but_is_not_class_k():
    fn, claim = parse_annotated("1 + 0.5*s:K")
    assert claim == FnClass.K
    assert fn.declared_class == FnClass.POSITIVE_AFFINE
    assert "zero_at_zero violated" in cc.classify(fn).failures(FnClass.K)


def test_zero_is_zero_function():
    assert parse_function("0").is_zero


def test_cap_applied():
    assert parse_function("2*s", cap=50.0).cap == 50.0


def test_composition_widens_outer_cap():
    f = parse_function("s . 10*s", cap=100.0)
    assert f.cap == pytest.approx(100.0)
    assert f(100.0) == 1000.0


def test_roundtrip_through_to_expr():
    f = parse_function("inv(s + 2*s^2) . 3*s/(1+s)")
    g = parse_function(f.to_expr())
    for s in (0.0, 0.3, 2.0, 40.0):
        assert g(s) == pytest.approx(f(s), rel=1e-12)


@pytest.mark.parametrize("bad", ["", "s +", "foo", "2*s/(2+s)", "s:Q", "min(s)", "(s", "s s",
                                 "inv(1 + s)"])
def test_errors(bad):
    with pytest.raises(GrammarError) as info:
        parse_function(bad)
    assert info.value.pos >= 0
