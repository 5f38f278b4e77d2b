import math

import numpy as np
import pytest

from conftest import random_plant
from opamp import UNSTABLE_QUADRATIC
from polyrat import (Polynomial, RationalFunction, as_rational, poly_roots, rf_arith, rf_is_stable,
                     rf_is_unit, stability_tol)


def rf(num, den, **kw):
    return RationalFunction(Polynomial(num), Polynomial(den), **kw)


# 多项式

def test_zero_polynomial_is_empty():
    assert Polynomial([0.0, 0.0]).is_zero
    assert Polynomial([0.0]).coeffs.size == 0
    assert Polynomial.zero().degree == float('-inf')


def test_trailing_zeros_trimmed():
    p = Polynomial([1.0, 2.0, 0.0, 0.0])
    assert p.degree == 1
    assert p.leading == 2.0


def test_non_finite_coefficients_rejected():
    with pytest.raises(ValueError):
        Polynomial([1.0, math.nan])


def test_polynomial_arithmetic():
    s = Polynomial.s()
    p = (s + 1) * (s + 2)
    assert np.allclose(p.coeffs, [2.0, 3.0, 1.0])
    assert np.allclose((p - 2).coeffs, [0.0, 3.0, 1.0])
    assert np.allclose(Polynomial.shift_power(2.0, 3).coeffs, [8.0, 12.0, 6.0, 1.0])
    assert p(1.0) == pytest.approx(6.0)


def test_chop_drops_vanished_leading_term():
    p = Polynomial([1.0, 1.0, 1e-17])
    assert p.chop().degree == 1
    assert p.chop(w0=1e8).degree == 2
    assert Polynomial([1e-17, 1.0]).chop().coeffs.tolist() == [1e-17, 1.0]


# 求根

def test_roots_of_factored_quadratic():
    roots = poly_roots(Polynomial([2.0, 3.0, 1.0]))
    assert np.allclose(np.sort(roots.real), [-2.0, -1.0])
    assert np.allclose(roots.imag, 0.0)


def test_roots_of_unstable_opamp_quadratic():
    roots = poly_roots(Polynomial(UNSTABLE_QUADRATIC))
    assert roots.size == 2
    assert np.allclose(roots.real, 6.69e3, rtol=1e-6)
    assert np.all(np.abs(roots.imag) > 4e7)


def test_roots_of_constant_are_empty():
    assert poly_roots(Polynomial([5.0])).size == 0


def test_roots_of_zero_polynomial_raise():
    with pytest.raises(ValueError, match="roots of zero polynomial undefined"):
        poly_roots(Polynomial.zero())


def test_roots_at_origin_extracted():
    roots = poly_roots(Polynomial([0.0, 0.0, -1.0, 1.0]))
    assert np.sum(np.abs(roots) == 0.0) == 2
    assert np.any(np.isclose(roots, 1.0))


def test_root_coefficient_round_trip(rng):
    for degree in range(1, 9):
        roots = (0.5 + 0.45 * np.arange(degree) + rng.uniform(0.0, 0.1, degree))
        roots = roots * rng.choice([-1.0, 1.0], size=degree)
        p = Polynomial.from_roots(roots)
        back = Polynomial.from_roots(poly_roots(p))
        err = np.max(np.abs(back.coeffs - p.coeffs)) / np.max(np.abs(p.coeffs))
        assert err < 1e-8, degree


# 有理函数

def test_canonical_form_monic_and_reduced():
    f = rf([2.0, 2.0], [4.0, 6.0, 2.0])     # 2(s+1) / 2(s+1)(s+2)
    assert f.den.leading == 1.0
    assert f.den.degree == 1
    assert f(0.0) == pytest.approx(0.5)


def test_canonicalization_idempotent(rng):
    for _ in range(20):
        num, den = random_plant(rng)
        f = RationalFunction(num, den)
        g = RationalFunction(f.num, f.den)
        assert g.num.coeffs.shape == f.num.coeffs.shape
        assert np.allclose(g.num.coeffs, f.num.coeffs, rtol=1e-12, atol=0.0)
        assert np.allclose(g.den.coeffs, f.den.coeffs, rtol=1e-12, atol=0.0)


def test_unreduced_keeps_common_factor():
    f = rf([-1.0, 1.0], [-1.0, 0.0, 1.0], reduce=False)
    assert f.den.degree == 2


def test_zero_denominator_rejected():
    with pytest.raises(ZeroDivisionError):
        RationalFunction(1.0, 0.0)


def test_add_same_denominator():
    f = rf([1.0], [1.0, 1.0])
    g = rf_arith(f, f, 'add')
    assert np.allclose(g.num.coeffs, [2.0])
    assert np.allclose(g.den.coeffs, [1.0, 1.0])


def test_product_cancels_common_factor():
    n = rf([3.0, 1.0], [1.0, 1.0])       # (s+3)/(s+1)
    d = rf([1.0, 1.0], [5.0, 1.0])       # (s+1)/(s+5)
    g = rf_arith(n, d, 'mul')
    assert g.den.degree == 1
    assert np.allclose(g.num.coeffs, [3.0, 1.0])
    assert np.allclose(g.den.coeffs, [5.0, 1.0])


def test_single_port_sum():
    Y = rf([2.0, 1.0], [-1.0, 1.0])      # (s+2)/(s-1)
    g = rf_arith(Y, 0.5, 'add')          # (3s+3)/(2s-2)
    assert np.allclose(g.num.coeffs, [1.5, 1.5])
    assert np.allclose(g.den.coeffs, [-1.0, 1.0])


def test_division_by_zero_function():
    with pytest.raises(ZeroDivisionError, match="division by the zero function"):
        rf_arith(rf([1.0], [1.0, 1.0]), RationalFunction.constant(0.0), 'div')
    with pytest.raises(ZeroDivisionError):
        RationalFunction.constant(0.0).inverse()


def test_unknown_operation():
    with pytest.raises(ValueError):
        rf_arith(1.0, 2.0, 'pow')


def test_as_rational_rejects_tuples():
    with pytest.raises(TypeError):
        as_rational((1.0, 2.0))


@pytest.mark.parametrize("op", ['add', 'sub', 'mul', 'div'])
def test_arithmetic_matches_pointwise_evaluation(rng, op):
    fns = {'add': np.add, 'sub': np.subtract, 'mul': np.multiply, 'div': np.divide}
    for _ in range(10):
        f = RationalFunction(*random_plant(rng))
        g = RationalFunction(*random_plant(rng))
        h = rf_arith(f, g, op)
        s0 = rng.uniform(-3.0, 3.0, 20) + 1j * rng.uniform(4.0, 6.0, 20)
        a, b = f(s0), g(s0)
        expected = fns[op](a, b)
        scale = np.abs(a) + np.abs(b) if op in ('add', 'sub') else np.abs(expected)
        assert np.max(np.abs(h(s0) - expected) / scale) < 1e-9


def test_json_form():
    f = rf([1.0, 2.0], [3.0, 1.0])
    assert f.to_json() == {"num": [1.0, 2.0], "den": [3.0, 1.0]}
    assert RationalFunction.from_json(f.to_json()) == f
    assert RationalFunction.from_json(2.5) == RationalFunction.constant(2.5)
    with pytest.raises(ValueError):
        RationalFunction.from_json({"num": [1.0]})


# 稳定性与单位

def test_stable_first_order():
    v = rf_is_stable(rf([1.0], [1.0, 1.0]))
    assert v.is_stable
    assert v.margin == pytest.approx(1.0)


def test_unstable_pole():
    v = rf_is_stable(rf([1.0, 1.0], [-1.0, 1.0]))
    assert not v.is_stable
    assert v.note == 'pole in closed right half-plane'


def test_opamp_denominator_unstable():
    from opamp import printed_reference_T
    v = rf_is_stable(printed_reference_T()[1, 1])
    assert not v.is_stable
    assert max(p.real for p in v.poles) == pytest.approx(6.69e3, rel=1e-3)


def test_improper_function_not_in_stable_algebra():
    v = rf_is_stable(rf([1.0, 1.0], [1.0]))
    assert not v.is_stable
    assert not v.proper
    assert v.note == 'stable poles, improper'


def test_pole_on_imaginary_axis_unstable():
    assert not rf_is_stable(rf([1.0], [1.0, 0.0, 1.0])).is_stable
    assert not rf_is_stable(rf([1.0], [0.0, 1.0])).is_stable


def test_stability_tolerance_scales_with_poles():
    assert stability_tol([-1e15]) == pytest.approx(1e-9 * (1 + 1e15))
    assert stability_tol([]) == pytest.approx(1e-9)


@pytest.mark.parametrize("f, expected", [
    (RationalFunction.constant(1.0), True),
    (rf([1.0, 1.0], [2.0, 1.0]), True),
    (rf([-1.0, 1.0], [1.0, 1.0]), False),
    (rf([1.0], [1.0, 1.0]), False),
])
def test_units(f, expected):
    assert rf_is_unit(f) is expected


def test_unit_iff_function_and_inverse_stable(rng):
    for _ in range(50):
        f = RationalFunction(*random_plant(rng, max_degree=3))
        both = rf_is_stable(f).is_stable and rf_is_stable(f.inverse()).is_stable
        assert rf_is_unit(f) == both
