import math

import numpy as np
import pytest

from conftest import random_plant, random_stable_rf
from coprime import dcf_from_ss, siso_coprime
from errors import DegenerateError, InadmissibleError
from polyrat import Polynomial, RationalFunction, rf_is_stable
from ratmat import RationalMatrix, StateSpace, grid_residual, opamp_grid
from stabilize import (CompensatorResult, YoulaParamMatrix, YoulaParamScalar, check_single_port,
                       hybrid_compensator, interconnect, nmp_obstruction_distance, robustness_sample,
                       single_port_compensator, youla_identity_residual)


def rf(num, den):
    return RationalFunction(Polynomial(num), Polynomial(den))


Y_UNSTABLE = rf([2.0, 1.0], [-1.0, 1.0])        # (s+2)/(s-1)
SCALAR = RationalMatrix([[rf([1.0], [1.0, 1.0])]])
UNSTABLE = RationalMatrix([[rf([1.0], [-1.0, 1.0])]])


# 单端口

def test_zero_parameter_compensator():
    c = siso_coprime(Y_UNSTABLE, 1.0)
    Yc = single_port_compensator(c, 0.0)
    assert Yc.is_constant
    assert Yc(0.0) == pytest.approx(0.5)
    inv = (Y_UNSTABLE + Yc).inverse()
    assert np.allclose(inv.poles(), [-1.0])
    assert inv(0.0) == pytest.approx(-2.0 / 3.0)


def test_stable_plant_needs_no_compensation():
    c = siso_coprime(RationalFunction.constant(1.0))
    assert single_port_compensator(c, 0.0).is_zero


def test_nonzero_parameter_compensator():
    c = siso_coprime(Y_UNSTABLE, 1.0)
    q = rf([1.0], [2.0, 1.0])
    Yc = single_port_compensator(c, q, 'short_circuit')
    assert youla_identity_residual(c, q) < 1e-9
    assert rf_is_stable((Y_UNSTABLE + Yc).inverse()).is_stable
    assert check_single_port(Y_UNSTABLE, Yc).is_stable


def test_unstable_parameter_rejected():
    c = siso_coprime(Y_UNSTABLE, 1.0)
    with pytest.raises(InadmissibleError, match="inadmissible q"):
        single_port_compensator(c, rf([1.0], [-1.0, 1.0]))


def test_parameter_with_zero_at_infinity_rejected():
    c = siso_coprime(Y_UNSTABLE, 1.0)
    with pytest.raises(InadmissibleError, match="zero at infinity"):
        single_port_compensator(c, 2.0 / 3.0)


def test_unknown_kind():
    c = siso_coprime(Y_UNSTABLE, 1.0)
    with pytest.raises(ValueError):
        single_port_compensator(c, 0.0, 'series')


def test_scalar_parameter_wrapper():
    p = YoulaParamScalar(0.25)
    assert p.q == RationalFunction.constant(0.25)
    c = siso_coprime(Y_UNSTABLE, 1.0)
    assert single_port_compensator(c, p) == single_port_compensator(c, 0.25)


def test_check_stable_port():
    report = check_single_port(Y_UNSTABLE, 0.5)
    assert report.is_stable
    assert report.residuals["verdicts_agree"] is True
    assert report.residuals["delta_unit"] is True
    assert np.allclose(report.poles, [-1.0])
    assert RationalFunction.from_json(report.extra["delta"])(0.0) == pytest.approx(1.5)


def test_check_improper_inverse_flagged():
    Y = rf([1.0], [-1.0, 1.0])
    Yc = rf([-1.0], [-1.0, 1.0]) + rf([1.0], [1.0, 1.0])
    report = check_single_port(Y, Yc)
    assert not report.is_stable
    assert "stable poles, improper" in report.notes
    assert report.residuals["pole_verdict"] is False
    assert report.residuals["delta_unit"] is False
    assert report.residuals["verdicts_agree"] is True


def test_check_uncompensated_unstable():
    report = check_single_port(rf([1.0], [-1.0, 1.0]), 0.0)
    assert not report.is_stable
    assert report.residuals["verdicts_agree"] is True


def test_check_degenerate():
    with pytest.raises(DegenerateError, match="degenerate interconnection"):
        check_single_port(Y_UNSTABLE, -Y_UNSTABLE)


def test_check_verdicts_agree_on_random_pairs(rng):
    for _ in range(100):
        G = RationalFunction(*random_plant(rng, max_degree=3))
        Gc = RationalFunction(*random_plant(rng, max_degree=3))
        report = check_single_port(G, Gc)
        assert report.residuals["verdicts_agree"], (G, Gc, report.notes)


def test_youla_residual_on_random_plants(rng):
    for _ in range(20):
        c = siso_coprime(RationalFunction(*random_plant(rng)), 1.0)
        q = random_stable_rf(rng)
        assert youla_identity_residual(c, q) < 1e-9


def test_rhp_zero_never_becomes_compensator_pole(rng):
    G = rf([-2.0, 1.0], [-3.0, 2.0, 1.0])       # (s-2)/((s-1)(s+3))
    c = siso_coprime(G, 1.0)
    for _ in range(20):
        q = random_stable_rf(rng)
        try:
            Gc = single_port_compensator(c, q)
        except InadmissibleError:
            continue
        assert nmp_obstruction_distance(G, Gc) > 1e-3


def test_obstruction_distance_without_rhp_zero():
    assert nmp_obstruction_distance(rf([1.0], [1.0, 1.0]), rf([1.0], [-2.0, 1.0])) == math.inf


# 多端口补偿器

@pytest.fixture
def scalar_dcf(grid):
    return dcf_from_ss(SCALAR, [-2.0], [-3.0], omegas=grid)


@pytest.fixture
def unstable_dcf(grid):
    return dcf_from_ss(UNSTABLE, [-2.0], [-3.0], omegas=grid)


def test_zero_parameter_is_left_quotient(scalar_dcf, grid):
    comp = hybrid_compensator(scalar_dcf, None, omegas=grid)
    assert isinstance(comp, CompensatorResult)
    expected = scalar_dcf.Xl.inv() * scalar_dcf.Yl
    assert grid_residual(comp.realization, expected, grid) < 1e-9
    assert comp.residuals["left_right_agreement"] < 1e-6
    assert comp.T_c.shape == (1, 1)


def test_compensator_stabilizes_unstable_scalar(unstable_dcf, grid):
    comp = hybrid_compensator(unstable_dcf, None, omegas=grid)
    result = interconnect(UNSTABLE, comp, omegas=grid)
    assert result.report.is_stable, result.report.notes
    res = result.report.residuals
    assert res["delta_r"] < 1e-6 and res["delta_l"] < 1e-6
    assert res["right_form"] < 1e-5 and res["left_form"] < 1e-5
    assert res["product_form"] < 1e-5
    assert np.allclose(result.delta_r.evalfr(1j), 1.0)


def test_nonzero_parameter(unstable_dcf, grid):
    Q = RationalMatrix([[rf([0.5], [4.0, 1.0])]])
    comp = hybrid_compensator(unstable_dcf, Q, omegas=grid)
    result = interconnect(UNSTABLE, comp, omegas=grid)
    assert result.report.is_stable
    zero = hybrid_compensator(unstable_dcf, None, omegas=grid)
    assert grid_residual(comp.realization, zero.realization, grid) > 1e-3


def test_unstable_parameter_rejected(unstable_dcf, grid):
    Q = RationalMatrix([[rf([1.0], [-1.0, 1.0])]])
    with pytest.raises(InadmissibleError, match="inadmissible Q"):
        hybrid_compensator(unstable_dcf, Q, omegas=grid)


def test_parameter_with_zero_at_infinity_rejected(unstable_dcf, grid):
    # Xl(∞) = 1, Dl(∞) = 1
    with pytest.raises(InadmissibleError, match="zero at infinity"):
        hybrid_compensator(unstable_dcf, RationalMatrix.constant([[1.0]]), omegas=grid)


def test_parameter_shape_checked(unstable_dcf, grid):
    with pytest.raises(InadmissibleError):
        hybrid_compensator(unstable_dcf, RationalMatrix.identity(2), omegas=grid)
    assert YoulaParamMatrix().realization(2, 1).shape == (2, 1)


# 互连

def test_interconnect_static_identities():
    result = interconnect(RationalMatrix.identity(2), RationalMatrix.identity(2))
    assert result.report.is_stable
    assert np.allclose(result.T_hat.evalfr(1j), 0.5 * np.eye(2))
    assert result.delta_r is None


def test_interconnect_first_order_pair():
    result = interconnect(SCALAR, RationalMatrix([[rf([1.0], [2.0, 1.0])]]))
    assert result.report.is_stable
    assert result.T_hat[0, 0](1j) == pytest.approx(1.0 / (2j + 3.0))
    assert np.allclose(result.closed_loop_poles, [-1.5])


def test_interconnect_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        interconnect(SCALAR, RationalMatrix.identity(2))


def test_interconnect_degenerate():
    with pytest.raises(DegenerateError):
        interconnect(SCALAR, -SCALAR)


def test_interconnect_reports_instability():
    # (2(s-1))^-1
    result = interconnect(UNSTABLE, UNSTABLE)
    assert not result.report.is_stable
    assert np.allclose(result.closed_loop_poles, [1.0])


def test_opamp_interconnection(opamp_T, opamp_compensator):
    grid = opamp_grid()
    result = interconnect(opamp_T, opamp_compensator, omegas=grid)
    report = result.report
    assert report.is_stable, report.notes
    assert report.margin > 0
    assert report.residuals["delta_r"] < 1e-6
    assert report.residuals["delta_l"] < 1e-6
    assert report.residuals["product_form"] < 1e-5
    assert report.to_json()["closed_loop_poles"]


# 鲁棒性抽样

def test_robustness_small_perturbation(unstable_dcf, grid):
    comp = hybrid_compensator(unstable_dcf, None, omegas=grid)
    report = robustness_sample(UNSTABLE, comp, 1e-3, 100, seed=3)
    trials = report.extra["trials"]
    assert trials["survival"] == 1.0
    assert trials["degenerate"] == 0
    assert report.is_stable


def test_robustness_zero_perturbation_keeps_margin(unstable_dcf, grid):
    comp = hybrid_compensator(unstable_dcf, None, omegas=grid)
    nominal = interconnect(UNSTABLE, comp)
    report = robustness_sample(UNSTABLE, comp, 0.0, 10, seed=0)
    assert report.extra["trials"]["survival"] == 1.0
    assert report.margin == pytest.approx(float(np.min(-nominal.closed_loop_poles.real)), rel=1e-9)


def test_robustness_is_seeded_and_order_independent(unstable_dcf, grid):
    comp = hybrid_compensator(unstable_dcf, None, omegas=grid)
    a = robustness_sample(UNSTABLE, comp, 0.5, 30, seed=11)
    b = robustness_sample(UNSTABLE, comp, 0.5, 30, seed=11, workers=4)
    assert a.extra["trials"] == b.extra["trials"]
    assert a.margin == b.margin


def test_robustness_large_perturbation_loses_stability(unstable_dcf, grid):
    comp = hybrid_compensator(unstable_dcf, None, omegas=grid)
    report = robustness_sample(UNSTABLE, comp, 10.0, 100, seed=42)
    assert report.extra["trials"]["survival"] < 1.0
    assert not report.is_stable


def test_robustness_arguments_validated():
    with pytest.raises(ValueError):
        robustness_sample(SCALAR, SCALAR, -1.0, 10, 0)
    with pytest.raises(ValueError):
        robustness_sample(SCALAR, SCALAR, 1e-3, 0, 0)


def test_robustness_with_plain_compensator():
    Tc = StateSpace.static([[1.0]])
    report = robustness_sample(SCALAR, Tc, 1e-3, 20, seed=1)
    assert report.extra["trials"]["survival"] == 1.0
