import math

import numpy as np
import pytest

from smallgain.compfunc import GridSpec, NotKInfinityError, is_class_k, parse_gain
from smallgain.gains import DiagonalOperatorD, GainMatrix, GainOperator, linear_D
from smallgain.xi import build_R, build_xi, verify_xi_implication


def half():
    return GainOperator(GainMatrix.linear([[0, 0.5], [0.5, 0]]))


def test_R_hand_composition():
    R = build_R(half(), linear_D(2, 0.2))
    # Id+A -> 1.5, alpha^-1 = 5r -> 7.5, D = 1.2r -> 9
    np.testing.assert_allclose(R.step([1.0, 1.0]), [9.0, 9.0], rtol=1e-14)
    assert R.steps == 2
    np.testing.assert_allclose(R([1.0, 1.0]), [81.0, 81.0], rtol=1e-14)


def test_R_zero():
    R = build_R(half(), linear_D(2, 0.2))
    assert np.all(R([0.0, 0.0]) == 0)


@pytest.mark.parametrize("delta", [0.1, 0.5, 2.0])
def test_zero_A_step(delta):
    A = GainOperator(GainMatrix.from_exprs([["0", "0"], ["0", "0"]]))
    R = build_R(A, linear_D(2, delta))
    np.testing.assert_allclose(R.step([3.0, 1.0]), np.array([3.0, 1.0]) * (1 + delta) / delta, rtol=1e-14)


def test_xi_linear_example():
    xi = build_xi(half(), linear_D(2, 0.2))
    assert xi(1.0) == pytest.approx(81 * math.sqrt(2), rel=1e-14)
    assert xi(1.0) == pytest.approx(114.551, abs=1e-3)
    assert xi(0.0) == 0.0
    assert xi(math.sqrt(0.5)) == pytest.approx(81.0, rel=1e-14)


def test_xi_scalar_zero_A():
    A = GainOperator(GainMatrix.from_exprs([["0"]]))
    xi = build_xi(A, linear_D(1, 1.0))
    r = np.array([0.0, 0.5, 3.0, 1e4])
    np.testing.assert_allclose(xi(r), 2 * r, rtol=1e-14)


def test_xi_is_class_k_and_grows():
    A = GainOperator(GainMatrix.from_exprs([["0", "0.5*r*(1-exp(-r))"], ["0.5*r*(1-exp(-r))", "0"]]))
    xi = build_xi(A, linear_D(2, 0.1))
    assert is_class_k(xi, GridSpec(128, 1e4)).ok
    assert xi(1e4) > 1e5


def test_power_alphas_use_analytic_inverse():
    A = GainOperator(GainMatrix.linear([[0, 0.5], [0.5, 0]]))
    D = DiagonalOperatorD((parse_gain("r^2"), parse_gain("r^2")))
    R = build_R(A, D)
    # (1,1) -> 1.5 -> sqrt(1.5) -> sqrt(1.5) + 1.5
    s = math.sqrt(1.5)
    np.testing.assert_allclose(R.step([1.0, 1.0]), [s + 1.5] * 2, rtol=1e-14)


def test_non_kinf_alpha_rejected():
    D = DiagonalOperatorD((parse_gain("r/(1+r)"), parse_gain("r")), validate=False)
    with pytest.raises(NotKInfinityError):
        build_R(half(), D)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        build_R(half(), linear_D(3, 0.2))


def test_conditioned_example_pair():
    A, D = half(), linear_D(2, 0.2)
    xi = build_xi(A, D)
    w = np.array([1.0, 1.0])
    v = w - A(w)
    np.testing.assert_allclose(v, [0.5, 0.5])
    assert np.linalg.norm(w) <= xi(np.linalg.norm(v))


def test_verify_linear():
    rep = verify_xi_implication(half(), linear_D(2, 0.2), trials=2000, seed=1)
    assert rep.ok
    assert rep.max_ratio <= 1.0


def test_verify_saturating_half():
    g = "0.5*r*(1-exp(-r))"
    A = GainOperator(GainMatrix.from_exprs([["0", g], [g, "0"]]))
    rep = verify_xi_implication(A, linear_D(2, 0.1), trials=10_000, seed=0, check_precondition=True)
    assert rep.violations == 0
    assert rep.vector_violations == 0
    assert rep.trials == 10_000


def test_verify_precondition_refuses():
    A = GainOperator(GainMatrix.linear([[0, 1.0], [1.0, 0]]))
    with pytest.raises(ValueError, match="small-gain"):
        verify_xi_implication(A, linear_D(2, 0.1), trials=10, check_precondition=True)


def test_vector_bound_three_blocks():
    A = GainOperator(
        GainMatrix.from_exprs([["0", "0.3*r", "0"], ["0", "0", "0.4*r*(1-exp(-r))"], ["0.2*r", "0", "0"]]), "max"
    )
    rep = verify_xi_implication(A, linear_D(3, 0.2), trials=1000, seed=4, check_precondition=True)
    assert rep.vector_violations == 0 and rep.violations == 0


def test_determinism():
    xi1 = build_xi(half(), linear_D(2, 0.2))
    xi2 = build_xi(half(), linear_D(2, 0.2))
    r = np.logspace(-3, 3, 50)
    assert np.array_equal(xi1(r), xi2(r))
    a = verify_xi_implication(half(), linear_D(2, 0.2), trials=500, seed=9).to_dict()
    b = verify_xi_implication(half(), linear_D(2, 0.2), trials=500, seed=9).to_dict()
    assert a == b
