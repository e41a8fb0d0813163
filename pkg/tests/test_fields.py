import math

import numpy as np
import pytest

from kpplab.fields import (CoefficientField, ConstantField, FunctionField, KppReaction, SeparableField,
                           TabulatedField, default_plan, spreading_gate, linearize, make_reaction,
                           periodic_modulation, validate_kpp)


def test_constant_field_broadcasts():
    f = ConstantField(2.0)
    x = np.zeros((5, 3, 2))
    assert f(0.0, x).shape == (5, 3)
    A = ConstantField(np.eye(2))
    assert A(np.zeros(4), np.zeros((4, 2))).shape == (4, 2, 2)


def test_periodic_modulation_is_exact_on_dyadic_times():
    mod = periodic_modulation(1.0)
    t = np.arange(0, 64) / 8.0
    assert np.array_equal(mod(t), mod(t + 1.0))
    assert np.array_equal(mod(t), mod(t + 3.0))


def test_separable_field_value():
    f = SeparableField(lambda x: 1 + x[..., 0] ** 2, lambda x: np.ones(x.shape[:-1]), periodic_modulation(2.0))
    x = np.array([[0.5], [1.0]])
    expect = 1 + x[:, 0] ** 2 + math.sin(2 * math.pi * 0.25)
    assert np.allclose(f(0.5, x), expect)
    assert f.time_dependent


def test_logistic_passes_all_axioms():
    r = make_reaction("logistic", 2.0)
    rep = validate_kpp(r, CoefficientField.isotropic(1))
    assert rep.passed, rep.failed()
    assert rep.slope_inf == pytest.approx(2.0)


def test_logistic_defect_modulus_is_identity():
    # for f = r u (1 - u): f_u(0) - f/u = r u, so psi(u) = r u exactly
    r = make_reaction("logistic", 1.0)
    rep = validate_kpp(r, CoefficientField.isotropic(1))
    assert np.allclose(rep.psi, rep.u, rtol=0, atol=1e-14)
    assert rep.psi_at(0.25) >= 0.25 - 1e-14


def test_heterogeneous_rate_bounds():
    rate = FunctionField(lambda t, x: 2 + np.sin(x[..., 0]) + 0 * t, time_dependent=False)
    r = make_reaction("logistic", rate, rate_max=3.0)
    rep = validate_kpp(r, CoefficientField.isotropic(1))
    assert rep.passed
    assert rep.slope_inf >= 1.0 - 1e-9 and rep.slope_sup <= 3.0 + 1e-9


def test_cubic_fails_positive_slope():
    rep = validate_kpp(make_reaction("cubic", 1.0), CoefficientField.isotropic(1))
    assert not rep.axioms["positive_slope"].passed
    assert not rep.passed


def test_nonzero_at_zero_is_refused():
    r = KppReaction(ConstantField(1.0), shape="custom", custom=lambda t, x, u: 1 - u)
    with pytest.raises(ValueError, match="vanish"):
        validate_kpp(r, CoefficientField.isotropic(1))


def test_supra_linear_reaction_fails_kpp_bound():
    r = KppReaction(ConstantField(1.0), shape="custom", custom=lambda t, x, u: u * (1 - u) * (1 + 2 * u),
                    rate_max=1.0, lipschitz=4.0)
    rep = validate_kpp(r, CoefficientField.isotropic(1))
    assert not rep.axioms["kpp_bound"].passed


def test_gate_margin():
    r = make_reaction("logistic", 1.0)
    ok, margin = spreading_gate(r, CoefficientField.isotropic(1, 1.0, 1.0))
    assert ok and margin == pytest.approx(1.0)
    ok, margin = spreading_gate(r, CoefficientField.isotropic(1, 1.0, 3.0))
    assert not ok and margin == pytest.approx(-1.0)


def test_linearize_keeps_slope_at_zero():
    r = make_reaction("logistic", 1.5)
    lin = linearize(r)
    assert lin.shape == "template"
    x = np.zeros((1, 1))
    assert lin.deriv_at_zero(0.0, x) == pytest.approx(r.deriv_at_zero(0.0, x))
    assert lin.eval(0.0, x, np.array([0.75])) == pytest.approx(1.5 * 0.25)


def test_non_constant_rate_needs_bound():
    with pytest.raises(ValueError):
        make_reaction("logistic", lambda t, x: 1 + 0 * x[..., 0])


def test_coefficient_field_validation():
    with pytest.raises(ValueError):
        CoefficientField.isotropic(3)
    f = CoefficientField.isotropic(2, 2.0, (3.0, 4.0))
    assert f.b_sup == pytest.approx(5.0)
    assert np.allclose(f.min_eigenvalue(0.0, np.zeros((3, 2))), 2.0)


def test_default_plan_shape():
    p = default_plan(2)
    assert p.x.shape[1] == 2
    assert np.all((p.u > 0) & (p.u < 1))


def test_tabulated_field_from_csv(tmp_path):
    path = tmp_path / "rate.csv"
    lines = ["t,x,value"]
    for t in (0.0, 1.0):
        for x in (0.0, 1.0, 2.0):
            lines.append(f"{t},{x},{1 + x + t}")
    path.write_text("\n".join(lines) + "\n")
    f = TabulatedField.from_csv(path, time_period=1.0)
    assert f(0.5, np.array([[1.5]]))[0] == pytest.approx(3.0)
    # clamped outside the table
    assert f(0.0, np.array([[5.0]]))[0] == pytest.approx(3.0)
