import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glucocontract.errors import ConfigError, DomainError, InfeasibleSetpoint
from glucocontract.model import (MealParams, PatientParams, equilibrium_for_setpoint, from_deviation,
                                 get_patient, load_patients, meal_deriv, rest_equilibrium, plant_deriv,
                                 plant_jacobian, to_deviation)

# published parameter rows, typed in independently of the bundled data file
TABLE1 = {
    "1": (2.20e-3, 1.06e-2, 8.60e-6, 0.0213, 0.0204, 1.33, 1.02e-5),
    "3": (3.50e-3, 2.33e-2, 1.079e-5, 0.0143, 0.0141, 1.07, 1.55e-5),
    "5": (4.33e-3, 9.63e-3, 1.974e-6, 0.0217, 0.0217, 0.6, 1.416e-5),
}


@pytest.mark.parametrize("label", sorted(TABLE1))
def test_bundled_table(label):
    p = get_patient(label)
    p1, p2, p3, p4, p5, egp, p6 = TABLE1[label]
    assert (p.p1, p.p2, p.p3, p.p4, p.p5, p.egp, p.p6) == (p1, p2, p3, p4, p5, egp, p6)


def test_unknown_subject():
    with pytest.raises(ConfigError):
        get_patient("2")


def test_params_validated():
    with pytest.raises(DomainError):
        get_patient("1").replace(p3=0.0)
    with pytest.raises(DomainError):
        get_patient("1").replace(egp=float("nan"))


def test_load_patients_from_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"x": get_patient("1").to_dict()}))
    assert load_patients(path)["x"].p4 == 0.0213
    with pytest.raises(ConfigError):
        PatientParams.from_dict({"p1": 1.0})


def test_plant_deriv_rest_point():
    p = get_patient("1")
    np.testing.assert_allclose(plant_deriv([1.33 / 2.2e-3, 0, 0, 0], p, 0.0), 0.0, atol=1e-12)


def test_plant_deriv_hand_values():
    p = get_patient("1")
    expected = [-0.0022 * 120 - 1.2 + 1.33, -0.0106 * 0.01 + 8.6e-6, 0.0, -0.0204]
    np.testing.assert_allclose(plant_deriv([120, 0.01, 1, 1], p, 0.0), expected, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(expected, [-0.134, -9.74e-5, 0, -0.0204], rtol=1e-9)


@given(st.lists(st.floats(-500, 500), min_size=4, max_size=4), st.floats(0, 1e5))
def test_ra_enters_additively(x, u):
    p = get_patient("3")
    d = plant_deriv(x, p, u, ra=5.0) - plant_deriv(x, p, u, ra=0.0)
    assert d[0] == pytest.approx(5.0, abs=1e-9 * (1 + abs(x[0] * x[1])))
    assert np.all(d[1:] == 0)


def test_plant_deriv_rejects_nonfinite():
    with pytest.raises(DomainError):
        plant_deriv([np.nan, 0, 0, 0], get_patient("1"), 0.0)


def test_meal_deriv_examples():
    mp = MealParams()
    dm, ra = meal_deriv([0, 0], mp, 0.0)
    assert np.all(dm == 0) and ra == 0
    dm, ra = meal_deriv([43, 0], mp, 0.0)
    np.testing.assert_allclose(dm, [-1, 1])
    assert ra == 0
    assert meal_deriv([0, 86], mp, 0.0)[1] == 2.0


def test_bio_interpretations():
    assert MealParams.from_reported_bio(71).bio == 0.71
    assert MealParams.from_reported_bio(71, as_percent=False).bio == 71.0
    assert MealParams.from_dict({"bio_percent": 71}).bio == 0.71
    with pytest.raises(DomainError):
        MealParams(t_max=0.0)


def test_rest_equilibrium():
    eq = rest_equilibrium(get_patient("1"))
    np.testing.assert_allclose(eq.state, [1.33 / 2.2e-3, 0, 0, 0])
    assert eq.state[0] == pytest.approx(604.545, abs=1e-3)
    assert eq.u_basal == 0
    eq5 = rest_equilibrium(get_patient("5"))
    assert eq5.state[0] == pytest.approx(138.568, abs=1e-3)
    assert eq5.u_basal == 0


def test_setpoint_equilibrium_subject1():
    p = get_patient("1")
    eq = equilibrium_for_setpoint(p, 120.0)
    x2 = (1.33 - 2.2e-3 * 120) / 120
    x3 = 1.06e-2 / 8.6e-6 * x2
    assert eq.state[1] == pytest.approx(8.8833e-3, rel=1e-4)
    np.testing.assert_allclose(eq.state, [120, x2, x3, x3], rtol=1e-12)
    assert eq.state[2] == pytest.approx(10.949, abs=1e-3)
    assert eq.u_basal == pytest.approx(0.0204 / 1.02e-5 * x3, rel=1e-12)
    assert eq.u_basal == pytest.approx(2.1898e4, rel=1e-4)


@pytest.mark.parametrize("label", ["1", "3", "5"])
@pytest.mark.parametrize("g", [120.0, None])
def test_equilibrium_is_fixed_point(label, g):
    p = get_patient(label)
    eq = equilibrium_for_setpoint(p, g)
    d = plant_deriv(eq.state, p, eq.u_basal)
    scale = np.array([p.egp, p.p3 * max(eq.state[2], 1), p.p4 * max(eq.state[3], 1), p.p5 * max(eq.state[3], 1)])
    assert np.all(np.abs(d) <= 1e-12 * scale)


@pytest.mark.parametrize("g", [0.0, -5.0, 700.0, float("nan")])
def test_infeasible_setpoint(g):
    with pytest.raises(InfeasibleSetpoint):
        equilibrium_for_setpoint(get_patient("1"), g)


def test_deviation_examples():
    p = get_patient("1")
    eq = rest_equilibrium(p)
    assert np.all(to_deviation(eq.state, eq) == 0)
    np.testing.assert_allclose(to_deviation([120, 0, 0, 0], eq), [120 - 1.33 / 2.2e-3, 0, 0, 0])
    assert to_deviation([120, 0, 0, 0], eq)[0] == pytest.approx(-484.545, abs=1e-3)


@given(st.lists(st.floats(-1e4, 1e4), min_size=4, max_size=4))
def test_deviation_roundtrip(x):
    eq = equilibrium_for_setpoint(get_patient("3"), 120.0)
    np.testing.assert_allclose(from_deviation(to_deviation(x, eq), eq), x, rtol=1e-12, atol=1e-9)


def test_jacobian_examples():
    p = get_patient("1")
    J = plant_jacobian(rest_equilibrium(p).state, p)
    assert J[0, 0] == pytest.approx(-0.0022)
    assert J[0, 1] == pytest.approx(-604.545, abs=1e-3)
    assert J[3, 3] == pytest.approx(-0.0204)


@settings(max_examples=50)
@given(st.lists(st.floats(0.1, 500), min_size=4, max_size=4))
def test_jacobian_matches_finite_differences(x):
    p = get_patient("5")
    x = np.array(x)
    x[1] *= 1e-3  # physiological insulin-action scale
    J = plant_jacobian(x, p)
    for j in range(4):
        step = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros(4)
        e[j] = step
        col = (plant_deriv(x + e, p, 0.0) - plant_deriv(x - e, p, 0.0)) / (2 * step)
        np.testing.assert_allclose(col, J[:, j], rtol=1e-6, atol=1e-9)
        assert J[0, 1] == -x[0]
