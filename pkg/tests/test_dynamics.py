import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isaacs_games.dynamics import (
    ControlSet,
    GameProblem,
    HamiltonianQuery,
    audit_coefficients,
    generator_table,
    hamiltonian,
    minimax,
)
from isaacs_games.errors import EvaluationError
from isaacs_games.presets import get_preset, inline_problem


def test_control_set_normalises_to_columns():
    cs = ControlSet([1.0, 2.0, 3.0])
    assert cs.points.shape == (3, 1)
    assert len(cs) == 3 and cs.dim == 1
    assert not cs.points.flags.writeable


def test_control_set_rejects_bad_input():
    with pytest.raises(ValueError):
        ControlSet([])
    with pytest.raises(ValueError):
        ControlSet([0.0, np.nan])
    with pytest.raises(ValueError):
        ControlSet(np.zeros(257))


def test_control_set_round_trip():
    cs = ControlSet.linspace(-1, 1, 5, "U")
    back = ControlSet.from_dict(cs.to_dict())
    assert back == cs and back.label == "U"


def test_problem_rejects_inverted_bounds():
    p = get_preset("null")
    with pytest.raises(ValueError):
        GameProblem(1, 1, p.drift, p.diffusion, p.payoff, p.u_set, p.v_set, 1.0, (1.0, 0.0))
    with pytest.raises(ValueError):
        GameProblem(1, 1, p.drift, p.diffusion, p.payoff, p.u_set, p.v_set, 0.0)


def test_payoff_checked_flags_bound_violation():
    p = get_preset("hopf_lax_asym")
    bad = GameProblem(1, 1, p.drift, p.diffusion, lambda x: 2.0 * p.payoff(x), p.u_set, p.v_set, 1.0, (0.0, 1.0))
    with pytest.raises(EvaluationError):
        bad.payoff_checked(np.zeros((3, 1)))


def test_minimax_tie_breaking_uses_lowest_index():
    table = np.zeros((3, 4))
    assert minimax(table, "upper") == (0.0, (0, 0))
    assert minimax(table, "lower") == (0.0, (0, 0))


def test_minimax_matching_pennies():
    table = np.array([[1.0, -1.0], [-1.0, 1.0]])
    up, (i, j) = minimax(table, "upper")
    lo, _ = minimax(table, "lower")
    assert up == 1.0 and lo == -1.0
    assert table[i, j] == up


def test_minimax_unknown_side():
    with pytest.raises(ValueError):
        minimax(np.zeros((1, 1)), "middle")


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_lower_never_exceeds_upper(table):
    up, (i, j) = minimax(table, "upper")
    lo, (k, l) = minimax(table, "lower")
    assert lo <= up
    assert table[i, j] == up and table[k, l] == lo


@pytest.mark.parametrize("p", [-3.0, -1.0, 0.0, 1.0, 3.0])
def test_non_isaacs_hamiltonians_are_plus_minus_abs(p):
    prob = get_preset("non_isaacs")
    q = HamiltonianQuery.make(0.0, [0.2], [p])
    assert hamiltonian(prob, "upper", q)[0] == abs(p)
    assert hamiltonian(prob, "lower", q)[0] == -abs(p)


def test_hopf_lax_hamiltonian_closed_form():
    prob = get_preset("hopf_lax_asym")
    for p in np.linspace(-2, 2, 9):
        q = HamiltonianQuery.make(0.0, [0.0], [p])
        up, (u, v) = hamiltonian(prob, "upper", q)
        lo, _ = hamiltonian(prob, "lower", q)
        assert up == pytest.approx(0.5 * abs(p), abs=1e-15)
        assert lo == pytest.approx(up, abs=1e-15)
        assert (u[0] + v[0]) * p == pytest.approx(up, abs=1e-15)


def test_generator_table_includes_second_order_term():
    prob = get_preset("controlled_vol")
    q = HamiltonianQuery.make(0.0, [0.0], [0.0], [[2.0]])
    table = generator_table(prob, q)
    assert table[:, 0] == pytest.approx([0.25, 2.25])


def test_generator_table_reports_nonfinite():
    p = get_preset("null")
    bad = GameProblem(1, 1, lambda t, x, u, v: x / 0.0, p.diffusion, p.payoff, p.u_set, p.v_set, 1.0)
    with np.errstate(all="ignore"), pytest.raises(EvaluationError):
        generator_table(bad, HamiltonianQuery.make(0.0, [0.0], [1.0]))


def test_query_shape_validation():
    with pytest.raises(ValueError):
        HamiltonianQuery(0.0, [0.0, 1.0], [1.0], [[0.0]])


def test_audit_linear_problem():
    prob = inline_problem({
        "dim_state": 1, "u_set": [0.0, 1.0], "v_set": [0.0],
        "drift": {"b0": [[[{"coef": 2.0, "x": [1]}]]]},
    })
    rep = audit_coefficients(prob, radius=3.0, n_samples=200)
    assert rep.clean
    assert rep.lipschitz_drift == pytest.approx(2.0, rel=1e-9)
    assert rep.lipschitz_diffusion == 0.0
    assert rep.growth_ratio <= 2.0 + 1e-12


def test_audit_lists_nonfinite_samples():
    p = get_preset("null")
    bad = GameProblem(1, 1, lambda t, x, u, v: np.log(x), p.diffusion, p.payoff, p.u_set, p.v_set, 1.0, (0.0, 1.0))
    rep = audit_coefficients(bad, radius=1.0, n_samples=50)
    assert rep.nonfinite and not rep.clean


def test_audit_argument_checks():
    with pytest.raises(ValueError):
        audit_coefficients(get_preset("null"), radius=0.0, n_samples=10)


def test_audit_control_only_drift():
    rep = audit_coefficients(get_preset("hopf_lax_asym"), radius=5.0, n_samples=200)
    assert rep.lipschitz_drift == 0.0 and rep.growth_ratio <= 2.0


def test_audit_identity_drift():
    prob = inline_problem({"dim_state": 1, "u_set": [0.0], "v_set": [0.0],
                           "drift": {"b0": [[[{"coef": 1.0, "x": [1]}]]]}})
    rep = audit_coefficients(prob, radius=5.0, n_samples=500)
    assert rep.lipschitz_drift == pytest.approx(1.0, rel=1e-9)
    assert rep.growth_ratio < 1.0
