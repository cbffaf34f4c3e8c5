import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isaacs_games.errors import CandidateError, ConfigError, ConstructionRefused
from isaacs_games.game_mc import constant_family, random_family, user_family
from isaacs_games.pathspace import ConstantRule, HorizonRule, first_exit_rule, rule_max
from isaacs_games.perron_verify import (
    Ball,
    BumpWitness,
    CertifySpec,
    ConstantFunction,
    ConstantWitness,
    SemiSolutionCandidate,
    SmoothTestFunction,
    bump_sub,
    bump_super,
    certify,
    constant_candidate,
    envelope_ordering,
    grid_candidate,
    lattice_combine,
    partition,
)
from isaacs_games.sde_engine import SimulationConfig

T0, X0 = 0.3, 0.0


@pytest.fixture(scope="module")
def families(hopf_lax):
    fu = random_family("one", hopf_lax.u_set, 2, 5, 0.0, 1.0, [0.0]).extend(
        user_family("one", [constant_family("one", hopf_lax.u_set)[0]]))
    fv = random_family("two", hopf_lax.v_set, 2, 6, 0.0, 1.0, [0.0])
    return fu, fv


@pytest.fixture(scope="module")
def spec(families):
    fu, fv = families
    exit_ = first_exit_rule((0.0,), 0.2, ConstantRule(0.0))
    return CertifySpec([ConstantRule(0.0), ConstantRule(0.3), exit_], [rule_max(exit_, ConstantRule(0.6)), HorizonRule()],
                       fu, fv, [(0.0, [0.0]), (0.0, [1.0])], SimulationConfig(50, 1, batch_size=64), threshold=0.02)


@pytest.fixture(scope="module")
def bump_spec(families):
    fu, fv = families
    return CertifySpec([ConstantRule(0.0), ConstantRule(0.25), ConstantRule(0.3)], [ConstantRule(0.45), HorizonRule()],
                       fu, fv, [(0.0, [0.0]), (0.2, [0.05]), (0.0, [1.0])], SimulationConfig(50, 1, batch_size=64),
                       threshold=0.02)


# ---------------------------------------------------------------- test functions and balls


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3), st.floats(-3, 3))
def test_test_function_derivatives_match_differences(t, x, c_t, p, Q):
    h = 1e-5
    for phi in (SmoothTestFunction.quadratic(0.5, [0.2], a=0.3, c_t=c_t, p=[p], Q=Q, r=1.0),
                SmoothTestFunction.gaussian(0.5, [0.2], a=0.1, height=c_t, scale=1.5, t_scale=0.7)):
        tt, xx = np.array([t]), np.array([[x]])
        f = lambda s, y: float(phi(np.array([s]), np.array([[y]]))[0])
        assert phi.dt(tt, xx)[0] == pytest.approx((f(t + h, x) - f(t - h, x)) / (2 * h), abs=1e-5)
        assert phi.dx(tt, xx)[0, 0] == pytest.approx((f(t, x + h) - f(t, x - h)) / (2 * h), abs=1e-5)
        second = (f(t, x + 1e-3) - 2 * f(t, x) + f(t, x - 1e-3)) / 1e-6
        assert phi.dxx(tt, xx)[0, 0, 0] == pytest.approx(second, abs=1e-3)


def test_quadratic_at_centre():
    phi = SmoothTestFunction.quadratic(T0, [X0], a=0.7, c_t=-2.0, Q=4.0, r=4.0)
    assert phi(np.array([T0]), np.array([[X0]]))[0] == pytest.approx(0.7)
    assert json.dumps(phi.to_dict())


def test_ball_sampling():
    ball = Ball(0.3, (0.0,), 0.2)
    rng = np.random.default_rng(0)
    t, x = ball.sample(rng, 500, 1.0, inner=0.5)
    d = ball.distance(t, x)
    assert t.size == 500 and np.all((d >= 0.5) & (d < 1.0))
    assert ball.contains(np.array([0.3]), np.array([[0.19]]))[0]
    assert not ball.contains(np.array([0.3]), np.array([[0.2]]))[0]
    with pytest.raises(ValueError):
        Ball(0.0, (0.0,), 0.0)


# ---------------------------------------------------------------- partition


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 400), st.integers(1, 8), st.integers(1, 60), st.integers(0, 1000))
def test_partition_covers_each_row_once(n, bins, occ, seed):
    z = np.random.default_rng(seed).normal(size=(n, 2))
    groups = partition(z, bins, occ)
    allrows = np.sort(np.concatenate(groups))
    np.testing.assert_array_equal(allrows, np.arange(n))
    if n >= occ:
        assert all(g.size >= occ for g in groups)
    else:
        assert len(groups) == 1


# ---------------------------------------------------------------- candidates


def test_candidate_invariants(hopf_lax, hopf_lax_grid):
    with pytest.raises(CandidateError):
        constant_candidate(hopf_lax, hopf_lax_grid, "super_upper", value=0.5)
    with pytest.raises(CandidateError):
        SemiSolutionCandidate(ConstantFunction(1.0), "super_upper", ConstantWitness("one", hopf_lax.u_set, 0),
                              hopf_lax_grid, hopf_lax, 1.0)
    with pytest.raises(CandidateError):
        SemiSolutionCandidate(ConstantFunction(1.0), "super_upper", ConstantWitness("two", hopf_lax.v_set, 0),
                              hopf_lax_grid, hopf_lax, 0.5)
    with pytest.raises(CandidateError):
        constant_candidate(hopf_lax, hopf_lax_grid, "super_middle")
    c = constant_candidate(hopf_lax, hopf_lax_grid, "sub_lower")
    assert c(np.array([0.0]), np.array([[0.0]]))[0] == 0.0
    assert json.dumps(c.to_dict())


@pytest.mark.parametrize("cls", ["super_upper", "sub_lower"])
def test_constant_candidates_certify(hopf_lax, hopf_lax_grid, spec, cls):
    rep = certify(constant_candidate(hopf_lax, hopf_lax_grid, cls), hopf_lax, spec)
    assert rep.verdict == "pass" and rep.margin == 0.0 and rep.kind == "supermartingale"


def test_solved_grid_certifies_as_super(hopf_lax, hopf_lax_upper, spec, decision_times):
    rep = certify(grid_candidate(hopf_lax_upper, hopf_lax, "super_upper", decision_times), hopf_lax, spec)
    assert rep.verdict == "pass"
    assert json.loads(rep.to_json())["details"]["cls"] == "super_upper"


def test_too_small_candidate_fails(hopf_lax, hopf_lax_upper, spec, decision_times):
    weak = grid_candidate(hopf_lax_upper, hopf_lax, "super_upper", decision_times, slope=-0.5)
    rep = certify(weak, hopf_lax, spec)
    assert rep.verdict == "fail" and rep.margin < -0.1


def test_rho_before_tau_is_refused(hopf_lax, hopf_lax_grid, families):
    fu, fv = families
    bad = CertifySpec([ConstantRule(0.5)], [ConstantRule(0.2)], fu, fv, [(0.0, [0.0])], SimulationConfig(10, batch_size=4))
    with pytest.raises(ConfigError):
        certify(constant_candidate(hopf_lax, hopf_lax_grid, "super_upper"), hopf_lax, bad)
    with pytest.raises(ConfigError):
        CertifySpec([], [HorizonRule()], fu, fv, [(0.0, [0.0])], SimulationConfig(10, batch_size=4))


def test_lattice_min_certifies(hopf_lax, hopf_lax_upper, hopf_lax_upper_extrapolated, spec, decision_times):
    a = grid_candidate(hopf_lax_upper, hopf_lax, "super_upper", decision_times)
    b = grid_candidate(hopf_lax_upper_extrapolated, hopf_lax, "super_upper", decision_times)
    c = lattice_combine(a, b)
    t = np.full(5, 0.2)
    x = np.linspace(-2.9, 2.9, 5)[:, None]
    np.testing.assert_array_equal(c(t, x), np.minimum(a(t, x), b(t, x)))
    assert lattice_combine(a, a) is a
    assert certify(c, hopf_lax, spec).verdict == "pass"
    with pytest.raises(CandidateError):
        lattice_combine(a, grid_candidate(hopf_lax_upper, hopf_lax, "sub_upper", decision_times))


def test_lattice_max_of_sub_candidates(hopf_lax, hopf_lax_grid):
    a = constant_candidate(hopf_lax, hopf_lax_grid, "sub_lower", value=-0.2)
    b = constant_candidate(hopf_lax, hopf_lax_grid, "sub_lower", value=0.0)
    c = lattice_combine(a, b)
    assert c(np.array([0.0]), np.array([[0.0]]))[0] == 0.0


# ---------------------------------------------------------------- bumps


def tilted_super(hopf_lax, vg, decision_times):
    w = grid_candidate(vg, hopf_lax, "super_upper", decision_times, slope=2.0)
    a = float(w(np.array([T0]), np.array([[X0]]))[0])
    return w, SmoothTestFunction.quadratic(T0, [X0], a=a, c_t=-2.0, Q=4.0, r=4.0), a


def tilted_sub(hopf_lax, vg, decision_times):
    w = grid_candidate(vg, hopf_lax, "sub_upper", decision_times, slope=-2.0)
    a = float(w(np.array([T0]), np.array([[X0]]))[0])
    return w, SmoothTestFunction.quadratic(T0, [X0], a=a, c_t=2.0, Q=-2.0, r=-2.0), a


def test_bump_super_lowers_and_certifies(hopf_lax, hopf_lax_upper, bump_spec, decision_times):
    w, phi, a = tilted_super(hopf_lax, hopf_lax_upper, decision_times)
    b = bump_super(w, phi, 0.01, 0.2, 0.015)
    assert b(np.array([T0]), np.array([[X0]]))[0] == pytest.approx(a - 0.01)
    far = (np.array([0.9]), np.array([[2.0]]))
    assert b(*far)[0] == w(*far)[0]
    assert isinstance(b.witness, BumpWitness)
    assert certify(b, hopf_lax, bump_spec).verdict == "pass"


def test_bump_super_refusals(hopf_lax, hopf_lax_upper, hopf_lax_grid, decision_times):
    w, phi, a = tilted_super(hopf_lax, hopf_lax_upper, decision_times)
    with pytest.raises(ConstructionRefused):
        bump_super(w, phi, 0.02, 0.2, 0.015)
    flat = SmoothTestFunction.quadratic(T0, [X0], a=a, c_t=0.0, Q=4.0, r=4.0)
    with pytest.raises(ConstructionRefused) as info:
        bump_super(w, flat, 0.01, 0.2, 0.015)
    assert info.value.node is not None
    with pytest.raises(ConstructionRefused):
        bump_super(w, phi, 0.01, 0.2, 0.015, gap=10.0)
    with pytest.raises(CandidateError):
        bump_super(constant_candidate(hopf_lax, hopf_lax_grid, "sub_lower"), phi, 0.01, 0.2, 0.015)


def test_bump_with_zero_delta_above_w_is_identity(hopf_lax, hopf_lax_grid):
    c = constant_candidate(hopf_lax, hopf_lax_grid, "super_upper")
    phi = SmoothTestFunction.quadratic(T0, [X0], a=2.0)
    assert bump_super(c, phi, 0.0, 0.2, 0.015) is c


def test_bump_sub_raises_and_certifies(hopf_lax, hopf_lax_upper, bump_spec, decision_times):
    w, phi, a = tilted_sub(hopf_lax, hopf_lax_upper, decision_times)
    b = bump_sub(w, phi, 0.004, 0.2, 0.008, [20] * 11)
    assert b(np.array([T0]), np.array([[X0]]))[0] == pytest.approx(a + 0.004)
    assert certify(b, hopf_lax, bump_spec).verdict == "pass"
    with pytest.raises(ConstructionRefused):
        bump_sub(w, phi, 0.004, 0.2, 0.008, [20] * 10)
    with pytest.raises(ConstructionRefused):
        bump_sub(w, phi, 0.004, 0.2, 0.008, [20] * 11, gap=10.0)
    with pytest.raises(CandidateError):
        b.witness.produce(ConstantRule(0.0), None)


def test_envelope_ordering():
    out = envelope_ordering([0.1, 0.2], 0.25, 0.0, 0.3, 0.0, [0.35, 0.4])
    assert out["lower_ok"] and out["upper_ok"] and out["ordered"]
    assert not envelope_ordering([0.3], 0.25, 0.01, 0.3, 0.0, [0.4])["lower_ok"]


def test_lattice_identities(hopf_lax, hopf_lax_grid):
    sup_g = constant_candidate(hopf_lax, hopf_lax_grid, "super_upper")
    higher = constant_candidate(hopf_lax, hopf_lax_grid, "super_upper", value=2.0)
    c = lattice_combine(sup_g, higher)
    t = np.linspace(0, 1, 7)
    x = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_array_equal(c(t, x), sup_g(t, x))


def test_iterated_lattice_is_monotone(hopf_lax, hopf_lax_grid, hopf_lax_upper, hopf_lax_upper_extrapolated,
                                      decision_times):
    members = [constant_candidate(hopf_lax, hopf_lax_grid, "super_upper"),
               grid_candidate(hopf_lax_upper, hopf_lax, "super_upper", decision_times, slope=0.3),
               grid_candidate(hopf_lax_upper_extrapolated, hopf_lax, "super_upper", decision_times),
               grid_candidate(hopf_lax_upper, hopf_lax, "super_upper", decision_times)]
    t = np.repeat(np.linspace(0, 1, 11), 41)
    x = np.tile(np.linspace(-3, 3, 41), 11)[:, None]
    current = members[0]
    previous = current(t, x)
    for m in members[1:]:
        current = lattice_combine(current, m)
        now = current(t, x)
        assert np.all(now <= previous)
        previous = now


def test_bump_sub_with_zero_delta_below_w_is_identity(hopf_lax, hopf_lax_grid):
    sub = SemiSolutionCandidate(ConstantFunction(0.0), "sub_upper", ConstantWitness("one", hopf_lax.u_set, 0),
                                hopf_lax_grid, hopf_lax, 1.0)
    phi = SmoothTestFunction.quadratic(T0, [X0], a=-1.0)
    assert bump_sub(sub, phi, 0.0, 0.2, 0.01, [0] * len(hopf_lax.v_set)) is sub
