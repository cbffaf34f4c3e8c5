import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isaacs_games.errors import IsaacsConditionError
from isaacs_games.game_mc import (
    CertificateReport,
    StrategyFamily,
    best_response,
    check_half_dpp,
    check_saddle,
    combine_verdicts,
    constant_family,
    dpp_report,
    estimate_samples,
    estimate_value,
    family_size_sweep,
    feedback_family,
    isaacs_gap,
    judge,
    matrix_values,
    ordering_report,
    random_family,
    upper_lower_values,
    user_family,
)
from isaacs_games.pathspace import ConstantRule, ElementaryStrategy, first_exit_rule, rule_min
from isaacs_games.presets import get_preset
from isaacs_games.sde_engine import SimulationConfig

DET = SimulationConfig(20, rng_seed=0, batch_size=2)


def test_judge_band():
    assert judge(0.0, 0.0, 0.0) == "pass"
    assert judge(-0.05, 0.01, 0.02) == "pass"
    assert judge(-0.051, 0.01, 0.02) == "fail"
    assert judge(float("nan"), 0.1, 0.0) == "inconclusive"
    assert judge(0.1, float("inf"), 0.0) == "inconclusive"


def test_combine_verdicts():
    assert combine_verdicts(["pass", "pass"]) == "pass"
    assert combine_verdicts(["pass", "inconclusive"]) == "inconclusive"
    assert combine_verdicts(["inconclusive", "fail"]) == "fail"
    assert combine_verdicts([]) == "inconclusive"


def test_report_json_handles_non_finite_and_numpy():
    rep = CertificateReport("ordering", np.float64(1.0), float("inf"), 0.0, "pass", 0.0,
                            {"arr": np.arange(3), "n": np.int64(4)})
    data = json.loads(rep.to_json())
    assert data["std_error"] == "inf" and data["details"]["arr"] == [0, 1, 2] and data["details"]["n"] == 4
    with pytest.raises(ValueError):
        CertificateReport("guess", 0.0, 0.0, 0.0, "pass", 0.0)
    with pytest.raises(ValueError):
        CertificateReport("ordering", 0.0, 0.0, 0.0, "maybe", 0.0)


def brute_minimax(m):
    return min(max(m[:, j]) for j in range(m.shape[1])), max(min(m[i, :]) for i in range(m.shape[0]))


matrices = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-10, 10))


@settings(max_examples=200, deadline=None)
@given(matrices)
def test_matrix_values_match_brute_force(m):
    est = matrix_values(m, np.zeros_like(m))
    up, lo = brute_minimax(m)
    assert est.v_plus == up and est.v_minus == lo
    assert est.ordered
    i, j = est.upper_choice
    assert m[i, j] == up


@settings(max_examples=200, deadline=None)
@given(matrices, st.data())
def test_family_monotonicity(m, data):
    """Enlarging player one's family raises both values; enlarging player two's lowers them."""
    rows = data.draw(st.lists(st.integers(0, m.shape[0] - 1), min_size=1, unique=True))
    cols = data.draw(st.lists(st.integers(0, m.shape[1] - 1), min_size=1, unique=True))
    full = matrix_values(m, np.zeros_like(m))
    sub_u = matrix_values(m[rows], np.zeros_like(m[rows]))
    sub_v = matrix_values(m[:, cols], np.zeros_like(m[:, cols]))
    assert sub_u.v_plus <= full.v_plus and sub_u.v_minus <= full.v_minus
    assert sub_v.v_plus >= full.v_plus and sub_v.v_minus >= full.v_minus


def test_family_validation():
    p = get_preset("hopf_lax_asym")
    with pytest.raises(ValueError):
        StrategyFamily("one", ())
    with pytest.raises(ValueError):
        StrategyFamily("one", (ElementaryStrategy.constant("two", p.v_set, 0),))
    fam = constant_family("one", p.u_set)
    assert len(fam) == 21
    with pytest.raises(ValueError):
        fam.extend(constant_family("two", p.v_set))
    both = fam.extend(user_family("one", [fam[0]]))
    assert len(both) == 22 and both.generator_spec["type"] == "union"


def test_constant_families_on_hopf_lax_exact():
    p = get_preset("hopf_lax_asym")
    est = upper_lower_values(p, constant_family("one", p.u_set), constant_family("two", p.v_set), 0.0, [0.0], DET)
    assert est.v_plus == pytest.approx(1.0, abs=1e-12)
    assert est.v_minus == pytest.approx(np.exp(-0.25), abs=1e-12)
    assert est.se_plus == 0.0
    assert est.csv_text().count("\n") == 1 + 21 * 11
    assert ordering_report(est).verdict == "pass"


def test_random_family_is_reproducible_and_valid():
    p = get_preset("controlled_vol")
    a = random_family("one", p.u_set, 6, seed=4, s=0.0, T=1.0, center=[0.0])
    b = random_family("one", p.u_set, 6, seed=4, s=0.0, T=1.0, center=[0.0])
    assert [m.to_dict() for m in a] == [m.to_dict() for m in b]
    fam_v = constant_family("two", p.v_set)
    cfg = SimulationConfig(20, rng_seed=1, batch_size=50)
    est = upper_lower_values(p, a, fam_v, 0.0, [0.0], cfg)
    assert est.means.shape == (6, 1) and est.ordered
    with pytest.raises(ValueError):
        random_family("one", p.u_set, 0, seed=0, s=0.0, T=1.0, center=[0.0])


def test_estimate_value_and_batch_check():
    p = get_preset("heat")
    u, v = ElementaryStrategy.constant("one", p.u_set, 0), ElementaryStrategy.constant("two", p.v_set, 0)
    mean, se = estimate_value(p, u, v, 0.0, [0.0], SimulationConfig(1, 2, batch_size=20000))
    assert abs(mean - 1 / np.sqrt(5)) < 4 * se
    with pytest.raises(ValueError):
        estimate_value(p, u, v, 0.0, [0.0], SimulationConfig(1, batch_size=1))


def test_estimate_samples_thread_invariant():
    p = get_preset("controlled_vol")
    fam_u = random_family("one", p.u_set, 4, seed=2, s=0.0, T=1.0, center=[0.0])
    fam_v = constant_family("two", p.v_set)
    a = estimate_samples(p, fam_u, fam_v, 0.0, [0.2], SimulationConfig(10, 3, batch_size=30))
    b = estimate_samples(p, fam_u, fam_v, 0.0, [0.2], SimulationConfig(10, 3, batch_size=30, threads=4))
    np.testing.assert_array_equal(a, b)


def test_best_response():
    p = get_preset("hopf_lax_asym")
    fixed = ElementaryStrategy.constant("two", p.v_set, 10)
    br = best_response(p, fixed, constant_family("one", p.u_set), "maximize", 0.0, [0.0], DET)
    assert p.u_set.points[br.index, 0] == pytest.approx(-0.5)
    assert br.value == pytest.approx(1.0)
    assert np.all(br.margins >= 0)
    with pytest.raises(ValueError):
        best_response(p, fixed, constant_family("two", p.v_set), "maximize", 0.0, [0.0], DET)


def test_isaacs_gap():
    assert isaacs_gap(get_preset("hopf_lax_asym"), 0.0, [0.0]) <= 1e-12
    assert isaacs_gap(get_preset("non_isaacs"), 0.0, [0.0]) > 0.1


def test_saddle_refuses_non_isaacs():
    p = get_preset("non_isaacs")
    pair = (ElementaryStrategy.constant("one", p.u_set, 0), ElementaryStrategy.constant("two", p.v_set, 0))
    with pytest.raises(IsaacsConditionError):
        check_saddle(p, pair, constant_family("one", p.u_set), constant_family("two", p.v_set), 0.0, [0.0], DET, 0.03)


def test_feedback_pair_is_saddle(hopf_lax, hopf_lax_upper, decision_times):
    fu, fv = feedback_family(hopf_lax_upper, hopf_lax, decision_times)
    dev_u = constant_family("one", hopf_lax.u_set).extend(
        random_family("one", hopf_lax.u_set, 5, seed=1, s=0.0, T=1.0, center=[1.0]))
    dev_v = constant_family("two", hopf_lax.v_set).extend(
        random_family("two", hopf_lax.v_set, 5, seed=2, s=0.0, T=1.0, center=[1.0]))
    rep = check_saddle(hopf_lax, (fu[0], fv[0]), dev_u, dev_v, 0.0, [1.0], SimulationConfig(50, batch_size=2), 0.03)
    assert rep.verdict == "pass"
    assert rep.estimate == pytest.approx(np.exp(-0.25), abs=1e-12)
    assert len(rep.details["deviations"]) == len(dev_u) + len(dev_v)


def test_bad_pair_fails_saddle():
    p = get_preset("hopf_lax_asym")
    pair = (ElementaryStrategy.constant("one", p.u_set, 20), ElementaryStrategy.constant("two", p.v_set, 5))
    rep = check_saddle(p, pair, constant_family("one", p.u_set), constant_family("two", p.v_set), 0.0, [1.0], DET, 0.03)
    assert rep.verdict == "fail"
    assert rep.details["worst"]["player"] == "one"
    with pytest.raises(ValueError):
        check_saddle(p, pair, constant_family("one", p.u_set), constant_family("two", p.v_set), 0.0, [1.0], DET, 0.0)


def dpp_families(vg, problem, decision_times):
    fu, fv = feedback_family(vg, problem, decision_times)
    fu = fu.extend(user_family("one", [ElementaryStrategy.constant("one", problem.u_set, i) for i in (0, 10, 20)]))
    fv = fv.extend(user_family("two", [ElementaryStrategy.constant("two", problem.v_set, j) for j in (0, 5, 10)]))
    return fu, fv


def test_dpp_and_half_dpp_on_upper_grid(hopf_lax, hopf_lax_upper, decision_times):
    rho = rule_min(first_exit_rule((1.0,), 0.5, ConstantRule(0.0)), ConstantRule(0.5))
    fu, fv = dpp_families(hopf_lax_upper, hopf_lax, decision_times)
    cfg = SimulationConfig(50, batch_size=2)
    rep = dpp_report(hopf_lax_upper, rho, hopf_lax, cfg, fu, fv, 0.0, [1.0], threshold=0.03)
    assert rep.verdict == "pass" and rep.details["residual"] < 0.03
    for side in ("super_upper", "sub_upper"):
        half = check_half_dpp(hopf_lax, hopf_lax_upper, side, rho, fu, fv, 0.0, [1.0], cfg, threshold=0.03)
        assert half.verdict == "pass", side
    with pytest.raises(ValueError):
        check_half_dpp(hopf_lax, hopf_lax_upper, "super_middle", rho, fu, fv, 0.0, [1.0], cfg)


def test_half_dpp_detects_a_too_small_function(hopf_lax):
    """``w`` vanishes before ``t = 1/2`` and equals ``g`` afterwards, so it cannot dominate its own expectation."""
    fu, fv = constant_family("one", hopf_lax.u_set), constant_family("two", hopf_lax.v_set)

    def w(t, x):
        return hopf_lax.payoff(x) * (np.asarray(t) >= 0.5)

    rep = check_half_dpp(hopf_lax, w, "super_upper", ConstantRule(0.5), fu, fv, 0.0, [0.0], DET)
    assert rep.verdict == "fail"
    assert rep.margin == pytest.approx(-1.0, abs=1e-12)


def test_family_size_sweep_matches_submatrices():
    p = get_preset("controlled_vol")
    fu = random_family("one", p.u_set, 5, seed=3, s=0.0, T=1.0, center=[0.0])
    fv = constant_family("two", p.v_set)
    cfg = SimulationConfig(10, 2, batch_size=40)
    rows = family_size_sweep(p, fu, fv, 0.0, [0.1], cfg, [1, 3, 5])
    assert [r["n_u"] for r in rows] == [1, 3, 5]
    full = upper_lower_values(p, fu, fv, 0.0, [0.1], cfg)
    assert rows[-1]["v_plus"] == full.v_plus and rows[-1]["v_minus"] == full.v_minus
    assert rows[0]["v_plus"] <= rows[1]["v_plus"] <= rows[2]["v_plus"]
    with pytest.raises(ValueError):
        family_size_sweep(p, fu, fv, 0.0, [0.1], cfg, [0])


def test_dpp_residual_trivial_rules(hopf_lax, hopf_lax_upper, decision_times):
    from isaacs_games.isaacs_solver import dpp_residual
    from isaacs_games.pathspace import HorizonRule

    fu, fv = dpp_families(hopf_lax_upper, hopf_lax, decision_times)
    start = dpp_residual(hopf_lax_upper, ConstantRule(0.0), hopf_lax, DET, fu, fv, 0.0, [1.0])
    assert start.details["residual"] == 0.0
    end = dpp_residual(hopf_lax_upper, HorizonRule(), hopf_lax, DET, fu, fv, 0.0, [1.0])
    est = upper_lower_values(hopf_lax, fu, fv, 0.0, [1.0], DET)
    # vg at the horizon is the grid interpolant of g, so only the interpolation error separates them
    assert end.details["residual"] == pytest.approx(abs(est.v_plus - hopf_lax_upper.at(0.0, [1.0])), abs=1e-4)
