import numpy as np
import pytest

from popscale.chain import build_one_plus_one_chain
from popscale.instances import builtin
from popscale.operators import (
    RULES,
    elitist_proportional_selection,
    mutation_mass,
    replicate_best_selection,
    tabular_mutation,
)
from popscale.randomized import random_problem
from popscale.scalability import (
    a_hat_scalability,
    a_scalability,
    bridge_analysis,
    build_chains,
    check_prop2_conditions,
    check_theorem2,
    check_theorem3,
    check_theorem4_necessary,
    classify,
    inf_scalability,
    non_optimal_tuples,
    rho_scalability,
    road_probability,
    scalability_report,
)
from popscale.spectral import spectral_radius

EP = elitist_proportional_selection
RB = replicate_best_selection


def test_classify():
    assert classify(0.9, 2) == "none"
    assert classify(1.0, 2) == "none"
    assert classify(1.5, 2) == "sublinear"
    assert classify(2.0, 2) == "sublinear"
    assert classify(2.1, 2) == "superlinear"
    assert classify("infinite", 2) == "infinite"
    assert classify(None, 2) is None


def test_rho_scal_table12_is_one(table12):
    assert rho_scalability(table12.instance, table12.kernel, RB(), 2) == 1.0


def test_identity_kernel_undefined(table12, any_rule):
    inst = table12.instance
    k = tabular_mutation(np.eye(5), inst)
    for mu in (2, 3):
        assert rho_scalability(inst, k, any_rule, mu) == "undefined"
    rep = scalability_report(inst, k, any_rule, 2)
    assert rep.inf_scal is None and rep.classification["rho"] == "undefined"


def test_infinite_when_only_population_converges():
    from popscale.model import build_tabular_instance
    inst = build_tabular_instance({"states": ["o", "a", "b"], "fitness": [3, 2, 1]})
    # a only produces b, so a lone a is stuck; a pair can keep b and let it mutate to o
    k = tabular_mutation([[1, 0, 0], [0, 0, 1], [0.5, 0, 0.5]], inst)
    assert rho_scalability(inst, k, RB(), 2) == "undefined"
    assert rho_scalability(inst, k, EP(), 2) == "infinite"
    assert classify(rho_scalability(inst, k, EP(), 2), 2) == "infinite"


def test_table12_eps_superunit(table12_eps):
    v = rho_scalability(table12_eps.instance, table12_eps.kernel, RB(), 2)
    assert v > 1


def test_inf_scal_table12(table12):
    assert inf_scalability(table12.instance, table12.kernel, RB(), 2) == pytest.approx(2.5 / 2.75, abs=1e-12)


def test_mu1_ratios_are_one(deceptive4, any_rule):
    rep = scalability_report(deceptive4.instance, deceptive4.kernel, any_rule, 1)
    assert rep.rho_scal == pytest.approx(1.0, abs=1e-12)
    assert rep.inf_scal == pytest.approx(1.0, abs=1e-12)
    assert rep.a_scal == pytest.approx(1.0, abs=1e-12)
    assert rep.a_hat_scal == pytest.approx(1.0, abs=1e-12)


def test_table34_a_scal(table34):
    for mu in (2, 3, 4):
        a = a_scalability(table34.instance, table34.kernel, RB(), mu)
        ah = a_hat_scalability(table34.instance, table34.kernel, RB(), mu)
        assert a < 1 and ah < 1
        assert ah == pytest.approx(103 / 103 ** mu * a, rel=1e-12)
    # mu = 2 by hand: a-norm over ordered pairs is 28312 / 10609
    assert a_scalability(table34.instance, table34.kernel, RB(), 2) == pytest.approx(
        (254 / 103) / (28312 / 10609), rel=1e-12)


def test_non_optimal_tuples(table34):
    assert non_optimal_tuples(table34.instance, 3) == 103 ** 3


def test_auto_and_full_agree_on_rho(deceptive4):
    for mu in (2, 3):
        a = rho_scalability(deceptive4.instance, deceptive4.kernel, RB(), mu)
        b = rho_scalability(deceptive4.instance, deceptive4.kernel, RB(), mu, method="full")
        assert a == pytest.approx(b, rel=1e-9)


def test_report_bracket_contains_value(deceptive4):
    rep = scalability_report(deceptive4.instance, deceptive4.kernel, EP(), 2)
    lo, hi = rep.rho_scal_bracket
    assert lo <= rep.rho_scal <= hi
    assert rep.classification["rho"] == "superlinear"
    assert rep.as_dict()["superlinear"] is True


# ---------------------------------------------------------------------------
# landscape


def test_onemax_non_bridgeable(onemax4):
    assert bridge_analysis(onemax4.instance, onemax4.kernel).landscape == "non_bridgeable"


def test_deceptive_bridges(deceptive4):
    inst = deceptive4.instance
    ba = bridge_analysis(inst, deceptive4.kernel)
    assert ba.landscape == "bridgeable"
    x = ba.x_rho
    assert inst.labels[x] == "0111"
    expected = {y for y in inst.non_optimal if y != x}
    assert ba.bridge_points[x] == expected


def test_identical_rows_tie():
    from popscale.model import build_tabular_instance
    inst = build_tabular_instance({"states": ["o", "a", "b", "c"], "fitness": [3, 2, 1, 1]})
    row = [0.25, 0.25, 0.25, 0.25]
    k = tabular_mutation([row] * 4, inst)
    ba = bridge_analysis(inst, k)
    a, b, c = (inst.index(s) for s in "abc")
    # ties only: no strict bridges, every admissible pair is a weak one
    assert ba.landscape == "non_bridgeable"
    assert ba.weak_bridge_points[a] == {b, c}
    assert ba.weak_bridge_points[b] == {c}
    assert ba.weak_bridge_points[c] == {b}


def test_bridge_definition_randomized():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_problem(rng, int(rng.integers(3, 7)))
        inst = p.instance
        ba = bridge_analysis(inst, p.kernel)
        f = inst.fitness
        for x in inst.non_optimal:
            high = np.flatnonzero(f > f[x])
            for y in inst.non_optimal:
                want = (y != x and f[y] <= f[x]
                        and mutation_mass(p.kernel, y, high) > mutation_mass(p.kernel, x, high) + 1e-12)
                assert (y in ba.bridge_points[x]) == want


# ---------------------------------------------------------------------------
# roads


def test_road_examples(table12):
    ts = build_one_plus_one_chain(table12.instance, table12.kernel)
    x4 = ts.index("x4")
    assert road_probability(ts, 3)[x4] == 1.0
    assert road_probability(ts, 2)[x4] == 0.5
    np.testing.assert_allclose(road_probability(ts, 1), ts.absorption, atol=1e-15)
    with pytest.raises(ValueError):
        road_probability(ts, 0)


def test_theorem2_deceptive(deceptive4):
    res = check_theorem2(deceptive4.instance, deceptive4.kernel, EP(), 2)
    assert res.feasible and res.satisfied
    r1 = spectral_radius(build_one_plus_one_chain(deceptive4.instance, deceptive4.kernel)).rho
    assert res.rho_one == r1
    last = res.checks[-1]
    assert last.k == res.satisfied_at and np.all(last.lhs > last.rhs)
    assert rho_scalability(deceptive4.instance, deceptive4.kernel, EP(), 2) > 2


def test_theorem2_onemax_never(onemax4, any_rule):
    res = check_theorem2(onemax4.instance, onemax4.kernel, any_rule, 2)
    assert not res.satisfied
    assert rho_scalability(onemax4.instance, onemax4.kernel, any_rule, 2) <= 2


def test_theorem2_infeasible(table12_eps):
    # rho(Q1) = 0.01 here, so mu (1 - rho) >= 1 for every mu >= 2
    res = check_theorem2(table12_eps.instance, table12_eps.kernel, RB(), 2)
    assert not res.feasible and not res.satisfied
    assert res.as_dict()["verdict"] == "infeasible"


def test_theorem2_lhs_in_unit_interval(deceptive4, any_rule):
    res = check_theorem2(deceptive4.instance, deceptive4.kernel, any_rule, 2, k_max=30)
    for c in res.checks:
        assert np.all((c.lhs >= 0) & (c.lhs <= 1))


@pytest.mark.parametrize("seed", range(6))
def test_theorem2_agrees_with_radii(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, int(rng.integers(3, 6)), epsilon=0.05)
    for make in RULES.values():
        rule = make()
        v = rho_scalability(p.instance, p.kernel, rule, 2)
        res = check_theorem2(p.instance, p.kernel, rule, 2)
        assert res.satisfied == (v > 2)


def test_theorem1_random_global():
    rng = np.random.default_rng(17)
    for _ in range(8):
        p = random_problem(rng, int(rng.integers(3, 6)), epsilon=0.1)
        for make in RULES.values():
            assert rho_scalability(p.instance, p.kernel, make(), 2) > 1


def test_proposition1_onemax(onemax4, any_rule):
    for mu in (2, 3):
        assert rho_scalability(onemax4.instance, onemax4.kernel, any_rule, mu) <= mu


def test_theorem3_matches_blockwise_roads(deceptive4):
    inst, k = deceptive4.instance, deceptive4.kernel
    chains = build_chains(inst, k, EP(), 2, "full")
    res = check_theorem3(inst, k, EP(), 2, chains=chains)
    many = chains[1]
    for blk, (lo, hi) in zip(res.blocks, many.blocks):
        direct = road_probability(many, blk.k, block=(lo, hi))
        np.testing.assert_allclose(blk.total, direct, atol=1e-12)
        np.testing.assert_allclose(blk.through_bridge + blk.over_gap, blk.total, atol=1e-15)
        assert np.all(blk.through_bridge >= -1e-15) and np.all(blk.over_gap >= -1e-15)
        assert (blk.satisfied_at is not None) == bool(np.all(blk.total > blk.rhs))


def test_theorem3_unsatisfied_on_table12_eps(table12_eps):
    res = check_theorem3(table12_eps.instance, table12_eps.kernel, RB(), 2, k_max=50)
    assert not res.satisfied


def test_theorem3_needs_convergent_one_plus_one(table12):
    from popscale.spectral import NonConvergentError
    k = tabular_mutation(np.eye(5), table12.instance)
    with pytest.raises(NonConvergentError):
        check_theorem3(table12.instance, k, EP(), 2)
    with pytest.raises(NonConvergentError):
        check_theorem2(table12.instance, k, EP(), 2)


def test_theorem3_needs_elitism(deceptive4):
    from popscale.operators import SelectionRule
    with pytest.raises(ValueError):
        check_theorem3(deceptive4.instance, deceptive4.kernel, SelectionRule("x", elitist=False), 2)


def test_theorem4(deceptive4, onemax4):
    t = check_theorem4_necessary(deceptive4.instance, deceptive4.kernel, RB(), 2)
    assert t.verdict == "no-superlinear-possible"
    t = check_theorem4_necessary(deceptive4.instance, deceptive4.kernel, EP(), 2)
    assert t.verdict == "inconclusive" and t.through_bridge > 0
    t = check_theorem4_necessary(onemax4.instance, onemax4.kernel, EP(), 2)
    assert t.verdict == "no-superlinear-possible" and not t.bridge_points


def test_theorem4_consistent_with_radii(deceptive4, any_rule):
    for mu in (2, 3):
        t = check_theorem4_necessary(deceptive4.instance, deceptive4.kernel, any_rule, mu)
        if t.verdict == "no-superlinear-possible":
            assert rho_scalability(deceptive4.instance, deceptive4.kernel, any_rule, mu) <= mu


def test_prop2(deceptive4, onemax4):
    for mu in (2, 3):
        assert check_prop2_conditions(deceptive4.instance, deceptive4.kernel, mu, EP()).holds
    big = check_prop2_conditions(deceptive4.instance, deceptive4.kernel, 10 ** 6, EP())
    assert not big.factor_condition
    assert not check_prop2_conditions(onemax4.instance, onemax4.kernel, 2, EP()).all_lower_bridgeable
    assert not check_prop2_conditions(deceptive4.instance, deceptive4.kernel, 2, RB()).holds


def test_prop2_ratio_is_n_minus_one():
    # the minimising lower state needs one flip fewer than x_rho to reach the optimum
    for n in (4, 5):
        p = builtin("deceptive-knapsack", n=n)
        rep = check_prop2_conditions(p.instance, p.kernel, 2, EP())
        assert rep.factor_ratio == pytest.approx(n - 1, rel=1e-12)
        # x_rho and the optimum are complements, so every bit must flip
        assert rep.p_opt_x_rho == pytest.approx((1 / n) ** n, rel=1e-12)
