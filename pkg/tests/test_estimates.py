"""Estimate calculus: ladders, counting sequences, divisor products, thresholds."""

from __future__ import annotations

import math
from fractions import Fraction

import pytest

from elliptorus.estimates import (
    EstimateConfig,
    SequenceCache,
    T_rs,
    bracket_norm_bound,
    catalan_value,
    counting_sequences,
    d_sequence_value,
    delta_value,
    diag_generator_bound,
    diag_smallness,
    gamma_condition_tau,
    istar_set,
    jrs_contains,
    lie_term_bound,
    restriction_sequences,
    theta_value,
    thresholds,
    zeta_value,
)
from elliptorus.series import DomainParams

from oracles import T_brute, istar_brute, jrs_enumerate, jrs_member

TOY_DOMAIN = DomainParams(0.4, 0.35, 0.5)
TOY_E_BAR = 1.3183666868026367


def toy_estimate_config(gamma: float = 0.1) -> EstimateConfig:
    return EstimateConfig(domain=TOY_DOMAIN, E_bar=TOY_E_BAR, K=2, gamma=gamma, tau=3.0)


# -- restriction ladder ------------------------------------------------------


def test_delta_value_closed_form():
    assert delta_value(1) == 3.0 / (8.0 * math.pi**2)
    assert delta_value(4) == pytest.approx(delta_value(1) / 16.0, rel=1e-15)
    with pytest.raises(ValueError):
        delta_value(0)


def test_restriction_ladder_consistency():
    deltas, ds = restriction_sequences(50)
    assert len(deltas) == 50 and len(ds) == 51
    assert ds[0] == 0.0
    for r in range(1, 51):
        assert deltas[r - 1] == delta_value(r)
        assert ds[r] == pytest.approx(d_sequence_value(r), rel=1e-14)
        assert ds[r] > ds[r - 1]


def test_total_restriction_stays_below_quarter():
    # 4 * sum delta_r = (3 / (2 pi^2)) * sum r^-2 -> 1/4 from below
    d = d_sequence_value(10_000)
    assert 0.2499 < d < 0.25


def test_partial_fraction_telescoping_exact():
    # sum_{r<=s} 1/(r(r+1)) == s/(s+1) exactly in rationals, s <= 100
    total = Fraction(0)
    for s in range(1, 101):
        total += Fraction(1, s * (s + 1))
        assert total == Fraction(s, s + 1)


def test_zeta_values():
    assert zeta_value(0) == 0.0
    assert zeta_value(1) == 0.0
    for r in range(2, 20):
        x = 2.0 ** -(r + 6)
        assert zeta_value(r) == pytest.approx(zeta_value(r - 1) + x / (1.0 - x), rel=1e-15)
    assert zeta_value(40) < 0.008  # summable: the whole tail is below 2^-7/(1 - 2^-8)


# -- counting sequences ------------------------------------------------------


def theta_oracle(j: int) -> int:
    """Coefficient of u^j in 1/((1-u)(1-2u)(1-4u)) by explicit triple convolution.

    The three cancellation stages contribute geometric factors with ratios
    1, 2, 4 per repeated slot, so the collapse multiplicity is the
    convolution sum over all splits of j between them.
    """
    return sum(2**a * 4**b for a in range(j + 1) for b in range(j + 1 - a))


def test_theta_sequence():
    assert [theta_value(j) for j in range(7)] == [1, 7, 35, 155, 651, 2667, 10795]
    for j in range(0, 32):
        assert theta_value(j) == theta_oracle(j)
    for j in range(0, 31):
        assert theta_value(j + 1) <= 8 * theta_value(j)
    with pytest.raises(ValueError):
        theta_value(-1)


def test_catalan_sequence():
    assert [catalan_value(j) for j in range(1, 7)] == [1, 1, 2, 5, 14, 42]
    for j in range(1, 31):
        n = j - 1
        assert catalan_value(j) == math.comb(2 * n, n) // (n + 1)
        assert catalan_value(j) <= 4 ** (j - 1)
    with pytest.raises(ValueError):
        catalan_value(0)


def test_dual_counting_recursions_agree():
    # three-stage route vs single collapsed recursion, all r, s <= 12
    cache = SequenceCache(toy_estimate_config())
    for r in range(0, 13):
        for s in range(0, 13):
            assert cache.nu(r, s) == cache.nu_collapsed(r, s), (r, s)
    # the packaged builder performs the same cross-check internally
    tables = counting_sequences(12, 12)
    assert tables["nu"][(3, 3)] == cache.nu(3, 3)
    assert tables["theta"][:3] == [1, 7, 35]
    assert tables["catalan"][:4] == [1, 1, 2, 5]


def test_nu_diagonal_is_eight_times_previous_row():
    cache = SequenceCache(toy_estimate_config())
    for r in range(1, 13):
        assert cache.nu(r, r) == 8 * cache.nu(r - 1, r)


def test_nu_exponential_bound():
    cache = SequenceCache(toy_estimate_config())
    for s in range(1, 11):
        for r in range(1, s + 1):
            assert cache.nu(r, s) <= 2 ** (8 * s), (r, s)


def test_nu_diagonal_goldens():
    cache = SequenceCache(toy_estimate_config())
    assert [cache.nu(r, r) for r in range(1, 7)] == [
        8,
        344,
        20848,
        1795544,
        155399120,
        15430885488,
    ]


# -- index families ----------------------------------------------------------


def test_istar_set_matches_brute():
    for s in range(0, 41):
        assert tuple(sorted(istar_set(s))) == tuple(sorted(istar_brute(s)))


def test_istar_set_structure():
    for s in range(2, 41):
        ref = istar_set(s)
        assert len(ref) == s - 1
        assert list(ref) == sorted(ref)  # nondecreasing
        assert max(ref) == s // 2
        for j in range(1, s // 2 + 1):
            assert ref.count(j) == s // j - s // (j + 1)


def test_membership_matches_enumeration():
    for r in range(0, 8):
        for s in range(2, 8):
            family = set(jrs_enumerate(r, s))
            for I in family:
                assert jrs_contains(I, r, s)
                assert jrs_member(I, r, s)
            # bumping any single entry of a maximal member by one must leave
            # the family (the reference multiset is elementwise maximal)
            ref = tuple(sorted(istar_set(s), reverse=True))
            capped = tuple(min(x, min(r, s // 2)) for x in ref)
            for i in range(len(capped)):
                bumped = list(capped)
                bumped[i] += 1
                inside = tuple(sorted(bumped, reverse=True)) in family
                assert jrs_contains(bumped, r, s) == inside
                assert jrs_member(tuple(bumped), r, s) == inside


def test_membership_ignores_order_and_zero_padding():
    assert jrs_contains((1, 0, 2, 0), 4, 6) == jrs_contains((2, 1), 4, 6)
    assert jrs_contains([2, 1, 3], 5, 8) == jrs_contains([3, 1, 2], 5, 8)
    assert jrs_contains((), 3, 1)
    assert not jrs_contains((1,), 3, 1)  # too many entries for order 1


def test_index_family_shrinks_to_cap_and_grows_with_r():
    # family at (r, s) equals the family at (min(r, floor(s/2)), s),
    # and is monotone nondecreasing in r
    for s in range(0, 9):
        for r in range(0, 9):
            assert set(jrs_enumerate(r, s)) == set(jrs_enumerate(min(r, s // 2), s))
        for r in range(1, 9):
            assert set(jrs_enumerate(r - 1, s)) <= set(jrs_enumerate(r, s))


def test_index_family_composition_membership():
    # {min(r, s)} joined with members at (r-1, r) and (r, s) lands at (r, r+s)
    for r in range(1, 9):
        left = jrs_enumerate(r - 1, r)
        for s in range(1, 9):
            m = min(r, s)
            for I in left:
                for Ip in jrs_enumerate(r, s):
                    combo = [m] + [x for x in I if x] + [x for x in Ip if x]
                    assert jrs_contains(combo, r, r + s), (r, s, I, Ip)


# -- divisor-product maxima ---------------------------------------------------


def test_T_greedy_equals_brute_force():
    cache = SequenceCache(toy_estimate_config())
    for r in range(0, 11):
        for s in range(0, 11):
            greedy = T_rs(r, s, cache)
            brute = T_brute(r, s, cache.divisor_factor)
            assert greedy == pytest.approx(brute, rel=1e-12), (r, s)


def test_T_greedy_equals_brute_force_nonmonotone_weights():
    # slot weights that rise and fall with the index stress the empty-choice
    # branch of the slotwise optimization
    values = [3.0, 5e4, 0.7, 2e-3, 40.0, 1e-4, 9e3, 0.02, 1.0, 6e-5]
    cfg = EstimateConfig(
        domain=TOY_DOMAIN, E_bar=1.0, K=1, a_rule=lambda r: values[(r - 1) % 10]
    )
    cache = SequenceCache(cfg)
    for r in range(0, 11):
        for s in range(0, 11):
            assert T_rs(r, s, cache) == pytest.approx(
                T_brute(r, s, cache.divisor_factor), rel=1e-12
            ), (r, s)


def test_T_monotone_and_stabilizes():
    cache = SequenceCache(toy_estimate_config())
    for s in range(0, 9):
        for r in range(1, 9):
            assert T_rs(r - 1, s, cache) <= T_rs(r, s, cache) * (1 + 1e-12)
    for s in range(1, 9):
        stable = T_rs(s, s, cache)
        for rp in range(s + 1, s + 4):
            assert T_rs(rp, s, cache) == pytest.approx(stable, rel=1e-12)


def test_T_composition_inequality():
    cache = SequenceCache(toy_estimate_config())
    for r in range(1, 9):
        for s in range(1, 9):
            m = min(r, s)
            lhs = (
                T_rs(r - 1, r, cache)
                * T_rs(r, s, cache)
                / (cache.a(m) * cache.delta(m) ** 2)
            )
            assert lhs <= T_rs(r, r + s, cache) * (1 + 1e-12), (r, s)


def test_T_diagonal_goldens():
    cache = SequenceCache(toy_estimate_config())
    expected = [
        1.0,
        55414.94956601028,
        3070816635.4034624,
        2.1781651069100576e16,
        1.2070290954586423e21,
        1.4628286725516072e29,
    ]
    for r, want in enumerate(expected, start=1):
        assert cache.T(r, r) == pytest.approx(want, rel=1e-12)


def test_divisor_product_bound_power_law_rule():
    # T_{r,s} / (a_s delta_s^2) <= (2^15 e^Gamma)^s for the power-law rule
    # with unit strength, exponent 2, cutoff 4
    cfg = EstimateConfig(domain=TOY_DOMAIN, E_bar=1.0, K=4, gamma=1.0, tau=2.0)
    cache = SequenceCache(cfg)
    Gamma = gamma_condition_tau(cfg)
    for r in range(1, 11):
        for s in range(2, 11):
            lhs = T_rs(r, s, cache) / (cache.a(s) * cache.delta(s) ** 2)
            assert lhs <= (2.0**15 * math.exp(Gamma)) ** s, (r, s)


def test_sequence_cache_measured_divisors_override_rule():
    cfg = toy_estimate_config()
    cache = SequenceCache(cfg, a_measured={1: 0.5, 3: 0.01})
    assert cache.a(1) == 0.5
    assert cache.a(2) == cfg.a_of(2)
    assert cache.a(3) == 0.01
    assert cache.divisor_factor(1) == pytest.approx(
        1.0 / (0.5 * delta_value(1) ** 2), rel=1e-15
    )


# -- accumulated divisor exponent ---------------------------------------------


def test_gamma_condition_routes_agree():
    cfg = toy_estimate_config()
    closed_none = gamma_condition_tau(cfg, tail_mode="none")
    closed_integral = gamma_condition_tau(cfg)
    rule_cfg = EstimateConfig(
        domain=TOY_DOMAIN, E_bar=TOY_E_BAR, K=2, a_rule=lambda r: 0.1 / (r * 2) ** 3.0
    )
    termwise = gamma_condition_tau(rule_cfg)
    # closed form resums the telescoping factor exactly, the term-by-term
    # route truncates it, so the closed form sits slightly above
    assert 0.0 <= closed_none - termwise < 2e-4
    assert closed_integral > closed_none  # the tail padding keeps an upper bound


def test_gamma_condition_monotone_in_strength():
    assert gamma_condition_tau(toy_estimate_config(0.05)) > gamma_condition_tau(
        toy_estimate_config(0.1)
    )


def test_gamma_condition_rejects_bad_tail_mode():
    with pytest.raises(ValueError):
        gamma_condition_tau(toy_estimate_config(), tail_mode="guess")


def test_gamma_condition_toy_goldens():
    assert gamma_condition_tau(toy_estimate_config(0.1)) == pytest.approx(
        6.747618335937242, rel=1e-12
    )
    assert gamma_condition_tau(toy_estimate_config(0.05)) == pytest.approx(
        7.440765516497187, rel=1e-12
    )


# -- thresholds ----------------------------------------------------------------


def test_thresholds_exact_power_case():
    # unit size constant and zero accumulated exponent collapse the
    # step-uniform factor to 2^54 and the analytic threshold to 2^-116
    cfg = EstimateConfig(
        domain=DomainParams(1.0, 1.0, 1.0), E_bar=0.0, K=1, a_rule=lambda r: 1.0
    )
    th = thresholds(cfg)
    assert th.M == 1.0
    assert th.Gamma == 0.0
    assert th.A_script == pytest.approx(2.0**54, rel=1e-12)
    assert th.eps_analytic == pytest.approx(2.0**-116, rel=1e-12)


def test_thresholds_base_shell_width_case():
    cfg = EstimateConfig(
        domain=DomainParams(1.0, 1.0, 1.0),
        E_bar=0.0,
        K=1,
        gamma=1.0,
        tau=2.0,
        b_bar=4.0,
        J0=1.0,
    )
    th = thresholds(cfg)
    assert th.eta == 1.0
    assert th.h0 == 0.25
    assert th.eps_gradient == pytest.approx(1.0 / 12.0, rel=1e-15)


def test_thresholds_service_conditions():
    cfg = toy_estimate_config()
    th = thresholds(cfg)
    assert th.eps_gradient == 0.25  # no transverse-map slope: 1/(4 * 1)
    assert th.eps_jacobian == pytest.approx(math.log(2.0) / (0.5 * 4), rel=1e-15)
    assert th.eta == 0.5
    assert th.eps_star == min(
        th.eps_analytic, th.eps_geometric, th.eps_gradient, th.eps_jacobian
    )


def test_thresholds_toy_goldens():
    th1 = thresholds(toy_estimate_config(0.1))
    assert th1.M == pytest.approx(115.3592519389648, rel=1e-12)
    assert th1.A_script == pytest.approx(1.7105559626727866e31, rel=1e-12)
    assert th1.eps_analytic == pytest.approx(1.3350128942453077e-65, rel=1e-12)
    assert th1.h0 == pytest.approx(1.5625e-3, rel=1e-15)
    th2 = thresholds(toy_estimate_config(0.05))
    assert th2.A_script == pytest.approx(1.368444770138237e32, rel=1e-12)
    assert th2.eps_analytic == pytest.approx(2.08595764725827e-67, rel=1e-12)


def test_size_constant_hand_value():
    cfg = toy_estimate_config()
    C = 2.0 * math.e / (0.4 * 0.5) + math.e**2 / 0.35**2
    assert cfg.bracket_constant == pytest.approx(C, rel=1e-15)
    assert cfg.M == pytest.approx(max(1.0, TOY_E_BAR * C), rel=1e-15)
    small = EstimateConfig(domain=TOY_DOMAIN, E_bar=1e-6, K=2)
    assert small.M == 1.0  # unit floor


# -- single inequalities --------------------------------------------------------


def test_bracket_norm_bound_formula_and_validation():
    got = bracket_norm_bound(2.0, 3.0, TOY_DOMAIN, 0.1, 0.2, 0.05)
    want = (
        (2.0 / (math.e * 0.4 * 0.5) + 1.0 / 0.35**2) / ((0.1 + 0.05) * 0.05) * 6.0
    )
    assert got == pytest.approx(want, rel=1e-15)
    with pytest.raises(ValueError):
        bracket_norm_bound(1.0, 1.0, TOY_DOMAIN, 0.1, 0.2, 0.0)  # no fresh margin
    with pytest.raises(ValueError):
        bracket_norm_bound(1.0, 1.0, TOY_DOMAIN, 0.5, 0.4, 0.2)  # ladder exhausted


def test_lie_term_bound_formula_and_validation():
    base = (2.0 * math.e / (0.4 * 0.5) + math.e**2 / 0.35**2) / 0.1**2
    want = (1.0 / math.e**2) * (base * 0.01) ** 2 * 5.0
    assert lie_term_bound(2, 0.01, 5.0, TOY_DOMAIN, 0.1, 0.2) == pytest.approx(
        want, rel=1e-14
    )
    with pytest.raises(ValueError):
        lie_term_bound(0, 1.0, 1.0, TOY_DOMAIN, 0.1, 0.2)
    with pytest.raises(ValueError):
        lie_term_bound(1, 1.0, 1.0, TOY_DOMAIN, 0.0, 0.2)
    with pytest.raises(ValueError):
        lie_term_bound(1, 1.0, 1.0, TOY_DOMAIN, 0.6, 0.5)


def test_diag_smallness_and_generator_bounds():
    # a single transverse frequency has no gap condition: everything is vacuous
    assert diag_smallness(1.0, 0.1, 0.1, math.inf, 0.35) == 0.0
    assert diag_generator_bound(1, 0.7, 0.1, math.inf, 0.35) == 1.4
    assert diag_generator_bound(3, 0.7, 0.1, math.inf, 0.35) == 0.0
    got = diag_smallness(0.01, 0.1, 0.2, 0.14, 0.35)
    want = (2.0 * math.e**2 / 0.01 + 2.0**9 / 0.8**2) * 0.01 / (0.14 * 0.35**2)
    assert got == pytest.approx(want, rel=1e-14)
    got = diag_generator_bound(2, 0.01, 0.2, 0.14, 0.35)
    want = (2.0 * 0.01 / 2) * (2.0**9 * 0.01 / (0.8**2 * 0.14 * 0.35**2))
    assert got == pytest.approx(want, rel=1e-14)
    with pytest.raises(ValueError):
        diag_generator_bound(0, 1.0, 0.1, 1.0, 0.35)


# -- the replayed bound table ----------------------------------------------------


def test_toy_audit_row_inventory(toy_run):
    rows = toy_run.audit
    assert len(rows) == 58
    assert all(row["ok"] for row in rows)
    tags = {}
    for row in rows:
        tags[row["tag"]] = tags.get(row["tag"], 0) + 1
    assert tags == {
        "generator-order0": 3,
        "generator-order1": 3,
        "generator-order2": 3,
        "block-ell-le2": 18,
        "block-ell-ge3-s0": 3,
        "block-ell-ge3": 24,
        "freq-shift": 2,
        "diag-smallness": 2,
    }


def test_toy_audit_vacuous_gap_rows(toy_run):
    # one transverse frequency leaves the final-stage hypothesis vacuous:
    # zero left-hand side, yet the rows must still be present and well formed
    diag = [row for row in toy_run.audit if row["tag"] == "diag-smallness"]
    assert [row["step"] for row in diag] == [2, 3]
    for row in diag:
        assert row["lhs"] == 0.0
        assert row["ok"]
        assert row["slack_log10"] == math.inf
