"""Normalization steps: divisors, homological solves, Lie recursion, shifts."""

from __future__ import annotations

import math
import random

import pytest

from elliptorus.models import toy_model
from elliptorus.normalizer import (
    DiagonalizationResult,
    ResonanceDetected,
    check_nonresonance,
    diagonalize,
    normalize,
    solve_chi0,
    solve_chi1,
    solve_chi2,
    update_frequencies,
)
from elliptorus.series import (
    Dimensions,
    InvariantViolation,
    MonomialKey,
    TaylorFourierSeries,
    average_q,
    oscillating_part,
    poisson_bracket,
)

from oracles import brute_nonresonance, deprit_transform, exp_lie

M = TaylorFourierSeries.monomial

TOY_A_R = [0.3812660112501051, 0.2353679774997898, 0.14519782226477823]


# -- divisor minima --------------------------------------------------------------


def test_nonresonance_matches_brute_enumeration():
    rng = random.Random(101)
    for _ in range(20):
        n1 = rng.randint(1, 2)
        n2 = rng.randint(0, 2)
        omega = tuple(rng.uniform(0.4, 1.6) for _ in range(n1))
        Omega = tuple(rng.uniform(0.1, 0.5) for _ in range(n2))
        if n2 == 2 and abs(Omega[0] - Omega[1]) < 1e-6:
            continue
        r = rng.randint(1, 3)
        K = rng.randint(1, 3)
        eps = rng.choice([0.0, 1e-3, 1e-2])
        try:
            a, b = check_nonresonance(omega, Omega, r, K, eps)
        except ResonanceDetected:
            a_b, _ = brute_nonresonance(omega, Omega, r, K, eps)
            assert a_b == 0.0
            continue
        a_b, b_b = brute_nonresonance(omega, Omega, r, K, eps)
        assert abs(a - a_b) < 1e-12 * max(1.0, a_b)
        assert b == b_b or abs(b - b_b) < 1e-12


def test_toy_divisor_goldens(toy_run):
    # frozen minima, cross-checked against the enumeration oracle at the
    # frequencies each step actually used
    eps = toy_run.spec.config.epsilon
    K = toy_run.spec.config.K
    for i, rep in enumerate(toy_run.reports):
        assert abs(rep.a_r - TOY_A_R[i]) < 1e-12
        st = toy_run.states[i]
        a_b, b_b = brute_nonresonance(st.omega, st.Omega, i + 1, K, eps)
        assert abs(rep.a_r - a_b) < 1e-12
        assert rep.b_r == b_b == math.inf


def test_nonresonance_detects_exact_resonance():
    with pytest.raises(ResonanceDetected):
        check_nonresonance((1.0, 0.5), (0.3,), 2, 2, 0.0)  # k = (1, -2)
    with pytest.raises(ResonanceDetected):
        check_nonresonance((1.0, 0.618), (0.3, 0.3), 1, 2, 1e-3)  # equal gaps
    err = None
    try:
        check_nonresonance((1.0, 0.6180339887498949), (0.35,), 1, 2, 1e-3, floor=0.5)
    except ResonanceDetected as exc:
        err = exc
    assert err is not None and err.r == 1 and abs(err.value - TOY_A_R[0]) < 1e-12


# -- homological solvers -----------------------------------------------------------


def _kernel(dims, omega, Omega, eps):
    n1, n2 = dims
    out = TaylorFourierSeries(dims)
    for j, w in enumerate(omega):
        out.terms[MonomialKey(tuple(1 if i == j else 0 for i in range(n1)), (0,) * n2, (0,) * n2, (0,) * n1)] = w
    for j, W in enumerate(Omega):
        ej = tuple(1 if i == j else 0 for i in range(n2))
        out.terms[MonomialKey((0,) * n1, ej, ej, (0,) * n1)] = -1j * W * eps
    return out


def test_solvers_satisfy_their_equations():
    # dual route: the bracket of the kernel with each generator must cancel
    # the oscillating input exactly, term by term
    rng = random.Random(7)
    dims = Dimensions(2, 2)
    omega = (1.0, 0.7342118)
    Omega = (0.41, 0.19)
    eps = 1e-3
    kernel = _kernel(dims, omega, Omega, eps)

    f0 = TaylorFourierSeries(dims)
    for _ in range(4):
        k = (rng.randint(-2, 2), rng.randint(-2, 2))
        if k == (0, 0):
            continue
        key = MonomialKey((0, 0), (0, 0), (0, 0), k)
        f0.terms[key] = complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
    chi0 = solve_chi0(f0, omega)
    res0 = poisson_bracket(kernel, chi0) + oscillating_part(f0)
    assert max((abs(c) for c in res0.terms.values()), default=0.0) < 1e-14

    f1 = TaylorFourierSeries(dims)
    for lv, bv in (((1, 0), (0, 0)), ((0, 0), (1, 0)), ((0, 1), (0, 0))):
        dk = sum(lv) - sum(bv)
        k = (rng.randint(-1, 1), dk)
        if not any(k):
            k = (1, dk - 1)
        f1.terms[MonomialKey((0, 0), lv, bv, k)] = complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
    chi1 = solve_chi1(f1, omega, Omega, eps)
    res1 = poisson_bracket(kernel, chi1) + f1
    assert max((abs(c) for c in res1.terms.values()), default=0.0) < 1e-13

    f2 = TaylorFourierSeries(dims)
    f2.terms[MonomialKey((1, 0), (0, 0), (0, 0), (1, -1))] = 0.3 + 0.1j
    f2.terms[MonomialKey((0, 0), (1, 0), (0, 1), (0, 0))] = 0.2  # angle-free, stays
    f2.terms[MonomialKey((0, 0), (1, 1), (0, 0), (1, 1))] = -0.4j
    chi2, f2_avg = solve_chi2(f2, omega, Omega, eps)
    res2 = poisson_bracket(kernel, chi2) + oscillating_part(f2)
    assert max((abs(c) for c in res2.terms.values()), default=0.0) < 1e-13
    assert f2_avg.terms == average_q(f2).terms


def test_solver_resonance_and_invariant_errors():
    dims = Dimensions(2, 1)
    bad = TaylorFourierSeries(dims)
    bad.terms[MonomialKey((0, 0), (0,), (0,), (1, -2))] = 1.0
    with pytest.raises(ResonanceDetected):
        solve_chi0(bad, (2.0, 1.0))
    const = TaylorFourierSeries(dims)
    const.terms[MonomialKey((0, 0), (1,), (0,), (0, 0))] = 1.0
    with pytest.raises(InvariantViolation):
        solve_chi1(const, (1.0, 0.618), (0.35,), 1e-3)


def test_solve_chi0_skips_constants():
    dims = Dimensions(1, 0)
    f0 = M(dims, 2.5) + M(dims, 1.0, k=(1,))
    chi0 = solve_chi0(f0, (1.3,))
    assert chi0.terms == {MonomialKey((0,), (), (), (1,)): 1.0 / 1.3j}


# -- diagonalization ----------------------------------------------------------------


def _reality_pair_quadratic(dims, i, j, c):
    """Angle-free z_i zeta_j + partner with the reality-pairing coefficient."""
    n1, n2 = dims
    ei = tuple(1 if t == i else 0 for t in range(n2))
    ej = tuple(1 if t == j else 0 for t in range(n2))
    g = TaylorFourierSeries(dims)
    g.terms[MonomialKey((0,) * n1, ei, ej, (0,) * n1)] = c
    g.terms[MonomialKey((0,) * n1, ej, ei, (0,) * n1)] = c.conjugate() * (-1j) ** 2
    return g


def test_diagonalize_defining_equations():
    dims = Dimensions(1, 2)
    Omega = (0.35, 0.21)
    z0 = TaylorFourierSeries(dims)
    z0.terms[MonomialKey((0,), (1, 0), (1, 0), (0,))] = -1j * Omega[0]
    z0.terms[MonomialKey((0,), (0, 1), (0, 1), (0,))] = -1j * Omega[1]
    g1 = _reality_pair_quadratic(dims, 0, 1, complex(0.2, 0.05))
    g1.terms[MonomialKey((0,), (1, 0), (1, 0), (0,))] = -0.3j  # diagonal part
    result = diagonalize(Omega, g1, r=2, epsilon=1e-3, b_r=0.14)
    assert result.D2 and len(result.D2) == len(result.Z) == len(result.Psi)
    for d2j, zj, psij in zip(result.D2, result.Z, result.Psi):
        res = poisson_bracket(z0, d2j) + psij - zj
        worst = max((abs(c) for c in res.terms.values()), default=0.0)
        scale = max((abs(c) for c in psij.terms.values()), default=1.0)
        assert worst <= 1e-12 * scale
        # Z_j is exactly the diagonal, D2_j kills exactly the off-diagonal
        assert all(key.l == key.lbar for key in zj.terms)
        assert all(key.l != key.lbar for key in d2j.terms)


def test_diagonalize_rejects_first_step_and_resonance():
    dims = Dimensions(1, 2)
    g1 = _reality_pair_quadratic(dims, 0, 1, complex(0.2, 0.0))
    with pytest.raises(InvariantViolation):
        diagonalize((0.35, 0.21), g1, r=1, epsilon=1e-3, b_r=0.14)
    with pytest.raises(ResonanceDetected):
        diagonalize((0.3, 0.3), g1, r=2, epsilon=1e-3, b_r=0.0)


def test_diagonalize_empty_input():
    dims = Dimensions(1, 2)
    result = diagonalize((0.35, 0.21), TaylorFourierSeries(dims), r=2, epsilon=1e-3, b_r=0.14)
    assert result.D2 == [] and result.Z == [] and result.Psi == []


# -- frequency updates ---------------------------------------------------------------


def test_update_frequencies_hand_values():
    dims = Dimensions(2, 1)
    f2_avg = M(dims, 0.3, m=(1, 0))
    Z1 = TaylorFourierSeries(dims)
    Z1.terms[MonomialKey((0, 0), (1,), (1,), (0, 0))] = -0.4j
    eps, r = 1e-3, 2
    upd = update_frequencies((1.0, 0.618), (0.35,), f2_avg, [Z1], r, eps)
    assert upd.domega == (eps**r * 0.3, 0.0)
    assert abs(upd.dOmega[0] - eps ** (r - 1) * 0.4) < 1e-18
    assert upd.omega == (1.0 + eps**r * 0.3, 0.618)
    assert abs(upd.Omega[0] - (0.35 + eps * 0.4)) < 1e-18


def test_update_frequencies_rejects_complex_shift():
    dims = Dimensions(1, 1)
    f2_avg = M(dims, complex(0.1, 0.2), m=(1,))
    with pytest.raises(InvariantViolation):
        update_frequencies((1.0,), (0.35,), f2_avg, [], 2, 1e-3)


# -- full steps: structure -------------------------------------------------------------


def test_toy_run_normalized_blocks_vanish(toy_run):
    for r, state in enumerate(toy_run.states):
        assert state.r_done == r
        for (ell, s) in state.blocks:
            assert not (ell <= 2 and s <= r), f"block ({ell},{s}) survived step {r}"


def test_toy_run_truncates_nothing(toy_run):
    assert toy_run.final_state.counter.dropped == 0
    for rep in toy_run.reports:
        assert rep.truncation_dropped == 0


def test_first_step_shifts_exactly_zero(toy_run, pair_run):
    for run in (toy_run, pair_run):
        rep = run.reports[0]
        assert rep.domega == (0.0,) * run.spec.dims.n1
        assert rep.dOmega == (0.0,) * run.spec.dims.n2


def test_homological_residual_ratios(toy_run, pair_run):
    for run in (toy_run, pair_run):
        for rep in run.reports:
            for name, value in rep.residuals.items():
                if name.endswith(".scale"):
                    continue
                scale = rep.residuals[name + ".scale"]
                if scale == 0.0:
                    assert value == 0.0
                else:
                    assert value <= 1e-12 * scale, (rep.r, name, value, scale)


def test_pair_run_exercises_diagonalization(pair_run):
    sizes = [len(gen.D2) for gen in pair_run.gens]
    assert sizes[0] == 0  # nothing to do at the first step
    assert sizes[1] > 0 and sizes[2] > 0
    solved = [k for rep in pair_run.reports for k in rep.residuals if k.startswith("D2[") and not k.endswith(".scale")]
    assert solved, "diagonalizing stage never solved anything"
    # off-diagonal cross terms really were present before the stage ran
    g = pair_run.gens[1]
    assert any(key.l != key.lbar for d in g.D2 for key in d.terms)


def test_resonance_floor_aborts_run(toy_spec):
    state = toy_spec.prepare()
    with pytest.raises(ResonanceDetected):
        normalize(state, divisor_floor=0.5)


# -- full steps: the transform really is the composed Lie flow ---------------------------


def _coeff_gap(f, g):
    # the state drops pure constants by design (they carry no dynamics), so
    # the comparison ignores the constant monomial
    keys = set(f.terms) | set(g.terms)
    return max(
        (abs(f.terms.get(k, 0.0) - g.terms.get(k, 0.0)) for k in keys if any(k.m) or any(k.l) or any(k.lbar) or any(k.k)),
        default=0.0,
    )


def _numeric_step(state_prev, gen):
    """Untruncated numeric transform of one step, built only from oracles."""
    eps, r = gen.epsilon, gen.r
    w = eps**r
    total = state_prev.total_series()
    for chi in (gen.chi0, gen.chi1, gen.chi2):
        if not chi.is_zero():
            total = exp_lie(chi.scaled(w), total)
    if gen.D2:
        X = [d.scaled(eps ** (j * (r - 1))) for j, d in enumerate(gen.D2, start=1)]
        total = deprit_transform(X, total)
    return total


@pytest.mark.parametrize("which", ["toy", "pair"])
def test_step_equals_numeric_lie_flow(which, toy_run, pair_run):
    # the blockwise bookkeeping recursion must agree with a plain numeric
    # exp(L_chi) chain (plus the triangular transform when present) applied
    # to the full series; only the bookkeeping tail s > s_max may differ
    run = toy_run if which == "toy" else pair_run
    eps = run.spec.config.epsilon
    tail = eps ** (run.spec.config.s_max + 1)
    for r, gen in enumerate(run.gens, start=1):
        want = _numeric_step(run.states[r - 1], gen)
        have = run.states[r].total_series()
        gap = _coeff_gap(have, want)
        assert gap < 50 * tail + 1e-13, (which, r, gap)
