"""Four-stage normalization step driving a Hamiltonian toward an elliptic torus.

One step at order ``r`` removes the grade <= 2 perturbation blocks at
bookkeeping order ``s = r`` in four moves:

1.  a Fourier generator kills the angle-dependent grade-0 block,
2.  a grade-1 generator kills the grade-1 block,
3.  a grade-2 generator kills the oscillating part of the grade-2 block,
4.  a triangular Lie transform diagonalizes the angle-free quadratic
    remainder, whose diagonal feeds the frequency updates.

Stages 1-3 update the block table through explicit recursion rows with
``j <= floor(s/r)`` bracket powers; the homological cancellations at
``s = r`` (and the kernel corrections they induce at multiples of ``r``)
are written into the rows rather than recomputed.  All blocks stay
homogeneous in grade with Fourier budget ``s*K``; the selection rule is
preserved by every operation and asserted on the way out.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .estimates import d_sequence_value, delta_value
from .hamiltonian import HamiltonianState
from .series import (
    ClassTag,
    InvariantViolation,
    MonomialKey,
    TaylorFourierSeries,
    TruncationCounter,
    average_q,
    oscillating_part,
    poisson_bracket,
    verify_class,
    weighted_norm,
)


class ResonanceDetected(RuntimeError):
    """A small divisor vanished (or fell below the configured floor)."""

    def __init__(self, message: str, r: int | None = None, value: float | None = None):
        super().__init__(message)
        self.r = r
        self.value = value


@dataclass
class GeneratingSet:
    """Everything produced by one step that defines its coordinate change."""

    r: int
    epsilon: float
    omega_prev: tuple[float, ...]
    Omega_prev: tuple[float, ...]
    chi0: TaylorFourierSeries
    chi1: TaylorFourierSeries
    chi2: TaylorFourierSeries
    D2: list[TaylorFourierSeries]
    Z: list[TaylorFourierSeries]
    f2_avg: TaylorFourierSeries


@dataclass
class StepReport:
    """Measured diagnostics of one normalization step."""

    r: int
    a_r: float
    b_r: float
    chi_norms: dict[str, float]
    stage_norms: dict[str, dict[tuple[int, int], float]]
    final_norms: dict[tuple[int, int], float]
    residuals: dict[str, float]
    domega: tuple[float, ...]
    dOmega: tuple[float, ...]
    cauchy_diff: float
    truncation_dropped: int
    shrink_levels: dict[str, float]


_KL_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _lattice(bound: int, n: int) -> np.ndarray:
    """Integer vectors with 1-norm <= bound, excluding zero."""
    key = (bound, n)
    got = _KL_CACHE.get(key)
    if got is None:
        rows = [
            v
            for v in itertools.product(range(-bound, bound + 1), repeat=n)
            if 0 < sum(abs(x) for x in v) <= bound
        ]
        got = np.array(rows, dtype=float) if rows else np.zeros((0, n))
        _KL_CACHE[key] = got
    return got


def check_nonresonance(
    omega,
    Omega,
    r: int,
    K: int,
    epsilon: float,
    floor: float = 0.0,
) -> tuple[float, float]:
    """Smallest divisor at order ``r`` and smallest transverse gap.

    Returns
    -------
    (a_r, b_r) : tuple of float
        ``a_r = min |k . omega + eps * l . Omega|`` over ``0 < |k|_1 <= r*K``
        and ``|l|_1 <= 2``; ``b_r = min_{i<j} |Omega_i - Omega_j]``, infinite
        when fewer than two transverse frequencies exist.

    Raises
    ------
    ResonanceDetected
        If ``a_r`` vanishes or falls below ``floor``, or two transverse
        frequencies coincide exactly.
    """
    omega = np.asarray(omega, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    n1, n2 = len(omega), len(Omega)
    kmat = _lattice(r * K, n1)
    kdot = kmat @ omega
    vals = np.abs(kdot)
    if n2 and epsilon:
        lmat = _lattice(2, n2)
        ldot = epsilon * (lmat @ Omega)
        vals = np.abs(kdot[:, None] + np.concatenate(([0.0], ldot))[None, :])
    a_r = float(vals.min()) if vals.size else math.inf
    b_r = math.inf
    for i in range(n2):
        for j in range(i + 1, n2):
            b_r = min(b_r, abs(Omega[i] - Omega[j]))
    if a_r <= floor:
        raise ResonanceDetected(f"divisor minimum {a_r:g} at order {r} is not above {floor:g}", r, a_r)
    if b_r == 0.0:
        raise ResonanceDetected("two transverse frequencies coincide", r, 0.0)
    return a_r, b_r


def _divisor(key: MonomialKey, omega, Omega, epsilon: float) -> float:
    kw = sum(kj * wj for kj, wj in zip(key.k, omega))
    lW = sum((lj - bj) * Wj for lj, bj, Wj in zip(key.l, key.lbar, Omega))
    return kw + epsilon * lW


def solve_chi0(f0: TaylorFourierSeries, omega, r: int | None = None) -> TaylorFourierSeries:
    """Generator removing an angle-only block: divide by ``i k . omega``.

    Constant terms (``k = 0``) carry no dynamics and are ignored.  Raises
    `ResonanceDetected` on a vanishing divisor.
    """
    out = TaylorFourierSeries(f0.dims)
    for key, c in f0.terms.items():
        if not any(key.k):
            continue
        kw = sum(kj * wj for kj, wj in zip(key.k, omega))
        if kw == 0.0:
            raise ResonanceDetected(f"exact resonance k.omega = 0 at k={key.k}", r, 0.0)
        out.terms[key] = c / (1j * kw)
    return out


def solve_chi1(
    f1: TaylorFourierSeries, omega, Omega, epsilon: float, r: int | None = None
) -> TaylorFourierSeries:
    """Generator removing a grade-1 block: divide by ``i (k.omega + eps (l-lbar).Omega)``.

    A grade-1 term with zero Fourier vector would break the selection rule,
    so a nonzero angular average in the input is rejected.
    """
    out = TaylorFourierSeries(f1.dims)
    for key, c in f1.terms.items():
        if not any(key.k):
            raise InvariantViolation("grade-1 block has a nonzero angular average")
        d = _divisor(key, omega, Omega, epsilon)
        if d == 0.0:
            raise ResonanceDetected(f"vanishing first-order divisor at key {key}", r, 0.0)
        out.terms[key] = c / (1j * d)
    return out


def solve_chi2(
    f2: TaylorFourierSeries, omega, Omega, epsilon: float, r: int | None = None
) -> tuple[TaylorFourierSeries, TaylorFourierSeries]:
    """Generator for the oscillating grade-2 part; the angular average is kept.

    Returns ``(chi2, f2_avg)``: the generator solving the oscillating part
    (unified divisor for both the action-linear and the quadratic elliptic
    terms) and the untouched angle-free part.
    """
    chi = TaylorFourierSeries(f2.dims)
    for key, c in oscillating_part(f2).terms.items():
        d = _divisor(key, omega, Omega, epsilon)
        if d == 0.0:
            raise ResonanceDetected(f"vanishing second-order divisor at key {key}", r, 0.0)
        chi.terms[key] = c / (1j * d)
    return chi, average_q(f2)


class _LiePowers:
    """Cached repeated brackets ``L_chi^j g`` per source block."""

    def __init__(self, chi: TaylorFourierSeries, ell_max: int, counter: TruncationCounter):
        self.chi = chi
        self.ell_max = ell_max
        self.counter = counter
        self._cache: dict[tuple[int, int], list[TaylorFourierSeries]] = {}

    def get(self, src: tuple[int, int], g: TaylorFourierSeries, j: int) -> TaylorFourierSeries:
        lst = self._cache.setdefault(src, [g])
        while len(lst) <= j:
            lst.append(poisson_bracket(lst[-1], self.chi, ell_max=self.ell_max, counter=self.counter))
        return lst[j]


def _blocks_max_grade(blocks: dict[tuple[int, int], TaylorFourierSeries]) -> int:
    return max((ell for (ell, s) in blocks), default=2)


def _get(blocks, ell, s) -> TaylorFourierSeries | None:
    g = blocks.get((ell, s))
    return g if g is not None and not g.is_zero() else None


def _assert_zero(blocks, ell, s, where: str) -> None:
    if _get(blocks, ell, s) is not None:
        raise InvariantViolation(f"{where}: block ({ell},{s}) expected to vanish")


def apply_lie_series(
    blocks: dict[tuple[int, int], TaylorFourierSeries],
    chi: TaylorFourierSeries,
    stage: int,
    r: int,
    dims,
    ell_max: int,
    s_max: int,
    counter: TruncationCounter,
) -> dict[tuple[int, int], TaylorFourierSeries]:
    """Push the block table through one stage of the step-``r`` transform.

    ``stage`` is 1, 2 or 3 (generator of grade 0, 1 or 2).  Implements the
    literal recursion rows, including the zero rows at ``s = r`` and the
    kernel-correction terms at multiples of ``r``; sources outside the
    table are zero.  Blocks of grade <= 2 with ``s < r`` must already
    vanish and are asserted to.
    """
    if stage not in (1, 2, 3):
        raise ValueError("stage must be 1, 2 or 3")
    grade_drop = {1: 2, 2: 1, 3: 0}[stage]
    pw = _LiePowers(chi, ell_max, counter)
    gmax = _blocks_max_grade(blocks)
    out: dict[tuple[int, int], TaylorFourierSeries] = {}

    def lie_term(ell_src: int, s_src: int, j: int) -> TaylorFourierSeries | None:
        g = _get(blocks, ell_src, s_src)
        if g is None:
            return None
        q = pw.get((ell_src, s_src), g, j)
        if q.is_zero():
            return None
        return q.scaled(1.0 / math.factorial(j)) if j else q

    def put(ell: int, s: int, parts: list[TaylorFourierSeries | None]) -> None:
        total: TaylorFourierSeries | None = None
        for part in parts:
            if part is None:
                continue
            total = part if total is None else total + part
        if total is not None and not total.is_zero():
            out[(ell, s)] = total

    for ell in range(0, gmax + 1):
        for s in range(0, s_max + 1):
            if ell <= 2 and s < r:
                _assert_zero(blocks, ell, s, f"stage {stage} input")
                continue
            if stage == 1:
                if ell == 0 and s == r:
                    continue
                if ell == 0 and r < s < 2 * r:
                    put(ell, s, [_get(blocks, 0, s)])
                    continue
                jtop = s // r
                put(ell, s, [lie_term(ell + 2 * j, s - j * r, j) for j in range(jtop + 1)])
            elif stage == 2:
                if ell in (0, 1) and s == r:
                    continue
                if ell in (0, 1) and r < s < 2 * r:
                    put(ell, s, [_get(blocks, ell, s)])
                    continue
                if ell == 0 and s == 2 * r:
                    half = lie_term(1, r, 1)
                    put(ell, s, [_get(blocks, 0, s), None if half is None else half.scaled(0.5)])
                    continue
                if ell == 0 and 2 * r < s < 3 * r:
                    put(ell, s, [_get(blocks, 0, s), lie_term(1, s - r, 1)])
                    continue
                jtop = s // r
                put(ell, s, [lie_term(ell + j, s - j * r, j) for j in range(jtop + 1)])
            else:
                if ell in (0, 1) and s == r:
                    continue
                if ell in (0, 1):
                    jtop = s // r - 1
                    put(ell, s, [lie_term(ell, s - j * r, j) for j in range(jtop + 1)])
                    continue
                if ell == 2 and s == r:
                    src = _get(blocks, 2, r)
                    if src is not None:
                        avg = average_q(src)
                        if not avg.is_zero():
                            out[(2, r)] = avg
                    continue
                if ell == 2:
                    j, m = divmod(s, r)
                    if m == 0:
                        kernel_part = lie_term(2, r, j - 1)
                        parts: list[TaylorFourierSeries | None] = [
                            None if kernel_part is None else kernel_part.scaled((j - 1) * 1.0 / j)
                        ]
                        parts += [lie_term(2, (j - i) * r, i) for i in range(0, j - 1)]
                        put(ell, s, parts)
                    else:
                        put(ell, s, [lie_term(2, (j - i) * r + m, i) for i in range(0, j)])
                    continue
                jtop = s // r
                put(ell, s, [lie_term(ell, s - j * r, j) for j in range(jtop + 1)])
    return out


def lie_transform_terms(
    X: list[TaylorFourierSeries],
    g: TaylorFourierSeries,
    j_max: int,
    ell_max: int,
    counter: TruncationCounter,
) -> list[TaylorFourierSeries]:
    """Triangular Lie-transform terms ``[E_0 g, ..., E_{j_max} g]``.

    ``E_0 = id`` and ``E_j g = sum_{i=1..j} (i/j) L_{X_i} E_{j-i} g`` with
    ``X_i = X[i-1]`` (missing generators act as zero).
    """
    terms = [g]
    for j in range(1, j_max + 1):
        acc = TaylorFourierSeries(g.dims)
        for i in range(1, j + 1):
            if i > len(X) or X[i - 1].is_zero():
                continue
            prev = terms[j - i]
            if prev.is_zero():
                continue
            acc = acc + poisson_bracket(prev, X[i - 1], ell_max=ell_max, counter=counter).scaled(i / j)
        terms.append(acc)
    return terms


@dataclass
class DiagonalizationResult:
    """Generators and diagonal terms of the quadratic normalizing transform."""

    D2: list[TaylorFourierSeries]
    Z: list[TaylorFourierSeries]
    Psi: list[TaylorFourierSeries]


def _split_quadratic(g: TaylorFourierSeries):
    diag = TaylorFourierSeries(g.dims)
    off = TaylorFourierSeries(g.dims)
    for key, c in g.terms.items():
        if any(key.k) or any(key.m):
            raise InvariantViolation("quadratic normalizing input must be angle-free and action-free")
        if key.l == key.lbar:
            diag.terms[key] = c
        elif sum(key.l) == 1 and sum(key.lbar) == 1:
            off.terms[key] = c
        else:
            raise InvariantViolation(f"selection rule forbids angle-free term {key}")
    return diag, off


def diagonalize(
    Omega,
    g1: TaylorFourierSeries,
    r: int,
    epsilon: float,
    b_r: float,
    *,
    ell_max: int = 2,
    tail_tol: float = 1e-18,
    j_cap: int = 64,
) -> DiagonalizationResult:
    """Diagonalize the angle-free quadratic remainder against the kernel.

    Solves, order by order in the transform index ``j``, the homological
    equations ``L_{D2_j} Z0 + Psi_j = Z_j`` where ``Z0`` carries the
    transverse frequencies, ``Z_j`` is diagonal and ``D2_j`` removes the
    off-diagonal part of ``Psi_j`` by dividing by ``i (l - lbar) . Omega``.
    At ``r = 1`` the input must vanish identically (guaranteed by the step
    structure) and the transform is the identity.

    Returns the (epsilon-free) generator and diagonal sequences; callers
    weight the ``j``-th entries by ``epsilon^(j (r-1))``.
    """
    dims = g1.dims
    if g1.is_zero():
        return DiagonalizationResult([], [], [])
    if r == 1:
        raise InvariantViolation("the angle-free quadratic remainder must vanish at the first step")
    counter = TruncationCounter()
    n1, n2 = dims
    scale = max(1.0, max(abs(c) for c in g1.terms.values()))
    D2: list[TaylorFourierSeries] = []
    Z: list[TaylorFourierSeries] = []
    Psi: list[TaylorFourierSeries] = []
    Eg1 = [g1]  # E_j g1, extended as generators appear
    decay = epsilon ** (r - 1)
    weight = 1.0
    for j in range(1, j_cap + 1):
        psi = Eg1[j - 1].copy()
        for i in range(1, j):
            rhs = Z[j - i - 1] - Eg1[j - i - 1]
            if D2[i - 1].is_zero() or rhs.is_zero():
                continue
            psi = psi + poisson_bracket(rhs, D2[i - 1], ell_max=ell_max, counter=counter).scaled(i / j)
        diag, off = _split_quadratic(psi)
        d2j = TaylorFourierSeries(dims)
        for key, c in off.terms.items():
            lW = sum((lj - bj) * Wj for lj, bj, Wj in zip(key.l, key.lbar, Omega))
            if lW == 0.0:
                raise ResonanceDetected(f"vanishing transverse divisor at key {key}", r, 0.0)
            d2j.terms[key] = c / (1j * lW)
        Psi.append(psi)
        Z.append(diag)
        D2.append(d2j)
        # extend E_j g1 with the new generator available
        acc = TaylorFourierSeries(dims)
        for i in range(1, j + 1):
            if D2[i - 1].is_zero() or Eg1[j - i].is_zero():
                continue
            acc = acc + poisson_bracket(Eg1[j - i], D2[i - 1], ell_max=ell_max, counter=counter).scaled(i / j)
        Eg1.append(acc)
        weight *= decay
        size = weighted_norm_plain(d2j) + weighted_norm_plain(diag) + weighted_norm_plain(Eg1[j])
        if weight * size <= tail_tol * scale:
            break
    else:
        raise InvariantViolation("quadratic normalizing transform did not settle within the cap")
    # drop the all-zero tail so the transform data is minimal
    while D2 and D2[-1].is_zero() and Z[-1].is_zero():
        D2.pop()
        Z.pop()
        Psi.pop()
    return DiagonalizationResult(D2, Z, Psi)


def weighted_norm_plain(g: TaylorFourierSeries) -> float:
    """Plain coefficient 1-norm (unit radii), used for tail cutoffs."""
    return sum(abs(c) for c in g.terms.values())


class FrequencyUpdate(tuple):
    """Named result of `update_frequencies`."""

    __slots__ = ()

    def __new__(cls, omega, Omega, domega, dOmega):
        return tuple.__new__(cls, (omega, Omega, domega, dOmega))

    omega = property(lambda self: self[0])
    Omega = property(lambda self: self[1])
    domega = property(lambda self: self[2])
    dOmega = property(lambda self: self[3])


def update_frequencies(omega, Omega, f2_avg: TaylorFourierSeries, Z: list, r: int, epsilon: float) -> FrequencyUpdate:
    """Frequency updates induced by the angle-free grade-2 remainder.

    The torus frequencies shift by ``eps^r`` times the action gradient of
    the angle-free block at ``p = 0``; the transverse frequencies shift by
    ``sum_j eps^(j (r-1)) * i * (z_i zeta_i coefficient of Z_j)`` (the real
    shift equals the ``z conj(z)`` coefficient).  Imaginary residues beyond
    roundoff raise `InvariantViolation`.
    """
    n1, n2 = f2_avg.dims
    scale = max(1.0, max((abs(c) for c in f2_avg.terms.values()), default=0.0))
    domega = [0.0] * n1
    for key, c in f2_avg.terms.items():
        if sum(key.m) == 1 and not any(key.l) and not any(key.lbar):
            if any(key.k):
                raise InvariantViolation("angle-free block contains an oscillating action term")
            if abs(c.imag) > 1e-10 * scale:
                raise InvariantViolation(f"action-gradient coefficient not real: {c!r}")
            j = key.m.index(1)
            domega[j] += (epsilon**r) * c.real
    dOmega = [0.0] * n2
    for idx, Zj in enumerate(Z, start=1):
        w = epsilon ** (idx * (r - 1))
        for key, c in Zj.terms.items():
            if sum(key.l) != 1 or key.l != key.lbar:
                raise InvariantViolation("diagonal term expected in the frequency update")
            shift = 1j * c  # coefficient of z conj(z)
            if abs(shift.imag) > 1e-10 * scale:
                raise InvariantViolation(f"transverse shift not real: {shift!r}")
            dOmega[key.l.index(1)] += w * shift.real
    new_omega = tuple(w + d for w, d in zip(omega, domega))
    new_Omega = tuple(W + d for W, d in zip(Omega, dOmega))
    return FrequencyUpdate(new_omega, new_Omega, tuple(domega), tuple(dOmega))


def _apply_final_transform(
    blocks: dict[tuple[int, int], TaylorFourierSeries],
    D2: list[TaylorFourierSeries],
    r: int,
    epsilon: float,
    dims,
    ell_max: int,
    s_max: int,
    counter: TruncationCounter,
    tail_tol: float = 1e-18,
) -> dict[tuple[int, int], TaylorFourierSeries]:
    """Final stage: ``f -> sum_j eps^(j(r-1)) E_j f`` blockwise.

    The numeric ``eps^(j(r-1))`` weights are folded into the coefficients;
    this is the single place where a block is not a pure bookkeeping order.
    Grade <= 2 blocks with ``s <= r`` are dropped (their content moved into
    the kernel); grade >= 3 blocks at ``s = 0`` pass through unchanged.
    """
    out: dict[tuple[int, int], TaylorFourierSeries] = {}
    if not D2 or all(x.is_zero() for x in D2):
        for (ell, s), g in blocks.items():
            if ell <= 2 and s <= r:
                continue
            if not g.is_zero():
                out[(ell, s)] = g
        return out
    decay = epsilon ** (r - 1)
    for (ell, s), g in blocks.items():
        if ell <= 2 and s <= r:
            continue
        if g.is_zero():
            continue
        if ell >= 3 and s == 0:
            out[(ell, s)] = g
            continue
        total = g
        terms = [g]
        weight = 1.0
        j = 0
        gscale = max(1.0, weighted_norm_plain(g))
        while j < 64:
            j += 1
            weight *= decay
            # extend E_j g
            acc = TaylorFourierSeries(g.dims)
            for i in range(1, j + 1):
                if i > len(D2) or D2[i - 1].is_zero() or terms[j - i].is_zero():
                    continue
                acc = acc + poisson_bracket(terms[j - i], D2[i - 1], ell_max=ell_max, counter=counter).scaled(i / j)
            terms.append(acc)
            if acc.is_zero():
                if j >= len(D2):
                    break
                continue
            total = total + acc.scaled(weight)
            if weight * weighted_norm_plain(acc) <= tail_tol * gscale:
                break
        if not total.is_zero():
            out[(ell, s)] = total
    return out


def normalization_step(
    state: HamiltonianState, divisor_floor: float = 0.0
) -> tuple[HamiltonianState, GeneratingSet, StepReport]:
    """Run one normalization step at order ``r = state.r_done + 1``.

    Returns the new state, the generating set of the step, and a report with
    every measured quantity the estimate audit consumes: divisor minima,
    generator and block norms on the restriction ladder, homological
    residuals, frequency shifts, and the step-to-step difference norm.
    """
    cfg = state.config
    dims = state.dims
    r = state.r_done + 1
    eps = cfg.epsilon
    counter = TruncationCounter()
    before = counter.dropped

    a_r, b_r = check_nonresonance(state.omega, state.Omega, r, cfg.K, eps, floor=divisor_floor)

    d_prev = d_sequence_value(r - 1)
    delta = delta_value(r)
    levels = {
        "chi0": d_prev,
        "stage1": d_prev + delta,
        "chi1": d_prev + delta,
        "stage2": d_prev + 2 * delta,
        "chi2": d_prev + 2 * delta,
        "stage3": d_prev + 3 * delta,
        "final": d_prev + 4 * delta,
    }

    kernel_p = state.kernel_p_series()
    z0 = state.z0_series()
    kernel_full = kernel_p + z0.scaled(eps)

    residuals: dict[str, float] = {}
    chi_norms: dict[str, float] = {}
    stage_norms: dict[str, dict[tuple[int, int], float]] = {}

    # stage 1: angle-only generator
    f0 = state.block(0, r)
    chi0 = solve_chi0(f0, state.omega, r)
    residuals["chi0"] = weighted_norm(
        poisson_bracket(kernel_p, chi0) + oscillating_part(f0), cfg.domain, 0.0
    )
    residuals["chi0.scale"] = weighted_norm(oscillating_part(f0), cfg.domain, 0.0)
    chi_norms["chi0"] = weighted_norm(chi0, cfg.domain, levels["chi0"])
    table = apply_lie_series(state.blocks, chi0, 1, r, dims, cfg.ell_max, cfg.s_max, counter)
    stage_norms["stage1"] = {
        key: weighted_norm(g, cfg.domain, levels["stage1"]) for key, g in sorted(table.items())
    }

    # stage 2: grade-1 generator
    f1 = table.get((1, r), TaylorFourierSeries(dims))
    chi1 = solve_chi1(f1, state.omega, state.Omega, eps, r)
    residuals["chi1"] = weighted_norm(poisson_bracket(kernel_full, chi1) + f1, cfg.domain, 0.0)
    residuals["chi1.scale"] = weighted_norm(f1, cfg.domain, 0.0)
    chi_norms["chi1"] = weighted_norm(chi1, cfg.domain, levels["chi1"])
    table = apply_lie_series(table, chi1, 2, r, dims, cfg.ell_max, cfg.s_max, counter)
    stage_norms["stage2"] = {
        key: weighted_norm(g, cfg.domain, levels["stage2"]) for key, g in sorted(table.items())
    }

    # stage 3: grade-2 generator; the angle-free part stays
    f2 = table.get((2, r), TaylorFourierSeries(dims))
    chi2, _ = solve_chi2(f2, state.omega, state.Omega, eps, r)
    residuals["chi2"] = weighted_norm(
        poisson_bracket(kernel_full, chi2) + oscillating_part(f2), cfg.domain, 0.0
    )
    residuals["chi2.scale"] = weighted_norm(oscillating_part(f2), cfg.domain, 0.0)
    chi_norms["chi2"] = weighted_norm(chi2, cfg.domain, levels["chi2"])
    table = apply_lie_series(table, chi2, 3, r, dims, cfg.ell_max, cfg.s_max, counter)
    stage_norms["stage3"] = {
        key: weighted_norm(g, cfg.domain, levels["stage3"]) for key, g in sorted(table.items())
    }

    # stage 4: diagonalize the angle-free quadratic remainder
    f2_avg = table.get((2, r), TaylorFourierSeries(dims))
    g1 = TaylorFourierSeries(dims)
    for key, c in f2_avg.terms.items():
        if sum(key.l) + sum(key.lbar) == 2:
            g1.terms[key] = c
    if r == 1 and not f2_avg.is_zero():
        raise InvariantViolation("angle-free grade-2 remainder must vanish at the first step")
    diag = (
        diagonalize(state.Omega, g1, r, eps, b_r)
        if not g1.is_zero()
        else DiagonalizationResult([], [], [])
    )
    z0_prev = state.z0_series()
    for j, (d2j, zj, psij) in enumerate(zip(diag.D2, diag.Z, diag.Psi), start=1):
        res = poisson_bracket(z0_prev, d2j) + psij - zj
        residuals[f"D2[{j}]"] = weighted_norm(res, cfg.domain, 0.0)
        residuals[f"D2[{j}].scale"] = weighted_norm(psij, cfg.domain, 0.0)

    freq = update_frequencies(state.omega, state.Omega, f2_avg, diag.Z, r, eps)
    final = _apply_final_transform(
        table, diag.D2, r, eps, dims, cfg.ell_max, cfg.s_max, counter
    )

    # class and selection-rule invariants on the way out
    for (ell, s), g in final.items():
        if not verify_class(g, ClassTag(ell, s), cfg.K):
            raise InvariantViolation(f"block ({ell},{s}) left its class after step {r}")

    new_state = HamiltonianState(
        dims=dims,
        config=cfg,
        omega=freq.omega,
        Omega=freq.Omega,
        blocks=final,
        E_bar=state.E_bar,
        r_done=r,
        counter=state.counter,
    )
    state.counter.dropped += counter.dropped - before

    diff = new_state.total_series() - state.total_series()
    cauchy = weighted_norm(diff, cfg.domain, 0.25)

    report = StepReport(
        r=r,
        a_r=a_r,
        b_r=b_r,
        chi_norms=chi_norms,
        stage_norms=stage_norms,
        final_norms={
            key: weighted_norm(g, cfg.domain, levels["final"]) for key, g in sorted(final.items())
        },
        residuals=residuals,
        domega=freq.domega,
        dOmega=freq.dOmega,
        cauchy_diff=cauchy,
        truncation_dropped=counter.dropped,
        shrink_levels=levels,
    )
    gen = GeneratingSet(
        r=r,
        epsilon=eps,
        omega_prev=tuple(state.omega),
        Omega_prev=tuple(state.Omega),
        chi0=chi0,
        chi1=chi1,
        chi2=chi2,
        D2=diag.D2,
        Z=diag.Z,
        f2_avg=f2_avg,
    )
    return new_state, gen, report


def normalize(
    state: HamiltonianState, r_max: int | None = None, divisor_floor: float = 0.0
) -> tuple[HamiltonianState, list[GeneratingSet], list[StepReport]]:
    """Run normalization steps ``r = 1 .. r_max`` and collect diagnostics."""
    r_max = state.config.r_max if r_max is None else r_max
    gens: list[GeneratingSet] = []
    reports: list[StepReport] = []
    current = state
    while current.r_done < r_max:
        current, gen, report = normalization_step(current, divisor_floor)
        gens.append(gen)
        reports.append(report)
    return current, gens, reports
