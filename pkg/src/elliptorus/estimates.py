"""Quantitative estimate calculus for the normalization.

Everything here is arithmetic on scalars: the restriction sequences that
split the analyticity domain across steps, the integer counting sequences
that bound how many terms each stage can generate, the divisor-product
maxima over admissible index multisets, the norm inequalities for brackets
and Lie-series terms, the convergence thresholds, and the audit that
replays every inequality of the bound table against the measured norms of
a completed run.

All audited inequalities are one-sided: measured left-hand sides (which a
truncated run can only shrink) against closed-form right-hand sides.  The
audit never feeds measured data into the right-hand sides except for the
per-step divisor minima, which enter exactly as the theory prescribes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .series import DomainParams

E = math.e


def delta_value(r: int) -> float:
    """Per-step restriction quantum ``3 / (8 pi^2 r^2)``; four are spent per step."""
    if r < 1:
        raise ValueError("r must be >= 1")
    return 3.0 / (8.0 * math.pi**2 * r * r)


def d_sequence_value(r: int) -> float:
    """Total restriction ``d_r = 4 * sum_{i<=r} delta_i`` after ``r`` steps (``d_0 = 0``)."""
    return 4.0 * sum(delta_value(i) for i in range(1, r + 1))


def restriction_sequences(r_max: int) -> tuple[list[float], list[float]]:
    """Restriction ladder: ``([delta_1..delta_rmax], [d_0..d_rmax])``.

    The total restriction stays below 1/4: ``sum 4 delta_r = (3/2 pi^2) *
    sum r^-2 -> 1/4``, so all norms live on domains shrunk by less than a
    quarter.
    """
    deltas = [delta_value(r) for r in range(1, r_max + 1)]
    ds = [0.0]
    for dl in deltas:
        ds.append(ds[-1] + 4.0 * dl)
    return deltas, ds


def zeta_value(r: int) -> float:
    """Accumulated final-stage inflation exponent; ``zeta_0 = zeta_1 = 0``."""
    z = 0.0
    for i in range(2, r + 1):
        x = 2.0 ** -(i + 6)
        z += x / (1.0 - x)
    return z


def theta_value(j: int) -> int:
    """Stage-collapse multiplicity: 1, 7, 35, ...; ``theta_{j+1} <= 8 theta_j``."""
    if j < 0:
        raise ValueError("j must be >= 0")
    return (2 * (4 ** (j + 1) - 1)) // 3 - 2 ** (j + 1) + 1


def catalan_value(j: int) -> int:
    """Convolution counts ``lam_1 = 1``, ``lam_j = sum lam_i lam_{j-i}``; ``<= 4^(j-1)``."""
    if j < 1:
        raise ValueError("j must be >= 1")
    lam = [0, 1]
    for n in range(2, j + 1):
        lam.append(sum(lam[i] * lam[n - i] for i in range(1, n)))
    return lam[j]


def istar_set(s: int) -> tuple[int, ...]:
    """Reference index multiset ``(floor(s/s), ..., floor(s/2))`` of size ``s - 1``.

    Nondecreasing; its largest entry is ``floor(s/2)`` and the value ``j``
    appears ``floor(s/j) - floor(s/(j+1))`` times.
    """
    if s < 2:
        return ()
    return tuple(s // i for i in range(s, 1, -1))


def jrs_contains(I: Iterable[int], r: int, s: int) -> bool:
    """Membership in the admissible index family at orders ``(r, s)``.

    A multiset belongs iff every entry lies in ``[0, min(r, floor(s/2))]``
    and, after sorting and padding with zeros to size ``s - 1``, it is
    elementwise <= the reference multiset of `istar_set`.
    """
    entries = sorted(int(j) for j in I)
    if s < 1:
        return not entries
    if len(entries) > max(s - 1, 0):
        return False
    cap = min(r, s // 2)
    if any(j < 0 or j > cap for j in entries):
        return False
    ref = istar_set(s)
    padded = [0] * (len(ref) - len(entries)) + entries
    return all(a <= b for a, b in zip(padded, ref))


@dataclass
class EstimateConfig:
    """Scalar inputs of the estimate calculus.

    ``a_rule`` produces the divisor lower bound at each order; the default
    is the power-law rule ``gamma / (r K)^tau``.  ``b_bar`` is the uniform
    transverse-gap lower bound (infinite when only one transverse frequency
    exists, which makes every gap condition vacuous).
    """

    domain: DomainParams
    E_bar: float
    K: int
    gamma: float = 1.0
    tau: float = 2.0
    b_bar: float = math.inf
    J0: float = 0.0
    n1: int = 2
    n2: int = 1
    a_rule: Callable[[int], float] | None = None

    def a_of(self, r: int) -> float:
        if self.a_rule is not None:
            return float(self.a_rule(r))
        return self.gamma / (r * self.K) ** self.tau

    @property
    def bracket_constant(self) -> float:
        """``2 e / (rho sigma) + e^2 / R^2``: the bracket/Lie-term geometry factor."""
        rho, R, sigma = self.domain
        return 2.0 * E / (rho * sigma) + E * E / (R * R)

    @property
    def M(self) -> float:
        """Unit-floored size constant ``max(1, E_bar * bracket_constant)``."""
        return max(1.0, self.E_bar * self.bracket_constant)


class SequenceCache:
    """Memoized sequences for one estimate context.

    Holds the restriction ladder, the inflation exponents, both term-count
    recursions (kept as genuinely independent routes and cross-checked),
    and the divisor-product maxima.  Measured divisor minima from a run can
    be supplied to override the configured rule at the orders a run
    actually visited.
    """

    def __init__(self, config: EstimateConfig, a_measured: dict[int, float] | None = None):
        self.config = config
        self.a_measured = dict(a_measured or {})
        self._nu: dict[tuple[int, int], int] = {}
        self._nu_I: dict[tuple[int, int], int] = {}
        self._nu_II: dict[tuple[int, int], int] = {}
        self._nu_collapsed: dict[tuple[int, int], int] = {}

    # -- scalars -------------------------------------------------------

    def a(self, r: int) -> float:
        got = self.a_measured.get(r)
        return got if got is not None else self.config.a_of(r)

    def delta(self, r: int) -> float:
        return delta_value(r)

    def d(self, r: int) -> float:
        return d_sequence_value(r)

    def zeta(self, r: int) -> float:
        return zeta_value(r)

    # -- term-count recursions ------------------------------------------

    def nu_I(self, r: int, s: int) -> int:
        if r < 1:
            return 1
        key = (r, s)
        got = self._nu_I.get(key)
        if got is None:
            got = sum(self.nu(r - 1, r) ** j * self.nu(r - 1, s - j * r) for j in range(s // r + 1))
            self._nu_I[key] = got
        return got

    def nu_II(self, r: int, s: int) -> int:
        if r < 1:
            return 1
        key = (r, s)
        got = self._nu_II.get(key)
        if got is None:
            got = sum(self.nu_I(r, r) ** j * self.nu_I(r, s - j * r) for j in range(s // r + 1))
            self._nu_II[key] = got
        return got

    def nu(self, r: int, s: int) -> int:
        """Final per-step term-count factor (three-stage route)."""
        if r < 1 or s < 1:
            return 1
        key = (r, s)
        got = self._nu.get(key)
        if got is None:
            got = sum(self.nu_II(r, r) ** j * self.nu_II(r, s - j * r) for j in range(s // r + 1))
            self._nu[key] = got
        return got

    def nu_collapsed(self, r: int, s: int) -> int:
        """Single-recursion route with the stage-collapse multiplicities."""
        if r < 1 or s < 1:
            return 1
        key = (r, s)
        got = self._nu_collapsed.get(key)
        if got is None:
            got = sum(
                theta_value(j) * self.nu(r - 1, r) ** j * self.nu(r - 1, s - j * r)
                for j in range(s // r + 1)
            )
            self._nu_collapsed[key] = got
        return got

    # -- divisor products ------------------------------------------------

    def divisor_factor(self, j: int) -> float:
        """Slot weight ``1 / (a_j delta_j^2)`` of index ``j >= 1``."""
        return 1.0 / (self.a(j) * self.delta(j) ** 2)

    def T(self, r: int, s: int) -> float:
        return T_rs(r, s, self)


def T_rs(r: int, s: int, cache: SequenceCache) -> float:
    """Divisor-product maximum over the admissible index family.

    Each slot of the reference multiset is optimized independently (any
    multiset admissible at ``(r, s)`` is a slotwise weakening of the capped
    reference, and slot weights do not interact), taking the best of the
    empty choice and every index up to the capped reference entry.  With
    weights that grow with the index this reduces to the elementwise capped
    reference multiset.  ``T_{0,s} = T_{r,0} = 1``.
    """
    if r < 1 or s < 2:
        return 1.0
    cap = min(r, s // 2)
    chosen: list[int] = []
    for x in istar_set(s):
        c = min(x, cap)
        best_j, best_w = 0, 1.0
        for j in range(1, c + 1):
            w = cache.divisor_factor(j)
            if w > best_w:
                best_j, best_w = j, w
        if best_j:
            chosen.append(best_j)
    total = 1.0
    for j in sorted(chosen):
        total *= cache.divisor_factor(j)
    return total


def counting_sequences(r_max: int, s_max: int, cache: SequenceCache | None = None) -> dict:
    """Build the term-count tables by both routes and assert they agree.

    Returns a dict with the table (``nu[(r, s)]``), the collapse
    multiplicities and the convolution counts.  Raises ``AssertionError``
    if the two recursions ever disagree; they are independent
    implementations of the same count.
    """
    cache = cache or SequenceCache(EstimateConfig(DomainParams(1, 1, 1), 1.0, 1))
    nu = {}
    for r in range(0, r_max + 1):
        for s in range(0, s_max + 1):
            three = cache.nu(r, s)
            one = cache.nu_collapsed(r, s)
            assert three == one, f"term-count recursions disagree at {(r, s)}: {three} vs {one}"
            nu[(r, s)] = three
    return {
        "nu": nu,
        "theta": [theta_value(j) for j in range(0, max(8, r_max) + 1)],
        "catalan": [catalan_value(j) for j in range(1, max(8, r_max) + 1)],
    }


def gamma_condition_tau(
    config: EstimateConfig, r_terms: int = 100_000, tail_mode: str = "integral"
) -> float:
    """Accumulated divisor exponent ``Gamma = -sum_r log(a_r) / (r (r+1))``.

    For the default power-law rule the gamma and ``tau log K`` parts are
    summed in closed form (``sum 1/(r(r+1)) = 1``) and only
    ``S = sum log r / (r(r+1))`` is evaluated numerically; ``tail_mode``
    "integral" adds the upper bound ``(log N + 1)/N`` for the dropped tail,
    keeping the result a true upper bound, "none" omits it.  A custom rule
    is summed term by term up to ``r_terms`` (the tail is the rule owner's
    problem; "integral" is not available).
    """
    if tail_mode not in ("integral", "none"):
        raise ValueError("tail_mode must be 'integral' or 'none'")
    if config.a_rule is not None:
        return -sum(math.log(config.a_of(r)) / (r * (r + 1)) for r in range(1, r_terms + 1))
    S = sum(math.log(r) / (r * (r + 1)) for r in range(2, r_terms + 1))
    if tail_mode == "integral":
        S += (math.log(r_terms) + 1.0) / r_terms
    return -math.log(config.gamma) + config.tau * math.log(config.K) + config.tau * S


@dataclass
class Thresholds:
    """Smallness thresholds; the run parameter must sit below ``eps_star``."""

    Gamma: float
    M: float
    A_script: float
    eps_analytic: float
    eps_geometric: float
    eps_gradient: float
    eps_jacobian: float
    eps_star: float
    eta: float
    h0: float


def thresholds(config: EstimateConfig, Gamma: float | None = None) -> Thresholds:
    """Convergence thresholds from the estimate context.

    ``A_script = (2^18 M e^Gamma)^3`` collects every step-uniform factor of
    the bound table.  The analytic threshold is
    ``(min(1, b_bar) / A_script)^2 / 2^8``; the geometric one also protects
    the frequency-map control: ``min(1/((2 J0 + 1) eta),
    min(1, h0/(8 A), b_bar/(8 A)) / 2^(tau+3) / A)`` with
    ``eta = min(1/K, sigma)`` and the base shell width
    ``h0 = min(gamma eta / (4 K^tau), b_bar / (4 J0))``.  Two service
    conditions cap the determinant dilation (``log 2 / (sigma n1^2)``) and
    the gradient drift (``1 / (4 (2 J0 + 1))``); the final threshold is the
    minimum of all four.
    """
    if Gamma is None:
        Gamma = gamma_condition_tau(config)
    rho, R, sigma = config.domain
    M = config.M
    log_A = 3.0 * (18.0 * math.log(2.0) + math.log(M) + Gamma)
    A = math.exp(log_A) if log_A < 700 else math.inf
    b_eff = min(1.0, config.b_bar)
    eps_an = (b_eff / A) ** 2 / 2.0**8 if math.isfinite(A) else 0.0
    eta = min(1.0 / config.K, sigma)
    h0_terms = [config.gamma * eta / (4.0 * config.K**config.tau)]
    if config.J0 > 0:
        h0_terms.append(config.b_bar / (4.0 * config.J0))
    h0 = min(h0_terms)
    if math.isfinite(A):
        inner = min(1.0, h0 / (8.0 * A), config.b_bar / (8.0 * A) if math.isfinite(config.b_bar) else 1.0)
        eps_ge = min(1.0 / ((2.0 * config.J0 + 1.0) * eta), inner / (2.0 ** (config.tau + 3.0) * A))
    else:
        eps_ge = 0.0
    eps_grad = 1.0 / (4.0 * (2.0 * config.J0 + 1.0))
    eps_jac = math.log(2.0) / (sigma * config.n1**2)
    return Thresholds(
        Gamma=Gamma,
        M=M,
        A_script=A,
        eps_analytic=eps_an,
        eps_geometric=eps_ge,
        eps_gradient=eps_grad,
        eps_jacobian=eps_jac,
        eps_star=min(eps_an, eps_ge, eps_grad, eps_jac),
        eta=eta,
        h0=h0,
    )


# -- single inequalities ------------------------------------------------


def bracket_norm_bound(
    norm_g: float, norm_g2: float, domain: DomainParams, d: float, dprime: float, delta: float
) -> float:
    """Bound on the bracket norm one restriction level further down.

    For ``g`` measured after restriction ``d + dprime`` and ``g2`` after
    ``dprime``, the bracket measured after ``d + dprime + delta`` is at most
    ``(2/(e rho sigma) + 1/R^2) / ((d + delta) delta)`` times the product of
    the two norms.  Requires ``delta > 0`` and ``d + dprime + delta < 1``.
    """
    if delta <= 0 or d < 0 or dprime < 0 or d + dprime + delta >= 1:
        raise ValueError("bad restriction split")
    rho, R, sigma = domain
    return (2.0 / (E * rho * sigma) + 1.0 / R**2) / ((d + delta) * delta) * norm_g * norm_g2


def lie_term_bound(
    j: int, norm_chi: float, norm_g: float, domain: DomainParams, d: float, dprime: float
) -> float:
    """Bound on the ``j``-th Lie-series term ``L^j g / j!`` after restriction ``d``.

    ``(1/e^2) * (2e/(rho sigma) + e^2/R^2)^j * d^(-2j) * |chi|^j * |g|``,
    both factors measured after restriction ``dprime``; needs ``j >= 1``,
    ``d > 0`` and ``d + dprime < 1``.
    """
    if j < 1 or d <= 0 or dprime < 0 or d + dprime >= 1:
        raise ValueError("bad restriction split")
    rho, R, sigma = domain
    base = (2.0 * E / (rho * sigma) + E * E / (R * R)) / (d * d)
    return (1.0 / (E * E)) * (base * norm_chi) ** j * norm_g


def diag_smallness(norm_g1: float, d: float, dprime: float, gap: float, R: float) -> float:
    """Smallness parameter of the quadratic normalizing transform.

    ``(2 e^2 / d^2 + 2^9 / (1 - dprime)^2) * |g1| / (gap * R^2)`` must not
    exceed 1/2 for the transform estimates to telescope; infinite gap
    (single transverse frequency) gives 0.
    """
    if not math.isfinite(gap):
        return 0.0
    return (2.0 * E * E / d**2 + 2.0**9 / (1.0 - dprime) ** 2) * norm_g1 / (gap * R * R)


def diag_generator_bound(j: int, norm_g1: float, dprime: float, gap: float, R: float) -> float:
    """Bound on ``max(gap * |X_j|, |Z_j|)`` for the quadratic transform.

    ``(2 |g1| / j) * (2^9 |g1| / ((1 - dprime)^2 gap R^2))^(j-1)``.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    if not math.isfinite(gap):
        return 2.0 * norm_g1 / j if j == 1 else 0.0
    return (2.0 * norm_g1 / j) * (2.0**9 * norm_g1 / ((1.0 - dprime) ** 2 * gap * R * R)) ** (j - 1)


# -- the audit -----------------------------------------------------------


def _row(tag: str, step: int, detail: str, lhs: float, rhs_log: float) -> dict:
    rhs = math.exp(rhs_log) if rhs_log < 700 else math.inf
    lhs_log = math.log(lhs) if lhs > 0 else -math.inf
    slack_log = rhs_log - lhs_log
    return {
        "tag": tag,
        "step": step,
        "detail": detail,
        "lhs": lhs,
        "rhs": rhs,
        "slack_log10": slack_log / math.log(10.0) if math.isfinite(slack_log) else math.inf,
        "lhs_log10": lhs_log / math.log(10.0) if lhs > 0 else None,
        "rhs_log10": rhs_log / math.log(10.0),
        "ok": bool(lhs <= rhs or lhs_log <= rhs_log),
    }


def bound_checkers(reports, config: EstimateConfig, epsilon: float) -> list[dict]:
    """Replay the bound table of a completed run against its measured norms.

    Parameters
    ----------
    reports : list of StepReport
        Per-step diagnostics with norms on the restriction ladder.
    config : EstimateConfig
        Scalar context; ``E_bar`` must be the run's initial size constant.
    epsilon : float
        The run's perturbation parameter.

    Returns
    -------
    list of dict
        One row per audited inequality: neutral ``tag``, step, ``lhs``,
        ``rhs``, log-slack and an ``ok`` flag.  Right-hand sides are
        assembled in log space; the measured divisor minima of the run
        enter through the divisor products exactly as prescribed.
    """
    a_measured = {rep.r: rep.a_r for rep in reports}
    cache = SequenceCache(config, a_measured)
    M = config.M
    C = config.bracket_constant
    Ebar = config.E_bar
    logM, logE = math.log(M), math.log(Ebar) if Ebar > 0 else -math.inf
    rows: list[dict] = []

    def log_T(r, s):
        return math.log(cache.T(r, s))

    def log_aD2(r):
        return math.log(cache.a(r) * cache.delta(r) ** 2)

    for rep in reports:
        r = rep.r
        dl = cache.delta(r)
        zr_prev = cache.zeta(r - 1)
        zr = cache.zeta(r)
        pref = C / dl**2

        rows.append(
            _row(
                "generator-order0",
                r,
                "angle generator vs divisor table",
                pref * rep.chi_norms["chi0"],
                (3 * r - 2) * logM + 3 * log_T(r - 1, r) - log_aD2(r) + math.log(cache.nu(r - 1, r)) + r * zr_prev,
            )
        )
        rows.append(
            _row(
                "generator-order1",
                r,
                "grade-1 generator vs divisor table",
                pref * rep.chi_norms["chi1"],
                (3 * r - 1) * logM + 3 * log_T(r, r) - 2 * log_aD2(r) + math.log(cache.nu_I(r, r)) + r * zr_prev,
            )
        )
        rows.append(
            _row(
                "generator-order2",
                r,
                "grade-2 generator vs divisor table",
                pref * rep.chi_norms["chi2"],
                3 * r * logM + 3 * (log_T(r, r) - log_aD2(r)) + math.log(cache.nu_II(r, r)) + r * zr_prev,
            )
        )

        for (ell, s), lhs in rep.final_norms.items():
            if ell <= 2:
                if s <= r:
                    continue
                rhs_log = (
                    logE
                    + (3 * s - 3 + ell) * logM
                    - math.log(2.0) * ell
                    + 3 * log_T(r, s)
                    - ell * log_aD2(r)
                    + math.log(cache.nu(r, s))
                    + s * zr
                )
                rows.append(_row("block-ell-le2", r, f"block ({ell},{s})", lhs, rhs_log))
            elif s == 0:
                rows.append(
                    _row("block-ell-ge3-s0", r, f"block ({ell},0)", lhs, logE - math.log(2.0) * ell)
                )
            else:
                m = min(r, s)
                rhs_log = (
                    logE
                    + 3 * s * logM
                    - math.log(2.0) * ell
                    + 3 * (log_T(r, s) - log_aD2(m))
                    + math.log(cache.nu(r, s))
                    + s * zr
                )
                rows.append(_row("block-ell-ge3", r, f"block ({ell},{s})", lhs, rhs_log))

        if r >= 2:
            sigma = config.domain.sigma
            lhs = max(
                max((abs(x) for x in rep.domega), default=0.0) / sigma,
                epsilon * max((abs(x) for x in rep.dOmega), default=0.0),
            )
            rhs_log = (
                r * math.log(epsilon)
                + 3 * r * logM
                + 3 * (log_T(r, r) - log_aD2(r))
                + math.log(cache.nu(r, r))
                + r * zr
            )
            rows.append(_row("freq-shift", r, "frequency update vs divisor table", lhs, rhs_log))

            # hypothesis of the final-stage telescoping (vacuous for one
            # transverse frequency: infinite gap)
            if math.isfinite(rep.b_r):
                lhs = (
                    epsilon ** (r - 1)
                    * math.exp(
                        3 * r * logM
                        + 3 * log_T(r, r)
                        - 2 * log_aD2(r)
                        + math.log(cache.nu(r, r))
                        + r * zr_prev
                    )
                    / rep.b_r
                )
            else:
                lhs = 0.0
            rows.append(_row("diag-smallness", r, "final-stage hypothesis", lhs, -(r + 6) * math.log(2.0)))

    return rows
