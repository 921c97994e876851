"""Hamiltonian state: real input blocks, complexification, preparation.

Input Hamiltonians are real trigonometric polynomials in actions ``p``,
angles ``q`` and real elliptic pairs ``(x, y)``.  The normalizer works in
complexified variables ``(z, zeta)`` with ``zeta_j = i conj(z_j)`` on the
real slice.  The change of variables used here is

    z_j    = ((x_j - y_j) + i (x_j + y_j)) / 2
    zeta_j = ((x_j + y_j) + i (x_j - y_j)) / 2

which is canonical ({z_j, zeta_j} = -1 per pair) and satisfies
``z_j * conj(z_j) = (x_j^2 + y_j^2) / 2``.  It differs from the textbook
``z = (x + i y) / sqrt(2)`` by a unitary phase, absorbed so that every
transformation coefficient is a quarter integer: the change of variables and
its inverse are then exact in binary floating point, and
``realify(complexify(g)) == g`` holds bit for bit for dyadic inputs.  All
grade/Fourier classes, selection rules, moduli of coefficients, norms and
divisors are phase-invariant, so nothing downstream observes the rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .series import (
    ClassTag,
    Dimensions,
    DomainParams,
    InvariantViolation,
    MonomialKey,
    TaylorFourierSeries,
    TruncationCounter,
    assert_selection_rule,
    average_q,
    grade,
    reality_defect,
    verify_class,
    weighted_norm,
)

COS, SIN = 0, 1


class RealKey(NamedTuple):
    """Real-term exponents: actions, x-exponents, y-exponents, Fourier, flavor."""

    m: tuple[int, ...]
    a: tuple[int, ...]
    b: tuple[int, ...]
    k: tuple[int, ...]
    flavor: int


def _canonical_k(k: tuple[int, ...], flavor: int, c: float) -> tuple[tuple[int, ...], int, float]:
    # canonical Fourier label: first nonzero component positive
    for x in k:
        if x > 0:
            return k, flavor, c
        if x < 0:
            flipped = tuple(-v for v in k)
            return (flipped, flavor, -c) if flavor == SIN else (flipped, flavor, c)
    if flavor == SIN:  # sin(0) == 0
        return k, flavor, 0.0
    return k, flavor, c


class RealSeries:
    """Real trigonometric polynomial in ``(p, q, x, y)``.

    Terms are ``c * p^m * x^a * y^b * {cos, sin}(k . q)`` with real ``c``.
    Fourier labels are canonicalized (first nonzero component of ``k``
    positive), so equal functions compare equal.
    """

    __slots__ = ("dims", "terms")

    def __init__(self, dims: Dimensions, terms: dict[RealKey, float] | None = None):
        self.dims = Dimensions(*dims)
        self.terms: dict[RealKey, float] = {}
        if terms:
            for key, c in terms.items():
                self.add_term(c, key.m, key.a, key.b, key.k, key.flavor)

    def add_term(self, c, m=(), a=(), b=(), k=(), flavor=COS) -> "RealSeries":
        n1, n2 = self.dims
        mm = tuple(m) or (0,) * n1
        aa = tuple(a) or (0,) * n2
        bb = tuple(b) or (0,) * n2
        kk = tuple(k) or (0,) * n1
        if len(mm) != n1 or len(kk) != n1 or len(aa) != n2 or len(bb) != n2:
            raise ValueError("exponent length does not match dims")
        kk, fl, c = _canonical_k(kk, flavor, float(c))
        key = RealKey(mm, aa, bb, kk, fl)
        v = self.terms.get(key, 0.0) + c
        if v == 0.0:
            self.terms.pop(key, None)
        else:
            self.terms[key] = v
        return self

    def copy(self) -> "RealSeries":
        out = RealSeries(self.dims)
        out.terms = dict(self.terms)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RealSeries):
            return NotImplemented
        return self.dims == other.dims and self.terms == other.terms

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RealSeries(n1={self.dims.n1}, n2={self.dims.n2}, nterms={len(self.terms)})"

    def evaluate(self, p, q, x, y) -> float:
        total = 0.0
        for key, c in self.terms.items():
            v = c
            for e, u in zip(key.m, p):
                if e:
                    v *= u**e
            for e, u in zip(key.a, x):
                if e:
                    v *= u**e
            for e, u in zip(key.b, y):
                if e:
                    v *= u**e
            phase = sum(kj * qj for kj, qj in zip(key.k, q))
            v *= math.sin(phase) if key.flavor == SIN else math.cos(phase)
            total += v
        return total


def complex_coordinates(x: Iterable[float], y: Iterable[float]):
    """Map real elliptic coordinates to ``(z, zeta)`` (exact dyadic map)."""
    z = [complex((xi - yi) / 2, (xi + yi) / 2) for xi, yi in zip(x, y)]
    zeta = [complex((xi + yi) / 2, (xi - yi) / 2) for xi, yi in zip(x, y)]
    return z, zeta


def real_coordinates(z: Iterable[complex], zeta: Iterable[complex]):
    """Inverse of `complex_coordinates`; exact on exact inputs."""
    x, y = [], []
    for zi, wi in zip(z, zeta):
        u = (1 - 1j) * (zi + wi) / 2
        v = -(1 + 1j) * (zi - wi) / 2
        x.append(u)
        y.append(v)
    return x, y


def _pair_power(dims: Dimensions, j: int, base_z: complex, base_zeta: complex, n: int) -> TaylorFourierSeries:
    # (base_z * z_j + base_zeta * zeta_j)^n by repeated product
    lin = TaylorFourierSeries(dims)
    n1, n2 = dims
    ez = tuple(1 if i == j else 0 for i in range(n2))
    lin.terms[MonomialKey((0,) * n1, ez, (0,) * n2, (0,) * n1)] = base_z
    lin.terms[MonomialKey((0,) * n1, (0,) * n2, ez, (0,) * n1)] = base_zeta
    out = TaylorFourierSeries.monomial(dims, 1.0)
    for _ in range(n):
        out = out.product(lin)
    return out


def complexify(rs: RealSeries) -> TaylorFourierSeries:
    """Complexified form of a real series in the ``(z, zeta)`` variables.

    Substitutes ``x_j = (1-i)(z_j + zeta_j)/2``, ``y_j = -(1+i)(z_j - zeta_j)/2``
    and expands the trigonometric factors into Fourier exponentials.  All
    substitution coefficients are quarter integers, so the map is exact for
    dyadic inputs.  The result always satisfies the reality pairing; the
    selection rule holds only when the input couples transverse degree to
    compatible harmonics (`prepare_hamiltonian` checks it per block).
    """
    dims = rs.dims
    n1, n2 = dims
    out = TaylorFourierSeries(dims)
    half_x = ((1 - 1j) / 2, (1 - 1j) / 2)  # x_j: coefficients of (z_j, zeta_j)
    half_y = (-(1 + 1j) / 2, (1 + 1j) / 2)  # y_j
    for key, c in rs.terms.items():
        poly = TaylorFourierSeries.monomial(dims, c, m=key.m)
        for j in range(n2):
            if key.a[j]:
                poly = poly.product(_pair_power(dims, j, half_x[0], half_x[1], key.a[j]))
            if key.b[j]:
                poly = poly.product(_pair_power(dims, j, half_y[0], half_y[1], key.b[j]))
        if any(key.k):
            plus = {}
            minus = {}
            neg_k = tuple(-v for v in key.k)
            wp, wm = ((0.5, 0.5) if key.flavor == COS else (-0.5j, 0.5j))
            for mk, v in poly.terms.items():
                plus[MonomialKey(mk.m, mk.l, mk.lbar, key.k)] = v * wp
                minus[MonomialKey(mk.m, mk.l, mk.lbar, neg_k)] = v * wm
            out = out + TaylorFourierSeries(dims, plus) + TaylorFourierSeries(dims, minus)
        else:
            out = out + poly
    return out


def realify(g: TaylorFourierSeries, tol: float = 1e-12) -> RealSeries:
    """Real trigonometric form of a series that is real on the real slice.

    Substitutes ``z_j = (1+i)x_j/2 + (-1+i)y_j/2``,
    ``zeta_j = (1+i)x_j/2 + (1-i)y_j/2`` and folds conjugate Fourier pairs
    into cos/sin terms.  Raises `InvariantViolation` if a residual imaginary
    coefficient exceeds ``tol`` relative to the largest coefficient
    (the input was not real-valued).
    """
    dims = g.dims
    n1, n2 = dims
    # expand into complex-coefficient monomials in (p, x, y) times e^{i k q}
    acc: dict[tuple, complex] = {}
    z_sub = ((1 + 1j) / 2, (-1 + 1j) / 2)  # z_j: coefficients of (x_j, y_j)
    w_sub = ((1 + 1j) / 2, (1 - 1j) / 2)  # zeta_j
    for key, c in g.terms.items():
        poly: dict[tuple, complex] = {((0,) * n2, (0,) * n2): c}
        for j in range(n2):
            for which, n in (("z", key.l[j]), ("w", key.lbar[j])):
                cx, cy = z_sub if which == "z" else w_sub
                for _ in range(n):
                    nxt: dict[tuple, complex] = {}
                    for (aa, bb), v in poly.items():
                        ka = (aa[:j] + (aa[j] + 1,) + aa[j + 1 :], bb)
                        kb = (aa, bb[:j] + (bb[j] + 1,) + bb[j + 1 :])
                        nxt[ka] = nxt.get(ka, 0.0) + v * cx
                        nxt[kb] = nxt.get(kb, 0.0) + v * cy
                    poly = nxt
        for (aa, bb), v in poly.items():
            full = (key.m, aa, bb, key.k)
            w = acc.get(full, 0.0) + v
            if w == 0:
                acc.pop(full, None)
            else:
                acc[full] = w
    scale = max((abs(v) for v in acc.values()), default=0.0)
    out = RealSeries(dims)
    seen = set()
    for (m, aa, bb, k), v in acc.items():
        if (m, aa, bb, k) in seen:
            continue
        neg_k = tuple(-x for x in k)
        if not any(k):
            if abs(v.imag) > tol * max(scale, 1e-300):
                raise InvariantViolation(f"residual imaginary coefficient {v!r} at {(m, aa, bb, k)}")
            out.add_term(v.real, m, aa, bb, k, COS)
            seen.add((m, aa, bb, k))
            continue
        v_neg = acc.get((m, aa, bb, neg_k), 0.0)
        c_cos = v + v_neg
        c_sin = 1j * (v - v_neg)
        if max(abs(c_cos.imag), abs(c_sin.imag)) > tol * max(scale, 1e-300):
            raise InvariantViolation(f"residual imaginary coefficient at {(m, aa, bb, k)}")
        out.add_term(c_cos.real, m, aa, bb, k, COS)
        out.add_term(c_sin.real, m, aa, bb, k, SIN)
        seen.add((m, aa, bb, k))
        seen.add((m, aa, bb, neg_k))
    return out


@dataclass
class RunConfig:
    """Run parameters shared by the normalizer and the harness."""

    domain: DomainParams
    K: int
    ell_max: int
    s_max: int
    epsilon: float
    r_max: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.ell_max < 2 or self.s_max < 1 or self.r_max < 1:
            raise ValueError("bad run configuration")
        if not (0 <= self.epsilon < 1):
            raise ValueError("epsilon must lie in [0, 1)")


@dataclass
class HamiltonianState:
    """Current Hamiltonian along the normalization: kernel plus graded blocks.

    The kernel ``omega . p + eps * sum_j Omega_j z_j conj(z_j)`` is stored as
    the frequency vectors; everything else lives in ``blocks[(ell, s)]``,
    homogeneous of grade ``ell`` with Fourier budget ``s*K``, weighted by
    ``eps^s``.  After ``r_done`` steps the blocks with grade <= 2 vanish for
    ``s <= r_done``.
    """

    dims: Dimensions
    config: RunConfig
    omega: tuple[float, ...]
    Omega: tuple[float, ...]
    blocks: dict[tuple[int, int], TaylorFourierSeries]
    E_bar: float
    r_done: int = 0
    counter: TruncationCounter = field(default_factory=TruncationCounter)

    def block(self, ell: int, s: int) -> TaylorFourierSeries:
        g = self.blocks.get((ell, s))
        return g if g is not None else TaylorFourierSeries(self.dims)

    def set_block(self, ell: int, s: int, g: TaylorFourierSeries) -> None:
        if g.is_zero():
            self.blocks.pop((ell, s), None)
        else:
            self.blocks[(ell, s)] = g

    def kernel_p_series(self) -> TaylorFourierSeries:
        out = TaylorFourierSeries(self.dims)
        n1, n2 = self.dims
        for j, w in enumerate(self.omega):
            ej = tuple(1 if i == j else 0 for i in range(n1))
            out.terms[MonomialKey(ej, (0,) * n2, (0,) * n2, (0,) * n1)] = complex(w)
        return out

    def z0_series(self) -> TaylorFourierSeries:
        # sum_j Omega_j z_j conj(z_j) written in (z, zeta): coefficient -i Omega_j
        out = TaylorFourierSeries(self.dims)
        n1, n2 = self.dims
        for j, W in enumerate(self.Omega):
            ej = tuple(1 if i == j else 0 for i in range(n2))
            out.terms[MonomialKey((0,) * n1, ej, ej, (0,) * n1)] = -1j * W
        return out

    def total_series(self, include_kernel: bool = True) -> TaylorFourierSeries:
        """Numeric total: kernel plus ``sum eps^s * block``."""
        eps = self.config.epsilon
        out = TaylorFourierSeries(self.dims)
        if include_kernel:
            out = out + self.kernel_p_series() + self.z0_series().scaled(eps)
        for (ell, s), g in self.blocks.items():
            out = out + g.scaled(eps**s)
        return out

    def copy(self) -> "HamiltonianState":
        return HamiltonianState(
            dims=self.dims,
            config=self.config,
            omega=tuple(self.omega),
            Omega=tuple(self.Omega),
            blocks={key: g.copy() for key, g in self.blocks.items()},
            E_bar=self.E_bar,
            r_done=self.r_done,
            counter=self.counter,
        )


def _as_block_dict(F, default_s: int) -> dict[int, RealSeries]:
    if F is None:
        return {}
    if isinstance(F, RealSeries):
        return {default_s: F} if F.terms else {}
    return {int(s): rs for s, rs in F.items() if rs.terms}


def prepare_hamiltonian(
    F0,
    F1,
    F2,
    F_hot,
    omega0: Iterable[float],
    Omega0: Iterable[float],
    config: RunConfig,
) -> HamiltonianState:
    """Complexify real input blocks and assemble the initial state.

    Parameters
    ----------
    F0, F1, F2 : RealSeries or dict[int, RealSeries]
        Homogeneous blocks of grade 0, 1, 2.  A bare series is taken at
        bookkeeping order ``s = 1``; a dict maps ``s >= 1`` to series.
    F_hot : RealSeries or dict[int, RealSeries]
        Grade >= 3 part.  A bare series is taken at ``s = 0`` and split by
        grade; dict values are split likewise.
    omega0, Omega0 : sequences of float
        Kernel frequencies; their lengths fix ``(n1, n2)``.
    config : RunConfig

    Returns
    -------
    HamiltonianState

    Raises
    ------
    InvariantViolation
        If a block breaks the selection rule, exceeds its Fourier budget,
        has mixed grade where homogeneous grade is required, fails the
        reality pairing, or the grade-2 leading block has a nonzero angular
        average.
    """
    omega0 = tuple(float(w) for w in omega0)
    Omega0 = tuple(float(W) for W in Omega0)
    dims = Dimensions(len(omega0), len(Omega0))
    K = config.K

    blocks: dict[tuple[int, int], TaylorFourierSeries] = {}

    def install(ell_want: int | None, s: int, rs: RealSeries, name: str) -> None:
        g = complexify(rs)
        # constants carry no dynamics; the algorithm drops them throughout
        zero_key = MonomialKey((0,) * dims.n1, (0,) * dims.n2, (0,) * dims.n2, (0,) * dims.n1)
        g.terms.pop(zero_key, None)
        if g.is_zero():
            return
        defect = reality_defect(g)
        scale = max(abs(c) for c in g.terms.values())
        if defect > 1e-13 * scale:
            raise InvariantViolation(f"{name}: reality pairing broken (defect {defect:g})")
        assert_selection_rule(g, name)
        by_grade: dict[int, TaylorFourierSeries] = {}
        for key, c in g.terms.items():
            by_grade.setdefault(grade(key), TaylorFourierSeries(dims)).terms[key] = c
        if ell_want is not None and set(by_grade) - {ell_want}:
            raise InvariantViolation(f"{name}: expected homogeneous grade {ell_want}, got {sorted(by_grade)}")
        for ell, part in by_grade.items():
            if ell_want is None and ell < 3:
                raise InvariantViolation(f"{name}: grade {ell} term in the grade>=3 part")
            if not verify_class(part, ClassTag(ell, s), K):
                raise InvariantViolation(f"{name}: Fourier order exceeds the budget {s}*K={s * K}")
            cur = blocks.get((ell, s))
            blocks[(ell, s)] = part if cur is None else cur + part

    for s, rs in sorted(_as_block_dict(F0, 1).items()):
        if s < 1:
            raise InvariantViolation("grade-0 blocks start at s=1")
        install(0, s, rs, f"F0[s={s}]")
    for s, rs in sorted(_as_block_dict(F1, 1).items()):
        if s < 1:
            raise InvariantViolation("grade-1 blocks start at s=1")
        install(1, s, rs, f"F1[s={s}]")
    for s, rs in sorted(_as_block_dict(F2, 1).items()):
        if s < 1:
            raise InvariantViolation("grade-2 blocks start at s=1")
        install(2, s, rs, f"F2[s={s}]")
    for s, rs in sorted(_as_block_dict(F_hot, 0).items()):
        install(None, s, rs, f"F_hot[s={s}]")

    lead = blocks.get((2, 1))
    if lead is not None and not average_q(lead).is_zero():
        raise InvariantViolation("grade-2 leading block must have zero angular average")

    E_bar = 0.0
    for (ell, s), g in blocks.items():
        E_bar = max(E_bar, (2.0**ell) * weighted_norm(g, config.domain, 0.0))

    return HamiltonianState(
        dims=dims,
        config=config,
        omega=omega0,
        Omega=Omega0,
        blocks=blocks,
        E_bar=E_bar,
    )
