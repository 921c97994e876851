"""Truncated Taylor-Fourier series over action-angle and elliptic variables.

Series live on the phase space ``(p, q, z, zeta)`` where ``p`` are ``n1``
actions, ``q`` the conjugate angles, and ``(z, zeta)`` are ``n2`` complexified
elliptic pairs with ``zeta_j = i * conj(z_j)`` on the real slice.  A term is

    c * p^m * z^l * zeta^lbar * exp(i k . q)

indexed by the integer multi-exponents ``(m, l, lbar, k)``.  The grade of a
term is ``2|m| + |l| + |lbar|``; a homogeneous block of grade ``ell`` whose
Fourier modes satisfy ``|k|_1 <= s*K`` forms the class used throughout the
normalization: the Poisson bracket of two blocks of grades ``ell, ell'`` and
Fourier budgets ``s*K, s'*K`` lands in grade ``ell + ell' - 2`` with budget
``(s + s')*K``.

Angular-momentum selection rule: a term is admissible when the sum of the
Fourier indices equals the difference of the elliptic exponents,
``sum(k) == sum(l) - sum(lbar)``.  All constructors and operations preserve
the rule; `characteristics` exposes it per key and `verify_class` per series.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, NamedTuple


class InvariantViolation(RuntimeError):
    """A structural invariant (selection rule, class membership) failed."""


class Dimensions(NamedTuple):
    """Number of action-angle pairs ``n1`` and elliptic pairs ``n2``."""

    n1: int
    n2: int


class MonomialKey(NamedTuple):
    """Exponents of one term: actions, elliptic, conjugate-elliptic, Fourier."""

    m: tuple[int, ...]
    l: tuple[int, ...]
    lbar: tuple[int, ...]
    k: tuple[int, ...]


class ClassTag(NamedTuple):
    """Class label: grade ``ell`` and Fourier budget multiplier ``s``."""

    ell: int
    s: int


class DomainParams(NamedTuple):
    """Analyticity radii: action radius, elliptic radius, angle strip width."""

    rho: float
    R: float
    sigma: float


class TruncationCounter:
    """Mutable tally of terms dropped by grade or Fourier capping."""

    __slots__ = ("dropped",)

    def __init__(self) -> None:
        self.dropped = 0

    def __repr__(self) -> str:  # pragma: no cover
        return f"TruncationCounter(dropped={self.dropped})"


def grade(key: MonomialKey) -> int:
    """Polynomial grade ``2|m| + |l| + |lbar|`` of a monomial key."""
    return 2 * sum(key.m) + sum(key.l) + sum(key.lbar)


def characteristics(key: MonomialKey) -> tuple[int, int, bool]:
    """Selection-rule characteristics of a monomial key.

    Returns
    -------
    (cM, cI, ok) : tuple
        ``cM = sum(l) - sum(lbar)``, ``cI = sum(k)``, and ``ok = (cM == cI)``.
        Terms with ``ok`` false cannot appear in a real trigonometric
        polynomial of the underlying variables and are rejected on input.
    """
    cM = sum(key.l) - sum(key.lbar)
    cI = sum(key.k)
    return cM, cI, cM == cI


def _tadd(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(x + y for x, y in zip(a, b))


def _tdec(a: tuple[int, ...], j: int) -> tuple[int, ...]:
    return a[:j] + (a[j] - 1,) + a[j + 1 :]


class TaylorFourierSeries:
    """Sparse complex-coefficient series on ``(p, q, z, zeta)``.

    Parameters
    ----------
    dims : Dimensions
        Phase-space dimensions ``(n1, n2)``.
    terms : dict, optional
        Mapping ``MonomialKey -> complex``.  Keys are stored as given; exact
        zero coefficients are dropped.

    Notes
    -----
    Instances are treated as immutable values by the rest of the package;
    arithmetic returns new objects.  Coefficients are double-precision
    complex numbers.  The bookkeeping power of the perturbation parameter is
    *not* stored in coefficients; it is the block index ``s`` kept by the
    callers that own these series.
    """

    __slots__ = ("dims", "terms")

    def __init__(self, dims: Dimensions, terms: dict[MonomialKey, complex] | None = None):
        self.dims = Dimensions(*dims)
        self.terms: dict[MonomialKey, complex] = {}
        if terms:
            for key, c in terms.items():
                if c != 0:
                    self.terms[MonomialKey(*key)] = complex(c)

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, dims: Dimensions) -> "TaylorFourierSeries":
        return cls(dims)

    @classmethod
    def monomial(
        cls,
        dims: Dimensions,
        c: complex,
        m: Iterable[int] = (),
        l: Iterable[int] = (),
        lbar: Iterable[int] = (),
        k: Iterable[int] = (),
    ) -> "TaylorFourierSeries":
        """Single-term series; omitted exponent groups default to zeros."""
        n1, n2 = dims
        mm = tuple(m) or (0,) * n1
        ll = tuple(l) or (0,) * n2
        lb = tuple(lbar) or (0,) * n2
        kk = tuple(k) or (0,) * n1
        if len(mm) != n1 or len(kk) != n1 or len(ll) != n2 or len(lb) != n2:
            raise ValueError("exponent length does not match dims")
        return cls(dims, {MonomialKey(mm, ll, lb, kk): complex(c)})

    # -- basic protocol -----------------------------------------------

    def copy(self) -> "TaylorFourierSeries":
        out = TaylorFourierSeries(self.dims)
        out.terms = dict(self.terms)
        return out

    def is_zero(self) -> bool:
        return not self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TaylorFourierSeries):
            return NotImplemented
        return self.dims == other.dims and self.terms == other.terms

    def __repr__(self) -> str:  # pragma: no cover
        return f"TaylorFourierSeries(n1={self.dims.n1}, n2={self.dims.n2}, nterms={len(self.terms)})"

    def __add__(self, other: "TaylorFourierSeries") -> "TaylorFourierSeries":
        out = self.copy()
        for key, c in other.terms.items():
            v = out.terms.get(key, 0.0) + c
            if v == 0:
                out.terms.pop(key, None)
            else:
                out.terms[key] = v
        return out

    def __sub__(self, other: "TaylorFourierSeries") -> "TaylorFourierSeries":
        out = self.copy()
        for key, c in other.terms.items():
            v = out.terms.get(key, 0.0) - c
            if v == 0:
                out.terms.pop(key, None)
            else:
                out.terms[key] = v
        return out

    def __neg__(self) -> "TaylorFourierSeries":
        out = TaylorFourierSeries(self.dims)
        out.terms = {key: -c for key, c in self.terms.items()}
        return out

    def scaled(self, c: complex) -> "TaylorFourierSeries":
        if c == 0:
            return TaylorFourierSeries(self.dims)
        out = TaylorFourierSeries(self.dims)
        out.terms = {key: v * c for key, v in self.terms.items()}
        return out

    def __mul__(self, other):
        if isinstance(other, TaylorFourierSeries):
            return self.product(other)
        return self.scaled(other)

    __rmul__ = __mul__

    def product(self, other: "TaylorFourierSeries") -> "TaylorFourierSeries":
        """Full series product (grades add, Fourier vectors add)."""
        out = TaylorFourierSeries(self.dims)
        acc = out.terms
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                key = MonomialKey(
                    _tadd(k1.m, k2.m), _tadd(k1.l, k2.l), _tadd(k1.lbar, k2.lbar), _tadd(k1.k, k2.k)
                )
                v = acc.get(key, 0.0) + c1 * c2
                if v == 0:
                    acc.pop(key, None)
                else:
                    acc[key] = v
        return out

    # -- calculus ------------------------------------------------------

    def derivative(self, var: str, j: int) -> "TaylorFourierSeries":
        """Partial derivative with respect to ``p_j``, ``q_j``, ``z_j`` or ``zeta_j``."""
        out = TaylorFourierSeries(self.dims)
        acc = out.terms
        if var == "q":
            for key, c in self.terms.items():
                if key.k[j]:
                    acc[key] = c * (1j * key.k[j])
        elif var == "p":
            for key, c in self.terms.items():
                e = key.m[j]
                if e:
                    acc[MonomialKey(_tdec(key.m, j), key.l, key.lbar, key.k)] = c * e
        elif var == "z":
            for key, c in self.terms.items():
                e = key.l[j]
                if e:
                    acc[MonomialKey(key.m, _tdec(key.l, j), key.lbar, key.k)] = c * e
        elif var == "zeta":
            for key, c in self.terms.items():
                e = key.lbar[j]
                if e:
                    acc[MonomialKey(key.m, key.l, _tdec(key.lbar, j), key.k)] = c * e
        else:
            raise ValueError(f"unknown variable {var!r}")
        return out

    def evaluate(self, p, q, z, zeta) -> complex:
        """Numeric value at a phase-space point (complex arithmetic)."""
        total = 0.0 + 0.0j
        for key, c in self.terms.items():
            v = c
            for e, x in zip(key.m, p):
                if e:
                    v *= x**e
            for e, x in zip(key.l, z):
                if e:
                    v *= x**e
            for e, x in zip(key.lbar, zeta):
                if e:
                    v *= x**e
            phase = sum(kj * qj for kj, qj in zip(key.k, q))
            if phase:
                v *= complex(math.cos(phase), math.sin(phase))
            total += v
        return total

    # -- structure queries --------------------------------------------

    def grades(self) -> set[int]:
        return {grade(key) for key in self.terms}

    def max_fourier_order(self) -> int:
        return max((sum(abs(x) for x in key.k) for key in self.terms), default=0)

    def map_coefficients(self, fn: Callable[[MonomialKey, complex], complex]) -> "TaylorFourierSeries":
        out = TaylorFourierSeries(self.dims)
        for key, c in self.terms.items():
            v = fn(key, c)
            if v != 0:
                out.terms[key] = v
        return out


def poisson_bracket(
    g: TaylorFourierSeries,
    g2: TaylorFourierSeries,
    ell_max: int | None = None,
    counter: TruncationCounter | None = None,
) -> TaylorFourierSeries:
    """Poisson bracket ``{g, g2}`` on ``(p, q, z, zeta)``.

    Computes ``sum_j (dg/dq_j dg2/dp_j - dg/dp_j dg2/dq_j)
    + sum_j (dg/dzeta_j dg2/dz_j - dg/dz_j dg2/dzeta_j)``.

    Parameters
    ----------
    ell_max : int, optional
        Grade cap.  Every contribution of a term pair has grade
        ``grade(t1) + grade(t2) - 2``; pairs above the cap are dropped and
        tallied in ``counter``.
    counter : TruncationCounter, optional
        Receives the number of dropped nonzero contributions.

    Returns
    -------
    TaylorFourierSeries
    """
    if g.dims != g2.dims:
        raise ValueError("dimension mismatch")
    n1, n2 = g.dims
    out = TaylorFourierSeries(g.dims)
    acc = out.terms
    g2items = list(g2.terms.items())
    for k1, c1 in g.terms.items():
        grade1 = 2 * sum(k1.m) + sum(k1.l) + sum(k1.lbar)
        for k2, c2 in g2items:
            pair_grade = grade1 + 2 * sum(k2.m) + sum(k2.l) + sum(k2.lbar) - 2
            capped = ell_max is not None and pair_grade > ell_max
            cc = c1 * c2
            for j in range(n1):
                f = k1.k[j] * k2.m[j] - k1.m[j] * k2.k[j]
                if f == 0:
                    continue
                if capped:
                    if counter is not None:
                        counter.dropped += 1
                    continue
                mm = _tadd(k1.m, k2.m)
                key = MonomialKey(_tdec(mm, j), _tadd(k1.l, k2.l), _tadd(k1.lbar, k2.lbar), _tadd(k1.k, k2.k))
                v = acc.get(key, 0.0) + cc * (1j * f)
                if v == 0:
                    acc.pop(key, None)
                else:
                    acc[key] = v
            for j in range(n2):
                f = k1.lbar[j] * k2.l[j] - k1.l[j] * k2.lbar[j]
                if f == 0:
                    continue
                if capped:
                    if counter is not None:
                        counter.dropped += 1
                    continue
                ll = _tadd(k1.l, k2.l)
                lb = _tadd(k1.lbar, k2.lbar)
                key = MonomialKey(_tadd(k1.m, k2.m), _tdec(ll, j), _tdec(lb, j), _tadd(k1.k, k2.k))
                v = acc.get(key, 0.0) + cc * f
                if v == 0:
                    acc.pop(key, None)
                else:
                    acc[key] = v
    return out


def average_q(g: TaylorFourierSeries) -> TaylorFourierSeries:
    """Angular average: the sub-series of terms with zero Fourier vector."""
    out = TaylorFourierSeries(g.dims)
    out.terms = {key: c for key, c in g.terms.items() if not any(key.k)}
    return out


def oscillating_part(g: TaylorFourierSeries) -> TaylorFourierSeries:
    """Complement of `average_q`: terms with a nonzero Fourier vector."""
    out = TaylorFourierSeries(g.dims)
    out.terms = {key: c for key, c in g.terms.items() if any(key.k)}
    return out


def weighted_norm(g: TaylorFourierSeries, d: DomainParams, shrink: float = 0.0) -> float:
    """Coefficient-majorant norm on the shrunk domain.

    ``sum |c| * rho'^|m| * R'^(|l|+|lbar|) * exp(sigma' |k|_1)`` with
    ``(rho', R', sigma') = (1 - shrink) * (rho, R, sigma)``.  Monotone
    decreasing in ``shrink``; submultiplicative for products.

    Parameters
    ----------
    g : TaylorFourierSeries
    d : DomainParams
        Base radii.
    shrink : float
        Total restriction fraction in ``[0, 1)``.
    """
    if not 0.0 <= shrink < 1.0:
        raise ValueError("shrink must lie in [0, 1)")
    f = 1.0 - shrink
    rho, R, sigma = f * d.rho, f * d.R, f * d.sigma
    total = 0.0
    for key, c in g.terms.items():
        w = abs(c)
        sm = sum(key.m)
        if sm:
            w *= rho**sm
        sl = sum(key.l) + sum(key.lbar)
        if sl:
            w *= R**sl
        sk = sum(abs(x) for x in key.k)
        if sk:
            w *= math.exp(sigma * sk)
        total += w
    return total


def truncate(
    g: TaylorFourierSeries,
    ell_max: int | None = None,
    k_max: int | None = None,
    counter: TruncationCounter | None = None,
) -> TaylorFourierSeries:
    """Drop terms with grade above ``ell_max`` or ``|k|_1`` above ``k_max``."""
    out = TaylorFourierSeries(g.dims)
    for key, c in g.terms.items():
        if ell_max is not None and grade(key) > ell_max:
            if counter is not None:
                counter.dropped += 1
            continue
        if k_max is not None and sum(abs(x) for x in key.k) > k_max:
            if counter is not None:
                counter.dropped += 1
            continue
        out.terms[key] = c
    return out


def verify_class(g: TaylorFourierSeries, tag: ClassTag | tuple[int, int], K: int) -> bool:
    """Membership test for the graded class with Fourier budget ``s*K``.

    True iff every term has grade exactly ``tag.ell``, Fourier order
    ``|k|_1 <= tag.s * K``, and satisfies the selection rule.  The zero
    series belongs to every class.
    """
    ell, s = tag
    budget = s * K
    for key in g.terms:
        if grade(key) != ell:
            return False
        if sum(abs(x) for x in key.k) > budget:
            return False
        cM, cI, ok = characteristics(key)
        if not ok:
            return False
    return True


def assert_selection_rule(g: TaylorFourierSeries, where: str = "") -> None:
    """Raise `InvariantViolation` if any term breaks the selection rule."""
    for key in g.terms:
        cM, cI, ok = characteristics(key)
        if not ok:
            raise InvariantViolation(
                f"selection rule violated{' in ' + where if where else ''}: "
                f"key={key}, cM={cM}, cI={cI}"
            )


def reality_defect(g: TaylorFourierSeries) -> float:
    """Max deviation from the conjugation pairing of a real-valued series.

    A series is real on the slice ``zeta = i conj(z)`` iff for every term
    ``(m, l, lbar, k)`` the partner ``(m, lbar, l, -k)`` carries coefficient
    ``conj(c) * (-i)^(|l|+|lbar|)``.  Returns the largest absolute mismatch,
    0.0 for an exactly real series.
    """
    worst = 0.0
    for key, c in g.terms.items():
        partner = MonomialKey(key.m, key.lbar, key.l, tuple(-x for x in key.k))
        want = c.conjugate() * (-1j) ** (sum(key.l) + sum(key.lbar))
        have = g.terms.get(partner, 0.0)
        worst = max(worst, abs(have - want))
    return worst


# -- plain-text round trip --------------------------------------------

def _fmt_vec(v: tuple[int, ...]) -> str:
    return ",".join(str(x) for x in v) if v else "-"


def _parse_vec(s: str) -> tuple[int, ...]:
    return () if s == "-" else tuple(int(x) for x in s.split(","))


def write_series(path: str, g: TaylorFourierSeries) -> None:
    """Write a series to a deterministic plain-text file."""
    lines = [f"tfseries 1", f"dims {g.dims.n1} {g.dims.n2}"]
    for key in sorted(g.terms):
        c = g.terms[key]
        lines.append(
            f"term {_fmt_vec(key.m)} {_fmt_vec(key.l)} {_fmt_vec(key.lbar)} "
            f"{_fmt_vec(key.k)} {c.real!r} {c.imag!r}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_series(path: str) -> TaylorFourierSeries:
    """Read a series written by `write_series`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != ["tfseries", "1"]:
        raise ValueError(f"{path}: not a tfseries v1 file")
    tag, n1, n2 = lines[1].split()
    if tag != "dims":
        raise ValueError(f"{path}: missing dims line")
    g = TaylorFourierSeries(Dimensions(int(n1), int(n2)))
    for ln in lines[2:]:
        parts = ln.split()
        if parts[0] != "term" or len(parts) != 7:
            raise ValueError(f"{path}: bad term line {ln!r}")
        key = MonomialKey(
            _parse_vec(parts[1]), _parse_vec(parts[2]), _parse_vec(parts[3]), _parse_vec(parts[4])
        )
        g.terms[key] = complex(float(parts[5]), float(parts[6]))
    return g
