"""Frequency-domain geometry: resonant strips and survivor-measure bounds.

The normalization is run over a compact box of fast frequencies.  At each
step ``r >= 2`` the frequencies where a new divisor ``k . omega + eps
l . Omega`` (with ``rK < |k|_1 <= (r+1)K`` and ``|l|_1 <= 2``) falls below
``2 gamma / ((r+1)K)^tau`` are excised as a strip.  This module carves
those strips for an affine frequency atlas (exact slab measures in two
fast dimensions), Monte-Carlo measures their union, evaluates the
closed-form bound on the total excised volume, and replays the chain of
domain-control conditions against grid runs of the normalizer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta as _hurwitz_zeta


@dataclass(frozen=True)
class FrequencyAtlas:
    """Affine chart of the frequency geometry.

    ``box`` is the compact set of fast frequencies; the transverse
    frequencies are the affine map ``Omega(omega) = Omega_base +
    Omega_matrix @ (omega - omega_center)``.  ``gamma``, ``tau``, ``K``
    parameterize the excision rule.
    """

    box: tuple[tuple[float, float], ...]
    Omega_matrix: tuple[tuple[float, ...], ...]
    Omega_base: tuple[float, ...]
    omega_center: tuple[float, ...]
    gamma: float
    tau: float
    K: int

    @property
    def n1(self) -> int:
        return len(self.box)

    @property
    def n2(self) -> int:
        return len(self.Omega_base)

    @property
    def J0(self) -> float:
        """Sup-norm bound of the transverse-frequency Jacobian."""
        if not self.Omega_base:
            return 0.0
        return max(sum(abs(a) for a in row) for row in self.Omega_matrix)

    @property
    def diameter(self) -> float:
        """Sup-norm diameter of the box (largest side)."""
        return max(hi - lo for lo, hi in self.box)

    @property
    def volume(self) -> float:
        out = 1.0
        for lo, hi in self.box:
            out *= hi - lo
        return out

    @property
    def b_bar(self) -> float:
        """Lower bound on transverse-frequency gaps over the box (inf if n2 < 2)."""
        if self.n2 < 2:
            return math.inf
        corners = itertools.product(*self.box)
        gap = math.inf
        for w in corners:
            Om = self.Omega(np.asarray(w))
            for i in range(self.n2):
                for j in range(i + 1, self.n2):
                    gap = min(gap, abs(Om[i] - Om[j]))
        return gap

    def Omega(self, omega: np.ndarray) -> np.ndarray:
        """Transverse frequencies at ``omega`` (vectorized over leading axes)."""
        A = np.asarray(self.Omega_matrix, dtype=float).reshape(self.n2, self.n1)
        base = np.asarray(self.Omega_base, dtype=float)
        center = np.asarray(self.omega_center, dtype=float)
        return base + (np.asarray(omega, dtype=float) - center) @ A.T

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return lo + (hi - lo) * rng.random((n, self.n1))


def toy_atlas(gamma: float = 0.1, tau: float = 3.0, K: int = 2) -> FrequencyAtlas:
    """The atlas used by the bundled toy model's geometry checks."""
    return FrequencyAtlas(
        box=((0.95, 1.05), (0.55, 0.65)),
        Omega_matrix=((0.1, 0.05),),
        Omega_base=(0.35,),
        omega_center=(1.0, 0.6),
        gamma=gamma,
        tau=tau,
        K=K,
    )


def resonance_width(r: int, gamma: float, tau: float, K: int) -> float:
    """Excision half-width ``2 gamma / ((r+1) K)^tau`` for step ``r``."""
    return 2.0 * gamma / ((r + 1) * K) ** tau


def fourier_shell(r: int, K: int, n1: int) -> list[tuple[int, ...]]:
    """Canonical Fourier vectors with ``r K < |k|_1 <= (r+1) K``.

    One representative per ``{k, -k}`` pair (first nonzero positive); the
    excision condition is symmetric under ``(k, l) -> (-k, -l)``.
    """
    lo, hi = r * K, (r + 1) * K
    out = []
    for k in itertools.product(range(-hi, hi + 1), repeat=n1):
        if not lo < sum(abs(x) for x in k) <= hi:
            continue
        lead = next((x for x in k if x != 0), 0)
        if lead > 0:
            out.append(k)
    return out


def transverse_range(n2: int) -> list[tuple[int, ...]]:
    """All transverse index vectors with ``|l|_1 <= 2`` (zero included)."""
    return [
        l
        for l in itertools.product(range(-2, 3), repeat=n2)
        if sum(abs(x) for x in l) <= 2
    ] or [()]


# -- exact slab measures ---------------------------------------------------


def _clip_halfplane(poly: list[tuple[float, float]], a: float, b: float, c: float):
    """Keep the part of a convex polygon with ``a x + b y <= c``."""
    out = []
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        d1 = a * x1 + b * y1 - c
        d2 = a * x2 + b * y2 - c
        if d1 <= 0:
            out.append((x1, y1))
        if (d1 < 0 < d2) or (d2 < 0 < d1):
            t = d1 / (d1 - d2)
            out.append((x1 + t * (x2 - x1), y1 + t * (y2 - y1)))
    return out


def _polygon_area(poly) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return abs(s) / 2.0


def slab_measure_box(alpha, beta: float, width: float, box) -> float:
    """Exact measure of ``{omega in box : |alpha . omega + beta| < width}``.

    Closed form in one or two dimensions (interval intersection and convex
    polygon clipping respectively).
    """
    alpha = tuple(float(a) for a in alpha)
    if width <= 0:
        return 0.0
    if len(alpha) == 1:
        (lo, hi), a = box[0], alpha[0]
        if a == 0.0:
            return (hi - lo) if abs(beta) < width else 0.0
        left, right = (-width - beta) / a, (width - beta) / a
        if left > right:
            left, right = right, left
        return max(0.0, min(hi, right) - max(lo, left))
    if len(alpha) != 2:
        raise ValueError("exact slab measure implemented for one or two dimensions")
    (x0, x1), (y0, y1) = box
    poly = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    a, b = alpha
    poly = _clip_halfplane(poly, a, b, width - beta)
    poly = _clip_halfplane(poly, -a, -b, width + beta)
    return _polygon_area(poly)


# -- strips ------------------------------------------------------------------


@dataclass(frozen=True)
class ResonanceStrip:
    """One excised strip ``|alpha . omega + beta| < width`` at step ``r``."""

    r: int
    k: tuple[int, ...]
    l: tuple[int, ...]
    alpha: tuple[float, ...]
    beta: float
    width: float
    measure: float

    def indicator(self, samples: np.ndarray) -> np.ndarray:
        """Boolean membership of an ``(N, n1)`` array of frequency points."""
        vals = samples @ np.asarray(self.alpha) + self.beta
        return np.abs(vals) < self.width


def carve_resonances(
    atlas: FrequencyAtlas,
    epsilon: float,
    r_max: int,
    Omega_shift: dict[int, tuple[float, ...]] | None = None,
    keep_empty: bool = False,
) -> list[ResonanceStrip]:
    """Excised strips for steps ``2 .. r_max`` over the atlas box.

    With the affine atlas map each divisor is exactly affine in ``omega``:
    ``k . omega + eps l . Omega(omega) = (k + eps A^T l) . omega + const``,
    so every strip is a slab with an exact measure.  ``Omega_shift[r]``
    optionally adds a constant correction to the transverse frequencies at
    step ``r`` (e.g. the measured normalization detuning, which is O(eps)
    and rigidly translates the strip).  Strips that do not intersect the
    box are dropped unless ``keep_empty``.
    """
    A = np.asarray(atlas.Omega_matrix, dtype=float).reshape(atlas.n2, atlas.n1)
    center = np.asarray(atlas.omega_center, dtype=float)
    base = np.asarray(atlas.Omega_base, dtype=float)
    strips = []
    for r in range(2, r_max + 1):
        width = resonance_width(r, atlas.gamma, atlas.tau, atlas.K)
        for k in fourier_shell(r, atlas.K, atlas.n1):
            for l in transverse_range(atlas.n2):
                lv = np.asarray(l, dtype=float)
                Om0 = base + (0.0 if Omega_shift is None else np.asarray(Omega_shift.get(r, (0.0,) * atlas.n2)))
                alpha = np.asarray(k, dtype=float) + epsilon * (A.T @ lv)
                beta = epsilon * float(lv @ Om0 - lv @ (A @ center))
                m = slab_measure_box(alpha, beta, width, atlas.box)
                if m > 0.0 or keep_empty:
                    strips.append(
                        ResonanceStrip(r, tuple(k), tuple(l), tuple(alpha), beta, width, m)
                    )
    return strips


def mc_union_measure(
    strips, box, n_samples: int = 1_000_000, seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo measure of a strip union: ``(estimate, standard error)``."""
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    vol = float(np.prod(hi - lo))
    rng = np.random.default_rng(seed)
    samples = lo + (hi - lo) * rng.random((n_samples, len(box)))
    hit = np.zeros(n_samples, dtype=bool)
    for strip in strips:
        hit |= strip.indicator(samples)
    p = float(hit.mean())
    return p * vol, vol * math.sqrt(p * (1.0 - p) / n_samples)


def measure_resonant_volume(atlas: FrequencyAtlas) -> float:
    """Closed-form bound on the total excised volume, linear in ``gamma``.

    ``gamma 2^(n1+4) c_{n2} D^(n1-1) K^-(tau-n1) * sum_{r>=3} r^-(tau-n1+1)``
    with ``c_{n2} = (2 n2 + 2)(2 n2 + 1) / 2`` the number of monomials of
    degree <= 2 in the transverse variables and ``D`` the sup-norm diameter
    of the box.  The tail sum is the Hurwitz zeta ``zeta(tau-n1+1, 3)``;
    convergence needs ``tau > n1``.
    """
    n1, n2 = atlas.n1, atlas.n2
    if atlas.tau <= n1:
        raise ValueError("the excision exponent must exceed the number of fast frequencies")
    c_n2 = (2 * n2 + 2) * (2 * n2 + 1) / 2
    tail = float(_hurwitz_zeta(atlas.tau - n1 + 1, 3))
    return (
        atlas.gamma
        * 2.0 ** (n1 + 4)
        * c_n2
        * atlas.diameter ** (n1 - 1)
        * atlas.K ** -(atlas.tau - n1)
        * tail
    )


def h_sequence(atlas: FrequencyAtlas, sigma: float, r_max: int) -> list[float]:
    """Complex-extension radii ``h_0, .., h_rmax``; geometric with ratio ``2^-(tau+2)``.

    ``h_0 = min(gamma eta / (4 K^tau), b_bar / (4 J0))`` with
    ``eta = min(1/K, sigma)``; the second term drops out when the atlas has
    fewer than two transverse frequencies or a constant map.
    """
    eta = min(1.0 / atlas.K, sigma)
    h0_terms = [atlas.gamma * eta / (4.0 * atlas.K**atlas.tau)]
    if atlas.J0 > 0 and math.isfinite(atlas.b_bar):
        h0_terms.append(atlas.b_bar / (4.0 * atlas.J0))
    h = [min(h0_terms)]
    for _ in range(r_max):
        h.append(h[-1] / 2.0 ** (atlas.tau + 2.0))
    return h


# -- grid-backed frequency maps ---------------------------------------------


class GridFrequencyMap:
    """Normalization frequency maps tabulated on a grid over the atlas box.

    Runs the full normalization at each grid node (fast frequencies from
    the node, transverse frequencies from the atlas map) and stores
    ``omega^(r)`` and ``Omega^(r)`` per node.  Provides the inverse map by
    fixed-point iteration on the interpolated detuning, Lipschitz and
    dilation diagnostics, and the domain-control condition table.
    """

    def __init__(self, atlas: FrequencyAtlas, model_spec, grid_n: int = 5, r_max: int | None = None):
        from .models import ModelSpec  # local import to avoid a cycle at module load
        from .normalizer import normalize

        self.atlas = atlas
        self.epsilon = model_spec.config.epsilon
        self.sigma = model_spec.config.domain.sigma
        self.r_max = model_spec.config.r_max if r_max is None else r_max
        axes = [np.linspace(lo, hi, grid_n) for lo, hi in atlas.box]
        self.axes = axes
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        self.nodes = nodes
        shape = nodes.shape[:-1]
        self.omega_r = np.zeros((self.r_max + 1,) + shape + (atlas.n1,))
        self.Omega_r = np.zeros((self.r_max + 1,) + shape + (atlas.n2,))
        self.a_r = np.full((self.r_max + 1,) + shape, np.inf)
        for idx in np.ndindex(shape):
            w0 = tuple(float(x) for x in nodes[idx])
            W0 = tuple(float(x) for x in atlas.Omega(np.asarray(w0)))
            spec = ModelSpec(
                name=model_spec.name,
                dims=model_spec.dims,
                omega0=w0,
                Omega0=W0,
                config=model_spec.config,
                F0=model_spec.F0,
                F1=model_spec.F1,
                F2=model_spec.F2,
                F_hot=model_spec.F_hot,
            )
            state = spec.prepare()
            final, _, reports = normalize(state, r_max=self.r_max)
            self.omega_r[(0,) + idx] = w0
            self.Omega_r[(0,) + idx] = W0
            omega_hist = [w0]
            Omega_hist = [W0]
            for rep in reports:
                omega_hist.append(tuple(o + d for o, d in zip(omega_hist[-1], rep.domega)))
                Omega_hist.append(tuple(O + d for O, d in zip(Omega_hist[-1], rep.dOmega)))
                self.a_r[(rep.r,) + idx] = rep.a_r
            for r in range(1, self.r_max + 1):
                self.omega_r[(r,) + idx] = omega_hist[r]
                self.Omega_r[(r,) + idx] = Omega_hist[r]

    # -- interpolation ----------------------------------------------------

    def _interp(self, values: np.ndarray):
        from scipy.interpolate import RegularGridInterpolator

        return RegularGridInterpolator(
            tuple(self.axes), values, method="linear", bounds_error=False, fill_value=None
        )

    def detuning(self, r: int, samples: np.ndarray) -> np.ndarray:
        """Interpolated ``omega^(r) - omega^(0)`` at original-frequency points."""
        delta = self.omega_r[r] - self.omega_r[0]
        out = np.empty_like(np.atleast_2d(samples), dtype=float)
        for j in range(self.atlas.n1):
            out[:, j] = self._interp(delta[..., j])(samples)
        return out

    def invert(self, r: int, samples: np.ndarray, iterations: int = 3) -> np.ndarray:
        """Inverse frequency map: original frequencies whose step-``r`` value is given.

        Fixed-point iteration ``phi = omega - delta(phi)``; the detuning is
        O(eps^2), so a couple of iterations reach rounding level.
        """
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        phi = samples.copy()
        for _ in range(iterations):
            phi = samples - self.detuning(r, phi)
        return phi

    def Omega_pullback(self, r: int, samples: np.ndarray) -> np.ndarray:
        """``Omega^(r)`` composed with the inverse map, at step-``r`` frequency points."""
        phi = self.invert(r, samples)
        out = np.empty((phi.shape[0], self.atlas.n2))
        for j in range(self.atlas.n2):
            out[:, j] = self._interp(self.Omega_r[r][..., j])(phi)
        return out

    def lipschitz_detuning(self, r: int) -> float:
        """Max sup-norm of the detuning Jacobian by grid differences."""
        delta = self.omega_r[r] - self.omega_r[0]
        worst = 0.0
        for j in range(self.atlas.n1):
            grads = np.gradient(delta[..., j], *[ax for ax in self.axes], edge_order=1)
            rowsum = sum(np.abs(g) for g in grads)
            worst = max(worst, float(rowsum.max()))
        return worst

    def condition_table(self, A_script: float) -> list[dict]:
        """Replay the domain-control inequality chain against the grid data.

        Produces one row per condition and step: detuning magnitudes vs
        their assumed bounds, the contraction ratios ``mu``, the Lipschitz
        chains for the inverse map and the pulled-back transverse
        frequencies, the gap condition, the extension-radius rule, and the
        survivor-divisor floor.  All rows are diagnostics: ``ok`` reports
        whether the inequality held, nothing is raised.
        """
        atlas = self.atlas
        eps, sigma = self.epsilon, self.sigma
        h = h_sequence(atlas, sigma, self.r_max)
        rows: list[dict] = []

        def row(tag, r, lhs, rhs):
            rows.append(
                {
                    "tag": tag,
                    "step": r,
                    "lhs": lhs,
                    "rhs": rhs,
                    "ok": bool(lhs <= rhs),
                }
            )

        def powx(base, exponent):
            # overflow-safe power: far above threshold the products explode,
            # and the diagnostic rows should read inf / FAIL, not raise
            try:
                return base**exponent
            except OverflowError:
                return math.inf

        def expm1x(x):
            try:
                return math.expm1(x)
            except OverflowError:
                return math.inf

        # measured frequency increments vs the assumed per-step bounds
        for r in range(1, self.r_max + 1):
            dom = float(np.abs(self.omega_r[r] - self.omega_r[r - 1]).max())
            dOm = float(np.abs(self.Omega_r[r] - self.Omega_r[r - 1]).max())
            if r == 1:
                row("step1-fast-shift-zero", r, dom, 0.0)
                row("step1-transverse-shift-zero", r, dOm, 0.0)
            else:
                row("fast-shift", r, dom, sigma * powx(eps * A_script, r))
                row("transverse-shift", r, dOm, eps ** (r - 1) * powx(A_script, r))

        J_bar, J = 0.0, atlas.J0
        mu_tilde1 = sum(
            4.0 * sigma * powx(eps * A_script, r) / h[r - 1] for r in range(2, self.r_max + 1)
        )
        for r in range(2, self.r_max + 1):
            mu = 4.0 * sigma * powx(eps * A_script, r) / h[r - 1]
            row("inverse-map-contraction", r, mu, min(1.0, eps * sigma) / 2.0**r)
            J_bar = J_bar * (1.0 + mu) + mu
            row("inverse-map-lipschitz", r, J_bar, min(expm1x(mu_tilde1), eps * sigma))
            J = (J + mu / (2.0 * eps * sigma)) * (1.0 + mu)
            row("pullback-lipschitz", r, J, 2.0 * atlas.J0 + 1.0)
            if math.isfinite(atlas.b_bar):
                row(
                    "transverse-gap",
                    r,
                    powx(eps * A_script, r - 1),
                    atlas.b_bar / (2.0 ** (r + 1) * A_script * (1.0 + eps * J * sigma)),
                )
            row(
                "extension-radius",
                r,
                h[r],
                min(
                    h[r - 1] / 4.0,
                    atlas.gamma
                    / (
                        (max((r + 1) * atlas.K / 2.0, 1.0 / sigma) + eps * J)
                        * 2.0 ** (r + 1)
                        * ((r + 1) * atlas.K) ** atlas.tau
                    ),
                ),
            )
            # survivor floor: measured divisor minima on grid nodes outside the
            # carved strips must clear the excision threshold less the margin
            # spent on the complex extension
            strips = carve_resonances(atlas, eps, r)
            nodes_flat = self.nodes.reshape(-1, atlas.n1)
            outside = np.ones(len(nodes_flat), dtype=bool)
            for strip in strips:
                outside &= ~strip.indicator(nodes_flat)
            if outside.any():
                floor = atlas.gamma / ((r + 1) * atlas.K) ** atlas.tau
                margin = (r + 1) * atlas.K * h[r] + 2.0 * eps * J * h[r]
                measured = float(self.a_r[r].reshape(-1)[outside].min())
                row("survivor-divisor-floor", r, floor - margin, measured)

        # determinant dilation of the inverse map stays below 2
        row("jacobian-dilation-threshold", 0, eps, math.log(2.0) / (sigma * atlas.n1**2))
        for r in range(2, self.r_max + 1):
            lip = self.lipschitz_detuning(r)
            row("measured-detuning-lipschitz", r, lip, eps * sigma)
        return rows
