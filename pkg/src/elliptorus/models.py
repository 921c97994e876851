"""Model definitions: bundled test systems and the ``.ham`` file format.

A model is a real-coordinate Hamiltonian expansion around an approximately
invariant torus: frequency vectors, a domain, truncation orders, and the
perturbation blocks ``F0`` (angle-only), ``F1`` (transverse-linear), ``F2``
(quadratic) plus higher-grade completions, all given as `RealSeries` in
actions, angles and Cartesian transverse pairs.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field
from pathlib import Path

from .hamiltonian import (
    COS,
    SIN,
    HamiltonianState,
    RealSeries,
    RunConfig,
    prepare_hamiltonian,
)
from .series import Dimensions, DomainParams


@dataclass
class ModelSpec:
    """A Hamiltonian model in real coordinates plus run defaults.

    ``F0``, ``F1``, ``F2`` are the grade-0/1/2 coupling blocks (bookkeeping
    order ``s = 1``).  ``F_hot`` maps bookkeeping order ``s`` to the
    grade >= 3 part carrying weight ``eps^s``; ``s = 0`` is the
    perturbation-free completion (e.g. the quadratic action terms).
    """

    name: str
    dims: Dimensions
    omega0: tuple[float, ...]
    Omega0: tuple[float, ...]
    config: RunConfig
    F0: RealSeries
    F1: RealSeries
    F2: RealSeries
    F_hot: dict[int, RealSeries] = field(default_factory=dict)

    def prepare(self, config: RunConfig | None = None) -> HamiltonianState:
        """Complexify and split the model into a ready-to-normalize state."""
        return prepare_hamiltonian(
            self.F0, self.F1, self.F2, self.F_hot, self.omega0, self.Omega0, config or self.config
        )


def toy_model() -> ModelSpec:
    """Two angles, one transverse pair, golden-ratio base frequencies.

    The perturbation carries low harmonics in each grade-0/1/2 slot, an
    action-quadratic completion at weight one plus a grade-3 coupling at
    first order, and a golden frequency vector keeping every divisor far
    from zero at low orders.  All grades are <= 4 and brackets never raise
    the grade past ``ell_max = 6``, so a run truncates nothing.  The
    coefficient sizes are tuned so the on-torus defect contracts by close
    to a factor ``epsilon`` per step (measured 0.8e-3 to 1.2e-3 at
    ``epsilon = 1e-3``), making the order-by-order decay cleanly visible.
    """
    dims = Dimensions(n1=2, n2=1)
    omega0 = (1.0, 0.6180339887498949)
    Omega0 = (0.35,)

    F0 = RealSeries(dims)
    F0.add_term(0.3, (0, 0), (0,), (0,), (1, -1), COS)

    F1 = RealSeries(dims)
    # 0.3 (x1 cos q1 - y1 sin q1) + 0.15 (x1 cos q2 - y1 sin q2)
    F1.add_term(0.3, (0, 0), (1,), (0,), (1, 0), COS)
    F1.add_term(-0.3, (0, 0), (0,), (1,), (1, 0), SIN)
    F1.add_term(0.15, (0, 0), (1,), (0,), (0, 1), COS)
    F1.add_term(-0.15, (0, 0), (0,), (1,), (0, 1), SIN)

    F2 = RealSeries(dims)
    # 0.25 * ((x1^2 - y1^2) cos 2 q1 - 2 x1 y1 sin 2 q1)
    F2.add_term(0.25, (0, 0), (2,), (0,), (2, 0), COS)
    F2.add_term(-0.25, (0, 0), (0,), (2,), (2, 0), COS)
    F2.add_term(-0.5, (0, 0), (1,), (1,), (2, 0), SIN)
    # 0.15 * p1 cos(q1 - q2): action-linear, zero average in the angles
    F2.add_term(0.15, (1, 0), (0,), (0,), (1, -1), COS)

    H_free = RealSeries(dims)
    # action-quadratic completion 0.18 p1^2 + 0.18 p2^2 + 0.05 p1 p2, weight eps^0
    H_free.add_term(0.18, (2, 0), (0,), (0,), (0, 0), COS)
    H_free.add_term(0.18, (0, 2), (0,), (0,), (0, 0), COS)
    H_free.add_term(0.05, (1, 1), (0,), (0,), (0, 0), COS)

    H_coup = RealSeries(dims)
    # 0.1 * p1 (x1 cos q1 - y1 sin q1), weight eps^1
    H_coup.add_term(0.1, (1, 0), (1,), (0,), (1, 0), COS)
    H_coup.add_term(-0.1, (1, 0), (0,), (1,), (1, 0), SIN)

    config = RunConfig(
        domain=DomainParams(rho=0.4, R=0.35, sigma=0.5),
        K=2,
        ell_max=6,
        s_max=4,
        epsilon=1.0e-3,
        r_max=3,
    )
    return ModelSpec(
        name="toy",
        dims=dims,
        omega0=omega0,
        Omega0=Omega0,
        config=config,
        F0=F0,
        F1=F1,
        F2=F2,
        F_hot={0: H_free, 1: H_coup},
    )


# -- file format ----------------------------------------------------------

_FLAVORS = {COS: "cos", SIN: "sin"}
_FLAVORS_IN = {v: k for k, v in _FLAVORS.items()}


def _vec(values) -> str:
    return ",".join(str(v) for v in values) if len(values) else "-"


def _unvec(text: str) -> tuple[int, ...]:
    return () if text == "-" else tuple(int(t) for t in text.split(","))


def save_model(spec: ModelSpec, path: str | Path) -> None:
    """Write a model to the line-oriented ``ham-model 1`` text format."""
    lines = [
        "ham-model 1",
        f"name {spec.name}",
        f"dims {spec.dims.n1} {spec.dims.n2}",
        "omega " + " ".join(repr(float(w)) for w in spec.omega0),
        "Omega " + (" ".join(repr(float(W)) for W in spec.Omega0) or "-"),
        f"domain {spec.config.domain.rho!r} {spec.config.domain.R!r} {spec.config.domain.sigma!r}",
        f"K {spec.config.K}",
        f"ell_max {spec.config.ell_max}",
        f"s_max {spec.config.s_max}",
        f"epsilon {spec.config.epsilon!r}",
        f"r_max {spec.config.r_max}",
    ]

    def emit(label: str, series: RealSeries) -> None:
        terms = sorted(series.terms.items(), key=lambda kv: kv[0])
        lines.append(f"block {label} {len(terms)}")
        for key, coeff in terms:
            lines.append(
                f"{coeff!r} {_vec(key.m)} {_vec(key.a)} {_vec(key.b)} {_vec(key.k)} {_FLAVORS[key.flavor]}"
            )

    emit("F0", spec.F0)
    emit("F1", spec.F1)
    emit("F2", spec.F2)
    for s in sorted(spec.F_hot):
        emit(f"hot{s}", spec.F_hot[s])
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> ModelSpec:
    """Read a model written by `save_model`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ham-model 1":
        raise ValueError(f"{path}: not a ham-model file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("block "):
        key, _, value = lines[i].partition(" ")
        header[key] = value.strip()
        i += 1
    n1, n2 = (int(t) for t in header["dims"].split())
    dims = Dimensions(n1, n2)
    omega0 = tuple(float(t) for t in header["omega"].split())
    Omega0 = () if header["Omega"] == "-" else tuple(float(t) for t in header["Omega"].split())
    rho, R, sigma = (float(t) for t in header["domain"].split())
    config = RunConfig(
        domain=DomainParams(rho, R, sigma),
        K=int(header["K"]),
        ell_max=int(header["ell_max"]),
        s_max=int(header["s_max"]),
        epsilon=float(header["epsilon"]),
        r_max=int(header["r_max"]),
    )

    blocks: dict[str, RealSeries] = {}
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if not line.startswith("block "):
            raise ValueError(f"{path}: expected block header, got {line!r}")
        _, label, count = line.split()
        series = RealSeries(dims)
        for _ in range(int(count)):
            coeff, m, a, b, k, flavor = lines[i].split()
            i += 1
            series.add_term(
                float(coeff), _unvec(m), _unvec(a), _unvec(b), _unvec(k), _FLAVORS_IN[flavor]
            )
        blocks[label] = series

    F_hot = {int(label[3:]): s for label, s in blocks.items() if label.startswith("hot")}
    stray = set(blocks) - {"F0", "F1", "F2"} - {f"hot{s}" for s in F_hot}
    if stray:
        raise ValueError(f"{path}: unknown block labels {sorted(stray)}")
    return ModelSpec(
        name=header.get("name", Path(path).stem),
        dims=dims,
        omega0=omega0,
        Omega0=Omega0,
        config=config,
        F0=blocks.get("F0", RealSeries(dims)),
        F1=blocks.get("F1", RealSeries(dims)),
        F2=blocks.get("F2", RealSeries(dims)),
        F_hot=F_hot,
    )


def bundled_model(name: str) -> ModelSpec:
    """Load a model shipped inside the package (currently just ``toy``)."""
    resource = importlib.resources.files("elliptorus.data").joinpath(f"{name}.ham")
    with importlib.resources.as_file(resource) as path:
        return load_model(path)
