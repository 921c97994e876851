"""Shared fixtures: the bundled toy run and a two-pair variant model.

The toy pipeline is expensive enough (a second or two) that every module
shares one session-scoped run.  The two-pair variant exists because a
single transverse pair leaves the diagonalizing stage structurally empty;
with two pairs driven by the same harmonic the stage has real work to do,
so its defining equation gets exercised.
"""

from __future__ import annotations

import pytest

from elliptorus.hamiltonian import COS, SIN, RealSeries, RunConfig
from elliptorus.models import ModelSpec, toy_model
from elliptorus.reports import run_pipeline
from elliptorus.series import Dimensions, DomainParams


def pair_model() -> ModelSpec:
    """Two angles, two transverse pairs sharing the q1 harmonic.

    Both Cartesian pairs couple to ``cos q1`` in the transverse-linear
    block, so the second step generates angle-free cross terms between the
    pairs and the diagonalizing stage has nontrivial generators to solve.
    The quadratic block's angle average vanishes, as the first step
    requires.
    """
    dims = Dimensions(n1=2, n2=2)

    F0 = RealSeries(dims)
    F0.add_term(0.2, (0, 0), (0, 0), (0, 0), (1, -1), COS)

    F1 = RealSeries(dims)
    F1.add_term(0.3, (0, 0), (1, 0), (0, 0), (1, 0), COS)
    F1.add_term(-0.3, (0, 0), (0, 0), (1, 0), (1, 0), SIN)
    F1.add_term(0.2, (0, 0), (0, 1), (0, 0), (1, 0), COS)
    F1.add_term(-0.2, (0, 0), (0, 0), (0, 1), (1, 0), SIN)
    F1.add_term(0.1, (0, 0), (0, 1), (0, 0), (0, 1), COS)
    F1.add_term(-0.1, (0, 0), (0, 0), (0, 1), (0, 1), SIN)

    F2 = RealSeries(dims)
    F2.add_term(0.15, (1, 0), (0, 0), (0, 0), (1, -1), COS)

    H_free = RealSeries(dims)
    H_free.add_term(0.18, (2, 0), (0, 0), (0, 0), (0, 0), COS)
    H_free.add_term(0.18, (0, 2), (0, 0), (0, 0), (0, 0), COS)
    H_free.add_term(0.05, (1, 1), (0, 0), (0, 0), (0, 0), COS)

    config = RunConfig(
        domain=DomainParams(rho=0.4, R=0.35, sigma=0.5),
        K=2,
        ell_max=6,
        s_max=4,
        epsilon=1.0e-3,
        r_max=3,
    )
    return ModelSpec(
        name="pair",
        dims=dims,
        omega0=(1.0, 0.6180339887498949),
        Omega0=(0.35, 0.21),
        config=config,
        F0=F0,
        F1=F1,
        F2=F2,
        F_hot={0: H_free},
    )


@pytest.fixture(scope="session")
def toy_spec():
    return toy_model()


@pytest.fixture(scope="session")
def toy_run():
    """Full toy pipeline: states, generators, step reports, residual report."""
    return run_pipeline(toy_model())


@pytest.fixture(scope="session")
def pair_spec():
    return pair_model()


@pytest.fixture(scope="session")
def pair_run():
    """Full pipeline on the two-pair variant (diagonalizing stage active)."""
    return run_pipeline(pair_model())
