"""Pipeline orchestration, torus verification and report emission.

`run_pipeline` drives one end-to-end normalization: prepare the model,
compute the convergence thresholds, run the requested number of steps,
replay the quantitative bound table against the measured norms, and sample
the invariance defect of the torus ``p = 0, z = 0`` after every step.
`run_geometry` adds the frequency-space pass: resonance carving, measure
estimates, and the grid-backed frequency-map condition table.
`emit_reports` writes the results as a JSON report tree, delimited data
files, and rendered figures; output is deterministic for a fixed
configuration and seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimates import (
    EstimateConfig,
    Thresholds,
    bound_checkers,
    d_sequence_value,
    thresholds,
)
from .geometry import (
    FrequencyAtlas,
    GridFrequencyMap,
    carve_resonances,
    measure_resonant_volume,
    mc_union_measure,
    toy_atlas,
)
from .hamiltonian import HamiltonianState, RunConfig
from .models import ModelSpec
from .normalizer import GeneratingSet, StepReport, normalization_step
from .series import weighted_norm


# -- torus verification ----------------------------------------------------


@dataclass
class TorusResidualReport:
    """Sampled invariance defect of the torus ``p = 0, z = 0``, step by step.

    ``defects[r]`` is the maximum over the fixed angle samples of the
    vector-field components that must vanish on an invariant torus: the
    action and transverse velocities, and the deviation of the angle
    velocity from the current frequency vector.  ``certified[r]`` is the
    weighted-norm size of the lowest-order couplings not yet normalized at
    step ``r``, i.e. the bound the construction itself certifies.
    """

    epsilon: float
    seed: int
    sample_count: int
    defects: list[float]
    certified: list[float]
    factors: list[float]
    slope_log10: float | None
    omega: tuple[float, ...]


def torus_defect(state: HamiltonianState, angle_samples: np.ndarray) -> float:
    """Largest sampled vector-field defect on the torus ``p = 0, z = 0``.

    Evaluates the Hamiltonian vector field of the numeric total series at
    ``(p, q, z, zeta) = (0, q, 0, 0)`` for each angle row of
    ``angle_samples`` and returns the largest violation among the angle
    velocities (which must equal the current fast frequencies), the action
    velocities, and the transverse velocities (which must vanish).
    """
    n1, n2 = state.dims
    H = state.total_series()
    dHdp = [H.derivative("p", j) for j in range(n1)]
    dHdq = [H.derivative("q", j) for j in range(n1)]
    dHdz = [H.derivative("zeta", j) for j in range(n2)]
    p0 = np.zeros(n1)
    z0 = np.zeros(n2, dtype=complex)
    worst = 0.0
    for q in np.atleast_2d(angle_samples):
        for j in range(n1):
            worst = max(worst, abs(dHdp[j].evaluate(p0, q, z0, z0) - state.omega[j]))
            worst = max(worst, abs(dHdq[j].evaluate(p0, q, z0, z0)))
        for j in range(n2):
            worst = max(worst, abs(dHdz[j].evaluate(p0, q, z0, z0)))
    return worst


def untreated_coupling_norm(state: HamiltonianState) -> float:
    """Certified residual bound: weighted size of the lowest untreated couplings.

    After ``r`` completed steps the grade <= 2 blocks with ``s <= r`` are
    gone; the leading obstruction to torus invariance is the grade <= 2
    blocks at ``s = r + 1``, carrying weight ``eps^(r+1)``.  Returns their
    ``eps``-weighted norm sum on the current (restricted) domain; zero when
    the expansion holds no such blocks.
    """
    r = state.r_done
    eps = state.config.epsilon
    shrink = d_sequence_value(r)
    total = 0.0
    for ell in (0, 1, 2):
        g = state.block(ell, r + 1)
        if not g.is_zero():
            total += weighted_norm(g, state.config.domain, shrink)
    return eps ** (r + 1) * total


def verify_torus_residual(
    states: list[HamiltonianState], sample_count: int = 12, seed: int = 7
) -> TorusResidualReport:
    """Measure the torus defect along a normalization history.

    Parameters
    ----------
    states : list of HamiltonianState
        States after 0, 1, .., r steps (as collected by `run_pipeline`).
    sample_count : int
        Number of random angle points; drawn once and reused at every step.
    seed : int
        Seed of the angle sampler.

    Returns
    -------
    TorusResidualReport
        Sampled defects, the certified block-norm bounds, the step-to-step
        contraction factors, and the least-squares slope of ``log10 defect``
        against the step index (close to ``log10 eps`` when the defect
        contracts by one order of the perturbation per step).
    """
    if not states:
        raise ValueError("need at least the initial state")
    n1 = states[0].dims.n1
    qs = np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi, size=(sample_count, n1))
    defects = [torus_defect(state, qs) for state in states]
    certified = [untreated_coupling_norm(state) for state in states]
    factors = [defects[i + 1] / defects[i] if defects[i] else math.inf for i in range(len(defects) - 1)]
    slope = None
    if len(defects) >= 2 and all(d > 0 for d in defects):
        slope = float(np.polyfit(range(len(defects)), np.log10(defects), 1)[0])
    return TorusResidualReport(
        epsilon=states[0].config.epsilon,
        seed=seed,
        sample_count=sample_count,
        defects=defects,
        certified=certified,
        factors=factors,
        slope_log10=slope,
        omega=tuple(states[-1].omega),
    )


# -- orchestration -----------------------------------------------------------


def transverse_gap(Omega) -> float:
    """Smallest gap ``|Omega_i - Omega_j|`` (infinite with fewer than two)."""
    vals = list(Omega)
    if len(vals) < 2:
        return math.inf
    return min(abs(a - b) for i, a in enumerate(vals) for b in vals[i + 1 :])


@dataclass
class GeometryReport:
    """Frequency-space diagnostics: carved strips, measures, map conditions."""

    atlas: FrequencyAtlas
    epsilon: float
    r_max: int
    strips: list
    sum_exact: float
    mc_estimate: float
    mc_stderr: float
    mc_samples: int
    bound: float
    survivor_fraction: float
    gamma_sweep: list[dict]
    sweep_slope: float | None
    conditions: list[dict]
    atlas_rows: list[tuple]


@dataclass
class PipelineResult:
    """Everything one end-to-end run produces."""

    spec: ModelSpec
    config: RunConfig
    estimate_config: EstimateConfig
    thresholds: Thresholds
    states: list[HamiltonianState]
    gens: list[GeneratingSet]
    reports: list[StepReport]
    audit: list[dict]
    residual: TorusResidualReport
    geometry: GeometryReport | None
    warnings: list[str]

    @property
    def initial_state(self) -> HamiltonianState:
        return self.states[0]

    @property
    def final_state(self) -> HamiltonianState:
        return self.states[-1]


def run_pipeline(
    spec: ModelSpec,
    r_max: int | None = None,
    epsilon: float | None = None,
    gamma: float = 0.1,
    tau: float = 3.0,
    seed: int = 7,
    sample_count: int = 12,
    divisor_floor: float = 0.0,
    geometry: bool = False,
    grid_n: int = 3,
    mc_samples: int = 200_000,
) -> PipelineResult:
    """Run prepare -> thresholds -> normalize -> audit (-> geometry).

    Parameters
    ----------
    spec : ModelSpec
        The model; its run configuration supplies every unset option.
    r_max, epsilon : optional overrides
        Number of normalization steps and perturbation parameter.
    gamma, tau : float
        Excision-rule parameters entering the thresholds and, with
        ``geometry=True``, the resonance carving.
    seed, sample_count : int
        Angle sampling for the torus-defect report.
    divisor_floor : float
        Abort threshold forwarded to the nonresonance check.
    geometry : bool
        Also run the frequency-space pass (grid maps make this the
        expensive part of a run).
    grid_n, mc_samples : int
        Geometry grid resolution and Monte-Carlo sample count.

    Returns
    -------
    PipelineResult

    Raises
    ------
    ResonanceDetected
        If a divisor falls below ``divisor_floor``.
    InvariantViolation
        If a structural invariant breaks mid-run.
    """
    config = spec.config
    replacements = {}
    if r_max is not None:
        replacements["r_max"] = r_max
    if epsilon is not None:
        replacements["epsilon"] = epsilon
    if replacements:
        config = dataclasses.replace(config, **replacements)
        spec = dataclasses.replace(spec, config=config)

    state = spec.prepare()
    est_config = EstimateConfig(
        domain=config.domain,
        E_bar=state.E_bar,
        K=config.K,
        gamma=gamma,
        tau=tau,
        b_bar=transverse_gap(spec.Omega0),
        J0=0.0,
        n1=spec.dims.n1,
        n2=spec.dims.n2,
    )
    thr = thresholds(est_config)

    warnings: list[str] = []
    if config.epsilon >= thr.eps_star:
        warnings.append(
            f"epsilon {config.epsilon:.3e} is not below the convergence threshold "
            f"{thr.eps_star:.3e}; bound-table rows may fail (diagnostics only)"
        )

    states = [state.copy()]
    gens: list[GeneratingSet] = []
    reports: list[StepReport] = []
    for _ in range(config.r_max):
        state, gen, report = normalization_step(state, divisor_floor=divisor_floor)
        states.append(state.copy())
        gens.append(gen)
        reports.append(report)

    audit = bound_checkers(reports, est_config, config.epsilon)
    residual = verify_torus_residual(states, sample_count=sample_count, seed=seed)

    geo = None
    if geometry:
        atlas = default_atlas(spec, gamma=gamma, tau=tau)
        geo = run_geometry(
            spec,
            atlas,
            grid_n=grid_n,
            mc_samples=mc_samples,
            seed=config.seed,
            r_max=config.r_max,
            A_script=thr.A_script,
        )
    return PipelineResult(
        spec=spec,
        config=config,
        estimate_config=est_config,
        thresholds=thr,
        states=states,
        gens=gens,
        reports=reports,
        audit=audit,
        residual=residual,
        geometry=geo,
        warnings=warnings,
    )


def default_atlas(spec: ModelSpec, gamma: float = 0.1, tau: float = 3.0) -> FrequencyAtlas:
    """Frequency atlas for a model: the bundled chart for the toy system,
    otherwise a constant-map box of half-width 0.05 around the base point."""
    if spec.name == "toy":
        return toy_atlas(gamma=gamma, tau=tau, K=spec.config.K)
    n1, n2 = spec.dims
    return FrequencyAtlas(
        box=tuple((w - 0.05, w + 0.05) for w in spec.omega0),
        Omega_matrix=tuple((0.0,) * n1 for _ in range(n2)),
        Omega_base=tuple(spec.Omega0),
        omega_center=tuple(spec.omega0),
        gamma=gamma,
        tau=tau,
        K=spec.config.K,
    )


def run_geometry(
    spec: ModelSpec,
    atlas: FrequencyAtlas,
    grid_n: int = 3,
    mc_samples: int = 200_000,
    seed: int = 0,
    r_max: int | None = None,
    A_script: float | None = None,
    sweep_gammas: tuple[float, ...] = (0.05, 0.1, 0.2),
    atlas_samples: int = 400,
) -> GeometryReport:
    """Frequency-space pass: carve resonances, estimate measures, audit maps.

    Carves the excised strips over the atlas box at the model's perturbation
    parameter, compares the exact per-strip measures and their Monte-Carlo
    union against the closed-form total bound, sweeps the excision parameter
    over ``sweep_gammas`` for the scaling data (the closed-form bound is
    exactly linear, so the log-log regression slope must be 1), tabulates
    the frequency maps on a grid, and replays the domain-control condition
    table.  ``A_script`` defaults to the threshold value computed from the
    atlas parameters.
    """
    r_fin = spec.config.r_max if r_max is None else r_max
    if A_script is None:
        state = spec.prepare()
        est_config = EstimateConfig(
            domain=spec.config.domain,
            E_bar=state.E_bar,
            K=atlas.K,
            gamma=atlas.gamma,
            tau=atlas.tau,
            b_bar=atlas.b_bar,
            J0=atlas.J0,
            n1=atlas.n1,
            n2=atlas.n2,
        )
        A_script = thresholds(est_config).A_script

    eps = spec.config.epsilon
    strips = carve_resonances(atlas, eps, r_fin)
    sum_exact = sum(s.measure for s in strips)
    mc_est, mc_err = mc_union_measure(strips, atlas.box, n_samples=mc_samples, seed=seed)
    bound = measure_resonant_volume(atlas)

    sweep = []
    for g in sweep_gammas:
        atlas_g = dataclasses.replace(atlas, gamma=g)
        strips_g = carve_resonances(atlas_g, eps, r_fin)
        est_g, err_g = mc_union_measure(strips_g, atlas.box, n_samples=mc_samples, seed=seed)
        sweep.append(
            {
                "gamma": g,
                "bound": measure_resonant_volume(atlas_g),
                "mc_estimate": est_g,
                "mc_stderr": err_g,
                "sum_exact": sum(s.measure for s in strips_g),
            }
        )
    slope = None
    if len(sweep) >= 2 and all(row["bound"] > 0 for row in sweep):
        slope = float(
            np.polyfit(
                np.log([row["gamma"] for row in sweep]),
                np.log([row["bound"] for row in sweep]),
                1,
            )[0]
        )

    grid = GridFrequencyMap(atlas, spec, grid_n=grid_n, r_max=r_fin)
    conditions = grid.condition_table(A_script)

    samples = atlas.sample(atlas_samples, seed=seed)
    detuning = grid.detuning(r_fin, samples)
    pullback = grid.Omega_pullback(r_fin, samples)
    outside = np.ones(len(samples), dtype=bool)
    for strip in strips:
        outside &= ~strip.indicator(samples)
    atlas_rows = [
        tuple(float(x) for x in samples[i])
        + tuple(float(x) for x in detuning[i])
        + tuple(float(x) for x in pullback[i])
        + (float(outside[i]),)
        for i in range(len(samples))
    ]
    survivor = 1.0 - (mc_est / atlas.volume if atlas.volume else 0.0)
    return GeometryReport(
        atlas=atlas,
        epsilon=eps,
        r_max=r_fin,
        strips=strips,
        sum_exact=sum_exact,
        mc_estimate=mc_est,
        mc_stderr=mc_err,
        mc_samples=mc_samples,
        bound=bound,
        survivor_fraction=survivor,
        gamma_sweep=sweep,
        sweep_slope=slope,
        conditions=conditions,
        atlas_rows=atlas_rows,
    )


# -- verification checklist ---------------------------------------------------


def verification_checks(result: PipelineResult, rel_tol: float = 1e-12) -> list[dict]:
    """Structural pass/fail checklist of a completed run.

    Hard checks: grade <= 2 blocks with ``s <= r`` vanished; every
    homological residual is at most ``rel_tol`` times its defining-equation
    input norm; the sampled torus defect decreases strictly; the defect
    decay slope is within 15% of ``log10 eps``.  Rows carry ``hard=True``;
    informational rows (bound-table and condition-table failure counts)
    carry ``hard=False``.
    """
    checks: list[dict] = []
    final = result.final_state
    r_done = final.r_done

    leftovers = [
        (ell, s) for (ell, s) in final.blocks if ell <= 2 and 1 <= s <= r_done
    ]
    checks.append(
        {
            "name": "normalized-blocks-vanish",
            "hard": True,
            "ok": not leftovers,
            "detail": f"grade<=2 blocks with s<=r: {leftovers if leftovers else 'none'}",
        }
    )

    worst_ratio, worst_at = 0.0, "-"
    ok_resid = True
    for rep in result.reports:
        for key, value in rep.residuals.items():
            if key.endswith(".scale"):
                continue
            scale = rep.residuals.get(key + ".scale", 0.0)
            if scale == 0.0:
                if value != 0.0:
                    ok_resid = False
                    worst_ratio, worst_at = math.inf, f"r={rep.r} {key}"
                continue
            ratio = value / scale
            if ratio > worst_ratio:
                worst_ratio, worst_at = ratio, f"r={rep.r} {key}"
            if ratio > rel_tol:
                ok_resid = False
    checks.append(
        {
            "name": "homological-residuals",
            "hard": True,
            "ok": ok_resid,
            "detail": f"worst residual/input = {worst_ratio:.3e} at {worst_at}",
        }
    )

    defects = result.residual.defects
    monotone = all(defects[i + 1] < defects[i] for i in range(len(defects) - 1))
    checks.append(
        {
            "name": "defect-strictly-decreasing",
            "hard": True,
            "ok": monotone,
            "detail": "defects " + ", ".join(f"{d:.3e}" for d in defects),
        }
    )

    slope = result.residual.slope_log10
    eps = result.config.epsilon
    if slope is not None and eps > 0:
        target = math.log10(eps)
        ok_slope = abs(slope - target) <= 0.15 * abs(target)
        detail = f"slope {slope:.3f} vs log10(eps) {target:.3f} (tolerance 15%)"
    else:
        ok_slope = False
        detail = "no usable defect sequence"
    checks.append({"name": "defect-decay-slope", "hard": True, "ok": ok_slope, "detail": detail})

    bad_audit = [row for row in result.audit if not row["ok"]]
    checks.append(
        {
            "name": "bound-table",
            "hard": False,
            "ok": not bad_audit,
            "detail": f"{len(result.audit) - len(bad_audit)}/{len(result.audit)} rows hold",
        }
    )
    if result.geometry is not None:
        bad_cond = [row for row in result.geometry.conditions if not row["ok"]]
        checks.append(
            {
                "name": "condition-table",
                "hard": False,
                "ok": not bad_cond,
                "detail": f"{len(result.geometry.conditions) - len(bad_cond)}"
                f"/{len(result.geometry.conditions)} rows hold",
            }
        )
    return checks


# -- emission -----------------------------------------------------------------


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    return value


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row]
            )


def report_tree(result: PipelineResult) -> dict:
    """The JSON report tree of a run (plain dict, JSON-safe values)."""
    cfg = result.config
    thr = result.thresholds
    steps = []
    for rep in result.reports:
        steps.append(
            {
                "r": rep.r,
                "a_r": rep.a_r,
                "b_r": rep.b_r,
                "chi_norms": rep.chi_norms,
                "residuals": rep.residuals,
                "domega": list(rep.domega),
                "dOmega": list(rep.dOmega),
                "cauchy_diff": rep.cauchy_diff,
                "truncation_dropped": rep.truncation_dropped,
                "final_norms": {f"{ell},{s}": v for (ell, s), v in rep.final_norms.items()},
            }
        )
    bad_audit = [row for row in result.audit if not row["ok"]]
    tree = {
        "model": {
            "name": result.spec.name,
            "dims": list(result.spec.dims),
            "omega0": list(result.spec.omega0),
            "Omega0": list(result.spec.Omega0),
        },
        "config": {
            "domain": list(cfg.domain),
            "K": cfg.K,
            "ell_max": cfg.ell_max,
            "s_max": cfg.s_max,
            "epsilon": cfg.epsilon,
            "r_max": cfg.r_max,
            "seed": cfg.seed,
        },
        "thresholds": {
            "Gamma": thr.Gamma,
            "M": thr.M,
            "A_script": thr.A_script,
            "eps_analytic": thr.eps_analytic,
            "eps_geometric": thr.eps_geometric,
            "eps_gradient": thr.eps_gradient,
            "eps_jacobian": thr.eps_jacobian,
            "eps_star": thr.eps_star,
            "eta": thr.eta,
            "h0": thr.h0,
        },
        "steps": steps,
        "frequencies": {
            "omega_final": list(result.final_state.omega),
            "Omega_final": list(result.final_state.Omega),
        },
        "torus_residual": {
            "epsilon": result.residual.epsilon,
            "seed": result.residual.seed,
            "sample_count": result.residual.sample_count,
            "defects": result.residual.defects,
            "certified": result.residual.certified,
            "factors": result.residual.factors,
            "slope_log10": result.residual.slope_log10,
        },
        "audit": {
            "rows": len(result.audit),
            "failures": len(bad_audit),
            "failed_tags": sorted({f"{row['tag']}@r{row['step']}" for row in bad_audit}),
        },
        "warnings": result.warnings,
    }
    if result.geometry is not None:
        geo = result.geometry
        bad_cond = [row for row in geo.conditions if not row["ok"]]
        tree["geometry"] = {
            "gamma": geo.atlas.gamma,
            "tau": geo.atlas.tau,
            "K": geo.atlas.K,
            "box": [list(side) for side in geo.atlas.box],
            "strips": len(geo.strips),
            "sum_exact": geo.sum_exact,
            "mc_estimate": geo.mc_estimate,
            "mc_stderr": geo.mc_stderr,
            "mc_samples": geo.mc_samples,
            "bound": geo.bound,
            "survivor_fraction": geo.survivor_fraction,
            "gamma_sweep": geo.gamma_sweep,
            "sweep_slope": geo.sweep_slope,
            "conditions_rows": len(geo.conditions),
            "conditions_failures": len(bad_cond),
        }
    return _json_safe(tree)


def emit_reports(result: PipelineResult, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write the report tree, delimited data files, and figures to ``out_dir``.

    Always writes ``run_report.json``, ``steps.csv``, ``residual.csv``,
    ``blocks.csv``, ``norms_vs_s.csv`` and ``audit.csv``; a geometry pass
    adds ``atlas.csv`` (one row per sampled frequency point:
    ``n1 + n1 + n2 + 1`` columns), ``measure_vs_gamma.csv`` and
    ``conditions.csv``.  With ``figures=True`` the residual decay, block
    norms, audit slack and (when present) the strip chart and measure
    scaling are rendered to PNG files.  Output bytes depend only on the run
    configuration and seeds.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    path = out_dir / "run_report.json"
    path.write_text(json.dumps(report_tree(result), indent=2, sort_keys=True) + "\n")
    written.append(path)

    path = out_dir / "steps.csv"
    _write_csv(
        path,
        [
            "r",
            "a_r",
            "b_r",
            "chi0_norm",
            "chi1_norm",
            "chi2_norm",
            "residual_max",
            "domega_inf",
            "dOmega_inf",
            "cauchy_diff",
            "truncation_dropped",
        ],
        [
            [
                rep.r,
                rep.a_r,
                rep.b_r if math.isfinite(rep.b_r) else "",
                rep.chi_norms["chi0"],
                rep.chi_norms["chi1"],
                rep.chi_norms["chi2"],
                max((v for k, v in rep.residuals.items() if not k.endswith(".scale")), default=0.0),
                max((abs(x) for x in rep.domega), default=0.0),
                max((abs(x) for x in rep.dOmega), default=0.0),
                rep.cauchy_diff,
                rep.truncation_dropped,
            ]
            for rep in result.reports
        ],
    )
    written.append(path)

    path = out_dir / "residual.csv"
    _write_csv(
        path,
        ["r", "defect", "certified"],
        [
            [r, d, c]
            for r, (d, c) in enumerate(zip(result.residual.defects, result.residual.certified))
        ],
    )
    written.append(path)

    if result.reports:
        block_norms = result.reports[-1].final_norms
    else:
        state = result.initial_state
        block_norms = {
            key: weighted_norm(g, result.config.domain, 0.0) for key, g in sorted(state.blocks.items())
        }
    path = out_dir / "blocks.csv"
    _write_csv(
        path,
        ["ell", "s", "norm"],
        [[ell, s, v] for (ell, s), v in sorted(block_norms.items())],
    )
    written.append(path)

    by_s: dict[int, float] = {}
    for (ell, s), v in block_norms.items():
        by_s[s] = by_s.get(s, 0.0) + v
    path = out_dir / "norms_vs_s.csv"
    _write_csv(path, ["s", "total_norm"], [[s, v] for s, v in sorted(by_s.items())])
    written.append(path)

    path = out_dir / "audit.csv"
    _write_csv(
        path,
        ["tag", "step", "detail", "lhs", "rhs", "lhs_log10", "rhs_log10", "slack_log10", "ok"],
        [
            [
                row["tag"],
                row["step"],
                row["detail"],
                row["lhs"],
                row["rhs"],
                row["lhs_log10"] if row["lhs_log10"] is not None else "",
                row["rhs_log10"],
                row["slack_log10"],
                int(row["ok"]),
            ]
            for row in result.audit
        ],
    )
    written.append(path)

    if result.geometry is not None:
        geo = result.geometry
        n1, n2 = geo.atlas.n1, geo.atlas.n2
        header = (
            [f"omega_{j + 1}" for j in range(n1)]
            + [f"delta_omega_{j + 1}" for j in range(n1)]
            + [f"Omega_{j + 1}" for j in range(n2)]
            + ["survived"]
        )
        path = out_dir / "atlas.csv"
        _write_csv(path, header, [list(row) for row in geo.atlas_rows])
        written.append(path)

        path = out_dir / "measure_vs_gamma.csv"
        _write_csv(
            path,
            ["gamma", "bound", "mc_estimate", "mc_stderr", "sum_exact"],
            [
                [row["gamma"], row["bound"], row["mc_estimate"], row["mc_stderr"], row["sum_exact"]]
                for row in geo.gamma_sweep
            ],
        )
        written.append(path)

        path = out_dir / "conditions.csv"
        _write_csv(
            path,
            ["tag", "step", "lhs", "rhs", "ok"],
            [[row["tag"], row["step"], row["lhs"], row["rhs"], int(row["ok"])] for row in geo.conditions],
        )
        written.append(path)

    if figures:
        written.extend(_render_figures(result, out_dir))
    return written


def _render_figures(result: PipelineResult, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[Path] = []

    def save(fig, name: str) -> None:
        path = out_dir / name
        # a fixed Software tag keeps the PNG bytes reproducible across versions
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        written.append(path)

    res = result.residual
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    rs = list(range(len(res.defects)))
    ax.semilogy(rs, res.defects, "o-", label="sampled defect")
    positive = [(r, c) for r, c in zip(rs, res.certified) if c > 0]
    if positive:
        ax.semilogy(*zip(*positive), "s--", label="certified block norm")
    ax.set_xlabel("normalization step r")
    ax.set_ylabel("torus vector-field defect")
    ax.set_xticks(rs)
    ax.legend()
    fig.tight_layout()
    save(fig, "residual_decay.png")

    if result.reports:
        block_norms = result.reports[-1].final_norms
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for ell in sorted({ell for ell, _ in block_norms}):
            pts = sorted((s, v) for (l2, s), v in block_norms.items() if l2 == ell and v > 0)
            if pts:
                ax.semilogy(*zip(*pts), "o-", label=f"grade {ell}")
        ax.set_xlabel("bookkeeping order s")
        ax.set_ylabel("weighted block norm")
        ax.legend(fontsize=8)
        fig.tight_layout()
        save(fig, "block_norms.png")

    if result.audit:
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        slack = [min(row["slack_log10"], 40.0) for row in result.audit]
        colors = ["tab:blue" if row["ok"] else "tab:red" for row in result.audit]
        ax.bar(range(len(slack)), slack, color=colors)
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xlabel("bound-table row")
        ax.set_ylabel("log10 slack (capped at 40)")
        fig.tight_layout()
        save(fig, "audit_slack.png")

    geo = result.geometry
    if geo is not None:
        if geo.atlas.n1 == 2:
            fig, ax = plt.subplots(figsize=(4.6, 4.2))
            (x0, x1), (y0, y1) = geo.atlas.box
            rows = np.array([row[: geo.atlas.n1] + (row[-1],) for row in geo.atlas_rows])
            ok = rows[:, -1] > 0.5
            ax.plot(rows[ok, 0], rows[ok, 1], ".", ms=3, color="tab:green", label="survivors")
            if (~ok).any():
                ax.plot(rows[~ok, 0], rows[~ok, 1], "x", ms=4, color="tab:red", label="excised")
            xs = np.linspace(x0, x1, 200)
            for strip in geo.strips:
                a1, a2 = strip.alpha
                if abs(a2) > 1e-12:
                    for sign in (-1.0, 1.0):
                        ys = (-strip.beta + sign * strip.width - a1 * xs) / a2
                        ax.plot(xs, ys, "-", lw=0.6, color="tab:red", alpha=0.6)
            ax.set_xlim(x0, x1)
            ax.set_ylim(y0, y1)
            ax.set_xlabel("omega_1")
            ax.set_ylabel("omega_2")
            ax.legend(fontsize=8, loc="upper right")
            fig.tight_layout()
            save(fig, "strips.png")

        if geo.gamma_sweep:
            fig, ax = plt.subplots(figsize=(5.0, 3.6))
            gs = [row["gamma"] for row in geo.gamma_sweep]
            ax.loglog(gs, [row["bound"] for row in geo.gamma_sweep], "o-", label="closed-form bound")
            ax.errorbar(
                gs,
                [row["mc_estimate"] for row in geo.gamma_sweep],
                yerr=[3.0 * row["mc_stderr"] for row in geo.gamma_sweep],
                fmt="s",
                label="Monte-Carlo union (3 sigma)",
            )
            ax.loglog(gs, [row["sum_exact"] for row in geo.gamma_sweep], "^--", label="sum of exact strips")
            ax.set_xlabel("excision parameter gamma")
            ax.set_ylabel("excised measure")
            ax.legend(fontsize=8)
            fig.tight_layout()
            save(fig, "measure_vs_gamma.png")
    return written
