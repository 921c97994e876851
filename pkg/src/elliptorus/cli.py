"""Command-line interface.

Subcommands: ``run`` (end-to-end normalization with reports), ``estimate``
(sequence tables and convergence thresholds, no model run), ``geometry``
(frequency-space pass with the atlas carving and condition table) and
``verify`` (structural pass/fail checklist).  Exit codes: 0 success,
2 resonance abort, 3 invariant violation, 4 IO/parse error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

from .estimates import EstimateConfig, SequenceCache, catalan_value, theta_value, thresholds
from .models import ModelSpec, bundled_model, load_model
from .normalizer import ResonanceDetected
from .reports import (
    default_atlas,
    emit_reports,
    run_pipeline,
    verification_checks,
)
from .series import InvariantViolation


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the IO/parse code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(4)


def load_config_file(path: str | Path) -> dict[str, str]:
    """Read a ``key = value`` text file (``#`` comments, blank lines allowed)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _flag_given(argv: list[str], dest: str) -> bool:
    names = {f"--{dest}", f"--{dest.replace('_', '-')}"}
    return any(arg in names or arg.split("=", 1)[0] in names for arg in argv)


def _convert(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    for key, value in load_config_file(args.config).items():
        if hasattr(args, key) and not _flag_given(argv, key):
            setattr(args, key, _convert(value))


def resolve_model(name: str) -> ModelSpec:
    """A bundled model name or a path to a ``.ham`` file."""
    path = Path(name)
    if path.exists():
        return load_model(path)
    try:
        return bundled_model(name)
    except FileNotFoundError:
        raise FileNotFoundError(f"model {name!r}: no such file or bundled model") from None


def _apply_overrides(spec: ModelSpec, args: argparse.Namespace) -> ModelSpec:
    repl = {}
    for dest, field in (
        ("rmax", "r_max"),
        ("epsilon", "epsilon"),
        ("ell_max", "ell_max"),
        ("s_max", "s_max"),
        ("bigk", "K"),
        ("seed", "seed"),
    ):
        value = getattr(args, dest, None)
        if value is not None:
            repl[field] = value
    if repl:
        spec = dataclasses.replace(spec, config=dataclasses.replace(spec.config, **repl))
    return spec


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="toy", help="bundled model name or path to a .ham file")
    p.add_argument("--rmax", type=int, default=None, help="number of normalization steps")
    p.add_argument("--epsilon", type=float, default=None, help="perturbation parameter")
    p.add_argument("--ell-max", dest="ell_max", type=int, default=None, help="grade truncation")
    p.add_argument("--s-max", dest="s_max", type=int, default=None, help="order truncation")
    p.add_argument("--bigk", type=int, default=None, help="Fourier budget per order")
    p.add_argument("--seed", type=int, default=None, help="sampling seed (angles, atlas, Monte Carlo)")
    p.add_argument("--gamma", type=float, default=0.1, help="excision-rule size parameter")
    p.add_argument("--tau", type=float, default=3.0, help="excision-rule decay exponent")
    p.add_argument("--config", default=None, help="key = value file overriding flag defaults")


def _add_geometry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-n", dest="grid_n", type=int, default=3, help="frequency-grid nodes per axis")
    p.add_argument(
        "--mc-samples", dest="mc_samples", type=int, default=200_000, help="Monte-Carlo sample count"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="elliptorus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[], help="normalize a model and write reports")
    _add_model_flags(p_run)
    _add_geometry_flags(p_run)
    p_run.add_argument("--out", default="reports", help="output directory")
    p_run.add_argument("--geometry", action="store_true", help="also run the frequency-space pass")
    p_run.add_argument("--divisor-floor", dest="divisor_floor", type=float, default=0.0)
    p_run.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG rendering")

    p_est = sub.add_parser("estimate", help="sequence tables and convergence thresholds")
    _add_model_flags(p_est)
    p_est.add_argument("--out", default=None, help="also write sequences.csv and thresholds.json here")

    p_geo = sub.add_parser("geometry", help="resonance carving, measures, condition table")
    _add_model_flags(p_geo)
    _add_geometry_flags(p_geo)
    p_geo.add_argument("--out", default="reports", help="output directory")
    p_geo.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG rendering")

    p_ver = sub.add_parser("verify", help="structural pass/fail checklist of a run")
    _add_model_flags(p_ver)
    _add_geometry_flags(p_ver)
    p_ver.add_argument("--geometry", action="store_true", help="include the condition-table row")
    p_ver.add_argument("--out", default=None, help="also write the full reports here")
    return parser


def _print_run_summary(result, files) -> None:
    spec, thr = result.spec, result.thresholds
    print(f"model {spec.name}: n1={spec.dims.n1} n2={spec.dims.n2} "
          f"epsilon={result.config.epsilon:g} steps={result.config.r_max}")
    eps_star = thr.eps_star
    print(f"thresholds: eps_star={eps_star:.3e} (analytic {thr.eps_analytic:.3e}, "
          f"geometric {thr.eps_geometric:.3e})")
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for rep, factor in zip(result.reports, result.residual.factors):
        print(f"  step {rep.r}: a_r={rep.a_r:.6e} defect-factor={factor:.3e} "
              f"cauchy={rep.cauchy_diff:.3e} dropped={rep.truncation_dropped}")
    bad = sum(1 for row in result.audit if not row["ok"])
    print(f"bound table: {len(result.audit) - bad}/{len(result.audit)} rows hold")
    if result.geometry is not None:
        geo = result.geometry
        bad_c = sum(1 for row in geo.conditions if not row["ok"])
        print(f"geometry: {len(geo.strips)} strips, excised bound {geo.bound:.3e}, "
              f"mc {geo.mc_estimate:.3e} +- {geo.mc_stderr:.1e}, "
              f"conditions {len(geo.conditions) - bad_c}/{len(geo.conditions)}")
    for path in files:
        print(f"wrote {path}")


def cmd_run(args, argv) -> int:
    spec = _apply_overrides(resolve_model(args.model), args)
    result = run_pipeline(
        spec,
        gamma=args.gamma,
        tau=args.tau,
        seed=args.seed if args.seed is not None else 7,
        divisor_floor=args.divisor_floor,
        geometry=args.geometry,
        grid_n=args.grid_n,
        mc_samples=args.mc_samples,
    )
    files = emit_reports(result, args.out, figures=args.figures)
    _print_run_summary(result, files)
    return 0


def cmd_estimate(args, argv) -> int:
    spec = _apply_overrides(resolve_model(args.model), args)
    state = spec.prepare()
    config = EstimateConfig(
        domain=spec.config.domain,
        E_bar=state.E_bar,
        K=spec.config.K,
        gamma=args.gamma,
        tau=args.tau,
        n1=spec.dims.n1,
        n2=spec.dims.n2,
    )
    thr = thresholds(config)
    r_top = args.rmax if args.rmax is not None else 10
    cache = SequenceCache(config)
    print(f"domain rho={config.domain.rho:g} R={config.domain.R:g} sigma={config.domain.sigma:g}  "
          f"E_bar={config.E_bar:.6e}  K={config.K}  gamma={config.gamma:g}  tau={config.tau:g}")
    print(f"M={thr.M:.6e}  Gamma={thr.Gamma:.6f}  A={thr.A_script:.6e}")
    print(f"eps_analytic={thr.eps_analytic:.6e}  eps_geometric={thr.eps_geometric:.6e}  "
          f"eps_gradient={thr.eps_gradient:.6e}  eps_jacobian={thr.eps_jacobian:.6e}")
    print(f"eps_star={thr.eps_star:.6e}  eta={thr.eta:g}  h0={thr.h0:.6e}")
    header = f"{'r':>3} {'delta_r':>12} {'d_r':>10} {'zeta_r':>10} {'a_r':>12} " \
             f"{'nu_rr':>12} {'T_rr':>12} {'lambda_r':>12} {'theta_r':>12}"
    print(header)
    rows = []
    for r in range(1, r_top + 1):
        row = (
            r,
            cache.delta(r),
            cache.d(r),
            cache.zeta(r),
            cache.a(r),
            float(cache.nu(r, r)),
            cache.T(r, r),
            float(catalan_value(r)),
            float(theta_value(r)),
        )
        rows.append(row)
        print(f"{r:>3} {row[1]:>12.6e} {row[2]:>10.6f} {row[3]:>10.6f} {row[4]:>12.6e} "
              f"{row[5]:>12.6e} {row[6]:>12.6e} {row[7]:>12.6e} {row[8]:>12.6e}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        import csv as _csv

        with (out_dir / "sequences.csv").open("w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["r", "delta_r", "d_r", "zeta_r", "a_r", "nu_rr", "T_rr", "lambda_r", "theta_r"])
            for row in rows:
                writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        payload = {
            key: (value if value is None or math.isfinite(value) else None)
            for key, value in dataclasses.asdict(thr).items()
        }
        (out_dir / "thresholds.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out_dir / 'sequences.csv'}")
        print(f"wrote {out_dir / 'thresholds.json'}")
    return 0


def cmd_geometry(args, argv) -> int:
    spec = _apply_overrides(resolve_model(args.model), args)
    result = run_pipeline(
        spec,
        gamma=args.gamma,
        tau=args.tau,
        seed=args.seed if args.seed is not None else 7,
        geometry=True,
        grid_n=args.grid_n,
        mc_samples=args.mc_samples,
    )
    files = emit_reports(result, args.out, figures=args.figures)
    _print_run_summary(result, files)
    return 0


def cmd_verify(args, argv) -> int:
    spec = _apply_overrides(resolve_model(args.model), args)
    result = run_pipeline(
        spec,
        gamma=args.gamma,
        tau=args.tau,
        seed=args.seed if args.seed is not None else 7,
        geometry=args.geometry,
        grid_n=args.grid_n,
        mc_samples=args.mc_samples,
    )
    checks = verification_checks(result)
    hard_fail = False
    for chk in checks:
        mark = "PASS" if chk["ok"] else "FAIL"
        kind = "hard" if chk["hard"] else "info"
        print(f"[{mark}] ({kind}) {chk['name']}: {chk['detail']}")
        if chk["hard"] and not chk["ok"]:
            hard_fail = True
    if args.out:
        for path in emit_reports(result, args.out):
            print(f"wrote {path}")
    return 3 if hard_fail else 0


_COMMANDS = {
    "run": cmd_run,
    "estimate": cmd_estimate,
    "geometry": cmd_geometry,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, argv)
        return _COMMANDS[args.command](args, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ResonanceDetected as exc:
        print(f"resonance abort: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
