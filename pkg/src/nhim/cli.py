"""Command-line entry point: ``nhim {solve,rates,verify,sweep}``.

Exit codes: 0 success, 1 configuration/input error, 2 solver failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import csvio
from .errors import ConfigError, ManifoldSolveError, NHIMError, RateFitError
from .perron import PerronConfig, solve_manifold, suggest_horizon
from .rates import check_gap, estimate_rates
from .verify import invariance_residual, perturbation_sweep
from .vf_model import apply_perturbation, check_system, parse_perturbation, parse_system

log = logging.getLogger("nhim")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3


@dataclass
class RunManifest:
    """Everything needed to reproduce a run; written next to the outputs."""

    command: str
    config: str
    perturb: Optional[str] = None
    horizon: Optional[float] = None
    step: float = 1e-3
    eta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 50
    grid: list = field(default_factory=lambda: [64])
    out: str = "nhim-out"
    seed: int = 0
    r: list = field(default_factory=lambda: [1.0])
    deltas: list = field(default_factory=lambda: [0.0])
    window: float = 20.0
    rate_step: float = 0.01
    manifold: Optional[str] = None
    max_residual: Optional[float] = None
    workers: int = 1

    def perron_config(self) -> PerronConfig:
        return PerronConfig(self.horizon, self.step, self.eta, self.tol, self.max_iter)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**data)


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}")


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nhim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        # defaults are None so that manifest values can fill the gaps
        sp.add_argument("--manifest", help="re-run from a saved manifest.json")
        sp.add_argument("--config", help="system config file")
        sp.add_argument("--perturb", help="perturbation file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="seed for sampled load-time checks")

    def perron(sp):
        sp.add_argument("--horizon", type=float,
                        help="truncation horizon T (default: chosen from estimated rates)")
        sp.add_argument("--step", type=float, help="time step h")
        sp.add_argument("--eta", type=float, help="admissible neighborhood radius")
        sp.add_argument("--tol", type=float, help="fixed-point tolerance (sup-norm)")
        sp.add_argument("--max-iter", type=int, dest="max_iter")
        sp.add_argument("--grid", type=_ints, help="nodes per axis, e.g. 64 or 32,16")
        sp.add_argument("--workers", type=int)

    def rate_opts(sp):
        sp.add_argument("--window", type=float, help="rate estimation window")
        sp.add_argument("--rate-step", type=float, dest="rate_step")

    sp = sub.add_parser("solve", help="compute the invariant graph on a grid")
    common(sp)
    perron(sp)
    rate_opts(sp)

    sp = sub.add_parser("rates", help="estimate growth rates and check the spectral gap")
    common(sp)
    rate_opts(sp)
    sp.add_argument("--r", type=_floats, help="smoothness orders to check, comma list")

    sp = sub.add_parser("verify", help="invariance residual of a solved manifold")
    common(sp)
    sp.add_argument("--manifold", help="manifold CSV written by 'solve'")
    sp.add_argument("--max-residual", type=float, dest="max_residual",
                    help="fail with exit 3 if the sup residual exceeds this")

    sp = sub.add_parser("sweep", help="distance to the unperturbed graph over amplitudes")
    common(sp)
    perron(sp)
    rate_opts(sp)
    sp.add_argument("--deltas", type=_floats, help="comma list of amplitudes (must include 0)")
    return p


def _manifest(args) -> RunManifest:
    base = {}
    if args.manifest:
        base = asdict(RunManifest.from_json(Path(args.manifest).read_text()))
    names = {f.name for f in fields(RunManifest)}
    given = {k: v for k, v in vars(args).items() if k in names and v is not None}
    merged = {**base, **given, "command": args.command}
    if not merged.get("config"):
        raise ConfigError("--config is required")
    return RunManifest(**merged)


def _load(m: RunManifest):
    spec = parse_system(Path(m.config).read_text(), check=False)
    check_system(spec, seed=m.seed)
    pert = None
    if m.perturb:
        pert = parse_perturbation(Path(m.perturb).read_text(), spec)
    return spec, pert


def _choose_horizon(spec, m: RunManifest) -> float:
    rates = estimate_rates(spec, window=m.window, h_t=m.rate_step)
    axes = [np.linspace(0.0, L, 64, endpoint=False) for L in spec.periods]
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, spec.dx)
    sup_f = 0.0
    for level in np.linspace(-m.eta, m.eta, 5):
        y = np.full((len(xs), spec.dy), level)
        sup_f = max(sup_f, float(np.max(np.abs(spec.nonlinear(xs, y)))))
    T = suggest_horizon(rates.rho_minus, rates.C_minus, sup_f, m.tol, m.step)
    log.info("horizon %.6g from rho_minus=%.6g, C_minus=%.6g, sup|f|=%.6g",
             T, rates.rho_minus, rates.C_minus, sup_f)
    return T


def _write_manifest(m: RunManifest, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(m.to_json())


def cmd_solve(m: RunManifest) -> int:
    spec, pert = _load(m)
    if pert is not None:
        spec = apply_perturbation(spec, pert)
    if m.horizon is None:
        m.horizon = _choose_horizon(spec, m)
    cfg = m.perron_config()
    out = Path(m.out)
    _write_manifest(m, out)
    manifold = solve_manifold(spec, m.grid, cfg, workers=m.workers)
    csvio.write_manifold(out / "manifold.csv", manifold)
    print(f"solved {manifold.iterations.size} nodes; "
          f"sup|h| = {manifold.sup_norm():.6g}; max iterations {int(manifold.iterations.max())}; "
          f"max q_hat {float(manifold.q_hat.max()):.3g}")
    return EXIT_OK


def cmd_rates(m: RunManifest) -> int:
    spec, _ = _load(m)
    out = Path(m.out)
    _write_manifest(m, out)
    rates = estimate_rates(spec, window=m.window, h_t=m.rate_step)
    gap = check_gap(rates, m.r)
    csvio.write_rates(out / "rates.csv", rates, gap)
    csvio.write_rate_samples(out / "rate_samples.csv", rates)
    lines = [
        f"window         {rates.window:g} (base points: {rates.n_points}, step {rates.step:g})",
        f"rho_M          {rates.rho_M:.10g}",
        f"rho_minus      {rates.rho_minus:.10g}",
        f"C_M            {rates.C_M:.10g}",
        f"C_minus        {rates.C_minus:.10g}",
        f"r_max          {gap.r_max:.10g}",
    ]
    for c in gap.checks:
        lines.append(f"r = {c.r:<10g} margin {c.margin:.6g}  {'PASS' if c.passed else 'FAIL'}")
    lines.append("bounds hold on the sampled window only")
    text = "\n".join(lines) + "\n"
    (out / "rates.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if gap.passed else EXIT_VERIFY


def cmd_verify(m: RunManifest) -> int:
    spec, pert = _load(m)
    if pert is not None:
        spec = apply_perturbation(spec, pert)
    if not m.manifold:
        raise ConfigError("--manifold is required")
    try:
        manifold = csvio.read_manifold(m.manifold, spec.periods)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read manifold: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    out = Path(m.out)
    _write_manifest(m, out)
    report = invariance_residual(spec, manifold)
    csvio.write_residual(out / "residual.csv", manifold, report)
    print(f"sup invariance residual {report.sup:.6g} "
          f"(stencil width {', '.join(f'{w:.6g}' for w in report.stencil_width)})")
    if m.max_residual is not None and not report.sup <= m.max_residual:
        print(f"error: residual exceeds {m.max_residual:g}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_sweep(m: RunManifest) -> int:
    spec, pert = _load(m)
    if pert is None:
        raise ConfigError("sweep needs --perturb")
    if m.horizon is None:
        m.horizon = _choose_horizon(spec, m)
    out = Path(m.out)
    _write_manifest(m, out)
    sweep = perturbation_sweep(spec, pert, m.deltas, m.perron_config(), m.grid, m.workers)
    csvio.write_sweep(out / "sweep.csv", sweep)
    for e in sweep.entries:
        status = "" if e.error is None else f"  FAILED: {e.error.splitlines()[0]}"
        print(f"delta {e.delta:<10g} dist0 {e.dist0:.6g}  dist1 {e.dist1:.6g}{status}")
    print(f"log-log slope {sweep.slope:.6g}")
    return EXIT_SOLVER if sweep.failed else EXIT_OK


COMMANDS = {"solve": cmd_solve, "rates": cmd_rates, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        m = _manifest(args)
        if args.command == "sweep" and 0.0 not in m.deltas:
            raise ConfigError("--deltas must include 0")
        return COMMANDS[args.command](m)
    except (ConfigError, OSError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ManifoldSolveError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (RateFitError, NHIMError) as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
