"""Command line entry point: ``snse-lab <kind> [--config PATH] [--set k=v] ...``.

Exit status is 0 on success, 2 when the machinery ran but a property verdict
failed, and 1 on any operational error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .attractor import (RADIUS_KINDS, RadiusFunction, RandomBall, absorbing_ball, classR_decay,
                        compactness_diagnostics, pullback_omega_limit, sample_ball, save_snapshot,
                        trend_test)
from .config import KINDS, ConfigError, ExperimentConfig, dump_config, load_config
from .noise import sample_path, save_path, validate_assumption_A1
from .ou import ergodic_time_bound_check, ou_shift_covariance_check, write_ou_csv
from .rds_cocycle import CocycleContext, cocycle_check, phi, reconstruct_u
from .solver import energy_equality_check, energy_inequality_check, solve_v, write_trajectory_csv
from .spectral import poincare_lambda1, random_fields, spectral_for

OK, VERDICT_FAILED, ERROR = 0, 2, 1


class Run:
    """Per-invocation state: resolved config, output directory and lazily built pieces."""

    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.d = cfg.domain_spec()
        self.outputs: list[str] = []
        self._consts = None
        self._alpha = None

    @property
    def consts(self):
        if self._consts is None:
            self._consts = self.cfg.universal_constants(self.d)
        return self._consts

    @property
    def alpha(self) -> float:
        if self._alpha is None:
            self._alpha = self.cfg.alpha(self.d, self.consts)
        return self._alpha

    @property
    def fmt(self) -> str:
        return f"{{:.{self.cfg.output.precision}g}}"

    def cell(self, x) -> str:
        if isinstance(x, (bool, np.bool_)):
            return str(bool(x)).lower()
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        if isinstance(x, (float, np.floating)):
            return self.fmt.format(float(x))
        return "" if x is None else str(x)

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.out / name, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([self.cell(x) for x in row])
        self.outputs.append(name)

    def context(self, t_past: float, t_future: float) -> CocycleContext:
        cfg, d = self.cfg, self.d
        w = sample_path(cfg.rkhs(), d, -t_past, t_future, cfg.noise.dt, cfg.noise.seed)
        return CocycleContext(w, cfg.ou_config(d, self.alpha), cfg.solver_config(d, self.alpha), self.consts)

    def radius(self, spec: str) -> RadiusFunction:
        spec = spec.strip()
        f = self.cfg.forcing(self.d)
        if spec in RADIUS_KINDS:
            return RadiusFunction(spec, T=self.cfg.experiment.horizon, f=f)
        try:
            return RadiusFunction("constant", float(spec))
        except ValueError:
            raise ConfigError(f"experiment.radius must be a number or one of {RADIUS_KINDS}") from None


def _verdicts(run: Run, rows) -> int:
    run.write_csv("verdict.csv", ["check", "value", "threshold", "passed"], rows)
    return OK if all(r[3] for r in rows) else VERDICT_FAILED


def _smooth_initial(run: Run, norm: float) -> np.ndarray:
    u = random_fields(run.d, 2, run.cfg.noise.seed)[1]
    return norm * u / math.sqrt(float(np.sum(u * u)))


# -- experiments --------------------------------------------------------------

def cmd_validate(run: Run) -> int:
    d, consts, e = run.d, run.consts, run.cfg.experiment
    sp = spectral_for(d)
    rows = []
    u = random_fields(d, 60, run.cfg.noise.seed + 1)
    a, b, c = u[:20], u[20:40], u[40:]
    skew = np.abs(sp.b(a, b, b)) / (sp.norm(a, "H") * sp.norm(b, "V") ** 2)
    rows.append(("trilinear_skew", float(skew.max()), 1e-10, bool(skew.max() <= 1e-10)))
    anti = np.abs(sp.b(a, b, c) + sp.b(a, c, b)) / (sp.norm(a, "H") * sp.norm(b, "V") * sp.norm(c, "V"))
    rows.append(("trilinear_antisymmetry", float(anti.max()), 1e-10, bool(anti.max() <= 1e-10)))
    fresh = random_fields(d, 200, run.cfg.constants.seed + 10**6)
    ratio = sp.norm(sp.B(fresh), "Vdual") / (consts.C1 * sp.l4(fresh) ** 2)
    rows.append(("form_bound_ratio", float(ratio.max()), 1.0, bool(ratio.max() <= 1.0)))
    adm = validate_assumption_A1(run.cfg.rkhs(), d)
    rows.append(("assumption_A1", float(adm.partial_sum), math.inf, adm.admissible))

    ctx = run.context(e.burn_in, 1.0)
    ou_gap = ou_shift_covariance_check(ctx.path, ctx.ou, 0.5)
    rows.append(("ou_shift_covariance", ou_gap, 1e-12, bool(ou_gap <= 1e-12)))
    x = _smooth_initial(run, e.u0_norm)
    ident = float(np.max(np.abs(phi(0.0, ctx, 0.0, x) - x)))
    rows.append(("cocycle_identity", ident, 1e-12, bool(ident <= 1e-12)))
    coc = cocycle_check(ctx, 0.25, 0.25, x)
    rows.append(("cocycle_relative_error", coc, e.tol_cocycle, bool(coc <= e.tol_cocycle)))
    rec = float(np.max(np.abs(reconstruct_u(ctx, 0.5, -0.25, x) - phi(0.75, ctx, -0.25, x))))
    rows.append(("reconstruction_gap", rec, 1e-10, bool(rec <= 1e-10)))

    z = ctx.z(0.0)
    v0 = solve_v(x - z.at(-e.burn_in), z, replace(ctx.solver, record_every=10**9), (-e.burn_in, 0.0)).v[-1]
    traj = solve_v(v0, z, ctx.solver, (0.0, min(e.T, 1.0)))
    eq = energy_equality_check(traj, consts)
    rows.append(("energy_equality_defect", eq.max_defect, e.tol_energy, bool(eq.max_defect <= e.tol_energy)))
    ineq = energy_inequality_check(traj, consts)
    rows.append(("energy_inequality_margin", ineq.relative_margin, -e.tol_inequality,
                 bool(ineq.relative_margin >= -e.tol_inequality)))
    run.write_csv("invariants.csv", ["check", "value", "threshold", "passed"], rows)
    return OK if all(r[3] for r in rows) else VERDICT_FAILED


def cmd_simulate(run: Run) -> int:
    e = run.cfg.experiment
    ctx = run.context(e.burn_in, e.T)
    z = ctx.z(0.0)
    x = _smooth_initial(run, e.u0_norm)
    v = x - z.at(-e.burn_in)
    if e.burn_in > 0:
        v = solve_v(v, z, replace(ctx.solver, record_every=10**9), (-e.burn_in, 0.0)).v[-1]
    traj = solve_v(v, z, ctx.solver, (0.0, e.T))
    write_trajectory_csv(traj, run.out / "trajectory.csv", run.consts, run.cfg.output.precision)
    run.outputs.append("trajectory.csv")
    write_ou_csv(z.window(0.0, e.T), run.out / "ou.csv", run.cfg.output.precision)
    run.outputs.append("ou.csv")
    ineq = energy_inequality_check(traj, run.consts)
    rows = [("energy_inequality_margin", ineq.relative_margin, -e.tol_inequality,
             bool(ineq.relative_margin >= -e.tol_inequality))]
    return _verdicts(run, rows)


def cmd_pullback(run: Run) -> int:
    e, d = run.cfg.experiment, run.d
    sched = run.cfg.schedule()
    ball = RandomBall(run.radius(e.radius))
    ctx = run.context(float(sched[-1]) + e.horizon, 0.0)
    res = pullback_omega_limit(ctx, ball, sched, e.members, run.cfg.noise.seed, run.threads)
    Lam = e.high_mode_factor * poincare_lambda1(d)
    diag = [compactness_diagnostics(s, Lam, d) for s in res.snapshots]
    hf = [float(np.mean(r.high_fraction)) for r in diag]
    run.write_csv("convergence.csv",
                  ["k", "t_k", "hausdorff", "semidistance", "members", "diameter", "v_spread", "high_mode_fraction"],
                  [(k, t, rho, semi, len(s), r.diameter, r.v_spread, h)
                   for k, (t, rho, semi, s, r, h) in enumerate(zip(sched, res.rho, res.semi, res.snapshots, diag, hf))])
    save_snapshot(res.snapshots[-1], run.out / "ensemble.ensb")
    run.outputs.append("ensemble.ensb")
    tau, p, trend_ok = trend_test(hf, sched)
    rows = [("semidistance_decreasing_from_k0", float(e.k0), math.nan, res.decreasing_from(e.k0)),
            ("high_mode_fraction_kendall_tau", tau, 0.0, trend_ok)]
    return _verdicts(run, rows)


def cmd_absorb(run: Run) -> int:
    e, d = run.cfg.experiment, run.d
    ctx = run.context(e.horizon, 0.0)
    z = ctx.z(0.0)
    r13, _ = absorbing_ball(z, run.consts, d, ctx.solver.f, e.horizon)
    R = 10.0 * r13
    tab = classR_decay(RadiusFunction("constant", R), z, run.consts, d, T=e.horizon)
    t_star = tab.first_below(1.0)
    if t_star is None:
        return _verdicts(run, [("absorption_time_found", math.nan, e.horizon, False)])
    x = sample_ball(d, R, e.members, run.cfg.noise.seed, interior=False)
    u0 = reconstruct_u(ctx, 0.0, -t_star, x)
    norms = np.sqrt(np.sum(u0**2, axis=(-2, -1)))
    run.write_csv("absorb.csv", ["member", "norm_x", "norm_u0", "r13", "t_star", "inside"],
                  [(i, R, n, r13, t_star, bool(n <= r13)) for i, n in enumerate(norms)])
    return _verdicts(run, [("absorbed_members", float(np.sum(norms <= r13)), float(len(norms)),
                            bool(np.all(norms <= r13)))])


def cmd_classR(run: Run) -> int:
    e, d = run.cfg.experiment, run.d
    r = run.radius(e.radius)
    extra = e.horizon if r.kind != "constant" else 0.0
    ctx = run.context(e.T + extra, 0.0)
    z = ctx.z(0.0)
    tab = classR_decay(r, z, run.consts, d, T=e.T, tail=e.tail, eps=e.eps)
    run.write_csv("classR.csv", ["t", "q"], zip(tab.t, tab.q))
    t0 = ergodic_time_bound_check(z, run.consts, d, e.T)
    rows = [("classR_tail_max", tab.tail_max, e.eps, tab.verdict),
            ("ergodic_time_found", math.nan if t0 is None else t0, e.T, t0 is not None)]
    return _verdicts(run, rows)


def cmd_noise_gen(run: Run) -> int:
    cfg = run.cfg
    w = sample_path(cfg.rkhs(), run.d, -cfg.experiment.burn_in, cfg.experiment.T, cfg.noise.dt, cfg.noise.seed)
    save_path(w, run.out / "path.pnse")
    run.outputs.append("path.pnse")
    return OK


def cmd_describe(run: Run) -> int:
    d, cfg = run.d, run.cfg
    adm = validate_assumption_A1(cfg.rkhs(), d)
    lines = [f"lambda_1 = {poincare_lambda1(d):.17g}", f"modes = {d.n_modes}"]
    c = run.consts
    lines += [f"C = {c.C:.17g}", f"C1 = {c.C1:.17g}", f"C2 = {c.C2:.17g}"]
    if adm.admissible:
        lines.append(f"alpha = {run.alpha:.17g}" + (" (auto)" if cfg.ou.alpha.strip() == "auto" else ""))
        lines.append(f"theta_min = {d.nu * poincare_lambda1(d) + run.alpha:.17g}")
    lines.append(f"assumption A1: {'PASS' if adm.admissible else 'FAIL'} ({adm.reason})")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    (run.out / "describe.txt").write_text(text)
    run.outputs.append("describe.txt")
    return OK if adm.admissible else VERDICT_FAILED


COMMANDS = {
    "validate": cmd_validate, "simulate": cmd_simulate, "pullback": cmd_pullback, "absorb": cmd_absorb,
    "classR": cmd_classR, "noise-gen": cmd_noise_gen, "describe": cmd_describe,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snse-lab", description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", help="line-oriented 'section.key = value' file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, help="noise seed (overrides noise.seed)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        extra = [f"experiment.kind={args.kind}"]
        if args.seed is not None:
            extra.append(f"noise.seed={args.seed}")
        if args.out is not None:
            extra.append(f"output.dir={args.out}")
        cfg = load_config(args.config, list(args.set) + extra)
        out = Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.txt").write_text(dump_config(cfg))
        run = Run(cfg, out, max(1, args.threads))
        run.outputs.append("resolved_config.txt")
        status = COMMANDS[args.kind](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ERROR
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"{type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return ERROR
    manifest = {
        "kind": args.kind,
        "seed": cfg.noise.seed,
        "config": args.config,
        "overrides": list(args.set),
        "threads": run.threads,
        "exit_status": status,
        "outputs": run.outputs,
        "wall_time_s": time.perf_counter() - start,
        "versions": {"snse_lab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
