"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``;
the lines are echoed in an "acceptance criteria" section at the end.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau

from conftest import ACCEPTANCE_LINES
from oracles import basis_fields, convective
from snse_lab.attractor import (RadiusFunction, RandomBall, absorbing_ball, classR_decay,
                                compactness_diagnostics, hausdorff, linear_decay_reference, pullback_omega_limit,
                                sample_ball)
from snse_lab.cli import main as cli_main
from snse_lab.noise import RKHSSpec, coarsen, sample_path
from snse_lab.ou import (OUConfig, ergodic_average, ergodic_time_bound_check, ou_evolve,
                         ou_shift_covariance_check, select_alpha, transient_bound)
from snse_lab.rds_cocycle import CocycleContext, cocycle_check, phi, reconstruct_u
from snse_lab.solver import SolverConfig, energy_equality_check, energy_inequality_check, solve_v
from snse_lab.spectral import DomainSpec, Spectral, mode_field, poincare_lambda1, random_fields

SPEC = RKHSSpec(c=5.0)
FORCE_AMP = 20.0


def record(num: int, name: str, ok: bool, detail: str, start: float, budget: float) -> bool:
    took = time.perf_counter() - start
    ok = bool(ok) and took < budget
    line = f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail} ({took:.1f}s of {budget:g}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def forcing(d):
    return mode_field(1, 2, d, FORCE_AMP)


def unit_initial(d, seed):
    u = random_fields(d, 2, seed)[1]
    return u / np.linalg.norm(u)


def test_criterion_01_trilinear_identities(sp, d):
    t0 = time.perf_counter()
    u, v, w = random_fields(d, 601, 2024)[1:].reshape(3, 200, *d.shape)
    hu, vv, vw = sp.norm(u, "H"), sp.norm(v, "V"), sp.norm(w, "V")
    skew = np.max(np.abs(sp.b(u, v, v)) / (hu * vv**2))
    anti = np.max(np.abs(sp.b(u, v, w) + sp.b(u, w, v)) / (hu * vv * vw))
    ok = skew <= 1e-10 and anti <= 1e-10
    assert record(1, "trilinear identities", ok, f"200 triples, max skew {skew:.2e}, max antisym {anti:.2e}",
                  t0, 10)


def test_criterion_02_oracle_equivalence():
    t0 = time.perf_counter()
    d = DomainSpec(1.0, 1.0, 6, 6)
    sp = Spectral(d)
    U, G, W = basis_fields(d)
    u = random_fields(d, 51, 99)[1:]
    ref = convective(u, U, G, W)
    err = float(np.max(np.abs(sp.B(u) - ref)) / np.max(np.abs(ref)))
    assert record(2, "oracle equivalence", err <= 1e-10, f"50 fields at 6x6, max rel error {err:.2e}", t0, 30)


def test_criterion_03_form_bound(sp, d, consts):
    t0 = time.perf_counter()
    # index 0 of every seed is the lowest mode, so skip it to keep the sets disjoint
    fresh = random_fields(d, 1001, 31337)[1:]
    ratio = sp.norm(sp.B(fresh), "Vdual") / (consts.C1 * sp.l4(fresh) ** 2)
    worst = float(ratio.max())
    assert record(3, "form bound", worst <= 1.0, f"1000 fresh fields, max ||B||/(C1|u|^2) = {worst:.4f}", t0, 30)


def test_criterion_04_ou_stationarity(d):
    t0 = time.perf_counter()
    cfg = OUConfig(0.0, d, SPEC)
    n = 10_000
    z0 = np.empty((n,) + d.shape)
    for seed in range(n):
        z0[seed] = ou_evolve(sample_path(SPEC, d, -0.1, 0.0, 0.01, seed), cfg).z[-1]
    target = SPEC.sigma(d) ** 2 / (2 * cfg.theta)
    dev = np.abs(z0.var(axis=0, ddof=1) - target) / (target * math.sqrt(2.0 / (n - 1)))
    var_ok = bool(np.all(dev <= 3.0))

    # one-mode recursion against the fine-grid convolution on the same path
    d1 = DomainSpec(1.0, 1.0, 2, 2)
    c1 = OUConfig(0.0, d1, SPEC)
    fine = sample_path(SPEC, d1, 0.0, 1.0, 1e-3 / 16, 7)
    z = ou_evolve(coarsen(fine, 16), c1)
    th = float(c1.theta[0, 0])
    mid = (np.arange(fine.n_steps) + 0.5) * fine.dt
    acc = np.concatenate([[0.0], np.cumsum(np.exp(th * mid) * fine.increments[:, 0, 0])])[::16]
    ref = np.exp(-th * z.times) * (z.z[0, 0, 0] + acc)
    rel = float(np.max(np.abs(z.z[:, 0, 0] - ref)) / np.max(np.abs(ref)))
    ok = var_ok and rel <= 2e-2
    assert record(4, "OU stationarity", ok,
                  f"{n} seeds, max |var - target| = {dev.max():.2f} SE over {d.n_modes} modes; "
                  f"convolution oracle rel error {rel:.2e}", t0, 60)


def test_criterion_05_shift_covariance(d):
    t0 = time.perf_counter()
    cfg = OUConfig(0.0, d, SPEC)
    # burn-in of 10 / theta_min, rounded up to the time grid
    burn = math.ceil(10.0 / float(np.min(cfg.theta)) / 1e-3) * 1e-3
    worst = 0.0
    for seed in range(5):
        w = sample_path(SPEC, d, -burn, 1.0, 1e-3, seed)
        for s in (1e-3, 0.25, -0.1):
            worst = max(worst, ou_shift_covariance_check(w, cfg, s))
    # exponential forgetting of a fresh initial draw, reported alongside
    w = sample_path(SPEC, d, -1.0, 1.0, 1e-3, 0)
    forget = ou_shift_covariance_check(w, cfg, 1e-3, burn_in=burn)
    bound = transient_bound(w, cfg, 1e-3, burn)
    ok = worst <= 1e-6 and forget <= bound * (1 + 1e-9)
    assert record(5, "shift covariance", ok,
                  f"max discrepancy {worst:.1e} after burn-in {burn:.3f}; fresh-draw gap {forget:.1e} "
                  f"<= transient bound {bound:.1e}", t0, 10)


def test_criterion_06_slln(d):
    t0 = time.perf_counter()
    cfg = OUConfig(0.0, d, SPEC)
    target = float(np.sum(SPEC.sigma(d) ** 2 / (2 * cfg.theta)))
    rel = []
    for seed in range(20):
        z = ou_evolve(sample_path(SPEC, d, -200.0, 0.0, 0.01, seed), cfg)
        rel.append(abs(ergodic_average(z, 200.0) / target - 1))
    good = int(np.sum(np.array(rel) <= 0.05))
    assert record(6, "SLLN", good >= 18, f"{good}/20 seeds within 5%, worst {max(rel):.3%}", t0, 60)


def test_criterion_07_cocycle(d):
    t0 = time.perf_counter()
    errs, ident = [], 0.0
    for seed in range(10):
        w = sample_path(SPEC, d, -1.0, 2.0, 1e-3, seed)
        ctx = CocycleContext(w, OUConfig(0.0, d, SPEC), SolverConfig(1e-3, "ETD1", forcing(d)))
        x = reconstruct_u(ctx, 0.0, -1.0, unit_initial(d, seed))  # state after a unit burn-in
        errs.append(cocycle_check(ctx, 1.0, 1.0, x))
        ident = max(ident, float(np.max(np.abs(phi(0.0, ctx, 0.0, x) - x))))
    ok = max(errs) <= 1e-6 and ident <= 1e-12
    assert record(7, "cocycle property", ok, f"10 seeds, max rel error {max(errs):.1e}, identity {ident:.1e}",
                  t0, 120)


def _energy_defects(d, seed):
    fine = sample_path(SPEC, d, -1.0, 1.0, 5e-4, seed)
    x0 = unit_initial(d, seed)
    out = []
    for k in (2, 1):
        dt = 5e-4 * k
        w = coarsen(fine, k) if k > 1 else fine
        z = ou_evolve(w, OUConfig(0.0, d, SPEC))
        cfg = SolverConfig(dt, "ETD1", forcing(d))
        v0 = solve_v(x0 - z.at(-1.0), z, SolverConfig(dt, "ETD1", forcing(d), record_every=10**9),
                     (-1.0, 0.0)).v[-1]
        out.append(energy_equality_check(solve_v(v0, z, cfg, (0.0, 1.0))).max_defect)
    return out


def test_criterion_08_energy_equality(d):
    t0 = time.perf_counter()
    rows = [_energy_defects(d, seed) for seed in range(5)]
    coarse = max(r[0] for r in rows)
    ratios = [r[0] / r[1] for r in rows]
    ok = coarse <= 5e-3 and all(abs(q - 2.0) <= 0.6 for q in ratios)
    assert record(8, "energy equality", ok,
                  f"5 runs, max defect {coarse:.2e} at dt=1e-3, ratios "
                  + ", ".join(f"{q:.2f}" for q in ratios), t0, 120)


def test_criterion_09_energy_inequality(d, consts):
    t0 = time.perf_counter()
    worst = math.inf
    for seed in range(50):
        z = ou_evolve(sample_path(SPEC, d, 0.0, 1.0, 1e-3, seed), OUConfig(0.0, d, SPEC))
        x0 = 3.0 * unit_initial(d, seed)
        traj = solve_v(x0 - z.at(0.0), z, SolverConfig(1e-3, "ETD1", forcing(d)), (0.0, 1.0))
        worst = min(worst, energy_inequality_check(traj, consts).relative_margin)
    assert record(9, "energy inequality", worst >= -1e-6, f"50 runs, worst relative margin {worst:.3e}", t0, 180)


def test_criterion_10_class_R(d, consts):
    t0 = time.perf_counter()
    alpha = select_alpha(d, SPEC, consts, 2000, 0)
    cfg = OUConfig(float(alpha), d, SPEC)
    radius = RadiusFunction("constant", 10.0)
    tails = []
    for seed in range(100):
        z = ou_evolve(sample_path(SPEC, d, -150.0, 0.0, 0.02, seed), cfg)
        tails.append(classR_decay(radius, z, consts, d, 150.0, tail=0.2, eps=1e-6).tail_max)
    good = int(np.sum(np.array(tails) < 1e-6))
    big = SPEC.scaled(1e3)
    zb = ou_evolve(sample_path(big, d, -150.0, 0.0, 0.02, 0), OUConfig(0.0, d, big))
    not_found = ergodic_time_bound_check(zb, consts, d, 150.0) is None
    ok = good >= 95 and not_found
    assert record(10, "class R decay", ok,
                  f"alpha={alpha}, {good}/100 seeds with tail q < 1e-6 (largest {max(tails):.1e}); "
                  f"1e3-scaled noise not-found={not_found}", t0, 180)


def test_criterion_11_absorption(d, consts):
    t0 = time.perf_counter()
    horizon = 10.0
    f = forcing(d)
    inside, worst = 0, 0.0
    for seed in range(20):
        w = sample_path(SPEC, d, -horizon, 0.0, 1e-3, seed)
        ctx = CocycleContext(w, OUConfig(0.0, d, SPEC), SolverConfig(1e-3, "ETD1", f), consts)
        z = ctx.z(0.0)
        r13, _ = absorbing_ball(z, consts, d, f, horizon)
        R = 10.0 * r13
        t_star = classR_decay(RadiusFunction("constant", R), z, consts, d, horizon).first_below(1.0)
        if t_star is None:
            continue
        u0 = reconstruct_u(ctx, 0.0, -t_star, sample_ball(d, R, 16, seed, interior=False))
        ratio = float(np.max(np.sqrt(np.sum(u0**2, axis=(-2, -1)))) / r13)
        worst = max(worst, ratio)
        inside += ratio <= 1.0
    assert record(11, "absorption", inside == 20, f"{inside}/20 seeds absorbed, max |u(0)|/r13 = {worst:.3f}",
                  t0, 300)


def test_criterion_12_pullback_convergence(d, consts):
    t0 = time.perf_counter()
    sched = 0.001 * 2.0 ** np.arange(10)
    lam_hi = 16 * poincare_lambda1(d)

    # linear test mode: no noise, no forcing, members in the lowest mode
    w = sample_path(SPEC, d, -1.0, 0.0, 1e-3, 0)
    lin = CocycleContext(w, OUConfig(0.0, d, SPEC), SolverConfig(1e-3, "ETD1"), consts, zero_noise=True)

    def lowest(k, R):
        return np.stack([mode_field(1, 1, d, R), mode_field(1, 1, d, -0.3 * R)])

    res = pullback_omega_limit(lin, RandomBall(RadiusFunction("constant", 10.0)), sched[:6], 2,
                               members_init=lowest)
    zero = np.zeros((1,) + d.shape)
    lin_err = max(abs(hausdorff(s, zero, "semi") - linear_decay_reference(lowest(0, 10.0), t, d))
                  for s, t in zip(res.snapshots, sched[:6]))

    decreasing, fractions, taus = 0, [], []
    for seed in range(20):
        w = sample_path(SPEC, d, -(sched[-1] + 2.0), 0.0, 1e-3, seed)
        ctx = CocycleContext(w, OUConfig(0.0, d, SPEC), SolverConfig(1e-3, "ETD1", forcing(d)), consts)
        res = pullback_omega_limit(ctx, RandomBall(RadiusFunction("constant", 10.0)), sched, 16, seed)
        decreasing += res.decreasing_from(0)
        hf = [float(np.mean(compactness_diagnostics(s, lam_hi, d).high_fraction)) for s in res.snapshots]
        fractions.append(hf)
        taus.append(kendalltau(sched, hf)[0])
    tau = float(kendalltau(sched, np.mean(fractions, axis=0))[0])
    ok = lin_err <= 1e-6 and decreasing >= 18 and tau <= 0
    assert record(12, "pullback convergence", ok,
                  f"linear error {lin_err:.1e}; {decreasing}/20 seeds strictly decreasing; "
                  f"mean high-mode fraction tau {tau:.3f} ({sum(t <= 0 for t in taus)}/20 seeds tau <= 0)",
                  t0, 600)


def test_criterion_13_reproducibility(tmp_path):
    t0 = time.perf_counter()
    base = ["--set", "experiment.T=0.2", "--set", "experiment.burn_in=0.1",
            "--set", "experiment.schedule=0.004,0.016,0.064", "--set", "experiment.members=12", "--seed", "3"]
    runs = {}
    for name, kind, threads in [("sim_a", "simulate", 1), ("sim_b", "simulate", 1),
                                ("gen_a", "noise-gen", 1), ("gen_b", "noise-gen", 1),
                                ("pb_1", "pullback", 1), ("pb_8", "pullback", 8)]:
        out = tmp_path / name
        runs[name] = cli_main([kind, "--out", str(out), "--threads", str(threads)] + base)

    def same(a, b, files):
        return all((tmp_path / a / f).read_bytes() == (tmp_path / b / f).read_bytes() for f in files)

    checks = {
        "simulate": same("sim_a", "sim_b", ["trajectory.csv", "ou.csv", "verdict.csv"]),
        "noise-gen": same("gen_a", "gen_b", ["path.pnse"]),
        "threads 1 vs 8": same("pb_1", "pb_8", ["convergence.csv", "ensemble.ensb", "verdict.csv"]),
    }
    ok = all(checks.values()) and all(code in (0, 2) for code in runs.values())
    assert record(13, "reproducibility", ok, ", ".join(f"{k} {'identical' if v else 'DIFFER'}"
                                                       for k, v in checks.items()), t0, 60)


if __name__ == "__main__":
    import pytest
    sys.exit(pytest.main([str(Path(__file__)), "-v", "-p", "no:cacheprovider"]))
