"""Time integration of the transformed random PDE and its energy validators.

The unknown ``v = u - z`` obeys

    dv/dt = -nu A v - B(v + z, v + z) + alpha z + f,

where ``z`` is an OU trajectory, linearly interpolated between its grid
points.  The four convective terms are evaluated together as ``B(v + z)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .noise import WindowError
from .ou import OUTrajectory, exp_weighted_integral, pullback_exponent
from .spectral import DomainSpec, Spectral, UniversalConstants, bracket_sq, inner, poincare_lambda1, spectral_for

SCHEMES = ("ETD1", "IMEX-CNAB", "RK4-reference")
BLOWUP = 1e12


class SolverBlowUp(RuntimeError):
    def __init__(self, msg: str, last_good_time: float):
        super().__init__(f"{msg} (last finite state at t={last_good_time:g}; reduce dt)")
        self.last_good_time = last_good_time


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    scheme: str = "ETD1"
    f: np.ndarray | None = field(default=None, repr=False, compare=False)
    alpha: float = 0.0
    record_every: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    v: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    d: DomainSpec
    alpha: float
    f: np.ndarray = field(repr=False)

    @cached_property
    def _sp(self) -> Spectral:
        return spectral_for(self.d)

    @cached_property
    def diagnostics(self) -> dict[str, np.ndarray]:
        sp = self._sp
        return {
            "v_H": sp.norm(self.v, "H"),
            "v_V": sp.norm(self.v, "V"),
            "v_bracket": sp.norm(self.v, "bracket"),
            "v_L4": sp.l4(self.v),
        }


def _force(cfg: SolverConfig, d: DomainSpec) -> np.ndarray:
    return np.zeros(d.shape) if cfg.f is None else np.asarray(cfg.f, dtype=float)


class _ZInterp:
    """Piecewise-linear z on the OU grid, queried at solver substeps."""

    def __init__(self, z: OUTrajectory, a: float, b: float, dt: float):
        i0 = z.index(a)
        z.index(b)
        ratio = z.dt / dt
        if ratio >= 1:
            self.sub = int(round(ratio))
            stride = 1
            bad = abs(self.sub - ratio) > 1e-6 * ratio
        else:
            # solver steps span several OU steps: use the OU grid values directly
            stride = int(round(1 / ratio))
            self.sub = 1
            bad = abs(stride - 1 / ratio) > 1e-6 / ratio
        if bad:
            raise WindowError(f"solver dt={dt} and OU grid step {z.dt} are not commensurate")
        self.z = z.z[i0::stride]
        self.i0 = 0

    def __call__(self, n: int, frac: float = 0.0) -> np.ndarray:
        """z at solver step ``n + frac`` counted from the window start."""
        q, r = divmod(n, self.sub)
        pos = r + frac
        j = self.i0 + q
        if pos == 0.0:
            return self.z[j]
        if pos == self.sub:
            return self.z[j + 1]
        w = pos / self.sub
        return (1.0 - w) * self.z[j] + w * self.z[j + 1]


def solve_v(v0: np.ndarray, z: OUTrajectory, cfg: SolverConfig, window: tuple[float, float],
            sp: Spectral | None = None) -> Trajectory:
    """Integrate on ``window = (a, b)``; ``v0`` may carry leading ensemble axes."""
    d = z.d
    sp = sp or spectral_for(d)
    lam_max = d.nu * float(np.max(sp.lam))
    if cfg.scheme == "RK4-reference" and cfg.dt > 1.0 / lam_max:
        raise StabilityError(f"RK4-reference needs dt <= 1/(nu lambda_max) = {1.0 / lam_max:.3e}, got {cfg.dt:g}")
    a, b = window
    n_steps = int(round((b - a) / cfg.dt))
    if n_steps < 0 or abs(n_steps * cfg.dt - (b - a)) > 1e-9 * max(1.0, abs(b - a)):
        raise WindowError(f"window {window} is not a whole number of steps dt={cfg.dt}")
    zi = _ZInterp(z, a, b, cfg.dt)
    lam = d.nu * sp.lam
    f = _force(cfg, d)
    alpha = cfg.alpha
    dt = cfg.dt

    def nonlinear(v, zz):
        return -sp.B(v + zz) + alpha * zz + f

    v = np.array(v0, dtype=float)
    rec_t, rec_v, rec_z = [a], [v.copy()], [zi(0)]

    if cfg.scheme == "ETD1":
        e = np.exp(-lam * dt)
        phi = -np.expm1(-lam * dt) / lam

        def step(n, v, state):
            return e * v + phi * nonlinear(v, zi(n)), state
    elif cfg.scheme == "IMEX-CNAB":
        lhs = 1.0 / (1.0 + 0.5 * dt * lam)
        rhs = 1.0 - 0.5 * dt * lam

        def step(n, v, state):
            nn = nonlinear(v, zi(n))
            if state is None:
                # Heun predictor-corrector start keeps second order
                vp = lhs * (rhs * v + dt * nn)
                n1 = nonlinear(vp, zi(n + 1))
                return lhs * (rhs * v + 0.5 * dt * (nn + n1)), nn
            return lhs * (rhs * v + dt * (1.5 * nn - 0.5 * state)), nn
    else:
        def rhs_full(v, n, frac):
            return -lam * v + nonlinear(v, zi(n, frac))

        def step(n, v, state):
            k1 = rhs_full(v, n, 0.0)
            k2 = rhs_full(v + 0.5 * dt * k1, n, 0.5)
            k3 = rhs_full(v + 0.5 * dt * k2, n, 0.5)
            k4 = rhs_full(v + dt * k3, n, 1.0)
            return v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), state

    state = None
    for n in range(n_steps):
        v, state = step(n, v, state)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > BLOWUP:
            raise SolverBlowUp(f"{cfg.scheme} state left the finite range", a + n * dt)
        if (n + 1) % cfg.record_every == 0 or n + 1 == n_steps:
            rec_t.append(a + (n + 1) * dt)
            rec_v.append(v.copy())
            rec_z.append(zi(n + 1))
    return Trajectory(times=np.array(rec_t), v=np.array(rec_v), z=np.array(rec_z),
                      d=d, alpha=alpha, f=f)


# -- validators ---------------------------------------------------------------

def weak_residual_series(traj: Trajectory, probe: np.ndarray) -> np.ndarray:
    """``d/dt (v, phi)`` minus the weak right-hand side, per recorded interval.

    The difference quotient over each interval is compared with the trapezoid
    average of ``-nu ((v, phi)) - b(v + z, v + z, phi) + (alpha z + f, phi)``.
    """
    if len(traj.times) < 3:
        raise ValueError("weak residual needs at least 3 recorded states")
    sp = traj._sp
    d = traj.d
    u = traj.v + traj.z
    rhs = (-d.nu * inner(sp.lam * traj.v, probe)
           - inner(sp.B(u), probe)
           + inner(traj.alpha * traj.z + traj.f, probe))
    lhs = np.diff(inner(traj.v, probe)) / np.diff(traj.times)
    return lhs - 0.5 * (rhs[1:] + rhs[:-1])


def weak_residual(traj: Trajectory, probe: np.ndarray) -> float:
    return float(np.max(np.abs(weak_residual_series(traj, probe))))


def _pair_integrals(h: np.ndarray, log_factor: np.ndarray, dts: np.ndarray) -> np.ndarray:
    """``J[i, j] = int_{t_i}^{t_j} h(s) W(s, t_j) ds`` by the trapezoid rule, for ``i <= j``.

    ``W(s, t)`` is the product of the per-step factors ``exp(log_factor)``
    between ``s`` and ``t``; the recursion never forms large exponentials.
    """
    n = len(h)
    J = np.zeros((n, n))
    col = np.zeros(n)
    for j in range(1, n):
        q = math.exp(log_factor[j - 1])
        col = col * q
        col[:j] += 0.5 * dts[j - 1] * (h[j - 1] * q + h[j])
        col[j] = 0.0
        J[:, j] = col
    return J


def _pair_weights(log_factor: np.ndarray) -> np.ndarray:
    """``W[i, j]`` = product of step factors from ``t_i`` to ``t_j`` (1 on the diagonal)."""
    c = np.concatenate([[0.0], np.cumsum(log_factor)])
    return np.exp(np.triu(c[None, :] - c[:, None]))


@dataclass(frozen=True)
class EnergyReport:
    max_defect: float
    worst_pair: tuple[float, float]
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)


def energy_equality_check(traj: Trajectory, consts: UniversalConstants | None = None,
                          d: DomainSpec | None = None) -> EnergyReport:
    """Both sides of the energy identity for every recorded pair ``tau <= t``.

    ``|v(t)|^2 = |v(tau)|^2 e^{-nu l1 (t - tau)}
                 + 2 int e^{-nu l1 (t - s)} (b(v, v, z) + <g, v> + <f, v> - [v]^2) ds``
    with ``g = alpha z - B(z, z)``.  The defect of a pair is relative to the
    larger of ``|v(tau)|^2`` and ``|v(t)|^2``.
    """
    d = d or traj.d
    sp = traj._sp
    v, z = traj.v, traj.z
    a = d.nu * poincare_lambda1(d)
    g = traj.alpha * z - sp.B(z)
    h = sp.b(v, v, z) + inner(g, v) + inner(traj.f, v) - bracket_sq(v, d)
    dts = np.diff(traj.times)
    J = _pair_integrals(h, -a * dts, dts)
    W = _pair_weights(-a * dts)
    e = inner(v, v)
    lhs = np.broadcast_to(e[None, :], W.shape)
    rhs = e[:, None] * W + 2 * J
    upper = np.triu(np.ones(W.shape, dtype=bool))
    scale = np.maximum(e[:, None], e[None, :])
    rel = np.where(upper & (scale > 0), np.abs(lhs - rhs) / np.where(scale > 0, scale, 1.0), 0.0)
    i, j = np.unravel_index(np.argmax(rel), rel.shape)
    return EnergyReport(float(rel[i, j]), (float(traj.times[i]), float(traj.times[j])),
                        np.triu(lhs), np.triu(rhs))


@dataclass(frozen=True)
class InequalityReport:
    margin: float
    relative_margin: float
    worst_pair: tuple[float, float]


def energy_inequality_check(traj: Trajectory, consts: UniversalConstants,
                            d: DomainSpec | None = None) -> InequalityReport:
    """Worst ``RHS - |v(t)|^2`` of the exponentially weighted energy bound over pairs ``tau < t``.

    ``RHS = |v(tau)|^2 W(tau, t) + (3/nu) int (||g||^2_{V'} + ||f||^2_{V'}) W(s, t) ds``,
    ``W(s, t) = exp(-nu l1 (t - s) + (3 C^2 / nu) int_s^t |z|^2_{L4})``.
    ``relative_margin`` divides each pair's margin by ``|v(tau)|^2``.
    """
    if len(traj.times) < 2:
        raise ValueError("energy inequality needs at least 2 recorded states")
    d = d or traj.d
    sp = traj._sp
    z = traj.z
    a = d.nu * poincare_lambda1(d)
    l4 = sp.l4(z) ** 2
    g = traj.alpha * z - sp.B(z)
    src = sp.norm(g, "Vdual") ** 2 + float(sp.norm(traj.f, "Vdual")) ** 2
    dts = np.diff(traj.times)
    logf = -a * dts + 3 * consts.C**2 / d.nu * 0.5 * (l4[1:] + l4[:-1]) * dts
    W = _pair_weights(logf)
    J = _pair_integrals(src, logf, dts)
    e = inner(traj.v, traj.v)
    rhs = e[:, None] * W + 3.0 / d.nu * J
    margin = rhs - e[None, :]
    upper = np.triu(np.ones(W.shape, dtype=bool), k=1)
    m = np.where(upper, margin, np.inf)
    rel = np.where(upper, margin / np.where(e[:, None] > 0, e[:, None], 1.0), np.inf)
    i, j = np.unravel_index(np.argmin(m), m.shape)
    return InequalityReport(float(m[i, j]), float(rel.min()),
                            (float(traj.times[i]), float(traj.times[j])))


@dataclass(frozen=True)
class TailReport:
    t: np.ndarray = field(repr=False)
    z_weighted: np.ndarray = field(repr=False)
    integrals: np.ndarray = field(repr=False)
    decays: bool
    converges: bool


def tail_decay_check(z: OUTrajectory, consts: UniversalConstants, d: DomainSpec | None = None,
                     T: float | None = None, threshold: float = 1e-8) -> TailReport:
    """Pullback decay of ``|z(-t)|^2 e^{E(-t)}`` and partial integrals of the weighted moments.

    ``E(s) = nu l1 s + (3C^2/nu) int_s^0 |z|^2_{L4}``.  The integrals are
    ``int_{-t}^0 (1 + |z|^2_{L4} + |z|^4_{L4}) e^{E(s)} ds``.
    """
    past = z.times <= 1e-12
    times = z.times[past]
    if T is not None:
        if times[0] > -T + 1e-9:
            raise WindowError(f"trajectory does not cover [-{T}, 0]")
        keep = times >= -T - 1e-9
    else:
        keep = np.ones(times.shape, dtype=bool)
    expo = pullback_exponent(z, consts)[keep]
    times = times[keep]
    l4 = z.l4_sq[past][keep]
    quantity = z.h_sq[past][keep] * np.exp(expo)
    integ = exp_weighted_integral(1 + l4 + l4**2, expo, times)
    # reorder by pullback time t = -s, ascending
    t = -times[::-1]
    quantity = quantity[::-1]
    integ = integ[::-1]
    decays = bool(np.any(quantity[1:] < threshold)) if len(t) > 1 else False
    converges = bool(len(integ) > 1 and abs(integ[-1] - integ[-2]) < threshold)
    return TailReport(t, quantity, integ, decays, converges)


def beta(d: DomainSpec) -> float:
    return 0.5 * d.nu * poincare_lambda1(d)


def write_trajectory_csv(traj: Trajectory, path, consts: UniversalConstants | None = None,
                         precision: int = 17) -> None:
    fmt = f"{{:.{precision}g}}"
    diag = traj.diagnostics
    cols = ["time", "v_H", "v_V", "v_bracket", "v_L4"]
    series = [traj.times, diag["v_H"], diag["v_V"], diag["v_bracket"], diag["v_L4"]]
    if consts is not None and len(traj.times) > 1:
        rep = energy_equality_check(traj, consts)
        t0 = 0
        cols += ["energy_lhs", "energy_rhs"]
        series += [rep.lhs[t0], rep.rhs[t0]]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for row in zip(*series):
            wr.writerow([fmt.format(float(x)) for x in row])
