"""Stationary Ornstein-Uhlenbeck process driven by a noise path.

Mode j solves ``dz = -theta_j z dt + sigma_j dbeta_j`` with
``theta_j = nu lambda_j + alpha``.  The recursion is exact in the drift and
uses a single deterministic weight on each step increment, so evolving a
shifted path reproduces the reindexed trajectory bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .noise import (STREAM_OU_INIT, NoisePath, RKHSSpec, WindowError,
                    counter_normals, shift_path)
from .spectral import DomainSpec, Spectral, UniversalConstants, eigenvalues, poincare_lambda1, spectral_for

STREAM_MC = 2
WEIGHTINGS = ("variance", "midpoint")


@dataclass(frozen=True)
class OUConfig:
    alpha: float
    d: DomainSpec
    rkhs: RKHSSpec
    weighting: str = "variance"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")

    @property
    def theta(self) -> np.ndarray:
        return self.d.nu * eigenvalues(self.d) + self.alpha

    @property
    def stationary_var(self) -> np.ndarray:
        return self.rkhs.sigma(self.d) ** 2 / (2 * self.theta)


_SERIES = ("h_sq", "l4_sq", "g_vdual_sq")


@dataclass(frozen=True, eq=False)
class OUTrajectory:
    times: np.ndarray
    z: np.ndarray = field(repr=False)
    alpha: float
    seed: int | None
    d: DomainSpec

    @classmethod
    def zeros(cls, times: np.ndarray, d: DomainSpec, alpha: float = 0.0) -> OUTrajectory:
        times = np.asarray(times, dtype=float)
        return cls(times=times, z=np.zeros((len(times),) + d.shape), alpha=alpha, seed=None, d=d)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def index(self, t: float) -> int:
        i = int(round((t - self.times[0]) / self.dt))
        if not 0 <= i < len(self.times) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise WindowError(f"t={t} not on the trajectory grid [{self.times[0]}, {self.times[-1]}]")
        return i

    def at(self, t: float) -> np.ndarray:
        return self.z[self.index(t)]

    def _carry(self, new: OUTrajectory, sl: slice) -> OUTrajectory:
        # reuse norm series already computed on the parent
        for name in _SERIES:
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name][sl]
        return new

    def window(self, a: float, b: float) -> OUTrajectory:
        i, j = self.index(a), self.index(b)
        sl = slice(i, j + 1)
        return self._carry(OUTrajectory(self.times[sl], self.z[sl], self.alpha, self.seed, self.d), sl)

    def shifted(self, s: float) -> OUTrajectory:
        """Relabel times so that the value at old time ``s`` sits at 0."""
        k = int(round(s / self.dt))
        sl = slice(None)
        return self._carry(OUTrajectory(self.times - k * self.dt, self.z, self.alpha, self.seed, self.d), sl)

    def sub(self, every: int) -> OUTrajectory:
        sl = slice(None, None, every)
        return self._carry(OUTrajectory(self.times[sl], self.z[sl], self.alpha, self.seed, self.d), sl)

    # -- norm series, evaluated in batches -----------------------------------

    def _batched(self, fn, chunk: int = 1024) -> np.ndarray:
        return np.concatenate([fn(self.z[i:i + chunk]) for i in range(0, len(self.z), chunk)])

    @cached_property
    def _sp(self) -> Spectral:
        return spectral_for(self.d)

    @cached_property
    def h_sq(self) -> np.ndarray:
        return np.sum(self.z**2, axis=(-2, -1))

    @cached_property
    def l4_sq(self) -> np.ndarray:
        return self._batched(self._sp.l4) ** 2

    @cached_property
    def g_vdual_sq(self) -> np.ndarray:
        """``||alpha z - B(z, z)||^2_{V'}`` per time."""
        sp = self._sp

        def fn(zc):
            return sp.norm(self.alpha * zc - sp.B(zc), "Vdual") ** 2

        return self._batched(fn)


def _step_weight(theta: np.ndarray, dt: float, weighting: str) -> np.ndarray:
    x = theta * dt
    if weighting == "midpoint":
        return np.exp(-0.5 * x)
    # matches the exact one-step variance sigma^2 (1 - e^{-2x}) / (2 theta)
    return np.sqrt(-np.expm1(-2 * x) / (2 * x))


def stationary_draw(w: NoisePath, cfg: OUConfig) -> np.ndarray:
    """Initial value at the path's first grid point, keyed by its absolute step."""
    modes = np.arange(cfg.d.n_modes).reshape(cfg.d.shape)
    xi = counter_normals(w.seed, STREAM_OU_INIT, modes, w.start)
    return np.sqrt(cfg.stationary_var) * xi


def ou_evolve(w: NoisePath, cfg: OUConfig, t_start: float | None = None) -> OUTrajectory:
    """Evolve from the stationary law at ``t_start`` (default: the path's past end)."""
    if w.d.shape != cfg.d.shape:
        raise WindowError("path and OU config use different cutoffs")
    i0 = 0 if t_start is None else w.index(t_start)
    if i0:
        w = _crop(w, i0)
    theta = cfg.theta
    decay = np.exp(-theta * w.dt)
    weight = _step_weight(theta, w.dt, cfg.weighting)
    z = np.empty((w.n_steps + 1,) + cfg.d.shape)
    z[0] = stationary_draw(w, cfg)
    inc = w.increments
    for n in range(w.n_steps):
        z[n + 1] = decay * z[n] + weight * inc[n]
    return OUTrajectory(times=w.times, z=z, alpha=cfg.alpha, seed=w.seed, d=cfg.d)


def _crop(w: NoisePath, i0: int) -> NoisePath:
    return replace(w, start=w.start + i0, increments=w.increments[i0:])


def ou_shift_covariance_check(w: NoisePath, cfg: OUConfig, s: float,
                              burn_in: float | None = None) -> float:
    """Max discrepancy between ``z(shifted path)(t)`` and ``z(path)(t + s)``.

    Without ``burn_in`` the shifted evolution starts at the same absolute time
    and the two agree exactly.  With ``burn_in`` the shifted evolution starts
    at relative time ``t_past`` (a later absolute time) from a fresh
    stationary draw, and only times at least ``burn_in`` after that start
    are compared, so the result measures exponential forgetting.
    """
    base = ou_evolve(w, cfg)
    ws = shift_path(w, s)
    if burn_in is None:
        zs = ou_evolve(ws, cfg)
        t0 = zs.times[0]
    else:
        zs = ou_evolve(ws, cfg, t_start=w.t_past)
        t0 = w.t_past + burn_in
    keep = zs.times >= t0 - 1e-12
    ts = zs.times[keep]
    if ts.size == 0:
        raise WindowError("burn-in leaves nothing to compare")
    idx = np.array([base.index(t + s) for t in ts])
    return float(np.max(np.abs(zs.z[keep] - base.z[idx])))


def transient_bound(w: NoisePath, cfg: OUConfig, s: float, burn_in: float) -> float:
    """``e^{-theta_min burn_in}`` times the largest possible initial mismatch seen on this path."""
    zs = ou_evolve(shift_path(w, s), cfg, t_start=w.t_past)
    base = ou_evolve(w, cfg)
    mismatch = np.max(np.abs(zs.z[0] - base.at(w.t_past + s)))
    return float(math.exp(-np.min(cfg.theta) * burn_in) * mismatch)


def ergodic_average(traj: OUTrajectory, T: float, norm: str = "H") -> float:
    """``(1/T) int_{-T}^0 |z(s)|^2 ds`` by the trapezoid rule."""
    if T <= 0:
        raise ValueError("T must be positive")
    if traj.times[0] > -T + 1e-9 or traj.times[-1] < -1e-9:
        raise WindowError(f"trajectory does not cover [-{T}, 0]")
    sub = traj.window(-T, 0.0)
    series = {"H": sub.h_sq, "L4": sub.l4_sq}[norm]
    return float(np.trapezoid(series, sub.times) / T)


def mc_l4_moment(d: DomainSpec, rkhs: RKHSSpec, alpha: float, samples: int,
                 seed: int, sp: Spectral | None = None) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``|z_alpha(0)|^2_{L4}`` from stationary draws.

    Draws use common random numbers across alpha and amplitude changes.
    """
    sp = sp or spectral_for(d)
    modes = np.arange(d.n_modes).reshape(d.shape)
    xi = counter_normals(seed, STREAM_MC, modes[None], np.arange(samples)[:, None, None])
    std = rkhs.sigma(d) / np.sqrt(2 * (d.nu * eigenvalues(d) + alpha))
    vals = np.concatenate([sp.l4(std * xi[i:i + 512]) ** 2 for i in range(0, samples, 512)])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0


def smallness_threshold(d: DomainSpec, consts: UniversalConstants) -> float:
    return d.nu**2 * poincare_lambda1(d) / (6 * consts.C**2)


class AlphaSearchError(RuntimeError):
    pass


def select_alpha(d: DomainSpec, rkhs: RKHSSpec, consts: UniversalConstants,
                 mc_samples: int = 2000, seed: int = 0, cap: int = 10**6) -> int:
    """Smallest integer alpha whose estimate + 3 SE lies below ``nu^2 lambda_1 / (6 C^2)``.

    The moment decreases in alpha, so a doubling search followed by bisection
    finds the smallest admissible integer.
    """
    if consts.C <= 0:
        raise ValueError("C must be positive")
    sp = spectral_for(d)
    bound = smallness_threshold(d, consts)

    def ok(a: int) -> bool:
        m, se = mc_l4_moment(d, rkhs, a, mc_samples, seed, sp)
        return m + 3 * se < bound

    if ok(0):
        return 0
    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > cap:
            raise AlphaSearchError(f"no alpha <= {cap} satisfies the smallness condition")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def pullback_exponent(traj: OUTrajectory, consts: UniversalConstants) -> np.ndarray:
    """``nu lambda_1 s + (3 C^2 / nu) int_s^0 |z|^2_{L4}`` at every grid time ``s <= 0``.

    Returned on ``traj.times`` restricted to ``s <= 0`` (same order).
    """
    d = traj.d
    past = traj.times <= 1e-12
    t = traj.times[past]
    l4 = traj.l4_sq[past]
    seg = 0.5 * (l4[1:] + l4[:-1]) * np.diff(t)
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return d.nu * poincare_lambda1(d) * t + 3 * consts.C**2 / d.nu * tail


def exp_weighted_integral(p: np.ndarray, expo: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cumulative ``int_{s}^{t_last} p(r) e^{expo(r)} dr`` for every grid ``s``.

    The exponent is linear on each step and ``p`` is averaged over the step,
    so pure exponentials are integrated exactly.
    """
    dt = np.diff(t)
    e0, e1 = expo[:-1], expo[1:]
    de = e1 - e0
    small = np.abs(de) < 1e-8
    safe = np.where(small, 1.0, de)
    w = np.where(small, np.exp(0.5 * (e0 + e1)), (np.exp(e1) - np.exp(e0)) / safe) * dt
    seg = 0.5 * (p[1:] + p[:-1]) * w
    return np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])


def ergodic_time_bound_check(traj: OUTrajectory, consts: UniversalConstants,
                             d: DomainSpec | None = None, T: float | None = None) -> float | None:
    """Smallest grid ``t0`` with ``(3C^2/nu) int_{-t}^0 |z|^2_{L4} < nu lambda_1 t / 2`` on ``[t0, T]``.

    Returns ``None`` when the inequality still fails at the horizon.
    """
    d = d or traj.d
    t = traj.times[traj.times <= 1e-12]
    if T is not None:
        if t[0] > -T + 1e-9:
            raise WindowError(f"trajectory does not cover [-{T}, 0]")
        t = t[t >= -T - 1e-9]
    lam = d.nu * poincare_lambda1(d)
    expo = pullback_exponent(traj, consts)[-len(t):]
    # with u = -t the condition reads expo(-u) < -nu lambda_1 u / 2
    u = -t[::-1]
    fail = ~(expo[::-1] < -0.5 * lam * u)
    k = np.flatnonzero(fail)[-1] + 1  # fail[0] always holds: u = 0
    return float(u[k]) if k < len(u) else None


def write_ou_csv(traj: OUTrajectory, path, precision: int = 17) -> None:
    fmt = f"{{:.{precision}g}}"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time", "z_H", "z_L4", "g_Vdual"])
        for row in zip(traj.times, np.sqrt(traj.h_sq), np.sqrt(traj.l4_sq), np.sqrt(traj.g_vdual_sq)):
            wr.writerow([fmt.format(float(x)) for x in row])
