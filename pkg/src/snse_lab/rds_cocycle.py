"""The random dynamical system ``phi`` built from the OU transform.

``phi(t, theta_s omega, x) = v(t) + z(t)`` where ``z`` is the OU trajectory
driven by the path shifted by ``s`` and ``v`` solves the transformed PDE from
``x - z(0)``.  Because OU initial draws are keyed to absolute path steps, the
shifted OU trajectory is bit-identical to a relabelling of the unshifted one,
so the cocycle identity is limited only by solver restarts and rounding.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .noise import NoisePath, WindowError, shift_path
from .ou import OUConfig, OUTrajectory, ou_evolve
from .solver import SolverConfig, solve_v
from .spectral import DomainSpec, UniversalConstants, spectral_for


@dataclass(frozen=True, eq=False)
class CocycleContext:
    """Everything ``phi`` needs; immutable apart from the read-through OU cache.

    With ``zero_noise`` the OU trajectory is identically zero on the path's
    grid, which turns ``phi`` into the deterministic forced NSE flow.
    """
    path: NoisePath
    ou: OUConfig
    solver: SolverConfig
    consts: UniversalConstants | None = None
    zero_noise: bool = False
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.path.d.shape != self.ou.d.shape:
            raise WindowError("path and OU config use different cutoffs")
        if self.solver.alpha != self.ou.alpha:
            object.__setattr__(self, "solver", replace(self.solver, alpha=self.ou.alpha))
        object.__setattr__(self, "sp", spectral_for(self.ou.d))

    @property
    def d(self) -> DomainSpec:
        return self.ou.d

    def _key(self, shift: float) -> int:
        k = round(shift / self.path.dt)
        if abs(k * self.path.dt - shift) > 1e-9 * max(1.0, abs(shift)):
            raise WindowError(f"shift {shift} is not a multiple of the path step {self.path.dt}")
        return int(k)

    def z(self, shift: float = 0.0) -> OUTrajectory:
        """OU trajectory of the path shifted by ``shift``, cached per grid offset."""
        k = self._key(shift)
        hit = self._cache.get(k)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._cache.get(k)
            if hit is None:
                ws = shift_path(self.path, k * self.path.dt)
                if self.zero_noise:
                    hit = OUTrajectory.zeros(ws.times, self.d, self.ou.alpha)
                else:
                    hit = ou_evolve(ws, self.ou)
                self._cache[k] = hit
        return hit

    def with_alpha(self, alpha: float) -> CocycleContext:
        return CocycleContext(self.path, replace(self.ou, alpha=alpha),
                              replace(self.solver, alpha=alpha), self.consts, self.zero_noise)


def _final_state(ctx: CocycleContext, v0: np.ndarray, z: OUTrajectory, a: float, b: float) -> np.ndarray:
    n = max(1, int(round((b - a) / ctx.solver.dt)))
    cfg = replace(ctx.solver, record_every=n)
    return solve_v(v0, z, cfg, (a, b), sp=ctx.sp).v[-1]


def phi(t: float, ctx: CocycleContext, shift: float, x: np.ndarray) -> np.ndarray:
    """State at time ``t`` started from ``x`` over the shifted noise ``theta_shift omega``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, dtype=float)
    if t == 0:
        return x.copy()
    z = ctx.z(shift)
    z0, zt = z.at(0.0), z.at(t)
    return _final_state(ctx, x - z0, z, 0.0, t) + zt


def cocycle_check(ctx: CocycleContext, t: float, s: float, x: np.ndarray) -> float:
    """Relative H error of ``phi(t+s, omega, x)`` against ``phi(t, theta_s omega, phi(s, omega, x))``."""
    direct = phi(t + s, ctx, 0.0, x)
    composed = phi(t, ctx, s, phi(s, ctx, 0.0, x))
    den = np.sqrt(np.sum(direct**2, axis=(-2, -1)))
    err = np.sqrt(np.sum((direct - composed) ** 2, axis=(-2, -1)))
    return float(np.max(err / np.maximum(den, np.finfo(float).tiny)))


def reconstruct_u(ctx: CocycleContext, t: float, s: float, u0: np.ndarray) -> np.ndarray:
    """``u(t, s; omega, u0) = v(t, s; omega, u0 - z(s)) + z(t)`` on the unshifted noise."""
    if t < s:
        raise ValueError("need s <= t")
    u0 = np.asarray(u0, dtype=float)
    if t == s:
        return u0.copy()
    z = ctx.z(0.0)
    return _final_state(ctx, u0 - z.at(s), z, s, t) + z.at(t)


def lipschitz_estimate(ctx: CocycleContext, t: float, x1: np.ndarray, x2: np.ndarray,
                       shift: float = 0.0) -> float:
    """Observed ratio ``|phi(t,x1) - phi(t,x2)| / |x1 - x2|``."""
    num = np.linalg.norm(phi(t, ctx, shift, x1) - phi(t, ctx, shift, x2))
    den = np.linalg.norm(np.asarray(x1) - np.asarray(x2))
    return float(num / den) if den > 0 else 0.0


def alpha_independence_check(ctx: CocycleContext, alpha2: float, t: float, x: np.ndarray,
                             shift: float = 0.0) -> float:
    """Relative H gap between ``phi_alpha`` and ``phi_alpha2`` on the same path."""
    a = phi(t, ctx, shift, x)
    b = phi(t, ctx.with_alpha(alpha2), shift, x)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), math.ulp(1.0)))
