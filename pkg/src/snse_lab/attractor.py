"""Class-R radii, absorbing balls, pullback ensembles and set distances.

All radii are finite-horizon versions of their pullback definitions: the
half line ``s <= 0`` is cut to ``[-T, 0]``.  With

    W(s) = exp(nu lambda_1 s + (3 C^2 / nu) int_s^0 |z|^2_{L4}),

the radii read r1 = |z(0)|, r2^2 = sup |z|^2 W, r3^2 = int |z|^2 W,
r4^2 = int |z|^4_{L4} W, r5^2 = int W, and r11, r12 = |z(0)|, r13 = r11 + r12
bound the absorbing ball.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import ndtr
from scipy.stats import kendalltau

from .noise import WindowError, counter_normals
from .ou import OUTrajectory, exp_weighted_integral, pullback_exponent
from .rds_cocycle import CocycleContext, reconstruct_u
from .solver import SolverBlowUp
from .spectral import DomainSpec, UniversalConstants, eigenvalues, poincare_lambda1, spectral_for

RADIUS_KINDS = ("constant", "r1", "r2", "r3", "r4", "r5", "r11", "r12", "r13")
STREAM_ENSEMBLE = 3


# -- radii --------------------------------------------------------------------

def _horizon(z: OUTrajectory, T: float) -> OUTrajectory:
    if z.times[0] > -T + 1e-9 * max(1.0, T) or z.times[-1] < -1e-12:
        raise WindowError(f"trajectory [{z.times[0]}, {z.times[-1]}] does not cover [-{T}, 0]")
    return z.window(-T, 0.0)


def _r11_sq(z: OUTrajectory, consts: UniversalConstants, d: DomainSpec, expo: np.ndarray,
            f: np.ndarray | None) -> float:
    f_sq = 0.0 if f is None else float(spectral_for(d).norm(np.asarray(f, float), "Vdual") ** 2)
    forcing = exp_weighted_integral(z.g_vdual_sq + f_sq, expo, z.times)
    with np.errstate(over="ignore"):
        inner = 2.0 * z.h_sq * np.exp(expo) + 3.0 / d.nu * forcing
    return 2.0 + float(np.max(inner))


def eval_radius(kind: str, z: OUTrajectory, consts: UniversalConstants, d: DomainSpec | None = None,
                T: float = 0.0, f: np.ndarray | None = None, value: float = 1.0) -> float:
    """Radius ``kind`` at the noise whose OU trajectory is ``z``, on the horizon ``[-T, 0]``."""
    if kind not in RADIUS_KINDS:
        raise ValueError(f"unknown radius kind {kind!r}")
    d = d or z.d
    if kind == "constant":
        return float(value)
    if kind in ("r1", "r12"):
        return float(math.sqrt(z.h_sq[z.index(0.0)]))
    if kind == "r13":
        return eval_radius("r11", z, consts, d, T, f) + eval_radius("r12", z, consts, d, T, f)
    zw = _horizon(z, T)
    expo = pullback_exponent(zw, consts)
    if kind == "r11":
        return math.sqrt(_r11_sq(zw, consts, d, expo, f))
    with np.errstate(over="ignore"):
        if kind == "r2":
            return math.sqrt(float(np.max(zw.h_sq * np.exp(expo))))
        p = {"r3": zw.h_sq, "r4": zw.l4_sq**2, "r5": np.ones_like(expo)}[kind]
        return math.sqrt(float(exp_weighted_integral(p, expo, zw.times)[0]))


@dataclass(frozen=True)
class RadiusFunction:
    kind: str = "constant"
    value: float = 1.0
    T: float = 0.0
    f: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in RADIUS_KINDS:
            raise ValueError(f"unknown radius kind {self.kind!r}")
        if self.T < 0:
            raise ValueError("horizon must be nonnegative")

    def __call__(self, z: OUTrajectory, consts: UniversalConstants) -> float:
        return eval_radius(self.kind, z, consts, z.d, self.T, self.f, self.value)


@dataclass(frozen=True)
class RandomBall:
    """Closed H-ball centred at 0 whose radius depends on the noise."""
    radius: RadiusFunction

    def at(self, z: OUTrajectory, consts: UniversalConstants, shift: float = 0.0) -> float:
        """Radius of the section at ``theta_shift omega``."""
        zs = z if shift == 0 else z.shifted(shift)
        return self.radius(zs, consts)

    def contains(self, u: np.ndarray, z: OUTrajectory, consts: UniversalConstants) -> np.ndarray:
        return np.sqrt(np.sum(np.asarray(u) ** 2, axis=(-2, -1))) <= self.at(z, consts)


# -- class R ------------------------------------------------------------------

@dataclass(frozen=True)
class DecayTable:
    t: np.ndarray
    q: np.ndarray
    tail_max: float
    verdict: bool
    eps: float

    def first_below(self, level: float = 1.0) -> float | None:
        """Smallest table time after which ``q`` stays at or below ``level``."""
        bad = np.flatnonzero(~(self.q <= level))
        if bad.size == 0:
            return float(self.t[0])
        k = bad[-1] + 1
        return float(self.t[k]) if k < len(self.t) else None


def classR_decay(r, z: OUTrajectory, consts: UniversalConstants, d: DomainSpec | None = None,
                 T: float | None = None, tail: float = 0.2, eps: float = 1e-6, every: int = 1) -> DecayTable:
    """``q(t) = r(theta_{-t} omega)^2 exp(-nu lambda_1 t + (3C^2/nu) int_{-t}^0 |z|^2_{L4})``.

    ``r`` is a RadiusFunction or any callable ``r(z_shifted, consts)``.  The
    limsup of the definition is replaced by the maximum over the last
    ``tail`` fraction of ``(0, T]``.
    """
    d = d or z.d
    T = T if T is not None else -float(z.times[0])
    # compute series once on the parent so shifted views share them
    z.h_sq, z.l4_sq
    if getattr(r, "kind", "") in ("r11", "r13"):
        z.g_vdual_sq
    zw = _horizon(z, T)
    expo = pullback_exponent(zw, consts)
    n = len(zw.times) - 1
    idx = np.arange(n - every, -1, -every)  # t = -times[idx] > 0, increasing
    t = -zw.times[idx]
    q = np.empty(len(idx))
    for j, i in enumerate(idx):
        rv = r(z.shifted(float(zw.times[i])), consts)
        with np.errstate(over="ignore"):
            q[j] = rv * rv * math.exp(min(expo[i], 700.0)) if rv else 0.0
    keep = t >= (1.0 - tail) * t[-1] - 1e-12
    tail_max = float(np.max(q[keep]))
    return DecayTable(t=t, q=q, tail_max=tail_max, verdict=bool(tail_max < eps), eps=eps)


def absorbing_ball(z: OUTrajectory, consts: UniversalConstants, d: DomainSpec | None = None,
                   f: np.ndarray | None = None, T: float = 0.0) -> tuple[float, RandomBall]:
    """The ball ``|u| <= r13`` that absorbs every class-R family."""
    rf = RadiusFunction("r13", T=T, f=f)
    return rf(z, consts), RandomBall(rf)


# -- ensembles ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnsembleSnapshot:
    members: np.ndarray = field(repr=False)
    time: float
    seed: int | None
    shift: float
    label: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 3:
            raise ValueError("members must have shape (m, Nx, Ny)")
        object.__setattr__(self, "members", m)

    def __len__(self) -> int:
        return len(self.members)


def _flat(E) -> np.ndarray:
    m = E.members if isinstance(E, EnsembleSnapshot) else np.asarray(E, dtype=float)
    if m.ndim == 2:
        m = m[None]
    if len(m) == 0:
        raise ValueError("empty set")
    return m.reshape(len(m), -1)


def hausdorff(A, B, mode: str = "full") -> float:
    """Hausdorff semidistance ``sup_A dist(a, B)`` or the full symmetric distance in H."""
    a, b = _flat(A), _flat(B)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sets use different cutoffs")
    D = cdist(a, b)
    semi = float(D.min(axis=1).max())
    if mode == "semi":
        return semi
    if mode != "full":
        raise ValueError("mode must be 'semi' or 'full'")
    return max(semi, float(D.min(axis=0).max()))


def sample_ball(d: DomainSpec, radius: float, m: int, seed: int, tag: int = 0,
                interior: bool = True) -> np.ndarray:
    """``m`` fields in the H-ball: the first half on the sphere, the rest at radii uniform in ``[0, radius]``.

    Interior radii are uniform in the radius rather than in volume, which in
    this dimension would put every point next to the sphere.  With
    ``interior=False`` every member lies on the sphere.
    """
    modes = np.arange(d.n_modes)
    g = counter_normals(seed, STREAM_ENSEMBLE, modes[None, :], tag * 65536 + np.arange(m)[:, None])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    u = ndtr(counter_normals(seed, STREAM_ENSEMBLE, d.n_modes, tag * 65536 + np.arange(m)))
    on_sphere = np.arange(m) < ((m + 1) // 2 if interior else m)
    frac = np.where(on_sphere, 1.0, u)
    return (radius * frac[:, None] * g).reshape((m,) + d.shape)


@dataclass(frozen=True)
class PullbackResult:
    snapshots: list
    schedule: np.ndarray
    rho: np.ndarray
    semi: np.ndarray
    failures: list

    def decreasing_from(self, k0: int = 0) -> bool:
        s = self.semi[k0:]
        return bool(np.all(np.diff(s) < 0))


def _evolve_chunk(ctx: CocycleContext, t: float, x: np.ndarray) -> tuple[np.ndarray, list[int]]:
    try:
        return reconstruct_u(ctx, 0.0, -t, x), []
    except SolverBlowUp:
        out, bad = np.full_like(x, np.nan), []
        for i in range(len(x)):
            try:
                out[i] = reconstruct_u(ctx, 0.0, -t, x[i])
            except SolverBlowUp:
                bad.append(i)
        return out, bad


def pullback_omega_limit(ctx: CocycleContext, D: RandomBall, schedule, members: int,
                         seed: int = 0, threads: int = 1, chunk: int = 8,
                         members_init=None) -> PullbackResult:
    """Evolve ensembles drawn from ``D(theta_{-t_k} omega)`` from ``-t_k`` to 0.

    Members are split into fixed chunks so results do not depend on
    ``threads``.  ``members_init(k, radius)`` may override the sampler.
    """
    schedule = np.asarray(schedule, dtype=float)
    if np.any(np.diff(schedule) <= 0) or schedule[0] <= 0:
        raise ValueError("schedule must be positive and increasing")
    z = ctx.z(0.0)
    consts = ctx.consts
    snaps, failures = [], []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for k, tk in enumerate(schedule):
            R = D.at(z, consts, -float(tk))
            x = members_init(k, R) if members_init else sample_ball(ctx.d, R, members, seed, k)
            parts = [x[i:i + chunk] for i in range(0, len(x), chunk)]
            results = list(pool.map(lambda p: _evolve_chunk(ctx, float(tk), p), parts))
            out = np.concatenate([r[0] for r in results])
            bad = [i * chunk + j for i, r in enumerate(results) for j in r[1]]
            failures.append(bad)
            good = np.delete(out, bad, axis=0)
            if len(good) < 2 and members >= 2:
                raise SolverBlowUp(f"pullback time {tk}: fewer than 2 members survived", -float(tk))
            snaps.append(EnsembleSnapshot(good, 0.0, ctx.path.seed, -float(tk), float(tk)))
    last = snaps[-1]
    rho = np.array([hausdorff(s, last, "full") for s in snaps])
    semi = np.array([hausdorff(s, last, "semi") for s in snaps])
    return PullbackResult(snaps, schedule, rho, semi, failures)


# -- diagnostics --------------------------------------------------------------

@dataclass(frozen=True)
class CompactnessReport:
    diameter: float
    v_spread: float
    high_fraction: np.ndarray


def compactness_diagnostics(E, Lam: float, d: DomainSpec) -> CompactnessReport:
    """H-diameter, spread of V-norms and per-member energy fraction above ``Lam``."""
    m = _flat(E).reshape((-1,) + d.shape)
    flat = m.reshape(len(m), -1)
    diam = float(cdist(flat, flat).max()) if len(m) > 1 else 0.0
    lam = eigenvalues(d)
    vn = np.sqrt(np.sum(lam * m**2, axis=(-2, -1)))
    tot = np.sum(m**2, axis=(-2, -1))
    hi = np.sum(np.where(lam > Lam, m**2, 0.0), axis=(-2, -1))
    frac = np.divide(hi, tot, out=np.zeros_like(tot), where=tot > 0)
    return CompactnessReport(diam, float(vn.max() - vn.min()), frac)


def trend_test(values, times=None, level: float = 0.05) -> tuple[float, float, bool]:
    """Kendall tau of ``values`` against time; passes unless an increasing trend is significant."""
    values = np.asarray(values, dtype=float)
    times = np.arange(len(values)) if times is None else np.asarray(times)
    tau, p = kendalltau(times, values)
    one_sided = p / 2 if tau > 0 else 1.0 - p / 2
    return float(tau), float(one_sided), bool(tau <= 0 or one_sided >= level)


# -- snapshot files -----------------------------------------------------------

_MAGIC = b"ENSB"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIqddd")


def dump_snapshot(E: EnsembleSnapshot) -> bytes:
    m, nx, ny = E.members.shape
    seed = -1 if E.seed is None else int(E.seed)
    head = _HEADER.pack(_MAGIC, _VERSION, nx, ny, m, seed, E.time, E.shift, E.label)
    return head + np.ascontiguousarray(E.members, dtype="<f8").tobytes()


def load_snapshot_bytes(data: bytes) -> EnsembleSnapshot:
    magic, ver, nx, ny, m, seed, time, shift, label = _HEADER.unpack_from(data)
    if magic != _MAGIC or ver != _VERSION:
        raise ValueError("not an ensemble snapshot file")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != m * nx * ny:
        raise ValueError("snapshot body has the wrong length")
    return EnsembleSnapshot(body.reshape(m, nx, ny).astype(float), time, None if seed < 0 else seed, shift, label)


def save_snapshot(E: EnsembleSnapshot, path: str | Path) -> None:
    Path(path).write_bytes(dump_snapshot(E))


def load_snapshot(path: str | Path) -> EnsembleSnapshot:
    return load_snapshot_bytes(Path(path).read_bytes())


def linear_decay_reference(x: np.ndarray, t: float, d: DomainSpec) -> float:
    """``max |x| e^{-nu lambda_1 t}`` for members in the lowest mode."""
    return float(np.max(np.sqrt(np.sum(np.asarray(x) ** 2, axis=(-2, -1))))) * math.exp(
        -d.nu * poincare_lambda1(d) * t)
