"""Two-sided Wiener paths with mode-diagonal covariance and the shift flow.

Increments are drawn from a counter-based generator (Philox4x32-10) keyed
by the seed, with ``(step, mode, stream)`` packed into the counter, so any
window of the same path can be regenerated bit-exactly and shifting a path
is pure reindexing.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .spectral import DomainSpec, Spectral, eigenvalues, spectral_for

_COUNTER_OFFSET = 1 << 62
_MASK64 = (1 << 64) - 1

STREAM_PATH = 0
STREAM_OU_INIT = 1


class InadmissibleNoise(ValueError):
    pass


class WindowError(ValueError):
    pass


_PHILOX_M = (np.uint64(0xD2511F53), np.uint64(0xCD9E8D57))
_PHILOX_W = (np.uint64(0x9E3779B9), np.uint64(0xBB67AE85))
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10) -> tuple[np.ndarray, ...]:
    """Philox4x32 block function, vectorised over broadcastable word arrays.

    ``counter`` is four 32-bit words, ``key`` two; returns four uint64 arrays
    holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _LO32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _LO32 for k in key)
    for r in range(rounds):
        p0 = _PHILOX_M[0] * c0
        p1 = _PHILOX_M[1] * c2
        c0, c1, c2, c3 = ((p1 >> _S32) ^ c1 ^ k0, p1 & _LO32, (p0 >> _S32) ^ c3 ^ k1, p0 & _LO32)
        if r + 1 < rounds:
            k0 = (k0 + _PHILOX_W[0]) & _LO32
            k1 = (k1 + _PHILOX_W[1]) & _LO32
    return c0, c1, c2, c3


def counter_normals(seed, stream: int, mode, step) -> np.ndarray:
    """Standard normals that depend only on ``(seed, stream, mode, step)``.

    Arguments broadcast against each other; ``step`` may be negative.
    """
    s = np.asarray(seed, dtype=np.uint64)
    n = np.asarray(step, dtype=np.int64).astype(np.uint64) + np.uint64(_COUNTER_OFFSET)
    x0, x1, x2, x3 = philox4x32(
        (n & _LO32, n >> _S32, np.asarray(mode, dtype=np.uint64), np.uint64(stream)),
        (s & _LO32, s >> _S32),
    )
    u1 = ((((x0 << _S32) | x1) >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    u2 = (((x2 << _S32) | x3) >> np.uint64(11)).astype(float) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class RKHSSpec:
    """Per-mode noise amplitudes: ``sigma = c * lambda ** -gamma`` or an explicit table."""

    kind: str = "power"
    c: float = 1.0
    gamma: float = 0.5
    delta: float = 0.3
    xi: float = 0.4
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power", "table"):
            raise ValueError(f"unknown RKHS kind {self.kind!r}")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if not self.delta < self.xi < 0.5:
            raise ValueError("xi must lie in (delta, 1/2)")
        if self.kind == "power" and (self.c <= 0 or self.gamma < 0):
            raise ValueError("power law needs c > 0 and gamma >= 0")

    def sigma(self, d: DomainSpec) -> np.ndarray:
        if self.kind == "power":
            return self.c * eigenvalues(d) ** (-self.gamma)
        s = np.zeros(d.shape)
        flat = np.asarray(self.table, dtype=float).ravel()
        s.ravel()[: min(flat.size, s.size)] = flat[: s.size]
        return s

    def scaled(self, factor: float) -> RKHSSpec:
        if self.kind == "power":
            return replace(self, c=self.c * factor)
        return replace(self, table=tuple(float(x) * factor for x in self.table))


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    exponent: float | None
    partial_sum: float
    partial_sums: tuple
    reason: str


def validate_assumption_A1(spec: RKHSSpec, d: DomainSpec) -> AdmissibilityReport:
    """Summability of ``sum sigma^2 lambda^(-2 delta)`` over all modes.

    For the power law the series behaves like ``sum (k^2 + m^2)^(-p)`` with
    ``p = 2 gamma + 2 delta``, which converges in two dimensions iff ``p > 1``.
    A table has finite support and is always admissible if nonzero.
    """
    sigma = spec.sigma(d)
    terms = sigma**2 * eigenvalues(d) ** (-2 * spec.delta)
    n = min(d.Nx, d.Ny)
    partial = tuple(float(terms[:j, :j].sum()) for j in range(1, n + 1))
    total = float(terms.sum())
    if not np.all(sigma >= 0) or not np.any(sigma > 0):
        return AdmissibilityReport(False, None, total, partial, "amplitudes must be >= 0 and not all zero")
    if spec.kind == "table":
        return AdmissibilityReport(True, None, total, partial, "finite table")
    p = 2 * spec.gamma + 2 * spec.delta
    ok = p > 1
    why = f"2*gamma + 2*delta = {p:g} {'>' if ok else '<='} 1"
    return AdmissibilityReport(ok, p, total, partial, why)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Increments on absolute steps ``[start, start + n)``; relative time 0 sits at step ``origin``."""

    dt: float
    start: int
    origin: int
    increments: np.ndarray = field(repr=False)
    seed: int
    rkhs: RKHSSpec
    d: DomainSpec

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def t_past(self) -> float:
        return (self.start - self.origin) * self.dt

    @property
    def t_future(self) -> float:
        return (self.start + self.n_steps - self.origin) * self.dt

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_steps + 1) + self.start - self.origin) * self.dt

    def index(self, t: float) -> int:
        """Offset into the increment array of grid time ``t``."""
        j = round(t / self.dt)
        if abs(j * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise WindowError(f"t={t} is not a multiple of dt={self.dt}")
        i = j + self.origin - self.start
        if not 0 <= i <= self.n_steps:
            raise WindowError(f"t={t} outside [{self.t_past}, {self.t_future}]")
        return i

    def values(self) -> np.ndarray:
        """omega on every grid point, shape ``(n + 1, Nx, Ny)``, summed outward from 0."""
        i0 = self.origin - self.start
        out = np.zeros((self.n_steps + 1,) + self.increments.shape[1:])
        out[i0 + 1:] = np.cumsum(self.increments[i0:], axis=0)
        if i0 > 0:
            out[:i0] = -np.cumsum(self.increments[:i0][::-1], axis=0)[::-1]
        return out

    def __call__(self, t: float) -> np.ndarray:
        i = self.index(t)
        i0 = self.origin - self.start
        if i >= i0:
            return self.increments[i0:i].sum(axis=0)
        return -self.increments[i:i0].sum(axis=0)

    def same_as(self, other: NoisePath) -> bool:
        return (self.dt == other.dt and self.start == other.start and self.origin == other.origin
                and self.seed == other.seed and np.array_equal(self.increments, other.increments))


def _steps(t: float, dt: float, what: str) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise WindowError(f"{what}={t} is not an integral number of steps dt={dt}")
    return n


def sample_path(spec: RKHSSpec, d: DomainSpec, t_past: float, t_future: float,
                dt: float, seed: int) -> NoisePath:
    if not (t_past <= 0 <= t_future and dt > 0):
        raise WindowError("need t_past <= 0 <= t_future and dt > 0")
    i0 = _steps(t_past, dt, "t_past")
    i1 = _steps(t_future, dt, "t_future")
    rep = validate_assumption_A1(spec, d)
    if not rep.admissible:
        raise InadmissibleNoise(f"noise violates assumption A1: {rep.reason}")
    sigma = spec.sigma(d).ravel()
    n = i1 - i0
    inc = np.zeros((n, sigma.size))
    root = math.sqrt(dt)
    live = np.flatnonzero(sigma > 0)
    steps = np.arange(i0, i1)[:, None]
    inc[:, live] = root * sigma[live] * counter_normals(seed, STREAM_PATH, live[None, :], steps)
    inc = inc.reshape((n,) + d.shape)
    inc.setflags(write=False)
    return NoisePath(dt=dt, start=i0, origin=0, increments=inc, seed=seed, rkhs=spec, d=d)


def shift_path(w: NoisePath, s: float) -> NoisePath:
    """The shifted path ``t -> w(t + s) - w(s)``."""
    k = _steps(s, w.dt, "shift")
    origin = w.origin + k
    if not w.start <= origin <= w.start + w.n_steps:
        raise WindowError(f"shift {s} leaves the path window [{w.t_past}, {w.t_future}]")
    return replace(w, origin=origin)


def coarsen(w: NoisePath, factor: int) -> NoisePath:
    """Same path seen on a grid ``factor`` times coarser (increments summed)."""
    if w.start % factor or w.origin % factor or w.n_steps % factor:
        raise WindowError("window not aligned with the coarse grid")
    inc = w.increments.reshape((w.n_steps // factor, factor) + w.increments.shape[1:]).sum(axis=1)
    inc.setflags(write=False)
    return replace(w, dt=w.dt * factor, start=w.start // factor, origin=w.origin // factor, increments=inc)


def _e_norms(sp: Spectral, fields: np.ndarray, delta: float) -> np.ndarray:
    return sp.norm(fields, "E", delta=delta)


def path_norm_holder(w: NoisePath, xi: float, sp: Spectral | None = None,
                     stride: int = 1, chunk: int = 64) -> float:
    """Discrete ``sup |w(t) - w(s)|_E / (|t - s|^xi (1 + |t| + |s|)^(1/2))`` over grid pairs."""
    if not 0 <= xi < 0.5:
        raise ValueError("xi must lie in [0, 1/2)")
    sp = sp or spectral_for(w.d)
    delta = w.rkhs.delta
    vals = w.values()[::stride]
    t = w.times[::stride]
    best = 0.0
    for i0 in range(0, len(t), chunk):
        rows = slice(i0, min(i0 + chunk, len(t)))
        ti = t[rows][:, None]
        diff = vals[rows][:, None] - vals[None, :]
        num = _e_norms(sp, diff, delta)
        den = np.abs(ti - t[None, :]) ** xi * np.sqrt(1 + np.abs(ti) + np.abs(t[None, :]))
        mask = ti != t[None, :]
        if mask.any():
            best = max(best, float(np.max(num[mask] / den[mask])))
    return best


def path_norm_halfgrowth(w: NoisePath, sp: Spectral | None = None) -> float:
    """Discrete ``sup |w(t)|_E / (1 + |t|^(1/2))``."""
    sp = sp or spectral_for(w.d)
    num = _e_norms(sp, w.values(), w.rkhs.delta)
    return float(np.max(num / (1 + np.sqrt(np.abs(w.times)))))


# -- PNSE v1 binary file -------------------------------------------------------

_MAGIC = b"PNSE"
_VERSION = 1
_HEADER = struct.Struct("<4sI3dqqIIQI4dddd")
_KIND_CODE = {"power": 0, "table": 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def dump_path(w: NoisePath) -> bytes:
    """Header, optional amplitude table, then increments mode-major as little-endian f64."""
    spec, d = w.rkhs, w.d
    head = _HEADER.pack(_MAGIC, _VERSION, w.t_past, w.t_future, w.dt, w.start, w.origin,
                        d.Nx, d.Ny, w.seed & _MASK64, _KIND_CODE[spec.kind],
                        spec.c, spec.gamma, spec.delta, spec.xi, d.Lx, d.Ly, d.nu)
    buf = io.BytesIO()
    buf.write(head)
    table = np.asarray(spec.table, dtype="<f8")
    buf.write(struct.pack("<I", table.size))
    buf.write(table.tobytes())
    modes = np.ascontiguousarray(w.increments.reshape(w.n_steps, -1).T, dtype="<f8")
    buf.write(modes.tobytes())
    return buf.getvalue()


def load_path_bytes(data: bytes) -> NoisePath:
    fields_ = _HEADER.unpack_from(data, 0)
    (magic, version, _tp, _tf, dt, start, origin, nx, ny, seed, kind,
     c, gamma, delta, xi, lx, ly, nu) = fields_
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a PNSE v1 path file")
    off = _HEADER.size
    (ntab,) = struct.unpack_from("<I", data, off)
    off += 4
    table = tuple(np.frombuffer(data, dtype="<f8", count=ntab, offset=off).tolist())
    off += 8 * ntab
    d = DomainSpec(Lx=lx, Ly=ly, Nx=nx, Ny=ny, nu=nu)
    spec = RKHSSpec(kind=_CODE_KIND[kind], c=c, gamma=gamma, delta=delta, xi=xi, table=table)
    n = round((_tf - _tp) / dt)
    modes = np.frombuffer(data, dtype="<f8", count=n * nx * ny, offset=off).reshape(nx * ny, n)
    inc = np.ascontiguousarray(modes.T).reshape((n, nx, ny)).astype(float)
    inc.setflags(write=False)
    return NoisePath(dt=dt, start=start, origin=origin, increments=inc, seed=seed, rkhs=spec, d=d)


def save_path(w: NoisePath, path: str | Path) -> None:
    Path(path).write_bytes(dump_path(w))


def load_path(path: str | Path) -> NoisePath:
    return load_path_bytes(Path(path).read_bytes())
