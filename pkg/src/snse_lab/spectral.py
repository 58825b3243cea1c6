"""Divergence-free sine basis on a rectangle, Stokes operator, norms and the convective form.

A velocity field is stored as a coefficient array ``c`` of shape ``(Nx, Ny)``
(entry ``c[k-1, m-1]`` multiplies the basis field of mode ``(k, m)``); any
number of leading batch axes is allowed.  The basis field of mode ``(k, m)``
comes from the stream function ``psi = sin(k pi x / Lx) sin(m pi y / Ly)``
through ``u = (d psi / dy, -d psi / dx)`` and is normalised to unit L2 norm,
so every Hilbert norm is a diagonal sum over coefficients.

Products are evaluated on a midpoint grid with ``Q >= 2N + 1`` points per
direction.  Every integrand that appears here (``u . grad v . w`` and
``|u|^4``) is a cosine polynomial of degree at most ``4N``, which the
midpoint rule with ``Q > 2N`` points integrates exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

NORM_KINDS = ("H", "V", "Vdual", "L4", "bracket", "E")


class CutoffMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    Lx: float = 1.0
    Ly: float = 1.0
    Nx: int = 16
    Ny: int = 16
    nu: float = 1.0

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0 and self.nu > 0):
            raise ValueError("Lx, Ly and nu must be positive")
        if self.Nx < 1 or self.Ny < 1:
            raise ValueError("Nx and Ny must be >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def n_modes(self) -> int:
        return self.Nx * self.Ny


def poincare_lambda1(d: DomainSpec) -> float:
    return math.pi**2 * (1.0 / d.Lx**2 + 1.0 / d.Ly**2)


def eigenvalue(k: int, m: int, d: DomainSpec) -> float:
    return math.pi**2 * (k**2 / d.Lx**2 + m**2 / d.Ly**2)


def eigenvalues(d: DomainSpec) -> np.ndarray:
    """Eigenvalues of A on the retained modes, shape ``(Nx, Ny)``."""
    k = np.arange(1, d.Nx + 1)[:, None]
    m = np.arange(1, d.Ny + 1)[None, :]
    return math.pi**2 * (k**2 / d.Lx**2 + m**2 / d.Ly**2)


def _check(u: np.ndarray, d: DomainSpec) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-2:] != d.shape:
        raise CutoffMismatch(f"field of shape {u.shape[-2:]} on a {d.shape} cutoff")
    return u


def apply_A(u: np.ndarray, d: DomainSpec) -> np.ndarray:
    return _check(u, d) * eigenvalues(d)


def apply_frac_power(u: np.ndarray, s: float, d: DomainSpec, alpha: float = 0.0) -> np.ndarray:
    """Multiply mode (k, m) by ``(nu * lambda_km + alpha) ** s``."""
    theta = d.nu * eigenvalues(d) + alpha
    if np.any(theta <= 0):
        raise ValueError("nu * lambda + alpha must be positive on every mode")
    return _check(u, d) * theta**s


def mode_field(k: int, m: int, d: DomainSpec, amplitude: float = 1.0) -> np.ndarray:
    c = np.zeros(d.shape)
    c[k - 1, m - 1] = amplitude
    return c


@dataclass(frozen=True)
class Spectral:
    """Transform tables for one domain; build once and share."""

    d: DomainSpec
    Qx: int = 0
    Qy: int = 0

    def __post_init__(self):
        qx = self.Qx or 2 * self.d.Nx + 1
        qy = self.Qy or 2 * self.d.Ny + 1
        if qx < 2 * self.d.Nx + 1 or qy < 2 * self.d.Ny + 1:
            raise ValueError("quadrature grid too coarse for exact L4 and b")
        object.__setattr__(self, "Qx", qx)
        object.__setattr__(self, "Qy", qy)

    @cached_property
    def lam(self) -> np.ndarray:
        return eigenvalues(self.d)

    @cached_property
    def lambda1(self) -> float:
        return poincare_lambda1(self.d)

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.Qx) + 0.5) * self.d.Lx / self.Qx

    @cached_property
    def y(self) -> np.ndarray:
        return (np.arange(self.Qy) + 0.5) * self.d.Ly / self.Qy

    @cached_property
    def weight(self) -> float:
        return self.d.Lx * self.d.Ly / (self.Qx * self.Qy)

    @cached_property
    def _t(self) -> dict:
        d = self.d
        kx = np.arange(1, d.Nx + 1) * math.pi / d.Lx
        my = np.arange(1, d.Ny + 1) * math.pi / d.Ly
        a = 2.0 / np.sqrt(self.lam * d.Lx * d.Ly)
        K = kx[:, None]
        M = my[None, :]
        return dict(
            Sx=np.sin(np.outer(self.x, kx)),
            Cx=np.cos(np.outer(self.x, kx)),
            Sy=np.sin(np.outer(self.y, my)),
            Cy=np.cos(np.outer(self.y, my)),
            # per-mode factors for u_x, u_y and the four velocity gradients
            fx=a * M,
            fy=-a * K,
            fxx=a * K * M,
            fxy=-a * M * M,
            fyx=a * K * K,
        )

    # -- transforms -------------------------------------------------------

    def to_grid(self, u: np.ndarray) -> np.ndarray:
        """Velocity samples, shape ``(..., 2, Qx, Qy)``."""
        t = self._t
        u = _check(u, self.d)
        ux = t["Sx"] @ (t["fx"] * u) @ t["Cy"].T
        uy = t["Cx"] @ (t["fy"] * u) @ t["Sy"].T
        return np.stack([ux, uy], axis=-3)

    def gradient_grid(self, u: np.ndarray) -> tuple[np.ndarray, ...]:
        """``(dux/dx, dux/dy, duy/dx, duy/dy)`` on the grid."""
        t = self._t
        dxx = t["Cx"] @ (t["fxx"] * u) @ t["Cy"].T
        dxy = t["Sx"] @ (t["fxy"] * u) @ t["Sy"].T
        dyx = t["Sx"] @ (t["fyx"] * u) @ t["Sy"].T
        return dxx, dxy, dyx, -dxx

    def from_grid(self, g: np.ndarray) -> np.ndarray:
        """L2 projection of a grid vector field onto the retained basis."""
        t = self._t
        g = np.asarray(g, dtype=float)
        gx, gy = g[..., 0, :, :], g[..., 1, :, :]
        px = t["Sx"].T @ gx @ t["Cy"]
        py = t["Cx"].T @ gy @ t["Sy"]
        return self.weight * (t["fx"] * px + t["fy"] * py)

    # -- convective form --------------------------------------------------

    def _advect_grid(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        ug = self.to_grid(u)
        dxx, dxy, dyx, dyy = self.gradient_grid(_check(v, self.d))
        ux, uy = ug[..., 0, :, :], ug[..., 1, :, :]
        return np.stack([ux * dxx + uy * dxy, ux * dyx + uy * dyy], axis=-3)

    def B(self, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
        """Galerkin projection of ``(u . grad) v``; ``B(u) = B(u, u)``."""
        return self.from_grid(self._advect_grid(u, u if v is None else v))

    def b(self, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        g = self._advect_grid(u, v)
        wg = self.to_grid(w)
        return self.weight * np.sum(g * wg, axis=(-3, -2, -1))

    # -- norms ------------------------------------------------------------

    def l4(self, u: np.ndarray) -> np.ndarray:
        g = self.to_grid(u)
        s = g[..., 0, :, :] ** 2 + g[..., 1, :, :] ** 2
        return (self.weight * np.sum(s * s, axis=(-2, -1))) ** 0.25

    def norm(self, u: np.ndarray, kind: str = "H", delta: float = 0.0):
        u = _check(u, self.d)
        lam = self.lam
        if kind == "H":
            return np.sqrt(np.sum(u * u, axis=(-2, -1)))
        if kind == "V":
            return np.sqrt(np.sum(lam * u * u, axis=(-2, -1)))
        if kind == "Vdual":
            return np.sqrt(np.sum(u * u / lam, axis=(-2, -1)))
        if kind == "L4":
            return self.l4(u)
        if kind == "bracket":
            return np.sqrt(bracket_sq(u, self.d))
        if kind == "E":
            w = u * lam ** (-delta)
            return np.maximum(np.sqrt(np.sum(w * w, axis=(-2, -1))), self.l4(w))
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


@lru_cache(maxsize=16)
def spectral_for(d: DomainSpec) -> Spectral:
    """Shared transform tables for ``d`` on the default grid."""
    return Spectral(d)


def inner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.sum(u * v, axis=(-2, -1))


def bracket_sq(u: np.ndarray, d: DomainSpec) -> np.ndarray:
    """``nu ||u||^2 - (nu lambda_1 / 2) |u|^2``; at least ``(nu/2) ||u||^2``."""
    lam = eigenvalues(d)
    return d.nu * np.sum((lam - 0.5 * poincare_lambda1(d)) * u * u, axis=(-2, -1))


@dataclass(frozen=True)
class UniversalConstants:
    C: float
    C1: float
    C2: float


def random_fields(d: DomainSpec, n: int, seed: int) -> np.ndarray:
    """Sample fields with random spectral slope; the i-th field does not depend on n.

    Field 0 is always the lowest mode (1, 1).
    """
    rng = np.random.default_rng(seed)
    lam = eigenvalues(d)
    out = np.empty((n,) + d.shape)
    if n > 0:
        out[0] = mode_field(1, 1, d)
    for i in range(1, n):
        slope = rng.uniform(0.0, 1.5)
        out[i] = rng.standard_normal(d.shape) * (lam / lam[0, 0]) ** (-slope)
    return out


def estimate_universal_C(d: DomainSpec, samples: int = 1000, seed: int = 0,
                         safety: float = 1.1, sp: Spectral | None = None) -> UniversalConstants:
    """Randomised lower estimates of the form constants, inflated by ``safety``.

    C  : sup |u|_{L4}^2 / (|u| ||u||)
    C1 : sup ||B(u)||_{V'} / |u|_{L4}^2
    C2 : sup ||B(u)||_{V'} / ||u||^2
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    sp = sp or Spectral(d)
    u = random_fields(d, samples, seed)
    h = sp.norm(u, "H")
    v = sp.norm(u, "V")
    l4 = sp.l4(u)
    bd = sp.norm(sp.B(u), "Vdual")
    return UniversalConstants(
        C=safety * float(np.max(l4**2 / (h * v))),
        C1=safety * float(np.max(bd / l4**2)),
        C2=safety * float(np.max(bd / v**2)),
    )


def check_b_estimates(sp: Spectral, u, v, w, consts: UniversalConstants) -> dict[str, float]:
    """Ratios ``|b(u,v,w)| / bound`` for the four interpolation bounds of b.

    ``|grad .|`` is the V norm and ``|A .|`` the H norm of ``A .``.
    """
    nh = lambda f: float(sp.norm(f, "H"))  # noqa: E731
    nv = lambda f: float(sp.norm(f, "V"))  # noqa: E731
    na = lambda f: float(sp.norm(apply_A(f, sp.d), "H"))  # noqa: E731
    val = abs(float(sp.b(u, v, w)))
    bounds = {
        "V.DA.H": (nh(u) * nv(u) * nv(v) * na(v)) ** 0.5 * nh(w),
        "DA.V.H": (nh(u) * na(u)) ** 0.5 * nv(v) * nh(w),
        "H.V.DA": nh(u) * nv(v) * (nh(w) * na(w)) ** 0.5,
        "V.V.V": (nh(u) * nv(u)) ** 0.5 * nv(v) * (nh(w) * nv(w)) ** 0.5,
    }
    out = {}
    for name, rhs in bounds.items():
        rhs *= consts.C
        out[name] = 0.0 if val == 0.0 else (val / rhs if rhs > 0 else math.inf)
    return out
