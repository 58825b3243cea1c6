"""Line-oriented experiment configuration: ``section.key = value``.

Blank lines and ``#`` comments are ignored.  Every key has a typed default,
unknown keys are rejected with their line number, and :func:`dump_config`
writes a file that parses back to the same configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .noise import RKHSSpec
from .ou import OUConfig, select_alpha
from .solver import SolverConfig
from .spectral import DomainSpec, UniversalConstants, estimate_universal_C, mode_field

KINDS = ("validate", "simulate", "pullback", "absorb", "classR", "noise-gen", "describe")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DomainBlock:
    Lx: float = 1.0
    Ly: float = 1.0
    Nx: int = 16
    Ny: int = 16
    nu: float = 1.0


@dataclass(frozen=True)
class NoiseBlock:
    law: str = "power"
    c: float = 5.0
    gamma: float = 0.5
    delta: float = 0.3
    xi: float = 0.4
    table: str = ""
    seed: int = 0
    dt: float = 1e-3


@dataclass(frozen=True)
class OUBlock:
    alpha: str = "auto"
    mc_samples: int = 2000
    weighting: str = "variance"


@dataclass(frozen=True)
class ConstantsBlock:
    samples: int = 1000
    seed: int = 0
    safety: float = 1.1


@dataclass(frozen=True)
class SolverBlock:
    dt: float = 1e-3
    scheme: str = "ETD1"
    f: str = "1,2,20"
    record_every: int = 1


@dataclass(frozen=True)
class ExperimentBlock:
    kind: str = "simulate"
    T: float = 1.0
    burn_in: float = 1.0
    horizon: float = 2.0
    schedule: str = "0.001,0.002,0.004,0.008,0.016,0.032,0.064,0.128,0.256,0.512"
    members: int = 16
    radius: str = "10"
    k0: int = 0
    high_mode_factor: float = 16.0
    tail: float = 0.2
    eps: float = 1e-6
    u0_norm: float = 1.0
    tol_cocycle: float = 1e-6
    tol_energy: float = 5e-3
    tol_inequality: float = 1e-6


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"
    precision: int = 17


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainBlock = field(default_factory=DomainBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    ou: OUBlock = field(default_factory=OUBlock)
    constants: ConstantsBlock = field(default_factory=ConstantsBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    # -- builders -------------------------------------------------------------

    def domain_spec(self) -> DomainSpec:
        b = self.domain
        return DomainSpec(b.Lx, b.Ly, b.Nx, b.Ny, b.nu)

    def rkhs(self) -> RKHSSpec:
        b = self.noise
        table = tuple(float(x) for x in b.table.replace(";", ",").split(",") if x.strip())
        return RKHSSpec(b.law, b.c, b.gamma, b.delta, b.xi, table)

    def forcing(self, d: DomainSpec) -> np.ndarray:
        """Sum of ``amplitude * e_{k,m}`` over ``k,m,amplitude`` triples separated by ``;``."""
        f = np.zeros(d.shape)
        spec = self.solver.f.strip()
        if spec.lower() in ("", "0", "none", "zero"):
            return f
        for part in spec.split(";"):
            try:
                k, m, a = part.split(",")
                f += mode_field(int(k), int(m), d, float(a))
            except ValueError as exc:
                raise ConfigError(f"solver.f: cannot read forcing term {part!r} ({exc})") from None
        return f

    def universal_constants(self, d: DomainSpec) -> UniversalConstants:
        b = self.constants
        return estimate_universal_C(d, b.samples, b.seed, b.safety)

    def alpha(self, d: DomainSpec, consts: UniversalConstants) -> float:
        if self.ou.alpha.strip().lower() == "auto":
            return float(select_alpha(d, self.rkhs(), consts, self.ou.mc_samples, self.noise.seed))
        return float(self.ou.alpha)

    def ou_config(self, d: DomainSpec, alpha: float) -> OUConfig:
        return OUConfig(alpha, d, self.rkhs(), self.ou.weighting)

    def solver_config(self, d: DomainSpec, alpha: float) -> SolverConfig:
        b = self.solver
        return SolverConfig(b.dt, b.scheme, self.forcing(d), alpha, b.record_every)

    def schedule(self) -> np.ndarray:
        try:
            return np.array([float(x) for x in self.experiment.schedule.split(",") if x.strip()])
        except ValueError:
            raise ConfigError(f"experiment.schedule: cannot read {self.experiment.schedule!r}") from None


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {raw!r}") from None
    return raw


def apply_overrides(cfg: ExperimentConfig, items, source: str = "--set") -> ExperimentConfig:
    """Apply ``(where, 'section.key', 'value')`` triples, rejecting unknown keys."""
    blocks = {name: getattr(cfg, name) for name in SECTIONS}
    for where, key, value in items:
        section, _, name = key.strip().partition(".")
        if section not in blocks:
            raise ConfigError(f"{where}: unknown section {section!r}")
        block = blocks[section]
        known = {f.name: f for f in fields(block)}
        if name not in known:
            raise ConfigError(f"{where}: unknown key {key.strip()!r}")
        blocks[section] = replace(block, **{name: _convert(value, getattr(block, name), where)})
    out = ExperimentConfig(**blocks)
    if out.experiment.kind not in KINDS:
        raise ConfigError(f"{source}: experiment.kind must be one of {KINDS}")
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    items, seen = [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        key, eq, value = body.partition("=")
        if not eq or "." not in key:
            raise ConfigError(f"{where}: expected 'section.key = value', got {line.strip()!r}")
        key = key.strip()
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        items.append((where, key, value))
    return apply_overrides(ExperimentConfig(), items, source)


def load_config(path: str | Path | None, overrides=()) -> ExperimentConfig:
    cfg = ExperimentConfig() if path is None else parse_config(Path(path).read_text(), str(path))
    items = []
    for item in overrides:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set {item!r}: expected key=value")
        items.append((f"--set {item}", key, value))
    return apply_overrides(cfg, items)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in SECTIONS:
        block = getattr(cfg, name)
        for f in fields(block):
            v = getattr(block, f.name)
            lines.append(f"{name}.{f.name} = {v!r}" if isinstance(v, float) else f"{name}.{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
