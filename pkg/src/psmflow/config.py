"""Scenario configuration, presets, unit conversion and scenario construction.

Configurations are YAML mappings with the sections below; every key is
optional except ``kind`` (defaults shown in the dataclasses)::

    kind: poiseuille | fluidized_bed_dilute | fluidized_bed_dense | settling_sphere | custom
    domain: [nx, ny, nz]
    blocks: [bx, by, bz]
    workers: 1
    fluid:     {tau, f_ext, init_velocity, boundaries: {x-: noslip, ...}}
    physics:   {galileo, reynolds, balance_weight}      # optional, see convert_units
    particles: {count, radius, density_ratio, seed, placement, positions, gap, jitter, settle_steps}
    dem:       {k_n, d_n, k_t, d_t, restitution, collision_time, subcycles, lubrication, gravity}
    run:       {steps, output_dir, cadence, grid, particles, scalars}

Unknown keys are rejected and all violations are reported together.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import dem
from .errors import ConfigError, OutputError
from .lbm import CS2, FACES, BoundarySpec, FluidParams

KINDS = ("fluidized_bed_dilute", "fluidized_bed_dense", "settling_sphere", "poiseuille", "custom")
PLACEMENTS = ("lattice", "center", "list", "none")

# Reference bed: 500 x 200 x 800 cells, 20 cells per diameter.
REFERENCE_DOMAIN = (500, 200, 800)
REFERENCE_COUNTS = {"fluidized_bed_dilute": 627, "fluidized_bed_dense": 8073}
DESK_DOMAIN = (126, 50, 200)


@dataclass
class FluidSection:
    tau: float = 0.8
    f_ext: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    init_velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    boundaries: dict = field(default_factory=lambda: {f: "periodic" for f in FACES})


@dataclass
class PhysicsSection:
    galileo: float | None = None
    reynolds: float | None = None
    # add a uniform fluid body force carrying the particles' net weight (periodic settling)
    balance_weight: bool = False


@dataclass
class ParticleSection:
    count: int = 0
    radius: float = 10.0
    density_ratio: float = 1.1
    seed: int = 0
    placement: str = "none"
    positions: list = field(default_factory=list)
    gap: float = 0.5
    jitter: float = 0.25
    settle_steps: int = 0


@dataclass
class DemSection:
    k_n: float | None = None
    d_n: float | None = None
    k_t: float | None = None
    d_t: float | None = None
    restitution: float = 0.9
    collision_time: float = 5.0  # fluid time steps
    subcycles: int = 10
    lubrication: bool = True
    gravity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class RunSection:
    steps: int = 100
    output_dir: str = "out"
    cadence: int = 0
    grid: bool = True
    particles: bool = True
    scalars: bool = True


@dataclass
class ScenarioConfig:
    kind: str = "custom"
    domain: list = field(default_factory=lambda: [32, 32, 32])
    blocks: list = field(default_factory=lambda: [1, 1, 1])
    workers: int = 1
    fluid: FluidSection = field(default_factory=FluidSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    particles: ParticleSection = field(default_factory=ParticleSection)
    dem: DemSection = field(default_factory=DemSection)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path) -> None:
        path = Path(path)
        try:
            path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        except OSError as exc:
            raise OutputError(f"cannot write config {path}: {exc}") from exc


_SECTIONS = {
    "fluid": FluidSection,
    "physics": PhysicsSection,
    "particles": ParticleSection,
    "dem": DemSection,
    "run": RunSection,
}


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    errors = []
    top = {}
    for key, val in data.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if val is None:
                val = {}
            if not isinstance(val, dict):
                errors.append(f"{key}: expected a mapping")
                continue
            unknown = sorted(set(val) - _fields(cls))
            errors += [f"{key}.{u}: unknown key" for u in unknown]
            try:
                top[key] = cls(**{k: v for k, v in val.items() if k not in unknown})
            except TypeError as exc:
                errors.append(f"{key}: {exc}")
        elif key in _fields(ScenarioConfig):
            top[key] = val
        else:
            errors.append(f"{key}: unknown key")
    # invariants are checked even with unknown keys so every violation is reported at once
    errors += validate(ScenarioConfig(**top))
    if errors:
        raise ConfigError("invalid configuration", errors)
    return ScenarioConfig(**top)


def _vec(name, v, n, errors, positive=False, integer=False):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        errors.append(f"{name}: expected a list of {n} numbers")
        return
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            errors.append(f"{name}: {x!r} is not a number")
            return
        if integer and int(x) != x:
            errors.append(f"{name}: {x!r} is not an integer")
            return
        if positive and not x > 0:
            errors.append(f"{name}: values must be positive")
            return


def _num(name, v, errors, lo=None, strict=True, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{name}: {v!r} is not a number")
        return
    if integer and int(v) != v:
        errors.append(f"{name}: {v!r} is not an integer")
    if lo is not None and (v <= lo if strict else v < lo):
        errors.append(f"{name}: must be {'>' if strict else '>='} {lo}")


def validate(cfg: ScenarioConfig) -> list:
    """All invariant violations of ``cfg`` (empty when valid)."""
    e = []
    if cfg.kind not in KINDS:
        e.append(f"kind: unknown scenario kind {cfg.kind!r}")
    n = len(e)
    _vec("domain", cfg.domain, 3, e, positive=True, integer=True)
    _vec("blocks", cfg.blocks, 3, e, positive=True, integer=True)
    if len(e) == n:
        for ax in range(3):
            if cfg.domain[ax] % cfg.blocks[ax]:
                e.append(f"blocks: axis {'xyz'[ax]} ({cfg.domain[ax]} cells) not divisible into {cfg.blocks[ax]} blocks")
    _num("workers", cfg.workers, e, lo=1, strict=False, integer=True)
    fl = cfg.fluid
    _num("fluid.tau", fl.tau, e)
    if isinstance(fl.tau, (int, float)) and not fl.tau > 0.5:
        e.append(f"fluid.tau: {fl.tau} gives a non-positive viscosity (tau must exceed 0.5)")
    _vec("fluid.f_ext", fl.f_ext, 3, e)
    _vec("fluid.init_velocity", fl.init_velocity, 3, e)
    try:
        BoundarySpec(dict(fl.boundaries))
    except ConfigError as exc:
        e += [f"fluid.boundaries: {v}" for v in exc.violations]
    except (TypeError, KeyError, ValueError) as exc:
        e.append(f"fluid.boundaries: {exc}")
    ph = cfg.physics
    if (ph.galileo is None) != (ph.reynolds is None):
        e.append("physics: galileo and reynolds must be given together")
    if ph.galileo is not None:
        _num("physics.galileo", ph.galileo, e, lo=0)
        _num("physics.reynolds", ph.reynolds, e, lo=0, strict=False)
    pa = cfg.particles
    _num("particles.count", pa.count, e, lo=0, strict=False, integer=True)
    _num("particles.radius", pa.radius, e, lo=0)
    if isinstance(pa.radius, (int, float)) and 2 * pa.radius < dem.MIN_DIAMETER_CELLS:
        e.append(f"particles.radius: diameter {2 * pa.radius} below the {dem.MIN_DIAMETER_CELLS}-cell resolution floor")
    _num("particles.density_ratio", pa.density_ratio, e, lo=0)
    _num("particles.seed", pa.seed, e, lo=0, strict=False, integer=True)
    _num("particles.gap", pa.gap, e, lo=0, strict=False)
    _num("particles.jitter", pa.jitter, e, lo=0, strict=False)
    _num("particles.settle_steps", pa.settle_steps, e, lo=0, strict=False, integer=True)
    if pa.placement not in PLACEMENTS:
        e.append(f"particles.placement: unknown placement {pa.placement!r}")
    if pa.placement == "list":
        for i, p in enumerate(pa.positions):
            _vec(f"particles.positions[{i}]", p, 3, e)
    if ph.galileo is not None and isinstance(pa.density_ratio, (int, float)) and pa.density_ratio <= 1:
        e.append("physics: a Galileo number needs particles.density_ratio > 1")
    de = cfg.dem
    for name in ("k_n", "d_n", "k_t", "d_t"):
        v = getattr(de, name)
        if v is not None:
            _num(f"dem.{name}", v, e, lo=0, strict=False)
    _num("dem.restitution", de.restitution, e, lo=0)
    if isinstance(de.restitution, (int, float)) and de.restitution > 1:
        e.append("dem.restitution: must not exceed 1")
    _num("dem.collision_time", de.collision_time, e, lo=0)
    _num("dem.subcycles", de.subcycles, e, lo=1, strict=False, integer=True)
    _vec("dem.gravity", de.gravity, 3, e)
    ru = cfg.run
    _num("run.steps", ru.steps, e, lo=0, strict=False, integer=True)
    _num("run.cadence", ru.cadence, e, lo=0, strict=False, integer=True)
    return e


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}", [str(exc)]) from exc
    return config_from_dict(data or {})


# ---------------------------------------------------------------------------
# Unit conversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeUnits:
    nu: float
    tau: float
    gravity: float
    inflow: float
    diameter: float
    density_ratio: float

    @property
    def galileo(self) -> float:
        return math.sqrt(self.gravity * self.diameter**3 * (self.density_ratio - 1.0)) / self.nu

    @property
    def reynolds(self) -> float:
        return self.inflow * self.diameter / self.nu


def convert_units(galileo: float, reynolds: float, density_ratio: float, diameter: float, tau: float) -> LatticeUnits:
    """Lattice gravity and inflow speed from ``Ga``, ``Re_p`` and the density ratio.

    ``Ga = sqrt((rho_p/rho_f - 1) g D^3) / nu`` and ``Re_p = U D / nu``. The
    relaxation time fixes ``nu``; Ga and Re_p are then honored exactly, the
    physical diameter is not needed.
    """
    if density_ratio <= 1.0:
        raise ConfigError("density ratio must exceed 1 for a Galileo number")
    if not tau > 0.5:
        raise ConfigError(f"tau={tau} gives a non-positive viscosity")
    nu = (tau - 0.5) * CS2
    g = galileo**2 * nu**2 / ((density_ratio - 1.0) * diameter**3)
    return LatticeUnits(nu, tau, g, reynolds * nu / diameter, diameter, density_ratio)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _bed_boundaries(inflow: float) -> dict:
    b = {f: "noslip" for f in ("x-", "x+", "y-", "y+")}
    b["z-"] = {"kind": "velocity", "velocity": [0.0, 0.0, float(inflow)]}
    b["z+"] = {"kind": "pressure", "density": 1.0}
    return b


def scaled_count(kind: str, domain) -> int:
    ratio = float(np.prod(domain)) / float(np.prod(REFERENCE_DOMAIN))
    return max(1, int(round(REFERENCE_COUNTS[kind] * ratio)))


def preset(name: str, **overrides) -> ScenarioConfig:
    """Built-in scenario configurations (desk scale)."""
    if name in ("dilute", "fluidized_bed_dilute", "dense", "fluidized_bed_dense"):
        kind = "fluidized_bed_dense" if name.startswith(("dense", "fluidized_bed_dense")) else "fluidized_bed_dilute"
        cfg = ScenarioConfig(kind=kind, domain=list(DESK_DOMAIN), blocks=[1, 1, 1])
        cfg.physics = PhysicsSection(galileo=8.9, reynolds=1.0)
        cfg.fluid = FluidSection(tau=0.8, boundaries=_bed_boundaries(0.0))
        cfg.particles = ParticleSection(
            count=scaled_count(kind, DESK_DOMAIN), radius=10.0, density_ratio=1.1, seed=1, placement="lattice",
            gap=0.25, jitter=0.05,
        )
        cfg.dem = DemSection(subcycles=10)
        cfg.run = RunSection(steps=100)
    elif name == "settling_sphere":
        # fully periodic box (4.8 D wide, 6.4 D tall); the fluid carries the sphere's net weight so the
        # system has no net external force. tau = 1.7 shortens the viscous time scale in steps.
        cfg = ScenarioConfig(kind="settling_sphere", domain=[96, 96, 128])
        cfg.physics = PhysicsSection(galileo=8.9, reynolds=0.0, balance_weight=True)
        cfg.fluid = FluidSection(tau=1.7, boundaries={f: "periodic" for f in FACES})
        cfg.particles = ParticleSection(count=1, radius=10.0, density_ratio=1.1, placement="center")
        cfg.dem = DemSection(subcycles=10)
        cfg.run = RunSection(steps=1600)
    elif name == "poiseuille":
        cfg = ScenarioConfig(kind="poiseuille", domain=[4, 32, 4])
        cfg.fluid = FluidSection(tau=0.8, f_ext=[1e-6, 0.0, 0.0])
        cfg.fluid.boundaries["y-"] = cfg.fluid.boundaries["y+"] = "noslip"
        cfg.run = RunSection(steps=5000)
    elif name == "custom":
        cfg = ScenarioConfig()
    else:
        raise ConfigError(f"unknown preset {name!r}")
    data = cfg.to_dict()
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(data.get(key), dict):
            data[key].update(val)
        else:
            data[key] = val
    return config_from_dict(copy.deepcopy(data))


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    config: ScenarioConfig
    fluid: FluidParams
    bc: BoundarySpec
    dem_params: dem.DemParams | None
    particles: list
    units: LatticeUnits | None = None

    def simulation(self, blocks=None, workers=None):
        from .partition import Simulation

        cfg = self.config
        return Simulation(
            cfg.domain,
            tuple(blocks or cfg.blocks),
            self.fluid,
            self.bc,
            self.dem_params,
            self.particles,
            workers=workers if workers is not None else cfg.workers,
            init_velocity=tuple(cfg.fluid.init_velocity),
        )


def lattice_positions(domain, radius, count, gap=0.5, jitter=0.25, seed=0):
    """Non-overlapping sphere centers filling the domain from the bottom (low z) up.

    Sites form a body-centred pattern: square sheets of spacing ``d`` stacked
    along the narrowest axis, every second sheet shifted by ``d/2`` in both
    in-plane axes, sheet distance ``d/sqrt(2)``. With
    ``d = 2r + gap + 2 sqrt(3) jitter`` a uniform per-axis jitter of at most
    ``jitter`` cannot create overlaps.
    """
    domain = np.asarray(domain, dtype=float)
    d = 2.0 * radius + gap + 2.0 * math.sqrt(3.0) * jitter
    lo = radius + gap + jitter
    hi = domain - lo
    if np.any(hi < lo):
        raise ConfigError(f"domain {domain.tolist()} too small for radius {radius}")
    stack = int(np.argmin(hi - lo))
    u, v = [a for a in range(3) if a != stack]
    sites = []
    for layer, w in enumerate(np.arange(lo, hi[stack] + 1e-9, d * math.sqrt(0.5))):
        off = 0.5 * d * (layer % 2)
        for a in np.arange(lo + off, hi[u] + 1e-9, d):
            for b in np.arange(lo + off, hi[v] + 1e-9, d):
                x = np.empty(3)
                x[stack], x[u], x[v] = w, a, b
                sites.append(x)
    if len(sites) < count:
        raise ConfigError(f"cannot place {count} particles of radius {radius} in {domain.tolist()} (room for {len(sites)})")
    sites = np.array(sites)
    sites = sites[np.lexsort((sites[:, 0], sites[:, 1], sites[:, 2]))]
    rng = np.random.default_rng(seed)
    pos = sites[:count] + rng.uniform(-jitter, jitter, (count, 3))
    check_overlaps(pos, radius)
    return pos


def check_overlaps(pos, radius, tol=1e-9):
    pos = np.asarray(pos, dtype=float)
    if len(pos) < 2:
        return
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    if dist[i, j] < 2.0 * radius - tol:
        raise ConfigError(f"particles {min(i, j)} and {max(i, j)} overlap by {2 * radius - dist[i, j]:.3g} cells")


def _dem_params(cfg: ScenarioConfig, nu: float, gravity) -> dem.DemParams:
    de, pa = cfg.dem, cfg.particles
    kw = dict(subcycles=int(de.subcycles), gravity=gravity, nu=nu, lubrication=bool(de.lubrication))
    if de.k_n is not None:
        return dem.DemParams(
            k_n=de.k_n, d_n=de.d_n or 0.0, k_t=de.k_t if de.k_t is not None else 2.0 / 7.0 * de.k_n,
            d_t=de.d_t or 0.0, **kw,
        )
    m = pa.density_ratio * dem.sphere_volume(pa.radius)
    return dem.DemParams.from_restitution(de.restitution, de.collision_time, 0.5 * m, **kw)


def settle(particles, params: dem.DemParams, domain, steps: int) -> list:
    """Pure DEM relaxation under gravity between the bounding walls (no fluid)."""
    if steps <= 0 or not particles:
        return particles
    walls = dem.box_walls((0.0, 0.0, 0.0), domain, axes=(0, 1, 2))
    history = dem.ContactHistory()
    quiet = dataclasses.replace(params, lubrication=False)
    lo = np.zeros(3) - 1.0
    hi = np.asarray(domain, dtype=float) + 1.0
    for step in range(steps):
        for _ in range(quiet.subcycles):
            dem.dem_subcycle(particles, walls, history, quiet, step, lo, hi, hydro=False)
    for p in particles:
        p.u[:] = 0.0
        p.omega[:] = 0.0
        p.f_old[:] = 0.0
        p.t_old[:] = 0.0
    return particles


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    errors = validate(cfg)
    if errors:
        raise ConfigError("invalid configuration", errors)
    pa = cfg.particles
    fl = cfg.fluid
    domain = np.array(cfg.domain, dtype=float)
    units = None
    gravity = np.array(cfg.dem.gravity, dtype=float)
    boundaries = copy.deepcopy(fl.boundaries)
    if cfg.physics.galileo is not None:
        units = convert_units(cfg.physics.galileo, cfg.physics.reynolds, pa.density_ratio, 2.0 * pa.radius, fl.tau)
        gravity = np.array([0.0, 0.0, -units.gravity])
        zlo = boundaries.get("z-")
        if isinstance(zlo, dict) and zlo.get("kind") == "velocity":
            zlo["velocity"] = [0.0, 0.0, units.inflow]
    bc = BoundarySpec(boundaries)
    if pa.placement == "none" or pa.count == 0:
        positions = np.zeros((0, 3))
    elif pa.placement == "center":
        positions = np.tile(domain / 2.0, (pa.count, 1))
        if cfg.kind == "settling_sphere":
            positions[:, 2] = domain[2] - 1.5 * 2.0 * pa.radius
    elif pa.placement == "list":
        positions = np.array(pa.positions, dtype=float).reshape(-1, 3)
    else:
        positions = lattice_positions(domain, pa.radius, pa.count, pa.gap, pa.jitter, pa.seed)
    if len(positions) != pa.count and pa.placement != "none":
        raise ConfigError(f"particles.count={pa.count} but {len(positions)} positions were generated")
    check_overlaps(positions, pa.radius)
    particles = [
        dem.Particle.from_density(i, x, pa.radius, pa.density_ratio) for i, x in enumerate(positions)
    ]
    f_ext = np.array(fl.f_ext, dtype=float)
    if cfg.physics.balance_weight and particles:
        weight = sum((p.mass - dem.sphere_volume(p.radius)) * gravity for p in particles)
        fluid_cells = float(np.prod(domain)) - sum(dem.sphere_volume(p.radius) for p in particles)
        f_ext = f_ext - weight / fluid_cells
    fluid = FluidParams(fl.tau, f_ext=f_ext)
    dem_params = _dem_params(cfg, fluid.nu, gravity) if particles else None
    if particles and pa.settle_steps:
        particles = settle(particles, dem_params, domain, pa.settle_steps)
    return Scenario(cfg, fluid, bc, dem_params, particles, units)
