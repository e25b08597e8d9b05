"""Discrete element method for spherical particles.

Linear spring-dashpot contacts with tangential history, a normal-only
squeeze-film lubrication correction, buoyancy-reduced gravity and a
Velocity Verlet integrator that is sub-cycled ``j`` times per fluid step.

All pairwise kernels are written for a canonical orientation (the particle
with the lower id is "i") so that the two workers that see a local/ghost
pair compute bitwise identical forces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, SynchronizationError

MIN_DIAMETER_CELLS = 10.0


def sphere_volume(r: float) -> float:
    return 4.0 / 3.0 * math.pi * r**3


@dataclass
class Particle:
    id: int
    x: np.ndarray
    radius: float
    mass: float
    u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_old: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_new: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_old: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_new: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # hydrodynamic force/torque of the current fluid step, held over the sub-cycles
    f_hyd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_hyd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ghost: bool = False
    fixed: bool = False
    # block that owns a ghost copy (-1 when unknown / not distributed)
    owner: int = -1

    def __post_init__(self):
        for name in ("x", "u", "omega", "f_old", "f_new", "t_old", "t_new", "f_hyd", "t_hyd"):
            setattr(self, name, np.array(getattr(self, name), dtype=float).reshape(3))
        if not self.radius > 0:
            raise ConfigError(f"particle {self.id}: radius must be positive")
        if not self.mass > 0:
            raise ConfigError(f"particle {self.id}: mass must be positive")

    @classmethod
    def from_density(cls, id, x, radius, density, **kw) -> Particle:
        return cls(id=id, x=x, radius=radius, mass=density * sphere_volume(radius), **kw)

    @property
    def inertia(self) -> float:
        return 0.4 * self.mass * self.radius**2

    @property
    def volume(self) -> float:
        return sphere_volume(self.radius)

    @property
    def density(self) -> float:
        return self.mass / self.volume

    def copy(self, ghost=None) -> Particle:
        p = Particle(
            self.id, self.x.copy(), self.radius, self.mass, self.u.copy(), self.omega.copy(),
            self.f_old.copy(), self.f_new.copy(), self.t_old.copy(), self.t_new.copy(),
            self.f_hyd.copy(), self.t_hyd.copy(), self.ghost if ghost is None else ghost, self.fixed,
            self.owner,
        )
        return p

    def kinetic_energy(self) -> float:
        return 0.5 * self.mass * float(self.u @ self.u) + 0.5 * self.inertia * float(self.omega @ self.omega)


@dataclass
class DemParams:
    k_n: float = 0.0
    d_n: float = 0.0
    k_t: float = 0.0
    d_t: float = 0.0
    subcycles: int = 10
    dt: float = 1.0
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rho_fluid: float = 1.0
    # lubrication: kinematic viscosity of the fluid (lattice units) and a multiplier
    nu: float = 0.0
    lubrication: bool = True
    lub_factor: float = 1.0
    lub_cutoff_ratio: float = 2.0 / 3.0
    lub_min_gap_ratio: float = 0.01

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        errors = []
        for name in ("k_n", "d_n", "k_t", "d_t"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be non-negative")
        if int(self.subcycles) < 1:
            errors.append("subcycles must be >= 1")
        if errors:
            raise ConfigError("invalid DEM parameters", errors)
        self.subcycles = int(self.subcycles)

    @property
    def dt_p(self) -> float:
        return self.dt / self.subcycles

    @classmethod
    def from_restitution(cls, restitution: float, collision_time: float, mass_eff: float, **kw) -> DemParams:
        """Normal stiffness/damping giving restitution ``e`` over ``collision_time``.

        Inverts ``e = exp(-gamma pi / omega_d)`` and ``T_c = pi / omega_d``.
        Tangential stiffness defaults to 2/7 of the normal one (equal
        normal/tangential contact periods for solid spheres).
        """
        ln_e = math.log(restitution)
        k_n = mass_eff * (math.pi**2 + ln_e**2) / collision_time**2
        d_n = -2.0 * mass_eff * ln_e / collision_time
        kw.setdefault("k_t", 2.0 / 7.0 * k_n)
        kw.setdefault("d_t", 2.0 / 7.0 * d_n)
        return cls(k_n=k_n, d_n=d_n, **kw)


def lubrication_cutoff(r_eff: float, params: DemParams) -> float:
    return params.lub_cutoff_ratio * r_eff


def interaction_range(max_radius: float, params: DemParams | None = None) -> float:
    """Largest center distance at which two particles still interact."""
    if params is None:
        ratio = 2.0 / 3.0
    else:
        ratio = params.lub_cutoff_ratio if params.lubrication else 0.0
    return 2.0 * max_radius + ratio * 0.5 * max_radius


# ---------------------------------------------------------------------------
# Contact history
# ---------------------------------------------------------------------------


@dataclass
class HistoryEntry:
    delta_t: np.ndarray
    t_impact: int
    touched: bool = True

    def copy(self) -> HistoryEntry:
        return HistoryEntry(self.delta_t.copy(), self.t_impact, self.touched)


def pair_key(a: int, b: int) -> tuple:
    """Canonical history key; walls (negative ids) always go second."""
    if b < 0:
        return (a, b)
    if a < 0:
        return (b, a)
    return (a, b) if a < b else (b, a)


class ContactHistory:
    """Per-worker store of tangential contact histories keyed by :func:`pair_key`."""

    def __init__(self):
        self.entries: dict = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return key in self.entries

    def get(self, key):
        return self.entries.get(key)

    def begin_cycle(self):
        for e in self.entries.values():
            e.touched = False

    def purge(self):
        """Drop entries whose pair was not in contact during this cycle."""
        self.entries = {k: e for k, e in self.entries.items() if e.touched}

    def touch(self, key, step: int) -> HistoryEntry:
        e = self.entries.get(key)
        if e is None:
            e = HistoryEntry(np.zeros(3), step)
            self.entries[key] = e
        e.touched = True
        return e

    def copy(self) -> ContactHistory:
        h = ContactHistory()
        h.entries = {k: e.copy() for k, e in self.entries.items()}
        return h


@dataclass(frozen=True)
class Plane:
    """Static half-space wall; ``normal`` points into the fluid domain."""

    id: int
    point: tuple
    normal: tuple

    def signed_distance(self, x) -> float:
        return float(np.dot(np.asarray(x) - np.asarray(self.point), np.asarray(self.normal)))


def box_walls(lo, hi, axes=(0, 1, 2)) -> list:
    """Six (or fewer) planes enclosing ``[lo, hi]``, ids -1, -2, ..."""
    walls = []
    for a in axes:
        n = [0.0, 0.0, 0.0]
        n[a] = 1.0
        p = [0.0, 0.0, 0.0]
        p[a] = float(lo[a])
        walls.append(Plane(-(2 * a + 1), tuple(p), tuple(n)))
        n = [0.0, 0.0, 0.0]
        n[a] = -1.0
        p = [0.0, 0.0, 0.0]
        p[a] = float(hi[a])
        walls.append(Plane(-(2 * a + 2), tuple(p), tuple(n)))
    return walls


# ---------------------------------------------------------------------------
# Pair kernels
# ---------------------------------------------------------------------------


def _spring_dashpot(delta_n, n, x_cp, xi, ui, wi, xj, uj, wj, entry, params, dt_p):
    """Force on ``i`` for contact normal ``n`` (pointing from i to j)."""
    vi = ui + np.cross(wi, x_cp - xi)
    vj = uj + np.cross(wj, x_cp - xj)
    v_rel = vi - vj
    vn = float(v_rel @ n) * n
    vt = v_rel - vn
    fn = -params.k_n * delta_n * n - params.d_n * vn
    if entry is not None:
        d = entry.delta_t
        mag = math.sqrt(float(d @ d))
        if mag > 0.0:
            d = d - float(d @ n) * n
            pm = math.sqrt(float(d @ d))
            d = d * (mag / pm) if pm > 0.0 else np.zeros(3)
        entry.delta_t = d + vt * dt_p
        ft = -params.k_t * entry.delta_t - params.d_t * vt
    else:
        ft = -params.d_t * vt
    return fn, ft


def contact_force(pi: Particle, pj: Particle, history: ContactHistory | None, params: DemParams, step: int = 0):
    """Linear spring-dashpot contact between two overlapping spheres.

    Returns ``(F_on_i, T_on_i, F_on_j, T_on_j)``. The history entry for the
    pair is created on first contact and updated in place.
    """
    swap = pj.id < pi.id
    a, b = (pj, pi) if swap else (pi, pj)
    d = b.x - a.x
    dist = math.sqrt(float(d @ d))
    if dist == 0.0:
        raise NumericalError(f"particles {a.id} and {b.id} have coincident centers")
    n = d / dist
    delta_n = a.radius + b.radius - dist
    if delta_n <= 0.0:
        z = np.zeros(3)
        return z, z.copy(), z.copy(), z.copy()
    x_cp = a.x + (a.radius - 0.5 * delta_n) * n
    entry = history.touch(pair_key(a.id, b.id), step) if history is not None else None
    fn, ft = _spring_dashpot(delta_n, n, x_cp, a.x, a.u, a.omega, b.x, b.u, b.omega, entry, params, params.dt_p)
    fa = fn + ft
    ta = np.cross(x_cp - a.x, ft)
    fb = -fa
    tb = np.cross(x_cp - b.x, -ft)
    if swap:
        return fb, tb, fa, ta
    return fa, ta, fb, tb


def wall_contact_force(p: Particle, plane: Plane, history: ContactHistory | None, params: DemParams, step: int = 0):
    """Contact with an immovable plane. Returns ``(F_on_p, T_on_p)``."""
    dist = plane.signed_distance(p.x)
    delta_n = p.radius - dist
    if delta_n <= 0.0:
        return np.zeros(3), np.zeros(3)
    n = -np.asarray(plane.normal, dtype=float)
    x_cp = p.x + (p.radius - 0.5 * delta_n) * n
    entry = history.touch(pair_key(p.id, plane.id), step) if history is not None else None
    zero = np.zeros(3)
    fn, ft = _spring_dashpot(delta_n, n, x_cp, p.x, p.u, p.omega, x_cp, zero, zero, entry, params, params.dt_p)
    return fn + ft, np.cross(x_cp - p.x, ft)


def lubrication_correction(pi: Particle, pj, params: DemParams):
    """Normal squeeze-film correction for a near-contact pair or particle-wall.

    ``F_i = -6 pi rho_f nu c r_eff^2 / max(s, s_min) (U_rel . n) n`` with
    ``U_rel = U_i - U_j``. Tangential and rotational corrections are not
    modelled and return zero.

    Returns ``(F_i, T_i, F_j, T_j)``; for a wall ``F_j``/``T_j`` are zero.
    """
    zero = np.zeros(3)
    if not params.lubrication or params.nu <= 0.0:
        return zero, zero.copy(), zero.copy(), zero.copy()
    if isinstance(pj, Plane):
        s = pj.signed_distance(pi.x) - pi.radius
        r_eff = pi.radius
        n = -np.asarray(pj.normal, dtype=float)
        u_rel = pi.u
        a = pi
        swap = False
    else:
        swap = pj.id < pi.id
        a, b = (pj, pi) if swap else (pi, pj)
        d = b.x - a.x
        dist = math.sqrt(float(d @ d))
        if dist == 0.0:
            raise NumericalError(f"particles {a.id} and {b.id} have coincident centers")
        n = d / dist
        s = dist - a.radius - b.radius
        r_eff = a.radius * b.radius / (a.radius + b.radius)
        u_rel = a.u - b.u
    cutoff = lubrication_cutoff(r_eff, params)
    if s <= 0.0 or s > cutoff:
        return zero, zero.copy(), zero.copy(), zero.copy()
    gap = max(s, params.lub_min_gap_ratio * r_eff)
    coeff = 6.0 * math.pi * params.rho_fluid * params.nu * params.lub_factor * r_eff * r_eff / gap
    fa = -coeff * float(u_rel @ n) * n
    if isinstance(pj, Plane):
        return fa, zero, zero.copy(), zero.copy()
    fb = -fa
    if swap:
        return fb, zero, fa, zero.copy()
    return fa, zero, fb, zero.copy()


# ---------------------------------------------------------------------------
# Linked cells
# ---------------------------------------------------------------------------

# 13 offsets lexicographically after (0, 0, 0): with the own cell this visits
# every neighbouring pair of cells exactly once.
HALF_NEIGHBORHOOD = [o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0)]


class LinkedCellGrid:
    def __init__(self, lo, hi, cell_size: float):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.cell_size = float(cell_size)
        self.dims = tuple(max(1, int(math.ceil((h - l) / self.cell_size))) for l, h in zip(self.lo, self.hi))
        self.cells: dict = {}
        self.particles: list = []

    def cell_of(self, x) -> tuple:
        idx = np.floor((np.asarray(x) - self.lo) / self.cell_size).astype(int)
        return tuple(int(min(max(i, 0), n - 1)) for i, n in zip(idx, self.dims))

    def insert(self, index: int, p: Particle):
        if np.any(p.x < self.lo) or np.any(p.x > self.hi):
            raise SynchronizationError(
                f"particle {p.id} at {p.x.tolist()} outside linked-cell grid "
                f"[{self.lo.tolist()}, {self.hi.tolist()}]"
            )
        self.cells.setdefault(self.cell_of(p.x), []).append(index)

    def pairs(self):
        """Yield ``(a, b)`` particle indices of every pair in neighbouring cells, once."""
        for c in sorted(self.cells):
            own = self.cells[c]
            for ia in range(len(own)):
                for ib in range(ia + 1, len(own)):
                    yield own[ia], own[ib]
            for o in HALF_NEIGHBORHOOD:
                nb = (c[0] + o[0], c[1] + o[1], c[2] + o[2])
                other = self.cells.get(nb)
                if other is None:
                    continue
                for a in own:
                    for b in other:
                        yield a, b


def linked_cell_size(max_radius: float, params: DemParams | None = None) -> float:
    """1.01 diameters, widened if the lubrication range reaches further."""
    return max(1.01 * 2.0 * max_radius, interaction_range(max_radius, params))


def rebuild_linked_cells(particles, lo=None, hi=None, cell_size=None, params=None) -> LinkedCellGrid:
    """Insert particles (indexable sequence) into a fresh linked-cell grid."""
    if lo is None or hi is None:
        if not particles:
            lo, hi = np.zeros(3), np.ones(3)
        else:
            xs = np.array([p.x for p in particles])
            lo, hi = xs.min(axis=0), xs.max(axis=0)
    if cell_size is None:
        rmax = max((p.radius for p in particles), default=1.0)
        cell_size = linked_cell_size(rmax, params)
    grid = LinkedCellGrid(lo, hi, cell_size)
    for i, p in enumerate(particles):
        grid.insert(i, p)
    grid.particles = list(particles)
    return grid


# ---------------------------------------------------------------------------
# Force accumulation (deterministic) and integration
# ---------------------------------------------------------------------------


class ForceLedger:
    """Collects per-particle pair contributions and sums them in a fixed order.

    Contributions are keyed by ``(partner id, kind)`` so that the summation
    order of a particle's forces does not depend on pair visiting order or on
    how the domain is decomposed.
    """

    def __init__(self):
        self.items: dict = {}

    def add(self, pid: int, partner: int, kind: int, force, torque):
        self.items.setdefault(pid, []).append(((partner, kind), force, torque))

    def apply(self, particles):
        for p in particles:
            contribs = self.items.get(p.id)
            if not contribs:
                continue
            contribs.sort(key=lambda c: c[0])
            for _, f, t in contribs:
                p.f_new += f
                p.t_new += t


def _computes_pair(pa: Particle, pb: Particle) -> bool:
    """A pair is evaluated where the lower-id instance is a local particle.

    Ghost-ghost pairs and a particle paired with its own periodic image are
    skipped; every physical pair is thus evaluated exactly once overall.
    """
    if pa.id == pb.id:
        return False
    low = pa if pa.id < pb.id else pb
    return not low.ghost


def _record(ledger: ForceLedger, remote, p: Particle, partner: int, kind: int, f, t):
    if not p.ghost:
        ledger.add(p.id, partner, kind, f, t)
    elif remote is not None:
        remote.append((p.owner, p.id, partner, kind, f, t))


def lubrication_forces(particles, grid, walls, params: DemParams, ledger: ForceLedger, remote=None):
    """Lubrication contributions. Forces on ghosts go to ``remote`` as
    ``(owner, id, partner, kind, F, T)`` records for the owner's reduction."""
    if not params.lubrication or params.nu <= 0.0:
        return
    for a, b in grid.pairs():
        pa, pb = particles[a], particles[b]
        if not _computes_pair(pa, pb):
            continue
        fa, ta, fb, tb = lubrication_correction(pa, pb, params)
        if np.any(fa):
            _record(ledger, remote, pa, pb.id, 0, fa, ta)
            _record(ledger, remote, pb, pa.id, 0, fb, tb)
    for p in particles:
        if p.ghost:
            continue
        for w in walls:
            f, t, _, _ = lubrication_correction(p, w, params)
            if np.any(f):
                ledger.add(p.id, w.id, 0, f, t)


def contact_forces(particles, grid, walls, history: ContactHistory, params: DemParams, ledger: ForceLedger,
                   step=0, remote=None):
    for a, b in grid.pairs():
        pa, pb = particles[a], particles[b]
        if not _computes_pair(pa, pb):
            continue
        d = pb.x - pa.x
        if float(d @ d) >= (pa.radius + pb.radius) ** 2:
            continue
        fa, ta, fb, tb = contact_force(pa, pb, history, params, step)
        _record(ledger, remote, pa, pb.id, 1, fa, ta)
        _record(ledger, remote, pb, pa.id, 1, fb, tb)
    for p in particles:
        if p.ghost:
            continue
        for w in walls:
            if w.signed_distance(p.x) < p.radius:
                f, t = wall_contact_force(p, w, history, params, step)
                ledger.add(p.id, w.id, 1, f, t)


def apply_external_forces(particles, params: DemParams):
    """Buoyancy-reduced gravity ``(rho_p - rho_f) V g``."""
    if not np.any(params.gravity):
        return
    for p in particles:
        if p.ghost:
            continue
        p.f_new += (p.mass - params.rho_fluid * p.volume) * params.gravity


def apply_hydro_forces(particles):
    for p in particles:
        if not p.ghost:
            p.f_new += p.f_hyd
            p.t_new += p.t_hyd


def integrate_pre_force(particles, dt_p: float):
    for p in particles:
        if p.ghost or p.fixed:
            continue
        p.x = p.x + dt_p * p.u + (dt_p * dt_p / (2.0 * p.mass)) * p.f_old


def integrate_post_force(particles, dt_p: float):
    for p in particles:
        if p.ghost:
            continue
        if not p.fixed:
            p.u = p.u + (dt_p / (2.0 * p.mass)) * (p.f_old + p.f_new)
            p.omega = p.omega + (dt_p / (2.0 * p.inertia)) * (p.t_old + p.t_new)
        p.f_old = p.f_new
        p.t_old = p.t_new
        p.f_new = np.zeros(3)
        p.t_new = np.zeros(3)


def dem_subcycle(particles, walls, history: ContactHistory, params: DemParams, step: int = 0,
                 lo=None, hi=None, hydro: bool = True):
    """One complete single-worker sub-cycle (no communication)."""
    dt_p = params.dt_p
    integrate_pre_force(particles, dt_p)
    grid = rebuild_linked_cells(particles, lo, hi, params=params)
    ledger = ForceLedger()
    history.begin_cycle()
    lubrication_forces(particles, grid, walls, params, ledger)
    contact_forces(particles, grid, walls, history, params, ledger, step)
    history.purge()
    apply_external_forces(particles, params)
    if hydro:
        apply_hydro_forces(particles)
    ledger.apply(particles)
    integrate_post_force(particles, dt_p)
