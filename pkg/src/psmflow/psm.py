"""Partially saturated cells coupling between the lattice and resolved spheres.

Mapping uses the linear overlap approximation ``eps = clamp(-D + f(r), 0, 1)``
with ``D`` the signed distance from the cell center to the sphere surface and
``f(r) = V_a(r) - r + 1/2``. Only covered cells carry fraction data: a dense
``int32`` map points each cell to a row of a compact table holding up to two
``(particle, B_i, U_p,i)`` entries and the clamped total ``B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, NumericalError, SynchronizationError
from .lbm import (
    CX,
    CY,
    CZ,
    OPPOSITE,
    VELOCITIES,
    WEIGHTS,
    _EMPTY3,
    _EMPTY4,
    BoundarySpec,
    FluidParams,
    PdfField,
    apply_boundaries,
    check_stability,
    equilibrium,
    fill_periodic,
    new_stats,
)

MAX_ENTRIES = 2
R_MIN = math.sqrt(0.5)


def v_a(r: float) -> float:
    """Closed form of the integral of ``sqrt(r^2 - x^2 - y^2)`` over the unit square."""
    r = float(r)
    if r < R_MIN:
        raise ConfigError(f"radius {r} below validity floor sqrt(1/2) of the overlap formula")
    r2 = r * r
    s = math.sqrt(r2 - 0.5)
    return (
        (1.0 / 12.0 - r2) * math.atan(0.5 * s / (0.5 - r2))
        + s / 3.0
        + (r2 - 1.0 / 12.0) * math.atan(0.5 / s)
        - 4.0 / 3.0 * r2 * r * math.atan(0.25 / (r * s))
    )


def precompute_f_of_r(r: float) -> float:
    return v_a(r) - r + 0.5


def overlap_fraction(cell_center, x_p, r: float, f_r: float | None = None):
    """Solid fraction of the cell(s) centered at ``cell_center`` (shape ``(..., 3)``)."""
    if f_r is None:
        f_r = precompute_f_of_r(r)
    d = np.linalg.norm(np.asarray(cell_center, dtype=float) - np.asarray(x_p, dtype=float), axis=-1) - r
    return np.clip(f_r - d, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Sub-block registry
# ---------------------------------------------------------------------------


class SubBlockRegistry:
    """Splits a block into ``k`` sub-blocks per axis and lists the overlapping particles.

    ``origin`` is the global lattice coordinate of the lower corner of the
    block's first interior cell.
    """

    def __init__(self, shape, origin=(0, 0, 0), k: int = 8):
        if k < 1:
            raise ConfigError("sub-block count k must be >= 1")
        self.shape = tuple(int(n) for n in shape)
        self.origin = np.asarray(origin, dtype=float)
        self.k = k
        self.edges = [np.unique(np.linspace(0, n, min(k, n) + 1).round().astype(int)) for n in self.shape]
        self.lists: dict = {}
        self.particles: list = []
        self.f_r = np.zeros(0)

    def sub_blocks(self):
        ex, ey, ez = self.edges
        for a in range(len(ex) - 1):
            for b in range(len(ey) - 1):
                for c in range(len(ez) - 1):
                    yield (a, b, c), (
                        (ex[a], ex[a + 1]), (ey[b], ey[b + 1]), (ez[c], ez[c + 1]),
                    )

    def update(self, particles):
        """Register ``particles`` (local and ghost). Inflation of each AABB is ``r``."""
        self.particles = list(particles)
        self.f_r = np.array([precompute_f_of_r(p.radius) for p in self.particles])
        if not self.particles:
            self.lists = {}
            return self
        xs = np.array([p.x for p in self.particles]) - self.origin
        rs = np.array([p.radius for p in self.particles])
        ids = np.array([p.id for p in self.particles])
        order = np.argsort(ids, kind="stable")
        lists = {}
        for key, bounds in self.sub_blocks():
            lo = np.array([b[0] for b in bounds], dtype=float)
            hi = np.array([b[1] for b in bounds], dtype=float)
            nearest = np.clip(xs, lo, hi)
            dist2 = np.sum((xs - nearest) ** 2, axis=1)
            hit = order[dist2[order] <= rs[order] ** 2]
            if hit.size:
                lists[key] = hit
        self.lists = lists
        return self


# ---------------------------------------------------------------------------
# Fraction field
# ---------------------------------------------------------------------------


@dataclass
class FractionField:
    """Sparse per-cell fraction entries.

    ``cell_row[i, j, k]`` is ``-1`` for uncovered interior cells, otherwise a
    row into ``ids`` / ``index`` / ``b`` / ``B`` / ``u_solid``. Unused slots have
    ``ids == -1`` and ``b == 0``. ``index`` refers to the particle list the
    field was built from.
    """

    shape: tuple
    origin: np.ndarray
    cell_row: np.ndarray
    cells: np.ndarray  # (nrow, 3) interior cell indices of each row
    ids: np.ndarray
    index: np.ndarray
    b: np.ndarray
    B: np.ndarray
    u_solid: np.ndarray

    @classmethod
    def empty(cls, shape, origin=(0, 0, 0)) -> FractionField:
        shape = tuple(int(n) for n in shape)
        return cls(
            shape, np.asarray(origin, dtype=float), np.full(shape, -1, dtype=np.int32),
            np.zeros((0, 3), dtype=np.int64), np.zeros((0, MAX_ENTRIES), dtype=np.int64),
            np.zeros((0, MAX_ENTRIES), dtype=np.int64), np.zeros((0, MAX_ENTRIES)), np.zeros(0),
            np.zeros((0, MAX_ENTRIES, 3)),
        )

    @property
    def n_rows(self) -> int:
        return self.B.shape[0]

    def dense_B(self) -> np.ndarray:
        out = np.zeros(self.shape)
        if self.n_rows:
            out[tuple(self.cells.T)] = self.B
        return out

    def particle_volume(self, pid: int) -> float:
        return float(self.b[self.ids == pid].sum())

    def entries_at(self, cell) -> list:
        row = self.cell_row[tuple(cell)]
        if row < 0:
            return []
        return [(int(i), float(v)) for i, v in zip(self.ids[row], self.b[row]) if i >= 0]


def build_fraction_field(registry: SubBlockRegistry) -> FractionField:
    """Per-cell overlap entries of all registered particles, sorted by particle id."""
    shape = registry.shape
    field = FractionField.empty(shape, registry.origin)
    parts = registry.particles
    if not parts or not registry.lists:
        return field
    flat_chunks, pidx_chunks, eps_chunks = [], [], []
    xs = np.array([p.x for p in parts]) - registry.origin
    for key, bounds in registry.sub_blocks():
        plist = registry.lists.get(key)
        if plist is None:
            continue
        for pi in plist:
            r = parts[pi].radius
            reach = r + 1.0
            rng = []
            for ax in range(3):
                a = max(bounds[ax][0], int(math.floor(xs[pi, ax] - reach)))
                b = min(bounds[ax][1], int(math.ceil(xs[pi, ax] + reach)))
                rng.append(np.arange(a, b))
            if any(len(v) == 0 for v in rng):
                continue
            gx, gy, gz = np.meshgrid(*rng, indexing="ij")
            d = np.sqrt((gx + 0.5 - xs[pi, 0]) ** 2 + (gy + 0.5 - xs[pi, 1]) ** 2 + (gz + 0.5 - xs[pi, 2]) ** 2) - r
            eps = np.clip(registry.f_r[pi] - d, 0.0, 1.0)
            mask = eps > 0.0
            if not mask.any():
                continue
            flat_chunks.append(np.ravel_multi_index((gx[mask], gy[mask], gz[mask]), shape))
            pidx_chunks.append(np.full(int(mask.sum()), pi, dtype=np.int64))
            eps_chunks.append(eps[mask])
    if not flat_chunks:
        return field
    flat = np.concatenate(flat_chunks)
    pidx = np.concatenate(pidx_chunks)
    eps = np.concatenate(eps_chunks)
    ids = np.array([p.id for p in parts], dtype=np.int64)[pidx]
    order = np.lexsort((ids, flat))
    flat, pidx, eps, ids = flat[order], pidx[order], eps[order], ids[order]
    cells, start, counts = np.unique(flat, return_index=True, return_counts=True)
    if counts.max() > MAX_ENTRIES:
        bad = cells[np.argmax(counts)]
        where = np.unravel_index(bad, shape)
        sl = slice(start[np.argmax(counts)], start[np.argmax(counts)] + counts.max())
        raise NumericalError(
            f"cell {tuple(int(v) for v in where)} overlapped by {counts.max()} particles "
            f"(ids {ids[sl].tolist()}); at most {MAX_ENTRIES} are supported"
        )
    nrow = cells.size
    slot = np.arange(flat.size) - np.repeat(start, counts)
    row = np.repeat(np.arange(nrow), counts)
    field.ids = np.full((nrow, MAX_ENTRIES), -1, dtype=np.int64)
    field.index = np.full((nrow, MAX_ENTRIES), -1, dtype=np.int64)
    field.b = np.zeros((nrow, MAX_ENTRIES))
    field.ids[row, slot] = ids
    field.index[row, slot] = pidx
    field.b[row, slot] = eps
    field.B = np.minimum(1.0, field.b.sum(axis=1))
    field.cells = np.stack(np.unravel_index(cells, shape), axis=1).astype(np.int64)
    field.cell_row.reshape(-1)[cells] = np.arange(nrow, dtype=np.int32)
    field.u_solid = np.zeros((nrow, MAX_ENTRIES, 3))
    return field


def set_solid_velocities(field: FractionField, particles) -> None:
    """``U_p,i(x) = U_p,i + Omega_p,i x (x - x_p,i)`` at every covered cell center.

    ``particles`` must be the list the field was built from (``index`` refers
    into it); ids are cross-checked.
    """
    if field.n_rows == 0:
        return
    used = np.unique(field.index[field.index >= 0])
    if used.size and used[-1] >= len(particles):
        raise SynchronizationError("fraction field references a particle that is not present")
    centers = field.cells + 0.5 + field.origin
    out = np.zeros_like(field.u_solid)
    for pi in used:
        p = particles[pi]
        mask = field.index == pi
        if np.any(field.ids[mask] != p.id):
            raise SynchronizationError(f"fraction entry id mismatch for particle {p.id}")
        rows, slots = np.nonzero(mask)
        out[rows, slots] = p.u + np.cross(p.omega, centers[rows] - p.x)
    field.u_solid = out


def solid_collision_term(f, rho, u_f, u_p):
    """Reference ``C^solid_q = [f_qbar - feq_qbar(rho, U_f)] - [f_q - feq_q(rho, U_p)]``."""
    f = np.asarray(f, dtype=float)
    feq_f = equilibrium(rho, u_f)
    feq_p = equilibrium(rho, u_p)
    return (f[..., OPPOSITE] - feq_f[..., OPPOSITE]) - (f - feq_p)


# ---------------------------------------------------------------------------
# Fused kernel
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def psm_collide_stream_box(src, dst, lo, hi, tau, fx, fy, fz, stats, rho_out, u_out, store,
                           cell_row, row_index, row_b, row_B, row_us, origin, pcenter, acc_f, acc_t):
    """Fused pull-stream + PSM collision + hydrodynamic force accumulation.

    Uncovered cells take exactly the arithmetic of the plain SRT sweep.
    Per-particle force/torque partials go to ``acc_f`` / ``acc_t`` (indexed
    like ``pcenter``) in the lexicographic order of the box.
    """
    f = np.empty(19)
    feq = np.empty(19)
    cs = np.empty(19)
    omega = 1.0 / tau
    fscale = 1.0 - 0.5 * omega
    umax2 = stats[0]
    rhomin = stats[1]
    mass = 0.0
    mx = 0.0
    my = 0.0
    mz = 0.0
    for i in range(lo[0], hi[0]):
        for j in range(lo[1], hi[1]):
            for k in range(lo[2], hi[2]):
                rho = 0.0
                jx = 0.0
                jy = 0.0
                jz = 0.0
                for q in range(19):
                    v = src[q, i - CX[q], j - CY[q], k - CZ[q]]
                    f[q] = v
                    rho += v
                    jx += v * CX[q]
                    jy += v * CY[q]
                    jz += v * CZ[q]
                ux = jx + 0.5 * fx
                uy = jy + 0.5 * fy
                uz = jz + 0.5 * fz
                usq = ux * ux + uy * uy + uz * uz
                uf = ux * fx + uy * fy + uz * fz
                row = cell_row[i - 1, j - 1, k - 1]
                if row < 0:
                    for q in range(19):
                        cu = CX[q] * ux + CY[q] * uy + CZ[q] * uz
                        fe = WEIGHTS[q] * (rho + (3.0 * cu + 4.5 * cu * cu - 1.5 * usq))
                        cf = CX[q] * fx + CY[q] * fy + CZ[q] * fz
                        fq = WEIGHTS[q] * (3.0 * (cf - uf) + 9.0 * cu * cf)
                        dst[q, i, j, k] = f[q] + omega * (fe - f[q]) + fscale * fq
                else:
                    B = row_B[row]
                    fluid = 1.0 - B
                    fcoef = fluid * fscale
                    for q in range(19):
                        cu = CX[q] * ux + CY[q] * uy + CZ[q] * uz
                        feq[q] = WEIGHTS[q] * (rho + (3.0 * cu + 4.5 * cu * cu - 1.5 * usq))
                        cf = CX[q] * fx + CY[q] * fy + CZ[q] * fz
                        fq = WEIGHTS[q] * (3.0 * (cf - uf) + 9.0 * cu * cf)
                        cs[q] = f[q] + fluid * (omega * (feq[q] - f[q])) + fcoef * fq
                    xc = origin[0] + (i - 1) + 0.5
                    yc = origin[1] + (j - 1) + 0.5
                    zc = origin[2] + (k - 1) + 0.5
                    for s in range(row_index.shape[1]):
                        pi = row_index[row, s]
                        if pi < 0:
                            continue
                        bi = row_b[row, s]
                        upx = row_us[row, s, 0]
                        upy = row_us[row, s, 1]
                        upz = row_us[row, s, 2]
                        upsq = upx * upx + upy * upy + upz * upz
                        sx = 0.0
                        sy = 0.0
                        sz = 0.0
                        for q in range(19):
                            qb = OPPOSITE[q]
                            cup = CX[q] * upx + CY[q] * upy + CZ[q] * upz
                            feqp = WEIGHTS[q] * (rho + (3.0 * cup + 4.5 * cup * cup - 1.5 * upsq))
                            c = (f[qb] - feq[qb]) - (f[q] - feqp)
                            cs[q] += bi * c
                            # c_qbar = -c_q
                            sx -= c * CX[q]
                            sy -= c * CY[q]
                            sz -= c * CZ[q]
                        dfx = bi * sx
                        dfy = bi * sy
                        dfz = bi * sz
                        rx = xc - pcenter[pi, 0]
                        ry = yc - pcenter[pi, 1]
                        rz = zc - pcenter[pi, 2]
                        acc_f[pi, 0] += dfx
                        acc_f[pi, 1] += dfy
                        acc_f[pi, 2] += dfz
                        acc_t[pi, 0] += ry * dfz - rz * dfy
                        acc_t[pi, 1] += rz * dfx - rx * dfz
                        acc_t[pi, 2] += rx * dfy - ry * dfx
                    for q in range(19):
                        dst[q, i, j, k] = cs[q]
                if store:
                    rho_out[i - 1, j - 1, k - 1] = rho
                    u_out[0, i - 1, j - 1, k - 1] = ux
                    u_out[1, i - 1, j - 1, k - 1] = uy
                    u_out[2, i - 1, j - 1, k - 1] = uz
                mass += rho
                mx += ux
                my += uy
                mz += uz
                if usq > umax2:
                    umax2 = usq
                if rho < rhomin:
                    rhomin = rho
    stats[0] = umax2
    stats[1] = rhomin
    stats[2] += mass
    stats[3] += mx
    stats[4] += my
    stats[5] += mz


class HydroForceAccumulator:
    """Per-particle partial F_fp / T_fp of one block, indexed like the registry list."""

    def __init__(self, particles):
        self.ids = [p.id for p in particles]
        self.center = np.array([p.x for p in particles], dtype=float).reshape(-1, 3)
        self.force = np.zeros((len(self.ids), 3))
        self.torque = np.zeros((len(self.ids), 3))

    def reset(self):
        self.force[:] = 0.0
        self.torque[:] = 0.0


def psm_sweep(field: PdfField, params: FluidParams, fractions: FractionField, acc: HydroForceAccumulator,
              boxes, stats=None, rho_out=None, u_out=None):
    """Run the fused kernel over each ``(lo, hi)`` padded box in order."""
    if stats is None:
        stats = new_stats()
    store = rho_out is not None and u_out is not None
    fx, fy, fz = params.f_ext
    pcenter = acc.center if acc.center.size else np.zeros((0, 3))
    for lo, hi in boxes:
        psm_collide_stream_box(
            field.src, field.dst, lo, hi, params.tau, fx, fy, fz, stats,
            rho_out if store else _EMPTY3, u_out if store else _EMPTY4, store,
            fractions.cell_row, fractions.index, fractions.b, fractions.B, fractions.u_solid,
            fractions.origin, pcenter, acc.force, acc.torque,
        )
    return stats


def finalize_hydro_forces(acc: HydroForceAccumulator) -> dict:
    """Block partials ``{id: (F, T)}`` for the cross-block reduction.

    With ``dx = dt = 1`` the scale factor ``dx^3 / dt`` is one. Only
    particles with a non-zero contribution are reported.
    """
    out = {}
    for n, pid in enumerate(acc.ids):
        f = acc.force[n]
        t = acc.torque[n]
        if np.any(f) or np.any(t):
            if pid in out:
                out[pid] = (out[pid][0] + f, out[pid][1] + t)
            else:
                out[pid] = (f.copy(), t.copy())
    return out


def map_particles(shape, particles, origin=(0, 0, 0), k: int = 8):
    """Registry update, fraction field and solid velocities in one call."""
    reg = SubBlockRegistry(shape, origin, k).update(particles)
    fractions = build_fraction_field(reg)
    set_solid_velocities(fractions, reg.particles)
    return reg, fractions


def psm_step(field: PdfField, params: FluidParams, bc: BoundarySpec, particles, k: int = 8,
             rho_out=None, u_out=None):
    """Single-block coupled fluid step; returns ``(stats, {id: (F, T)})``.

    Particles are only mapped and their hydrodynamic partials computed; the
    particle update itself is left to the caller.
    """
    _, fractions = map_particles(field.shape, particles, k=k)
    acc = HydroForceAccumulator(particles)
    fill_periodic(field.src, bc.periodic_axes)
    apply_boundaries(field.src, bc)
    lo = np.ones(3, dtype=np.int64)
    hi = np.array(field.shape, dtype=np.int64) + 1
    stats = psm_sweep(field, params, fractions, acc, [(lo, hi)], rho_out=rho_out, u_out=u_out)
    check_stability(stats)
    field.swap()
    return stats, finalize_hydro_forces(acc)
