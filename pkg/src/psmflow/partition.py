"""Block decomposition and the bulk-synchronous coupled time step.

Every block is driven as an independent worker that owns its PDF field,
its local particles, their ghost copies and a contact-history copy.
Workers exchange data only through immutable :class:`Message` objects
posted to a :class:`Mailbox`; each phase of the step ends with a barrier.
Phases run either serially or on a thread pool (the compiled kernels
release the GIL).

Per fluid step the driver runs:

1. particle synchronization (migration + ghost refresh)   [comm]
2. mapping (sub-block registry, fractions) and setU
3. PSM sweep of the inner cells while halos are in flight, then the outer shell
4. hydrodynamic force reduction to owners                [comm]
5. ``j`` DEM sub-cycles, each with synchronization, contact-history
   reduction and force reduction                          [3 comm]

giving ``2 + 3 j`` non-hidable particle communication phases per step.
"""

from __future__ import annotations

import itertools
import math
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import dem
from .errors import ConfigError, SynchronizationError
from .lbm import (
    FACES,
    VELOCITIES,
    BoundarySpec,
    FluidParams,
    PdfField,
    apply_boundaries,
    check_stability,
    inner_outer_boxes,
    new_stats,
)
from .psm import HydroForceAccumulator, SubBlockRegistry, build_fraction_field, finalize_hydro_forces, psm_sweep, set_solid_velocities

OFFSETS = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]

TIMING_KEYS = ("PSM", "PSM-comm", "mapping", "setU", "redF", "PD", "PD-comm", "other")


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Link:
    offset: tuple
    block: int
    shift: tuple  # add to a position in the sender's frame to get the receiver's frame


@dataclass
class Block:
    id: int
    coords: tuple
    lo: tuple
    shape: tuple
    links: list = field(default_factory=list)
    physical_faces: list = field(default_factory=list)

    @property
    def hi(self) -> tuple:
        return tuple(l + n for l, n in zip(self.lo, self.shape))

    @property
    def cells(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, x) -> bool:
        return all(l <= v < h for l, v, h in zip(self.lo, x, self.hi))

    def distance(self, x) -> float:
        x = np.asarray(x, dtype=float)
        nearest = np.clip(x, self.lo, self.hi)
        return float(np.linalg.norm(x - nearest))

    def link_at(self, offset):
        for link in self.links:
            if link.offset == offset:
                return link
        return None

    def partners(self) -> list:
        return sorted({l.block for l in self.links if l.block != self.id})


class BlockDecomposition:
    """Uniform axis-aligned blocks with their 26-neighbourhood.

    Block ids are assigned in x-fastest order. Periodic axes wrap the
    neighbour table; a wrapped link carries the position shift of the image.
    """

    def __init__(self, domain_shape, blocks_per_axis, periodic=(False, False, False)):
        self.domain_shape = tuple(int(n) for n in domain_shape)
        self.blocks_per_axis = tuple(int(b) for b in blocks_per_axis)
        self.periodic = tuple(bool(p) for p in periodic)
        errors = []
        for ax, (n, b) in enumerate(zip(self.domain_shape, self.blocks_per_axis)):
            if b < 1:
                errors.append(f"axis {ax}: block count must be >= 1")
            elif n % b:
                errors.append(f"axis {ax}: {n} cells not divisible into {b} blocks")
        if errors:
            raise ConfigError("invalid block decomposition", errors)
        self.block_shape = tuple(n // b for n, b in zip(self.domain_shape, self.blocks_per_axis))
        bx, by, bz = self.blocks_per_axis
        self.blocks = []
        for cz in range(bz):
            for cy in range(by):
                for cx in range(bx):
                    coords = (cx, cy, cz)
                    lo = tuple(c * s for c, s in zip(coords, self.block_shape))
                    self.blocks.append(Block(self._id(coords), coords, lo, self.block_shape))
        for blk in self.blocks:
            for o in OFFSETS:
                target = []
                shift = []
                ok = True
                for ax in range(3):
                    c = blk.coords[ax] + o[ax]
                    s = 0
                    if c < 0 or c >= self.blocks_per_axis[ax]:
                        if not self.periodic[ax]:
                            ok = False
                            break
                        s = -self.domain_shape[ax] if c >= self.blocks_per_axis[ax] else self.domain_shape[ax]
                        c %= self.blocks_per_axis[ax]
                    target.append(c)
                    shift.append(s)
                if ok:
                    blk.links.append(Link(o, self._id(tuple(target)), tuple(shift)))
            for ax in range(3):
                if self.periodic[ax]:
                    continue
                if blk.coords[ax] == 0:
                    blk.physical_faces.append("xyz"[ax] + "-")
                if blk.coords[ax] == self.blocks_per_axis[ax] - 1:
                    blk.physical_faces.append("xyz"[ax] + "+")

    def _id(self, coords) -> int:
        bx, by, _ = self.blocks_per_axis
        return coords[0] + bx * (coords[1] + by * coords[2])

    def __len__(self):
        return len(self.blocks)

    def owner_of(self, x) -> int:
        coords = []
        for ax in range(3):
            c = int(math.floor(x[ax] / self.block_shape[ax]))
            if c < 0 or c >= self.blocks_per_axis[ax]:
                raise SynchronizationError(f"position {list(map(float, x))} outside the domain")
            coords.append(c)
        return self._id(tuple(coords))

    def max_partners(self) -> int:
        return max(len(b.partners()) for b in self.blocks)


def decompose(domain_shape, blocks_per_axis, periodic=(False, False, False)) -> BlockDecomposition:
    return BlockDecomposition(domain_shape, blocks_per_axis, periodic)


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    step: int
    subcycle: int
    tag: str
    seq: int
    payload: object


def _freeze(obj):
    if isinstance(obj, np.ndarray):
        obj = obj.copy()
        obj.flags.writeable = False
        return obj
    if isinstance(obj, (list, tuple)):
        return tuple(_freeze(v) for v in obj)
    return obj


class Mailbox:
    """Thread-safe message store keyed by ``(dst, step, subcycle, tag)``."""

    def __init__(self):
        self._lock = threading.Lock()
        self._boxes = defaultdict(list)
        self._seq = 0
        self.sent_messages = 0
        self.sent_bytes = 0

    def post(self, src, dst, step, subcycle, tag, payload, nbytes=0):
        with self._lock:
            msg = Message(src, dst, step, subcycle, tag, self._seq, _freeze(payload))
            self._seq += 1
            self._boxes[(dst, step, subcycle, tag)].append(msg)
            self.sent_messages += 1
            self.sent_bytes += nbytes

    def take(self, dst, step, subcycle, tag) -> list:
        with self._lock:
            msgs = self._boxes.pop((dst, step, subcycle, tag), [])
        return sorted(msgs, key=lambda m: (m.src, m.seq))

    def pending(self) -> list:
        with self._lock:
            return [k for k, v in self._boxes.items() if v]


# ---------------------------------------------------------------------------
# Halo slabs
# ---------------------------------------------------------------------------


def halo_directions(offset) -> np.ndarray:
    """Populations that the receiver at ``-offset`` pulls from a slab sent towards ``offset``."""
    qs = [q for q in range(19) if all(VELOCITIES[q, a] == offset[a] for a in range(3) if offset[a] != 0)]
    return np.array(qs, dtype=np.int64)


def _send_slices(shape, offset):
    sl = []
    for a, o in enumerate(offset):
        n = shape[a]
        sl.append(slice(n, n + 1) if o == 1 else slice(1, 2) if o == -1 else slice(1, n + 1))
    return tuple(sl)


def _recv_slices(shape, offset):
    """Ghost region of the receiver for a slab travelling along ``offset``."""
    sl = []
    for a, o in enumerate(offset):
        n = shape[a]
        sl.append(slice(0, 1) if o == 1 else slice(n + 1, n + 2) if o == -1 else slice(1, n + 1))
    return tuple(sl)


_HALO_Q = {o: halo_directions(o) for o in OFFSETS}


def comm_volume_report(decomp: BlockDecomposition, bytes_per_value: int = 8) -> dict:
    """Per-block halo bytes per fluid step, by neighbour relation (face/edge/corner)."""
    per_block = {}
    for blk in decomp.blocks:
        kinds = {"face": 0, "edge": 0, "corner": 0}
        for link in blk.links:
            nq = len(_HALO_Q[link.offset])
            cells = 1
            for a, o in enumerate(link.offset):
                cells *= 1 if o else blk.shape[a]
            kind = ("face", "edge", "corner")[sum(1 for o in link.offset if o) - 1]
            kinds[kind] += nq * cells * bytes_per_value
        kinds["total"] = kinds["face"] + kinds["edge"] + kinds["corner"]
        kinds["partners"] = len(blk.partners())
        per_block[blk.id] = kinds
    return {
        "blocks": per_block,
        "max_partners": decomp.max_partners(),
        "max_bytes": max(v["total"] for v in per_block.values()),
    }


# ---------------------------------------------------------------------------
# Workers and schedulers
# ---------------------------------------------------------------------------


class SerialScheduler:
    workers = 1

    def map(self, fn, items):
        return [fn(x) for x in items]

    def close(self):
        pass


class ThreadScheduler:
    """Runs one task per block concurrently; ``map`` returns after all finish (barrier)."""

    def __init__(self, workers: int):
        self.workers = int(workers)
        self._pool = ThreadPoolExecutor(max_workers=self.workers)

    def map(self, fn, items):
        return list(self._pool.map(fn, items))

    def close(self):
        self._pool.shutdown(wait=True)


def make_scheduler(workers):
    if workers in (None, 0, 1, "serial"):
        return SerialScheduler()
    return ThreadScheduler(int(workers))


@dataclass
class Worker:
    block: Block
    field: PdfField
    rho: np.ndarray
    u: np.ndarray
    locals: dict = field(default_factory=dict)
    ghosts: list = field(default_factory=list)
    history: dem.ContactHistory = field(default_factory=dem.ContactHistory)
    # per-step scratch
    fractions: object = None
    registry_particles: list = field(default_factory=list)
    acc: object = None
    ledger: object = None
    remote: list = field(default_factory=list)
    stats: np.ndarray = None

    def local_list(self) -> list:
        return [self.locals[k] for k in sorted(self.locals)]

    def all_particles(self) -> list:
        return self.local_list() + self.ghosts

    def holds(self) -> set:
        return set(self.locals) | {g.id for g in self.ghosts}


class Timers:
    def __init__(self):
        self.totals = dict.fromkeys(TIMING_KEYS, 0.0)

    @contextmanager
    def __call__(self, key):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[key] += time.perf_counter() - t0

    def reset(self):
        for k in self.totals:
            self.totals[k] = 0.0


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------


class Simulation:
    """Coupled LBM-PSM-DEM simulation on a block decomposition.

    ``particles`` are given in global coordinates; they are distributed to
    their owner blocks. ``dem_params=None`` runs the fluid only.
    """

    def __init__(
        self,
        domain_shape,
        blocks_per_axis,
        fluid: FluidParams,
        bc: BoundarySpec,
        dem_params: dem.DemParams | None = None,
        particles=(),
        k: int = 8,
        workers=None,
        init_velocity=(0.0, 0.0, 0.0),
        hide_comm: bool = True,
    ):
        periodic = tuple(a in bc.periodic_axes for a in range(3))
        self.decomp = decompose(domain_shape, blocks_per_axis, periodic)
        self.fluid = fluid
        self.bc = bc
        self.dem = dem_params
        self.k = k
        self.hide_comm = hide_comm
        self.scheduler = make_scheduler(workers)
        self.mailbox = Mailbox()
        self.timers = Timers()
        self.step_index = 0
        self.comm_log = []
        lo = [0.0, 0.0, 0.0]
        self.walls = []
        for ax in range(3):
            if not periodic[ax]:
                self.walls += dem.box_walls(lo, self.decomp.domain_shape, axes=(ax,))
        self.walls.sort(key=lambda w: -w.id)
        particles = [p.copy(ghost=False) for p in particles]
        ids = [p.id for p in particles]
        if len(set(ids)) != len(ids):
            raise ConfigError("particle ids must be unique")
        if any(i < 0 for i in ids):
            raise ConfigError("particle ids must be non-negative (negative ids denote walls)")
        rmax = max((p.radius for p in particles), default=0.0)
        self.margin = dem.interaction_range(rmax, dem_params) if particles else 0.0
        if particles and min(self.decomp.block_shape) < self.margin + 1.0:
            raise ConfigError(
                f"block shape {self.decomp.block_shape} too small for the ghost margin {self.margin:.2f}; "
                "use fewer blocks"
            )
        self.workers = []
        for blk in self.decomp.blocks:
            f = PdfField(blk.shape)
            f.set_equilibrium(1.0, init_velocity)
            self.workers.append(Worker(blk, f, np.ones(blk.shape), np.zeros((3,) + blk.shape)))
        for p in particles:
            for ax in range(3):
                if not (0.0 <= p.x[ax] < self.decomp.domain_shape[ax]):
                    raise ConfigError(f"particle {p.id} lies outside the domain")
            self.workers[self.decomp.owner_of(p.x)].locals[p.id] = p
        self.n_particles = len(particles)
        self._inner_outer = inner_outer_boxes(self.decomp.block_shape)
        self._sync_particles(tag="init", counted=False)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.decomp.domain_shape))

    def close(self):
        self.scheduler.close()

    def _phase(self, fn):
        return self.scheduler.map(fn, self.workers)

    def _log_comm(self, subcycle, tag, counted=True):
        if counted:
            self.comm_log.append((self.step_index, subcycle, tag))

    def comm_phases(self, step=None) -> int:
        """Non-hidable particle communication phases performed in ``step`` (default: last)."""
        if step is None:
            step = self.step_index - 1
        return sum(1 for s, _, _ in self.comm_log if s == step)

    def _check_mailbox(self):
        left = self.mailbox.pending()
        if left:
            raise SynchronizationError(f"undelivered messages: {sorted(left)[:5]}")

    # -- particle synchronization -------------------------------------------

    def sync_particles(self):
        """Migrate particles to their owners and rebuild ghost copies (not counted as a step phase)."""
        self._sync_particles(tag=f"manual{self.step_index}", counted=False)

    def _sync_particles(self, tag="sync", subcycle=-1, counted=True):
        step = self.step_index
        margin = self.margin
        decomp = self.decomp

        def send(w: Worker):
            blk = w.block
            zero = (0, 0, 0)
            for p in w.local_list():
                owner, own_shift = blk.id, zero
                if not blk.contains(p.x):
                    o = tuple(-1 if v < l else 1 if v >= h else 0 for v, l, h in zip(p.x, blk.lo, blk.hi))
                    link = blk.link_at(o)
                    if link is None:
                        raise SynchronizationError(f"particle {p.id} left the domain at {p.x.tolist()}")
                    target = decomp.blocks[link.block]
                    if not target.contains(p.x + np.array(link.shift)):
                        raise SynchronizationError(f"particle {p.id} moved further than one block per sync")
                    owner, own_shift = link.block, link.shift
                    moved = p.copy(ghost=False)
                    moved.x = p.x + np.array(link.shift, dtype=float)
                    moved.owner = owner
                    self.mailbox.post(blk.id, owner, step, subcycle, tag + ":own", [moved])
                targets = [(blk.id, zero)] + [(l.block, l.shift) for l in blk.links]
                seen = set()
                for nb, shift in targets:
                    if (nb, shift) in seen:
                        continue
                    seen.add((nb, shift))
                    if nb == owner and shift == own_shift:
                        continue
                    x = p.x + np.array(shift, dtype=float)
                    if decomp.blocks[nb].distance(x) < margin:
                        g = p.copy(ghost=True)
                        g.x = x
                        g.owner = owner
                        g.f_old[:] = g.f_new[:] = g.t_old[:] = g.t_new[:] = 0.0
                        self.mailbox.post(blk.id, nb, step, subcycle, tag + ":ghost", [g])
            for p in list(w.locals.values()):
                if not blk.contains(p.x):
                    del w.locals[p.id]

        def recv(w: Worker):
            blk = w.block
            for m in self.mailbox.take(blk.id, step, subcycle, tag + ":own"):
                for p in m.payload:
                    if p.id in w.locals:
                        raise SynchronizationError(f"particle {p.id} owned twice by block {blk.id}")
                    w.locals[p.id] = p.copy(ghost=False)
            ghosts = []
            for m in self.mailbox.take(blk.id, step, subcycle, tag + ":ghost"):
                ghosts.extend(g.copy(ghost=True) for g in m.payload)
            ghosts.sort(key=lambda g: (g.id, tuple(g.x)))
            w.ghosts = ghosts

        self._phase(send)
        self._phase(recv)
        self._check_mailbox()
        total = sum(len(w.locals) for w in self.workers)
        if total != self.n_particles:
            raise SynchronizationError(f"particle count changed: {total} != {self.n_particles}")
        self._log_comm(subcycle, tag, counted)

    # -- fluid step ------------------------------------------------------------

    def _halo_send(self, w: Worker):
        src = w.field.src
        for link in w.block.links:
            qs = _HALO_Q[link.offset]
            if qs.size == 0:
                continue
            slab = src[(qs,) + _send_slices(w.block.shape, link.offset)]
            self.mailbox.post(w.block.id, link.block, self.step_index, -1, f"halo{link.offset}", slab, slab.nbytes)

    def _halo_recv(self, w: Worker):
        src = w.field.src
        for o in OFFSETS:
            qs = _HALO_Q[o]
            if qs.size == 0:
                continue
            for m in self.mailbox.take(w.block.id, self.step_index, -1, f"halo{o}"):
                src[(qs,) + _recv_slices(w.block.shape, o)] = m.payload
        if w.block.physical_faces:
            apply_boundaries(src, self.bc, w.block.physical_faces)

    def _sweep(self, w: Worker, boxes):
        psm_sweep(w.field, self.fluid, w.fractions, w.acc, boxes, stats=w.stats, rho_out=w.rho, u_out=w.u)

    def _map(self, w: Worker):
        parts = w.all_particles()
        reg = SubBlockRegistry(w.block.shape, w.block.lo, self.k).update(parts)
        w.fractions = build_fraction_field(reg)
        w.registry_particles = reg.particles
        w.acc = HydroForceAccumulator(reg.particles)

    def _set_u(self, w: Worker):
        set_solid_velocities(w.fractions, w.registry_particles)

    def step(self):
        T = self.timers
        with T("PD-comm"):
            if self.dem is not None:
                self._sync_particles("sync-step", subcycle=-1)
        with T("mapping"):
            self._phase(self._map)
        with T("setU"):
            self._phase(self._set_u)

        inner, shell = self._inner_outer

        def prep(w):
            w.stats = new_stats()

        self._phase(prep)
        if self.hide_comm:
            with T("PSM-comm"):
                self._phase(self._halo_send)
            with T("PSM"):
                self._phase(lambda w: self._sweep(w, [inner]))
            with T("PSM-comm"):
                self._phase(self._halo_recv)
            with T("PSM"):
                self._phase(lambda w: self._sweep(w, shell))
        else:
            with T("PSM-comm"):
                self._phase(self._halo_send)
                self._phase(self._halo_recv)
            with T("PSM"):
                self._phase(lambda w: self._sweep(w, [inner] + shell))
        with T("other"):
            self._check_mailbox()
            for w in self.workers:
                check_stability(w.stats, f"block {w.block.id} at step {self.step_index}")
                w.field.swap()
        if self.dem is not None:
            with T("redF"):
                self._reduce_hydro()
            for s in range(self.dem.subcycles):
                self._subcycle(s)
        self.step_index += 1

    def run(self, steps: int, callback=None):
        for _ in range(steps):
            self.step()
            if callback is not None:
                callback(self)

    # -- particle phases -------------------------------------------------------

    def _reduce_hydro(self):
        step = self.step_index

        def send(w: Worker):
            partial = finalize_hydro_forces(w.acc)
            owner = {p.id: (w.block.id if not p.ghost else p.owner) for p in w.registry_particles}
            out = defaultdict(list)
            for pid in sorted(partial):
                f, t = partial[pid]
                out[owner[pid]].append((pid, f, t))
            for dst in sorted(out):
                self.mailbox.post(w.block.id, dst, step, -1, "redF", out[dst])

        def recv(w: Worker):
            sums = {pid: [np.zeros(3), np.zeros(3)] for pid in w.locals}
            for m in self.mailbox.take(w.block.id, step, -1, "redF"):  # ascending source block id
                for pid, f, t in m.payload:
                    if pid not in sums:
                        raise SynchronizationError(f"hydrodynamic force for unknown particle {pid} at block {w.block.id}")
                    sums[pid][0] = sums[pid][0] + f
                    sums[pid][1] = sums[pid][1] + t
            for pid, (f, t) in sums.items():
                w.locals[pid].f_hyd = f
                w.locals[pid].t_hyd = t

        self._phase(send)
        self._phase(recv)
        self._check_mailbox()
        self._log_comm(-1, "redF")

    def _subcycle(self, s: int):
        T = self.timers
        params = self.dem
        step = self.step_index
        dt_p = params.dt_p

        with T("PD"):
            self._phase(lambda w: dem.integrate_pre_force(w.local_list(), dt_p))
        with T("PD-comm"):
            self._sync_particles("sync", subcycle=s)

        def forces(w: Worker):
            parts = w.all_particles()
            lo = np.array(w.block.lo, dtype=float) - self.margin - 1.0
            hi = np.array(w.block.hi, dtype=float) + self.margin + 1.0
            grid = dem.rebuild_linked_cells(parts, lo, hi, params=params)
            w.ledger = dem.ForceLedger()
            w.remote = []
            w.history.begin_cycle()
            dem.lubrication_forces(parts, grid, self.walls, params, w.ledger, w.remote)
            dem.contact_forces(parts, grid, self.walls, w.history, params, w.ledger, step, w.remote)
            w.history.purge()

        with T("PD"):
            self._phase(forces)

        def hist_send(w: Worker):
            auth = {k: e for k, e in w.history.entries.items() if k[0] in w.locals}
            payload = [(k, e.delta_t, e.t_impact) for k, e in sorted(auth.items())]
            for dst in [w.block.id] + w.block.partners():
                self.mailbox.post(w.block.id, dst, step, s, "history", payload)

        def hist_recv(w: Worker):
            held = w.holds()
            entries = {}
            for m in self.mailbox.take(w.block.id, step, s, "history"):
                for key, delta, t0 in m.payload:
                    if key[0] in held or key[1] in held:
                        prev = entries.get(key)
                        if prev is not None and not (np.array_equal(prev.delta_t, delta) and prev.t_impact == t0):
                            raise SynchronizationError(f"conflicting contact history for pair {key} at block {w.block.id}")
                        entries[key] = dem.HistoryEntry(np.array(delta), t0, True)
            w.history.entries = dict(sorted(entries.items()))

        with T("PD-comm"):
            self._phase(hist_send)
            self._phase(hist_recv)
            self._check_mailbox()
            self._log_comm(s, "history")

        def ext(w: Worker):
            parts = w.local_list()
            dem.apply_external_forces(parts, params)
            dem.apply_hydro_forces(parts)

        with T("PD"):
            self._phase(ext)

        def force_send(w: Worker):
            out = defaultdict(list)
            for owner, pid, partner, kind, f, t in w.remote:
                out[owner].append((pid, partner, kind, f, t))
            for dst in sorted(out):
                self.mailbox.post(w.block.id, dst, step, s, "force", out[dst])

        def force_recv(w: Worker):
            for m in self.mailbox.take(w.block.id, step, s, "force"):
                for pid, partner, kind, f, t in m.payload:
                    if pid not in w.locals:
                        raise SynchronizationError(f"force for particle {pid} sent to non-owner block {w.block.id}")
                    w.ledger.add(pid, partner, kind, np.array(f), np.array(t))
            w.ledger.apply(w.local_list())

        with T("PD-comm"):
            self._phase(force_send)
            self._phase(force_recv)
            self._check_mailbox()
            self._log_comm(s, "force")

        with T("PD"):
            self._phase(lambda w: dem.integrate_post_force(w.local_list(), dt_p))

    # -- gathering ---------------------------------------------------------------

    def particles(self) -> list:
        out = []
        for w in self.workers:
            out.extend(w.locals.values())
        return sorted(out, key=lambda p: p.id)

    def gather(self, name: str) -> np.ndarray:
        """Global interior array of ``pdf`` (post-collision), ``rho``, ``u`` or ``B``."""
        shape = self.decomp.domain_shape
        if name == "pdf":
            out = np.empty((19,) + shape)
        elif name == "u":
            out = np.empty((3,) + shape)
        else:
            out = np.empty(shape)
        for w in self.workers:
            sl = tuple(slice(l, h) for l, h in zip(w.block.lo, w.block.hi))
            if name == "pdf":
                out[(slice(None),) + sl] = w.field.interior_pdfs()
            elif name == "u":
                out[(slice(None),) + sl] = w.u
            elif name == "rho":
                out[sl] = w.rho
            elif name == "B":
                out[sl] = w.fractions.dense_B() if w.fractions is not None else 0.0
            else:
                raise KeyError(name)
        return out

    def fluid_momentum(self) -> np.ndarray:
        f = self.gather("pdf")
        return np.array([np.sum(np.tensordot(VELOCITIES[:, a].astype(float), f, axes=(0, 0))) for a in range(3)])
