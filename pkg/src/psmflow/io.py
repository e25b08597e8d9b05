"""Output writers: grid dumps, particle dumps and the scalar time series.

File formats (all plain text, whitespace separated, ``#`` header line):

``grid_<step:08d>.txt``
    ``# step=<n> dims=<nx> <ny> <nz>`` then one row per cell, x fastest,
    columns ``x y z rho ux uy uz B`` (cell centers at ``i + 0.5``).
``particles_<step:08d>.txt``
    ``# step=<n> count=<m>`` then one row per particle sorted by id,
    columns ``id x y z ux uy uz wx wy wz r``.
``scalars.csv``
    one row per fluid step with columns :data:`SCALAR_COLUMNS`.

Numbers are written with 17 significant digits so identical runs give
byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import OutputError
from .lbm import macroscopic

SCALAR_COLUMNS = (
    "step", "px", "py", "pz", "ke_fluid", "ke_particles", "min_gap", "max_uf",
)
FMT = "%.17g"


def grid_fields(sim):
    """Global ``rho``, ``u`` and ``B`` arrays of a simulation."""
    if sim.step_index == 0:
        f = np.moveaxis(sim.gather("pdf"), 0, -1)
        rho, u = macroscopic(f, sim.fluid.f_ext)
        u = np.moveaxis(u, -1, 0)
    else:
        rho, u = sim.gather("rho"), sim.gather("u")
    return rho, u, sim.gather("B")


def min_gap(particles, walls=()) -> float:
    """Smallest surface gap between two particles or a particle and a wall (inf if none)."""
    gap = math.inf
    if len(particles) > 1:
        x = np.array([p.x for p in particles])
        r = np.array([p.radius for p in particles])
        d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)) - r[:, None] - r[None, :]
        np.fill_diagonal(d, np.inf)
        gap = float(d.min())
    for w in walls:
        for p in particles:
            gap = min(gap, w.signed_distance(p.x) - p.radius)
    return gap


def scalars(sim) -> list:
    rho, u, _ = grid_fields(sim)
    parts = sim.particles()
    mom = (rho[None] * u).sum(axis=(1, 2, 3))
    for p in parts:
        mom = mom + p.mass * p.u
    ke_f = 0.5 * float((rho * (u * u).sum(axis=0)).sum())
    ke_p = sum(p.kinetic_energy() for p in parts)
    umax = float(np.sqrt((u * u).sum(axis=0)).max())
    return [sim.step_index, *mom.tolist(), ke_f, ke_p, min_gap(parts, sim.walls), umax]


def _open(path: Path, mode="w"):
    try:
        return open(path, mode)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def write_grid(path, sim) -> None:
    rho, u, B = grid_fields(sim)
    nx, ny, nz = rho.shape
    # x fastest: iterate in (z, y, x) order
    zz, yy, xx = np.meshgrid(np.arange(nz) + 0.5, np.arange(ny) + 0.5, np.arange(nx) + 0.5, indexing="ij")
    cols = [xx, yy, zz, rho.T, u[0].T, u[1].T, u[2].T, B.T]
    data = np.stack([c.reshape(-1) for c in cols], axis=1)
    with _open(Path(path)) as fh:
        try:
            np.savetxt(fh, data, fmt=FMT, header=f"step={sim.step_index} dims={nx} {ny} {nz}")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc


def write_particles(path, sim) -> None:
    parts = sim.particles()
    rows = [[p.id, *p.x, *p.u, *p.omega, p.radius] for p in parts]
    data = np.array(rows, dtype=float).reshape(-1, 11)
    with _open(Path(path)) as fh:
        try:
            np.savetxt(fh, data, fmt=["%d"] + [FMT] * 10, header=f"step={sim.step_index} count={len(parts)}")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc


def read_grid(path):
    """Inverse of :func:`write_grid`: ``(step, dims, table)``."""
    with open(path) as fh:
        head = fh.readline()
    step_part, dims_part = head.lstrip("# ").split("dims=")
    step = int(step_part.split("=")[1])
    dims = tuple(int(v) for v in dims_part.split())
    return step, dims, np.loadtxt(path, ndmin=2)


class OutputWriter:
    """Writes dumps every ``cadence`` steps (and the final state) plus one scalar row per step.

    ``cadence == 0`` writes only the final state.
    """

    def __init__(self, out_dir, cadence: int, total_steps: int, grid=True, particles=True, scalars=True):
        self.dir = Path(out_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {self.dir}: {exc}") from exc
        self.cadence = int(cadence)
        self.total = int(total_steps)
        self.grid = grid
        self.particles = particles
        self.scalars = scalars
        self.written = []
        self._scalar_path = self.dir / "scalars.csv"
        if scalars:
            with _open(self._scalar_path) as fh:
                fh.write(",".join(SCALAR_COLUMNS) + "\n")

    def due(self, step: int) -> bool:
        if step == self.total:
            return True
        return self.cadence > 0 and step % self.cadence == 0

    def __call__(self, sim) -> None:
        step = sim.step_index
        if self.scalars:
            row = scalars(sim)
            with _open(self._scalar_path, "a") as fh:
                fh.write(",".join([str(row[0])] + [FMT % v for v in row[1:]]) + "\n")
        if not self.due(step):
            return
        if self.grid:
            p = self.dir / f"grid_{step:08d}.txt"
            write_grid(p, sim)
            self.written.append(p)
        if self.particles:
            p = self.dir / f"particles_{step:08d}.txt"
            write_particles(p, sim)
            self.written.append(p)
