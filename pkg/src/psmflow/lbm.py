"""D3Q19 lattice Boltzmann kernel with single-relaxation-time collision.

Conventions
-----------
* Lattice units throughout: ``dx = dt = 1``, reference density ``rho0 = 1``.
* PDF arrays are structure-of-arrays with one ghost layer:
  ``f[q, i, j, k]`` with shape ``(19, nx + 2, ny + 2, nz + 2)``.
  Interior cell ``(i, j, k)`` (0-based) lives at padded index ``(i+1, j+1, k+1)``
  and has its center at lattice coordinate ``(i + 0.5, j + 0.5, k + 0.5)``.
* Streaming is pull-style: ``dst[q, x] = src[q, x - c_q]``. The buffer kept
  between steps holds post-collision PDFs, so ghost cells must be filled
  (halo exchange, periodic wrap, boundary conditions) before the next
  collide-stream sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .errors import ConfigError, NumericalError

Q = 19
CS2 = 1.0 / 3.0
RHO0 = 1.0
U_LIMIT = 0.57

# Rest, 6 faces, 12 edges. Opposite directions are adjacent (1<->2, 3<->4, ...).
VELOCITIES = np.array(
    [
        (0, 0, 0),
        (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
        (1, 1, 0), (-1, -1, 0), (1, -1, 0), (-1, 1, 0),
        (1, 0, 1), (-1, 0, -1), (1, 0, -1), (-1, 0, 1),
        (0, 1, 1), (0, -1, -1), (0, 1, -1), (0, -1, 1),
    ],
    dtype=np.int64,
)
_W_RATIONAL = (Fraction(1, 3),) + (Fraction(1, 18),) * 6 + (Fraction(1, 36),) * 12
WEIGHTS = np.array([float(w) for w in _W_RATIONAL])
OPPOSITE = np.array([0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17], dtype=np.int64)

CX = VELOCITIES[:, 0].copy()
CY = VELOCITIES[:, 1].copy()
CZ = VELOCITIES[:, 2].copy()

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


@dataclass(frozen=True)
class LatticeModel:
    """Velocity set, weights and opposite-direction map of a DdQq lattice."""

    velocities: np.ndarray
    weights: np.ndarray
    weights_rational: tuple
    opposite: np.ndarray
    cs2: float = CS2

    @property
    def q(self) -> int:
        return len(self.weights)


D3Q19 = LatticeModel(VELOCITIES, WEIGHTS, _W_RATIONAL, OPPOSITE)


@dataclass
class FluidParams:
    tau: float
    f_ext: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rho0: float = RHO0

    def __post_init__(self):
        self.f_ext = np.asarray(self.f_ext, dtype=float).reshape(3)
        if not self.tau > 0.5:
            raise ConfigError(f"relaxation time tau={self.tau} must exceed 0.5 (positive viscosity)")

    @property
    def nu(self) -> float:
        return (self.tau - 0.5) * CS2

    @classmethod
    def from_viscosity(cls, nu: float, f_ext=(0.0, 0.0, 0.0)) -> FluidParams:
        return cls(tau=nu / CS2 + 0.5, f_ext=np.asarray(f_ext, dtype=float))


class PdfField:
    """Double-buffered D3Q19 PDF storage with a one-cell ghost layer."""

    ghost = 1

    def __init__(self, shape):
        self.shape = tuple(int(n) for n in shape)
        padded = (Q,) + tuple(n + 2 for n in self.shape)
        self.src = np.zeros(padded)
        self.dst = np.zeros(padded)

    @property
    def interior(self):
        return (slice(None),) + tuple(slice(1, n + 1) for n in self.shape)

    def swap(self):
        self.src, self.dst = self.dst, self.src

    def set_equilibrium(self, rho=1.0, u=(0.0, 0.0, 0.0)):
        """Initialise the interior of ``src`` with equilibrium PDFs."""
        u = np.broadcast_to(np.asarray(u, dtype=float), self.shape + (3,))
        rho = np.broadcast_to(np.asarray(rho, dtype=float), self.shape)
        feq = equilibrium(rho, u)
        self.src[self.interior] = np.moveaxis(feq, -1, 0)

    def interior_pdfs(self) -> np.ndarray:
        return self.src[self.interior]


def equilibrium(rho, u, rho0: float = RHO0) -> np.ndarray:
    """Incompressible second-order equilibrium.

    ``rho`` has shape ``S`` (or scalar), ``u`` has shape ``S + (3,)``; the
    result has shape ``S + (19,)``.
    """
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    cu = u @ VELOCITIES.T.astype(float)
    usq = np.sum(u * u, axis=-1)[..., None]
    return WEIGHTS * (rho[..., None] + rho0 * (cu / CS2 + cu * cu / (2 * CS2 * CS2) - usq / (2 * CS2)))


def macroscopic(f, f_ext=(0.0, 0.0, 0.0), rho0: float = RHO0):
    """Density and (half-force corrected) velocity from PDFs of shape ``S + (19,)``."""
    f = np.asarray(f, dtype=float)
    rho = f.sum(axis=-1)
    u = (f @ VELOCITIES.astype(float)) / rho0 + 0.5 * np.asarray(f_ext, dtype=float) / rho0
    return rho, u


def srt_collision_term(f, rho, u, tau: float) -> np.ndarray:
    return (equilibrium(rho, u) - np.asarray(f, dtype=float)) / tau


def forcing_term(u, f_ext) -> np.ndarray:
    """Forcing populations ``w_q [(c_q - U)/cs^2 + (c_q.U) c_q / cs^4] . f_ext``.

    The collision applies these scaled by :func:`forcing_prefactor`.
    """
    u = np.asarray(u, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    c = VELOCITIES.astype(float)
    cf = f_ext @ c.T
    uf = np.sum(u * f_ext, axis=-1)[..., None]
    cu = u @ c.T
    return WEIGHTS * ((cf - uf) / CS2 + cu * cf / (CS2 * CS2))


def forcing_prefactor(tau: float) -> float:
    return 1.0 - 0.5 / tau


def stream(src: np.ndarray, dst: np.ndarray) -> None:
    """Pull-stream every interior cell: ``dst[q, x] = src[q, x - c_q]``."""
    _, nx, ny, nz = src.shape
    for q in range(Q):
        cx, cy, cz = VELOCITIES[q]
        dst[q, 1:nx - 1, 1:ny - 1, 1:nz - 1] = src[q, 1 - cx:nx - 1 - cx, 1 - cy:ny - 1 - cy, 1 - cz:nz - 1 - cz]


def fill_periodic(f: np.ndarray, axes) -> None:
    """Copy interior boundary layers into the opposite ghost layers.

    Axes are wrapped one after another over the full padded extent so that
    edge and corner ghosts end up with the doubly/triply wrapped values.
    """
    for axis in axes:
        a = axis + 1
        n = f.shape[a]
        lo_ghost = [slice(None)] * 4
        hi_ghost = [slice(None)] * 4
        lo_src = [slice(None)] * 4
        hi_src = [slice(None)] * 4
        lo_ghost[a] = 0
        hi_src[a] = n - 2
        hi_ghost[a] = n - 1
        lo_src[a] = 1
        f[tuple(lo_ghost)] = f[tuple(hi_src)]
        f[tuple(hi_ghost)] = f[tuple(lo_src)]


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------

BC_KINDS = ("noslip", "velocity", "pressure", "periodic")
# Later entries overwrite earlier ones on shared edge ghosts.
_BC_PRIORITY = {"periodic": 0, "pressure": 1, "velocity": 2, "noslip": 3}


@dataclass(frozen=True)
class FaceCondition:
    kind: str
    velocity: tuple = (0.0, 0.0, 0.0)
    density: float = 1.0


@dataclass
class BoundarySpec:
    """One condition per domain face, keyed ``x-``, ``x+``, ``y-``, ``y+``, ``z-``, ``z+``."""

    faces: dict

    def __post_init__(self):
        errors = []
        faces = {}
        for key, cond in self.faces.items():
            if key not in FACES:
                errors.append(f"unknown face {key!r}")
                continue
            if isinstance(cond, str):
                cond = FaceCondition(cond)
            elif isinstance(cond, dict):
                cond = FaceCondition(
                    cond["kind"],
                    tuple(float(v) for v in cond.get("velocity", (0.0, 0.0, 0.0))),
                    float(cond.get("density", 1.0)),
                )
            if cond.kind not in BC_KINDS:
                errors.append(f"face {key}: unknown boundary kind {cond.kind!r}")
            faces[key] = cond
        missing = [f for f in FACES if f not in faces]
        if missing:
            errors.append(f"faces without a boundary condition: {', '.join(missing)}")
        for axis, name in enumerate("xyz"):
            lo, hi = faces.get(name + "-"), faces.get(name + "+")
            if lo is not None and hi is not None and (lo.kind == "periodic") != (hi.kind == "periodic"):
                errors.append(f"axis {name}: periodic must be set on both faces")
        if errors:
            raise ConfigError("inconsistent boundary specification", errors)
        self.faces = faces

    @classmethod
    def from_pairs(cls, pairs) -> BoundarySpec:
        """Build from an iterable of ``(face, condition)``; duplicates are an error."""
        faces = {}
        dup = []
        for key, cond in pairs:
            if key in faces:
                dup.append(f"face {key} assigned twice")
            faces[key] = cond
        if dup:
            raise ConfigError("inconsistent boundary specification", dup)
        return cls(faces)

    @classmethod
    def all(cls, kind="noslip") -> BoundarySpec:
        return cls({f: kind for f in FACES})

    @property
    def periodic_axes(self) -> tuple:
        return tuple(a for a, n in enumerate("xyz") if self.faces[n + "-"].kind == "periodic")

    def to_dict(self) -> dict:
        out = {}
        for key, cond in self.faces.items():
            entry = {"kind": cond.kind}
            if cond.kind == "velocity":
                entry["velocity"] = list(cond.velocity)
            if cond.kind == "pressure":
                entry["density"] = cond.density
            out[key] = entry
        return out


def _plane(index, axis, others):
    sl = list(others)
    sl.insert(axis, index)
    return tuple(sl)


def apply_boundaries(f: np.ndarray, spec: BoundarySpec, faces=None) -> None:
    """Reconstruct the populations streaming in from non-periodic domain faces.

    ``f`` is the padded post-collision buffer. For every ghost cell ``g`` on a
    wall face and every direction ``q`` pointing into the domain, the value
    pulled by cell ``x = g + c_q`` is written into ``f[q, g]``:

    * noslip:   ``f~_qbar(x)``
    * velocity: ``f~_qbar(x) + 2 w_q rho0 (c_q . u_w) / cs^2``
    * pressure: ``-f~_qbar(x) + 2 w_q (rho_w + rho0 ((c_q.u_b)^2/(2cs^4) - u_b^2/(2cs^2)))``
      with ``u_b`` linearly extrapolated from the two cells next to the face.

    ``faces`` restricts the update to a subset (faces of a block that touch
    the physical domain boundary); default is all non-periodic faces.
    """
    if faces is None:
        faces = [k for k, c in spec.faces.items() if c.kind != "periodic"]
    ordered = sorted(faces, key=lambda k: _BC_PRIORITY[spec.faces[k].kind])
    n = f.shape[1:]
    for key in ordered:
        cond = spec.faces[key]
        if cond.kind == "periodic":
            continue
        axis = "xyz".index(key[0])
        low = key[1] == "-"
        g = 0 if low else n[axis] - 1
        d = 1 if low else -1
        other_axes = [b for b in range(3) if b != axis]
        if cond.kind == "pressure":
            ub = _boundary_velocity(f, axis, g + d, g + 2 * d)
        for q in range(Q):
            c = VELOCITIES[q]
            if c[axis] != d:
                continue
            qb = OPPOSITE[q]
            dst_sl = _plane(g, axis, [slice(1 - c[b], n[b] - 1 - c[b]) for b in other_axes])
            src_sl = _plane(g + d, axis, [slice(1, n[b] - 1) for b in other_axes])
            if cond.kind == "noslip":
                f[(q,) + dst_sl] = f[(qb,) + src_sl]
            elif cond.kind == "velocity":
                cu = float(np.dot(c, cond.velocity))
                f[(q,) + dst_sl] = f[(qb,) + src_sl] + 2.0 * WEIGHTS[q] * RHO0 * cu / CS2
            else:
                cu = ub @ c.astype(float)
                usq = np.sum(ub * ub, axis=-1)
                even = cond.density + RHO0 * (cu * cu / (2 * CS2 * CS2) - usq / (2 * CS2))
                f[(q,) + dst_sl] = -f[(qb,) + src_sl] + 2.0 * WEIGHTS[q] * even


def _boundary_velocity(f, axis, first, second):
    """Extrapolated velocity at the face from the two adjacent interior layers."""
    n = f.shape[1:]
    others = [slice(1, n[b] - 1) for b in range(3) if b != axis]
    u1 = np.moveaxis(f[(slice(None),) + _plane(first, axis, others)], 0, -1) @ VELOCITIES.astype(float) / RHO0
    u2 = np.moveaxis(f[(slice(None),) + _plane(second, axis, others)], 0, -1) @ VELOCITIES.astype(float) / RHO0
    return 1.5 * u1 - 0.5 * u2


# ---------------------------------------------------------------------------
# Compiled collide-stream sweep
# ---------------------------------------------------------------------------


STAT_UMAX2, STAT_RHOMIN, STAT_MASS, STAT_MX, STAT_MY, STAT_MZ = range(6)


def new_stats() -> np.ndarray:
    """Accumulator filled by the sweep kernels: max |u|^2, min rho, mass, momentum."""
    return np.array([0.0, np.inf, 0.0, 0.0, 0.0, 0.0])


@njit(cache=True, nogil=True)
def srt_collide_stream_box(src, dst, lo, hi, tau, fx, fy, fz, stats, rho_out, u_out, store):
    """Fused pull-stream + SRT collision + forcing over padded box ``[lo, hi)``.

    ``f~ = f + C_srt + (1 - 1/(2 tau)) F``: the forcing populations enter with
    the Guo prefactor, which together with the half-force velocity shift gives
    a net momentum input of exactly ``f_ext`` per step.

    ``stats`` (see :func:`new_stats`) is updated in place. Density and
    velocity are written to the interior-indexed ``rho_out`` / ``u_out`` only
    when ``store`` is true.
    """
    f = np.empty(19)
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
                for q in range(19):
                    cu = CX[q] * ux + CY[q] * uy + CZ[q] * uz
                    feq = WEIGHTS[q] * (rho + (3.0 * cu + 4.5 * cu * cu - 1.5 * usq))
                    cf = CX[q] * fx + CY[q] * fy + CZ[q] * fz
                    fq = WEIGHTS[q] * (3.0 * (cf - uf) + 9.0 * cu * cf)
                    dst[q, i, j, k] = f[q] + omega * (feq - f[q]) + fscale * fq
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


_EMPTY3 = np.empty((0, 0, 0))
_EMPTY4 = np.empty((0, 0, 0, 0))


def check_stability(stats, where: str = "") -> None:
    umax2, rhomin = stats[STAT_UMAX2], stats[STAT_RHOMIN]
    if not (umax2 <= U_LIMIT * U_LIMIT) or not (rhomin > 0.0):
        umax = float(np.sqrt(umax2)) if umax2 == umax2 else float("nan")
        raise NumericalError(
            f"unstable fluid state{(' in ' + where) if where else ''}: "
            f"max |U|={umax:.4g} (limit {U_LIMIT}), min rho={rhomin:.4g}"
        )


def inner_outer_boxes(shape):
    """Padded index boxes ``(lo, hi)``: the inner box and the outermost cell shell.

    The inner box reads no ghost cells; the six shell boxes are disjoint and
    cover every interior cell not in the inner box.
    """
    nx, ny, nz = shape
    inner = ((2, 2, 2), (max(nx, 2), max(ny, 2), max(nz, 2)))
    shell = []
    x0, x1 = 1, nx + 1
    y0, y1 = 1, ny + 1
    z0, z1 = 1, nz + 1
    # x faces (full), y faces (without x-layer), z faces (without x, y layers)
    shell.append(((x0, y0, z0), (x0 + 1, y1, z1)))
    if nx > 1:
        shell.append(((x1 - 1, y0, z0), (x1, y1, z1)))
    xi0, xi1 = x0 + 1, x1 - 1
    shell.append(((xi0, y0, z0), (xi1, y0 + 1, z1)))
    if ny > 1:
        shell.append(((xi0, y1 - 1, z0), (xi1, y1, z1)))
    yi0, yi1 = y0 + 1, y1 - 1
    shell.append(((xi0, yi0, z0), (xi1, yi1, z0 + 1)))
    if nz > 1:
        shell.append(((xi0, yi0, z1 - 1), (xi1, yi1, z1)))
    boxes = [(np.array(lo, dtype=np.int64), np.array(hi, dtype=np.int64)) for lo, hi in shell]
    boxes = [(lo, hi) for lo, hi in boxes if np.all(hi > lo)]
    inner_box = (np.array(inner[0], dtype=np.int64), np.array(inner[1], dtype=np.int64))
    return inner_box, boxes


def lbm_step(field: PdfField, params: FluidParams, bc: BoundarySpec, rho_out=None, u_out=None):
    """One complete single-block step: ghost fill, collide-stream, swap.

    Returns the stats accumulator of the sweep.
    """
    fill_periodic(field.src, bc.periodic_axes)
    apply_boundaries(field.src, bc)
    store = rho_out is not None and u_out is not None
    stats = new_stats()
    lo = np.ones(3, dtype=np.int64)
    hi = np.array(field.shape, dtype=np.int64) + 1
    fx, fy, fz = params.f_ext
    srt_collide_stream_box(
        field.src, field.dst, lo, hi, params.tau, fx, fy, fz, stats,
        rho_out if store else _EMPTY3, u_out if store else _EMPTY4, store,
    )
    check_stability(stats)
    field.swap()
    return stats
